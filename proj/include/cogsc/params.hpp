#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cogsc/tensor.hpp"

namespace cogsc {

/// Named learnable tensors in registration order.
class ParameterSet {
public:
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        index_[name] = entries_.size();
        entries_.emplace_back(name, t);
        return t;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return entries_[it->second].second;
    }

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : entries_) t.zero_grad();
    }

    /// Overwrites values from another set; names and shapes must match.
    void assign_from(const ParameterSet& other) {
        for (auto& [name, t] : entries_) {
            const Tensor& src = other.get(name);
            if (src.shape() != t.shape())
                throw ShapeError("parameter '" + name + "' has shape " + shape_str(t.shape()) +
                                 " but source has " + shape_str(src.shape()));
            std::copy(src.values().begin(), src.values().end(), t.data().begin());
        }
    }

    std::vector<std::vector<double>> snapshot() const {
        std::vector<std::vector<double>> s;
        for (const auto& [_, t] : entries_) s.push_back(t.values());
        return s;
    }

    void restore(const std::vector<std::vector<double>>& s) {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            auto d = entries_[i].second.data();
            std::copy(s.at(i).begin(), s.at(i).end(), d.begin());
        }
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   magic      8 bytes  "COGSCKPT"
//   version    u32
//   meta_len   u32, meta bytes (UTF-8 key=value text)
//   count      u32
//   records    count x { name_len u32, name bytes, rank u32, dims u64[rank], values f64[numel] }
//
// All integers and doubles little-endian.

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'G', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::string meta;
    std::vector<TensorRecord> records;

    const TensorRecord& find(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return r;
        throw std::out_of_range("checkpoint has no record '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return true;
        return false;
    }
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    unsigned char b[sizeof(T)];
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, double>) {
        static_assert(sizeof(double) == 8);
        std::memcpy(&bits, &v, 8);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    os.write(kCheckpointMagic, 8);
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.meta.size()));
    os.write(ck.meta.data(), static_cast<std::streamsize>(ck.meta.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.records.size()));
    for (const auto& r : ck.records) {
        if (numel(r.shape) != r.values.size())
            throw ShapeError("checkpoint record '" + r.name + "' shape/value count mismatch");
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) detail::put_le<std::uint64_t>(os, d);
        for (double v : r.values) detail::put_le<double>(os, v);
    }
}

inline Checkpoint read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw std::runtime_error("checkpoint: bad magic (not a checkpoint file)");
    auto version = detail::get_le<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    Checkpoint ck;
    ck.meta.resize(detail::get_le<std::uint32_t>(is));
    if (!ck.meta.empty() && !is.read(ck.meta.data(), static_cast<std::streamsize>(ck.meta.size())))
        throw std::runtime_error("checkpoint: truncated metadata");
    auto count = detail::get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord r;
        r.name.resize(detail::get_le<std::uint32_t>(is));
        if (!is.read(r.name.data(), static_cast<std::streamsize>(r.name.size())))
            throw std::runtime_error("checkpoint: truncated record name");
        auto rank = detail::get_le<std::uint32_t>(is);
        for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(detail::get_le<std::uint64_t>(is));
        r.values.resize(numel(r.shape));
        for (auto& v : r.values) v = detail::get_le<double>(is);
        ck.records.push_back(std::move(r));
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    return read_checkpoint(is);
}

inline void append_parameters(Checkpoint& ck, const ParameterSet& params) {
    for (const auto& [name, t] : params.entries()) ck.records.push_back({name, t.shape(), t.values()});
}

/// Loads matching records into params. Every parameter must be present with its exact shape.
inline void load_parameters(const Checkpoint& ck, ParameterSet& params) {
    for (const auto& [name, t] : params.entries()) {
        if (!ck.has(name)) throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
        const auto& r = ck.find(name);
        if (r.shape != t.shape())
            throw ShapeError("parameter '" + name + "': model expects " + shape_str(t.shape()) +
                             ", checkpoint has " + shape_str(r.shape));
        Tensor dst = t;
        std::copy(r.values.begin(), r.values.end(), dst.data().begin());
    }
}

}  // namespace cogsc
