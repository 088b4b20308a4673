#pragma once

// Flat key=value experiment configuration with dotted section keys.

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cogsc/channel.hpp"
#include "cogsc/scene.hpp"

namespace cogsc {

struct ExperimentConfig {
    // model
    std::size_t image_size = 64;
    std::vector<std::size_t> blocks{16, 32, 64, 128};
    std::size_t cf = 16;
    // codec
    double ratio = 1.0 / 6.0;
    bool multiscale = true;
    // SA
    bool sa_enabled = true;
    double sa_snr_min = -6;
    double sa_snr_max = 9;
    // channel
    channel::Kind channel_kind = channel::Kind::awgn;
    double power = 1.0;
    // training (Table II where defined)
    std::size_t batch_size = 16;
    double momentum = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-4;
    double lr = 1e-2;
    double lr_decay = 0.3;
    std::vector<double> decay_fractions{0.4, 0.7, 0.9};
    std::size_t epochs = 70;
    std::string optimizer = "adam";
    double train_snr_db = 9;
    std::size_t train_max_detections = 1024;
    std::size_t background_boxes = 4;
    std::uint64_t seed = 1;
    std::string checkpoint = "model.ckpt";
    std::string log = "";
    // knowledge graph
    bool kg_enabled = true;
    std::string kg_source = "data/kg_source.tsv";
    std::string kg_synonyms = "data/synonyms.tsv";
    std::size_t kg_max_hops = 2;
    std::size_t kg_min_degree = 2;
    std::size_t kg_dim = 16;
    std::size_t kg_walks = 10;
    std::size_t kg_walk_length = 20;
    std::size_t kg_window = 3;
    std::size_t kg_negatives = 5;
    std::size_t kg_epochs = 50;
    double kg_lr = 0.025;
    std::uint64_t kg_seed = 7;
    std::string kg_output = "kg";
    // detector
    std::size_t ndim = 1024;
    std::size_t rgat_hidden = 512;
    std::size_t rgat_layers = 3;
    std::size_t rgat_heads = 2;
    double lambda = 1.0;
    std::string proposals = "oracle_jitter";
    double jitter = 0.15;
    std::size_t grid_stride = 16;
    std::vector<std::size_t> grid_sizes{16, 32};
    // evaluation
    double nms = 0.5;
    std::size_t max_detections = 100;
    double score_threshold = 0.0;
    std::size_t workers = 1;
    std::uint64_t eval_seed = 1000;
    // sweep / ablation
    std::vector<double> sweep_snr{-6, -3, 0, 3, 6, 9};
    std::vector<double> sweep_ratios{1.0 / 6.0};
    std::vector<std::string> sweep_channels{"awgn", "rayleigh"};
    std::vector<std::string> sweep_checkpoints;
    std::string sweep_output = "sweep";
    std::vector<double> ablate_fixed_snr{-6, 0, 9};
    std::string ablate_output = "ablate";
    // data
    std::vector<std::string> categories = scene::dota_categories();
    std::vector<scene::Rule> rules;
    std::vector<std::pair<std::string, std::string>> lookalikes;
    std::size_t min_objects = 1;
    std::size_t max_objects = 4;
    double min_size = 10;
    double max_size = 36;
    double max_overlap = 0.8;
    double texture = 0.08;
    std::size_t train_scenes = 256;
    std::size_t test_scenes = 64;
    std::uint64_t data_seed = 42;

    scene::SceneSpec scene_spec() const {
        scene::SceneSpec s;
        s.width = s.height = image_size;
        s.categories = categories;
        s.rules = rules;
        s.lookalikes = lookalikes;
        s.min_objects = min_objects;
        s.max_objects = max_objects;
        s.min_size = min_size;
        s.max_size = max_size;
        s.max_overlap = max_overlap;
        s.texture = texture;
        return s;
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline double parse_double(const std::string& key, const std::string& s) {
    const std::string t = trim(s);
    if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
    if (t == "-inf") return -std::numeric_limits<double>::infinity();
    auto slash = t.find('/');
    if (slash != std::string::npos)
        return parse_double(key, t.substr(0, slash)) / parse_double(key, t.substr(slash + 1));
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
        throw std::invalid_argument("config key '" + key + "': '" + s + "' is not a number");
    return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
    const std::string t = trim(s);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
        throw std::invalid_argument("config key '" + key + "': '" + s + "' is not a non-negative integer");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    const std::string t = trim(s);
    if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "off" || t == "no") return false;
    throw std::invalid_argument("config key '" + key + "': '" + s + "' is not a boolean");
}

struct Binding {
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

template <class T>
Binding uint_field(const std::string& key, T& f) {
    return {[&f, key](const std::string& s) { f = static_cast<T>(parse_uint(key, s)); },
            [&f] { return std::to_string(f); }};
}

inline Binding double_field(const std::string& key, double& f) {
    return {[&f, key](const std::string& s) { f = parse_double(key, s); }, [&f] { return format_double(f); }};
}

inline Binding bool_field(const std::string& key, bool& f) {
    return {[&f, key](const std::string& s) { f = parse_bool(key, s); }, [&f] { return f ? "true" : "false"; }};
}

inline Binding string_field(std::string& f) {
    return {[&f](const std::string& s) { f = trim(s); }, [&f] { return f; }};
}

inline std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

inline Binding string_list(std::vector<std::string>& f) {
    return {[&f](const std::string& s) { f = split(s, ','); }, [&f] { return join(f); }};
}

inline Binding double_list(const std::string& key, std::vector<double>& f) {
    return {[&f, key](const std::string& s) {
                f.clear();
                for (const auto& e : split(s, ',')) f.push_back(parse_double(key, e));
            },
            [&f] {
                std::vector<std::string> v;
                for (double d : f) v.push_back(format_double(d));
                return join(v);
            }};
}

inline Binding size_list(const std::string& key, std::vector<std::size_t>& f) {
    return {[&f, key](const std::string& s) {
                f.clear();
                for (const auto& e : split(s, ',')) f.push_back(parse_uint(key, e));
            },
            [&f] {
                std::vector<std::string> v;
                for (auto d : f) v.push_back(std::to_string(d));
                return join(v);
            }};
}

inline std::map<std::string, Binding> bindings(ExperimentConfig& c) {
    std::map<std::string, Binding> b;
    b["model.image_size"] = uint_field("model.image_size", c.image_size);
    b["model.blocks"] = size_list("model.blocks", c.blocks);
    b["model.cf"] = uint_field("model.cf", c.cf);
    b["codec.ratio"] = double_field("codec.ratio", c.ratio);
    b["codec.multiscale"] = bool_field("codec.multiscale", c.multiscale);
    b["sa.enabled"] = bool_field("sa.enabled", c.sa_enabled);
    b["sa.snr_min"] = double_field("sa.snr_min", c.sa_snr_min);
    b["sa.snr_max"] = double_field("sa.snr_max", c.sa_snr_max);
    b["channel.kind"] = {[&c](const std::string& s) { c.channel_kind = channel::parse_kind(trim(s)); },
                         [&c] { return channel::to_string(c.channel_kind); }};
    b["channel.power"] = double_field("channel.power", c.power);
    b["training.batch_size"] = uint_field("training.batch_size", c.batch_size);
    b["training.momentum"] = double_field("training.momentum", c.momentum);
    b["training.beta2"] = double_field("training.beta2", c.beta2);
    b["training.weight_decay"] = double_field("training.weight_decay", c.weight_decay);
    b["training.lr"] = double_field("training.lr", c.lr);
    b["training.lr_decay"] = double_field("training.lr_decay", c.lr_decay);
    b["training.decay_fractions"] = double_list("training.decay_fractions", c.decay_fractions);
    b["training.epochs"] = uint_field("training.epochs", c.epochs);
    b["training.optimizer"] = string_field(c.optimizer);
    b["training.snr_db"] = double_field("training.snr_db", c.train_snr_db);
    b["training.max_detections"] = uint_field("training.max_detections", c.train_max_detections);
    b["training.background_boxes"] = uint_field("training.background_boxes", c.background_boxes);
    b["training.seed"] = uint_field("training.seed", c.seed);
    b["training.checkpoint"] = string_field(c.checkpoint);
    b["training.log"] = string_field(c.log);
    b["kg.enabled"] = bool_field("kg.enabled", c.kg_enabled);
    b["kg.source"] = string_field(c.kg_source);
    b["kg.synonyms"] = string_field(c.kg_synonyms);
    b["kg.max_hops"] = uint_field("kg.max_hops", c.kg_max_hops);
    b["kg.min_degree"] = uint_field("kg.min_degree", c.kg_min_degree);
    b["kg.dim"] = uint_field("kg.dim", c.kg_dim);
    b["kg.walks"] = uint_field("kg.walks", c.kg_walks);
    b["kg.walk_length"] = uint_field("kg.walk_length", c.kg_walk_length);
    b["kg.window"] = uint_field("kg.window", c.kg_window);
    b["kg.negatives"] = uint_field("kg.negatives", c.kg_negatives);
    b["kg.epochs"] = uint_field("kg.epochs", c.kg_epochs);
    b["kg.lr"] = double_field("kg.lr", c.kg_lr);
    b["kg.seed"] = uint_field("kg.seed", c.kg_seed);
    b["kg.output"] = string_field(c.kg_output);
    b["detector.ndim"] = uint_field("detector.ndim", c.ndim);
    b["detector.rgat_hidden"] = uint_field("detector.rgat_hidden", c.rgat_hidden);
    b["detector.rgat_layers"] = uint_field("detector.rgat_layers", c.rgat_layers);
    b["detector.rgat_heads"] = uint_field("detector.rgat_heads", c.rgat_heads);
    b["detector.lambda"] = double_field("detector.lambda", c.lambda);
    b["detector.proposals"] = string_field(c.proposals);
    b["detector.jitter"] = double_field("detector.jitter", c.jitter);
    b["detector.grid_stride"] = uint_field("detector.grid_stride", c.grid_stride);
    b["detector.grid_sizes"] = size_list("detector.grid_sizes", c.grid_sizes);
    b["eval.nms"] = double_field("eval.nms", c.nms);
    b["eval.max_detections"] = uint_field("eval.max_detections", c.max_detections);
    b["eval.score_threshold"] = double_field("eval.score_threshold", c.score_threshold);
    b["eval.workers"] = uint_field("eval.workers", c.workers);
    b["eval.seed"] = uint_field("eval.seed", c.eval_seed);
    b["sweep.snr_db"] = double_list("sweep.snr_db", c.sweep_snr);
    b["sweep.ratios"] = double_list("sweep.ratios", c.sweep_ratios);
    b["sweep.channels"] = string_list(c.sweep_channels);
    b["sweep.checkpoints"] = string_list(c.sweep_checkpoints);
    b["sweep.output"] = string_field(c.sweep_output);
    b["ablate.fixed_snr_db"] = double_list("ablate.fixed_snr_db", c.ablate_fixed_snr);
    b["ablate.output"] = string_field(c.ablate_output);
    b["data.categories"] = string_list(c.categories);
    b["data.rules"] = {[&c](const std::string& s) {
                           // a>b:p, ...
                           c.rules.clear();
                           for (const auto& e : split(s, ',')) {
                               auto gt = e.find('>'), colon = e.rfind(':');
                               if (gt == std::string::npos || colon == std::string::npos || colon < gt)
                                   throw std::invalid_argument("config key 'data.rules': malformed rule '" + e +
                                                               "' (expected a>b:p)");
                               c.rules.push_back({trim(e.substr(0, gt)), trim(e.substr(gt + 1, colon - gt - 1)),
                                                  parse_double("data.rules", e.substr(colon + 1))});
                           }
                       },
                       [&c] {
                           std::vector<std::string> v;
                           for (const auto& r : c.rules) v.push_back(r.a + ">" + r.b + ":" + format_double(r.p));
                           return join(v);
                       }};
    b["data.lookalikes"] = {[&c](const std::string& s) {
                                c.lookalikes.clear();
                                for (const auto& e : split(s, ',')) {
                                    auto colon = e.find(':');
                                    if (colon == std::string::npos)
                                        throw std::invalid_argument("config key 'data.lookalikes': malformed pair '" +
                                                                    e + "' (expected a:b)");
                                    c.lookalikes.emplace_back(trim(e.substr(0, colon)), trim(e.substr(colon + 1)));
                                }
                            },
                            [&c] {
                                std::vector<std::string> v;
                                for (const auto& [a, x] : c.lookalikes) v.push_back(a + ":" + x);
                                return join(v);
                            }};
    b["data.min_objects"] = uint_field("data.min_objects", c.min_objects);
    b["data.max_objects"] = uint_field("data.max_objects", c.max_objects);
    b["data.min_size"] = double_field("data.min_size", c.min_size);
    b["data.max_size"] = double_field("data.max_size", c.max_size);
    b["data.max_overlap"] = double_field("data.max_overlap", c.max_overlap);
    b["data.texture"] = double_field("data.texture", c.texture);
    b["data.train_scenes"] = uint_field("data.train_scenes", c.train_scenes);
    b["data.test_scenes"] = uint_field("data.test_scenes", c.test_scenes);
    b["data.seed"] = uint_field("data.seed", c.data_seed);
    return b;
}

}  // namespace config_detail

inline void validate(const ExperimentConfig& c) {
    if (c.blocks.size() != 4) throw std::invalid_argument("model.blocks needs exactly 4 widths");
    if (c.cf == 0 || c.ndim == 0 || c.rgat_hidden == 0 || c.kg_dim == 0)
        throw std::invalid_argument("model and detector widths must be positive");
    if (!(c.ratio > 0 && c.ratio < 1)) throw std::invalid_argument("codec.ratio must lie in (0, 1)");
    if (c.sa_snr_min > c.sa_snr_max) throw std::invalid_argument("sa.snr_min exceeds sa.snr_max");
    if (c.batch_size == 0) throw std::invalid_argument("training.batch_size must be positive");
    if (c.optimizer != "adam") throw std::invalid_argument("training.optimizer: only 'adam' is supported");
    if (!(c.lr > 0) || !(c.lr_decay > 0)) throw std::invalid_argument("learning rate and decay must be positive");
    for (double f : c.decay_fractions)
        if (!(f > 0 && f < 1)) throw std::invalid_argument("training.decay_fractions must lie in (0, 1)");
    if (!(c.nms > 0 && c.nms < 1)) throw std::invalid_argument("eval.nms must lie in (0, 1)");
    if (c.workers == 0) throw std::invalid_argument("eval.workers must be positive");
    detector::parse_proposal_mode(c.proposals);
    for (const auto& ch : c.sweep_channels) channel::parse_kind(ch);
    c.scene_spec().validate();
}

/// Parses key=value lines over the defaults; '#' starts a comment. Unknown keys are rejected.
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {}) {
    auto b = config_detail::bindings(base);
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        const auto key = config_detail::trim(line.substr(0, eq));
        auto it = b.find(key);
        if (it == b.end()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second.set(line.substr(eq + 1));
    }
    validate(base);
    return base;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Every key with its current value, sorted by key.
inline std::map<std::string, std::string> to_map(const ExperimentConfig& c) {
    ExperimentConfig copy = c;
    std::map<std::string, std::string> out;
    for (auto& [k, b] : config_detail::bindings(copy)) out[k] = b.get();
    return out;
}

inline std::string to_text(const ExperimentConfig& c) {
    std::string out;
    for (const auto& [k, v] : to_map(c)) out += k + "=" + v + "\n";
    return out;
}

/// Learning rate at an epoch: lr * decay^(number of decay points passed).
inline double learning_rate_at(const ExperimentConfig& c, std::size_t epoch) {
    double lr = c.lr;
    for (double f : c.decay_fractions)
        if (static_cast<double>(epoch) >= std::round(f * static_cast<double>(c.epochs))) lr *= c.lr_decay;
    return lr;
}

}  // namespace cogsc
