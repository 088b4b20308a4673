#pragma once

// Complex baseband channel: power normalization, AWGN and block Rayleigh fading.
//
// SNR is P / sigma^2 in decibels with P the post-normalization average
// symbol power. Noise is circularly symmetric: re and im are independent
// N(0, sigma^2 / 2), so E|w|^2 = sigma^2.

#include <cmath>
#include <complex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cogsc/tensor.hpp"

namespace cogsc::channel {

using Complex = std::complex<double>;

struct ComplexVector {
    std::vector<Complex> values;

    std::size_t size() const { return values.size(); }
    double average_power() const {
        double s = 0;
        for (const auto& v : values) s += std::norm(v);
        return s / static_cast<double>(values.size());
    }
};

enum class Kind { awgn, rayleigh };

inline std::string to_string(Kind k) { return k == Kind::awgn ? "awgn" : "rayleigh"; }

inline Kind parse_kind(const std::string& s) {
    if (s == "awgn") return Kind::awgn;
    if (s == "rayleigh") return Kind::rayleigh;
    throw std::invalid_argument("unknown channel kind '" + s + "' (expected awgn or rayleigh)");
}

struct ChannelConfig {
    Kind kind = Kind::awgn;
    double snr_db = 0.0;  ///< +inf means noiseless
    double power = 1.0;
    std::uint64_t seed = 1;

    bool noiseless() const { return std::isinf(snr_db) && snr_db > 0; }

    void validate() const {
        if (!(power > 0)) throw std::invalid_argument("channel power must be > 0");
        if (std::isnan(snr_db) || (std::isinf(snr_db) && snr_db < 0))
            throw std::invalid_argument("channel snr_db must be finite or +inf");
    }
};

inline double snr_to_noise_power(double snr_db, double power) {
    if (!(power > 0)) throw std::invalid_argument("snr_to_noise_power: power must be > 0");
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    return power / std::pow(10.0, snr_db / 10.0);
}

/// (v[2i], v[2i+1]) -> v[2i] + j v[2i+1]
inline ComplexVector to_complex(std::span<const double> v) {
    if (v.size() % 2 != 0)
        throw std::invalid_argument("to_complex: odd length " + std::to_string(v.size()));
    if (v.empty()) throw std::invalid_argument("to_complex: empty input");
    ComplexVector out;
    out.values.reserve(v.size() / 2);
    for (std::size_t i = 0; i < v.size(); i += 2) out.values.emplace_back(v[i], v[i + 1]);
    return out;
}

inline std::vector<double> from_complex(const ComplexVector& z) {
    std::vector<double> v;
    v.reserve(2 * z.size());
    for (const auto& c : z.values) {
        v.push_back(c.real());
        v.push_back(c.imag());
    }
    return v;
}

/// z = sqrt(K P) z~ / sqrt(z~* z~)
inline ComplexVector power_normalize(const ComplexVector& zt, double power) {
    if (!(power > 0)) throw std::invalid_argument("power_normalize: power must be > 0");
    double energy = 0;
    for (const auto& v : zt.values) energy += std::norm(v);
    if (!(energy > 0)) throw std::invalid_argument("power_normalize: all-zero input cannot be normalized");
    const double k = static_cast<double>(zt.size());
    const double gain = std::sqrt(k * power) / std::sqrt(energy);
    ComplexVector z;
    z.values.reserve(zt.size());
    for (const auto& v : zt.values) z.values.push_back(gain * v);
    return z;
}

/// One draw from CN(0, variance).
inline Complex complex_gaussian(double variance, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
    const double re = n(rng);
    const double im = n(rng);
    return {re, im};
}

inline ComplexVector transmit_awgn(const ComplexVector& z, double noise_power, std::mt19937_64& rng) {
    if (noise_power < 0) throw std::invalid_argument("transmit_awgn: negative noise power");
    ComplexVector out = z;
    if (noise_power == 0) return out;
    for (auto& v : out.values) v += complex_gaussian(noise_power, rng);
    return out;
}

struct FadedBlock {
    ComplexVector received;
    Complex gain;
};

/// z^ = g z + w with g ~ CN(0, 1) drawn once for the block.
inline FadedBlock transmit_rayleigh(const ComplexVector& z, double noise_power, std::mt19937_64& rng) {
    if (noise_power < 0) throw std::invalid_argument("transmit_rayleigh: negative noise power");
    FadedBlock out;
    out.gain = complex_gaussian(1.0, rng);
    out.received.values.reserve(z.size());
    for (const auto& v : z.values) out.received.values.push_back(out.gain * v);
    if (noise_power > 0)
        for (auto& v : out.received.values) v += complex_gaussian(noise_power, rng);
    return out;
}

/// Zero-forcing with perfect CSI: z^ / g.
inline ComplexVector equalize(const ComplexVector& received, Complex gain) {
    if (std::abs(gain) == 0.0) throw std::invalid_argument("equalize: zero channel gain");
    ComplexVector out;
    out.values.reserve(received.size());
    for (const auto& v : received.values) out.values.push_back(v / gain);
    return out;
}

/// Full link for one block of real symbols: normalize is assumed done by the
/// caller; returns the equalized received block as reals.
inline std::vector<double> pass_block(std::span<const double> reals, Kind kind, double noise_power,
                                      std::mt19937_64& rng) {
    auto z = to_complex(reals);
    if (kind == Kind::awgn) return from_complex(transmit_awgn(z, noise_power, rng));
    auto faded = transmit_rayleigh(z, noise_power, rng);
    return from_complex(equalize(faded.received, faded.gain));
}

// ---------------------------------------------------------------------------
// Differentiable wrappers used inside the learned pipeline.

/// Tensor version of power_normalize over interleaved (re, im) reals.
inline Tensor power_normalize(const Tensor& x, double power) {
    if (x.size() % 2 != 0) throw ShapeError("power_normalize: odd real count " + std::to_string(x.size()));
    double energy = 0;
    for (double v : x.values()) energy += v * v;
    if (!(energy > 0)) throw std::invalid_argument("power_normalize: all-zero input cannot be normalized");
    const double k = static_cast<double>(x.size() / 2);
    const double norm = std::sqrt(energy);
    const double gain = std::sqrt(k * power) / norm;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gain * x[i];
    return detail::make_result(x.shape(), std::move(out), {x}, [x, gain, norm](detail::Node& self) {
        if (!x.requires_grad()) return;
        // y = gain * x with gain = c / |x|: dy/dx = gain (I - x x^T / |x|^2)
        double dot = 0;
        for (std::size_t i = 0; i < x.size(); ++i) dot += self.grad[i] * x[i];
        auto& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i) g[i] += gain * (self.grad[i] - x[i] * dot / (norm * norm));
    });
}

/// Passes a normalized real block through the channel. The equalized output
/// is z + w/g, so the Jacobian w.r.t. z is the identity.
inline Tensor transmit(const Tensor& x, Kind kind, double noise_power, std::mt19937_64& rng) {
    auto y = pass_block(x.values(), kind, noise_power, rng);
    return detail::make_result(x.shape(), std::move(y), {x},
                               [x](detail::Node& self) { detail::accumulate(x, self.grad); });
}

}  // namespace cogsc::channel
