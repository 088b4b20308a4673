#pragma once

// Transmitter-side semantic extraction (residual backbone, SNR-adaptive
// channel attention, FPN-lite) and the parallel multi-scale codec.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cogsc/channel.hpp"
#include "cogsc/layers.hpp"

namespace cogsc::pipeline {

inline constexpr std::size_t kLevels = 5;  // F2 .. F6

struct MultiScaleFeatures {
    std::vector<Tensor> levels;

    const Tensor& operator[](std::size_t i) const { return levels.at(i); }
    std::size_t size() const { return levels.size(); }
};

/// Codes per level, or a single entry when the scales are spliced into one codec.
struct EncodedFeatures {
    std::vector<Tensor> levels;

    std::size_t real_count() const {
        std::size_t n = 0;
        for (const auto& t : levels) n += t.size();
        return n;
    }
    /// Complex symbols on the air; odd blocks carry one zero pad real.
    std::size_t symbol_count() const {
        std::size_t n = 0;
        for (const auto& t : levels) n += (t.size() + 1) / 2;
        return n;
    }
};

struct PipelineConfig {
    std::size_t image_h = 64;
    std::size_t image_w = 64;
    std::vector<std::size_t> blocks{16, 32, 64, 128};
    std::size_t cf = 16;
    std::size_t cenc = 8;
    bool sa_enabled = true;
    bool multiscale = true;
};

struct LevelDims {
    std::size_t h, w;
};

/// Spatial sizes of F2..F6 for an image; requires both sides divisible by 64.
inline std::vector<LevelDims> level_dims(std::size_t image_h, std::size_t image_w) {
    if (image_h == 0 || image_w == 0 || image_h % 64 != 0 || image_w % 64 != 0)
        throw std::invalid_argument("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                                    " must be a positive multiple of 64 in both dimensions");
    std::vector<LevelDims> d;
    for (std::size_t t = 2; t <= 6; ++t) d.push_back({image_h >> t, image_w >> t});
    return d;
}

/// A level of spatial size 1 keeps its resolution in the codec (no halving).
inline bool halves(const LevelDims& d) { return d.h > 1 && d.w > 1; }

inline std::size_t coded_cells(const LevelDims& d) { return halves(d) ? (d.h / 2) * (d.w / 2) : d.h * d.w; }

// ---------------------------------------------------------------------------
// Bandwidth compression ratio

struct RatioChoice {
    std::size_t channels = 0;
    std::size_t symbols = 0;  ///< complex channel uses k
    double achieved = 0;      ///< k / n
};

inline std::size_t symbols_for_channels(std::size_t channels, const std::vector<LevelDims>& coded_levels) {
    std::size_t k = 0;
    for (const auto& d : coded_levels) k += (channels * coded_cells(d) + 1) / 2;
    return k;
}

/// Largest per-level code channel count C >= 1 whose symbol count k keeps k/n <= ratio.
inline RatioChoice channels_for_ratio(double ratio, std::size_t n, const std::vector<LevelDims>& coded_levels) {
    if (!(ratio > 0 && ratio < 1)) throw std::invalid_argument("compression ratio must lie in (0, 1)");
    if (n == 0 || coded_levels.empty()) throw std::invalid_argument("channels_for_ratio: empty source");
    const double budget = ratio * static_cast<double>(n);
    const std::size_t k1 = symbols_for_channels(1, coded_levels);
    if (static_cast<double>(k1) > budget)
        throw std::invalid_argument("compression ratio " + std::to_string(ratio) +
                                    " is infeasible; minimum achievable ratio is " +
                                    std::to_string(static_cast<double>(k1) / static_cast<double>(n)));
    std::size_t c = 1;
    while (static_cast<double>(symbols_for_channels(c + 1, coded_levels)) <= budget) ++c;
    RatioChoice r;
    r.channels = c;
    r.symbols = symbols_for_channels(c, coded_levels);
    r.achieved = static_cast<double>(r.symbols) / static_cast<double>(n);
    return r;
}

/// Levels that go through the codec for a given layout.
inline std::vector<LevelDims> coded_level_dims(std::size_t image_h, std::size_t image_w, bool multiscale) {
    auto dims = level_dims(image_h, image_w);
    if (multiscale) return dims;
    return {dims.front()};
}

// ---------------------------------------------------------------------------
// SA module

inline std::size_t sa_hidden_width(std::size_t channels) { return std::max<std::size_t>(4, channels / 4); }

/// SNR context fed to the attention MLP: dB clamped to [-30, 30] then divided by 20.
/// A noiseless link maps to the upper clamp.
inline double sa_context(double snr_db) { return std::clamp(snr_db, -30.0, 30.0) / 20.0; }

struct SAParams {
    Tensor w1;  // [(C+1) x h]
    Tensor b1;  // [h]
    Tensor w2;  // [h x C]
    Tensor b2;  // [C]

    static SAParams make(ParameterSet& ps, const std::string& name, std::size_t channels, std::mt19937_64& rng) {
        const std::size_t h = sa_hidden_width(channels);
        SAParams p;
        p.w1 = ps.add(name + ".w1", xavier_uniform({channels + 1, h}, channels + 1, h, rng));
        p.b1 = ps.add(name + ".b1", zeros_param({h}));
        p.w2 = ps.add(name + ".w2", xavier_uniform({h, channels}, h, channels, rng));
        p.b2 = ps.add(name + ".b2", zeros_param({channels}));
        return p;
    }
};

/// Channel attention conditioned on SNR:
///   p = GAP(O); s = sigmoid(W2 relu(W1 [p, mu] + b1) + b2); Q[i] = s_i O[i].
inline Tensor sa_forward(const Tensor& features, double snr_db, const SAParams& p) {
    require_rank(features, 3, "sa_forward");
    if (p.w1.dim(0) != features.dim(0) + 1)
        throw ShapeError("sa_forward: W1 " + shape_str(p.w1.shape()) + " does not fit " +
                         std::to_string(features.dim(0)) + " channels + SNR");
    Tensor pooled = global_average_pool(features);
    Tensor context = concat({pooled, Tensor::scalar(sa_context(snr_db))});
    Tensor hidden = relu(fully_connected(context, p.w1, p.b1));
    Tensor weights = sigmoid(fully_connected(hidden, p.w2, p.b2));
    return channel_scale(features, weights);
}

// ---------------------------------------------------------------------------
// Building blocks

struct ResidualBlock {
    Conv conv1, conv2;
    std::optional<Conv> shortcut;

    static ResidualBlock make(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout,
                              std::size_t stride, std::mt19937_64& rng) {
        ResidualBlock b;
        b.conv1 = Conv::make(ps, name + ".conv1", cin, cout, 3, stride, 1, rng);
        b.conv2 = Conv::make(ps, name + ".conv2", cout, cout, 3, 1, 1, rng);
        if (cin != cout || stride != 1) b.shortcut = Conv::make(ps, name + ".shortcut", cin, cout, 1, stride, 0, rng);
        return b;
    }

    Tensor operator()(const Tensor& x) const {
        Tensor y = conv2(relu(conv1(x)));
        return relu(add(y, shortcut ? (*shortcut)(x) : x));
    }
};

struct DeconvResidualBlock {
    Deconv deconv1, deconv2;

    static DeconvResidualBlock make(ParameterSet& ps, const std::string& name, std::size_t c, std::mt19937_64& rng) {
        return {Deconv::make(ps, name + ".deconv1", c, c, 3, 1, 1, rng),
                Deconv::make(ps, name + ".deconv2", c, c, 3, 1, 1, rng)};
    }

    Tensor operator()(const Tensor& x) const { return relu(add(deconv2(relu(deconv1(x))), x)); }
};

// ---------------------------------------------------------------------------
// Extractor: stem -> 4 x (residual block, SA) -> FPN-lite -> F2..F6

class Extractor {
public:
    Extractor() = default;

    Extractor(ParameterSet& ps, const PipelineConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
        if (cfg.blocks.size() != 4) throw std::invalid_argument("backbone needs exactly 4 block widths");
        stem_ = Conv::make(ps, "extractor.stem", 3, cfg.blocks[0], 3, 2, 1, rng);
        std::size_t cin = cfg.blocks[0];
        for (std::size_t i = 0; i < 4; ++i) {
            const auto tag = std::to_string(i + 1);
            blocks_.push_back(ResidualBlock::make(ps, "extractor.block" + tag, cin, cfg.blocks[i], 2, rng));
            if (cfg.sa_enabled) sa_.push_back(SAParams::make(ps, "extractor.sa" + tag, cfg.blocks[i], rng));
            lateral_.push_back(Conv::make(ps, "extractor.lateral" + tag, cfg.blocks[i], cfg.cf, 1, 1, 0, rng));
            output_.push_back(Conv::make(ps, "extractor.output" + tag, cfg.cf, cfg.cf, 3, 1, 1, rng));
            cin = cfg.blocks[i];
        }
        top_ = Conv::make(ps, "extractor.p6", cfg.cf, cfg.cf, 3, 2, 1, rng);
    }

    const std::vector<SAParams>& sa_params() const { return sa_; }

    MultiScaleFeatures operator()(const Tensor& image, double snr_db) const {
        require_rank(image, 3, "extract");
        if (image.dim(0) != 3) throw ShapeError("extract: image must have 3 channels, got " + shape_str(image.shape()));
        if (image.dim(1) != cfg_.image_h || image.dim(2) != cfg_.image_w)
            throw ShapeError("extract: model configured for " + std::to_string(cfg_.image_h) + "x" +
                             std::to_string(cfg_.image_w) + " images, got " + shape_str(image.shape()));
        level_dims(image.dim(1), image.dim(2));

        std::vector<Tensor> stages;
        Tensor x = relu(stem_(image));
        for (std::size_t i = 0; i < 4; ++i) {
            x = blocks_[i](x);
            if (cfg_.sa_enabled) x = sa_forward(x, snr_db, sa_[i]);
            stages.push_back(x);
        }
        // Top-down pathway.
        std::vector<Tensor> merged(4);
        merged[3] = lateral_[3](stages[3]);
        for (int i = 2; i >= 0; --i)
            merged[i] = add(lateral_[i](stages[i]), upsample_nearest(merged[i + 1], 2));
        MultiScaleFeatures f;
        for (std::size_t i = 0; i < 4; ++i) f.levels.push_back(output_[i](merged[i]));
        f.levels.push_back(top_(f.levels[3]));
        return f;
    }

private:
    PipelineConfig cfg_;
    Conv stem_;
    std::vector<ResidualBlock> blocks_;
    std::vector<SAParams> sa_;
    std::vector<Conv> lateral_, output_;
    Conv top_;
};

// ---------------------------------------------------------------------------
// Single-scale codec: Conv(C,3,1) -> residual -> Conv(C,3,2); decoder mirrors with deconvolutions.

struct LevelEncoder {
    Conv reduce;
    ResidualBlock residual;
    Conv downscale;

    static LevelEncoder make(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cenc,
                             bool halve, std::mt19937_64& rng) {
        return {Conv::make(ps, name + ".reduce", cin, cenc, 3, 1, 1, rng),
                ResidualBlock::make(ps, name + ".residual", cenc, cenc, 1, rng),
                Conv::make(ps, name + ".downscale", cenc, cenc, 3, halve ? 2 : 1, 1, rng)};
    }

    Tensor operator()(const Tensor& x) const { return downscale(residual(relu(reduce(x)))); }
};

struct LevelDecoder {
    Deconv upscale;
    DeconvResidualBlock residual;
    Deconv expand;

    static LevelDecoder make(ParameterSet& ps, const std::string& name, std::size_t cenc, std::size_t cout,
                             bool halve, std::mt19937_64& rng) {
        return {halve ? Deconv::make(ps, name + ".upscale", cenc, cenc, 4, 2, 1, rng)
                      : Deconv::make(ps, name + ".upscale", cenc, cenc, 3, 1, 1, rng),
                DeconvResidualBlock::make(ps, name + ".residual", cenc, rng),
                Deconv::make(ps, name + ".expand", cenc, cout, 3, 1, 1, rng)};
    }

    Tensor operator()(const Tensor& c) const { return expand(residual(relu(upscale(c)))); }
};

class Codec {
public:
    Codec() = default;

    Codec(ParameterSet& ps, const PipelineConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
        dims_ = level_dims(cfg.image_h, cfg.image_w);
        if (cfg.multiscale) {
            for (std::size_t t = 0; t < kLevels; ++t) {
                const auto tag = "codec.level" + std::to_string(t + 2);
                encoders_.push_back(LevelEncoder::make(ps, tag + ".enc", cfg.cf, cfg.cenc, halves(dims_[t]), rng));
                decoders_.push_back(LevelDecoder::make(ps, tag + ".dec", cfg.cenc, cfg.cf, halves(dims_[t]), rng));
            }
        } else {
            const std::size_t stacked = cfg.cf * kLevels;
            encoders_.push_back(LevelEncoder::make(ps, "codec.spliced.enc", stacked, cfg.cenc, true, rng));
            decoders_.push_back(LevelDecoder::make(ps, "codec.spliced.dec", cfg.cenc, stacked, true, rng));
        }
    }

    EncodedFeatures encode(const MultiScaleFeatures& f) const {
        check_features(f, "encode");
        EncodedFeatures out;
        if (cfg_.multiscale) {
            for (std::size_t t = 0; t < kLevels; ++t) out.levels.push_back(encoders_[t](f[t]));
        } else {
            std::vector<Tensor> parts;
            for (std::size_t t = 0; t < kLevels; ++t) parts.push_back(upsample_nearest(f[t], dims_[0].h / dims_[t].h));
            out.levels.push_back(encoders_[0](concat(parts)));
        }
        return out;
    }

    MultiScaleFeatures decode(const EncodedFeatures& code) const {
        const std::size_t expect = cfg_.multiscale ? kLevels : 1;
        if (code.levels.size() != expect)
            throw ShapeError("decode: expected " + std::to_string(expect) + " code blocks, got " +
                             std::to_string(code.levels.size()));
        for (std::size_t t = 0; t < expect; ++t) {
            const auto& d = dims_[t];
            Shape want{cfg_.cenc, halves(d) ? d.h / 2 : d.h, halves(d) ? d.w / 2 : d.w};
            if (code.levels[t].shape() != want)
                throw ShapeError("decode: code block " + std::to_string(t) + " has shape " +
                                 shape_str(code.levels[t].shape()) + ", expected " + shape_str(want));
        }
        MultiScaleFeatures f;
        if (cfg_.multiscale) {
            for (std::size_t t = 0; t < kLevels; ++t) f.levels.push_back(decoders_[t](code.levels[t]));
        } else {
            Tensor stacked = decoders_[0](code.levels[0]);
            for (std::size_t t = 0; t < kLevels; ++t) {
                Tensor part = slice(stacked, t * cfg_.cf, (t + 1) * cfg_.cf);
                f.levels.push_back(avg_pool(part, dims_[0].h / dims_[t].h));
            }
        }
        return f;
    }

    const std::vector<LevelEncoder>& encoders() const { return encoders_; }

private:
    void check_features(const MultiScaleFeatures& f, const char* op) const {
        if (f.size() != kLevels)
            throw ShapeError(std::string(op) + ": expected 5 feature levels, got " + std::to_string(f.size()));
        for (std::size_t t = 0; t < kLevels; ++t) {
            Shape want{cfg_.cf, dims_[t].h, dims_[t].w};
            if (f[t].shape() != want)
                throw ShapeError(std::string(op) + ": level F" + std::to_string(t + 2) + " has shape " +
                                 shape_str(f[t].shape()) + ", expected " + shape_str(want));
            if (halves(dims_[t]) && (dims_[t].h % 2 || dims_[t].w % 2))
                throw ShapeError(std::string(op) + ": odd spatial size at level F" + std::to_string(t + 2));
        }
    }

    PipelineConfig cfg_;
    std::vector<LevelDims> dims_;
    std::vector<LevelEncoder> encoders_;
    std::vector<LevelDecoder> decoders_;
};

// ---------------------------------------------------------------------------
// Channel stage: each code block is flattened, paired into complex symbols,
// power-normalized and sent as one block (one fading gain per block).

struct LinkConfig {
    channel::Kind kind = channel::Kind::awgn;
    double noise_power = 0.0;
    double power = 1.0;
};

inline EncodedFeatures transmit_features(const EncodedFeatures& code, const LinkConfig& link, std::mt19937_64& rng) {
    EncodedFeatures out;
    for (const auto& block : code.levels) {
        Tensor flat = flatten(block);
        const bool pad = flat.size() % 2 != 0;
        if (pad) flat = concat({flat, Tensor::scalar(0.0)});
        // An all-zero block has no direction to scale; it goes out as silence.
        const auto& v = flat.values();
        const bool silent = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
        Tensor z = silent ? flat : channel::power_normalize(flat, link.power);
        Tensor received = channel::transmit(z, link.kind, link.noise_power, rng);
        if (pad) received = slice(received, 0, block.size());
        out.levels.push_back(reshape(received, block.shape()));
    }
    return out;
}

}  // namespace cogsc::pipeline
