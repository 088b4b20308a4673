#pragma once

// Synthetic aerial-like scenes: coloured glyphs per class on a textured
// background, with co-occurrence rules so that context carries information.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cogsc/detector.hpp"

namespace cogsc::scene {

inline const std::vector<std::string>& dota_categories() {
    static const std::vector<std::string> names{
        "plane",         "ship",           "storage_tank",    "baseball_diamond", "tennis_court",
        "basketball_court", "ground_track_field", "harbor",   "bridge",           "large_vehicle",
        "small_vehicle", "helicopter",     "roundabout",      "soccer_ball_field", "swimming_pool"};
    return names;
}

enum class Shape { rectangle, ellipse, triangle, cross, ring, diamond };
inline constexpr std::size_t kShapes = 6;

struct Glyph {
    Shape shape = Shape::rectangle;
    std::array<double, 3> rgb{1, 1, 1};
};

/// If class a is present, with probability p one instance of class b is added.
struct Rule {
    std::string a, b;
    double p = 0;
};

struct SceneSpec {
    std::size_t width = 64;
    std::size_t height = 64;
    std::vector<std::string> categories = dota_categories();
    std::vector<Rule> rules;
    std::size_t min_objects = 1;
    std::size_t max_objects = 4;
    double min_size = 10;
    double max_size = 36;
    double max_overlap = 0.8;  // intersection over the smaller box
    double texture = 0.08;
    std::size_t placement_attempts = 200;
    /// Pairs (original, copy): the copy reuses the original's glyph with a tiny tint.
    std::vector<std::pair<std::string, std::string>> lookalikes;

    std::size_t class_index(const std::string& name) const {
        auto it = std::find(categories.begin(), categories.end(), name);
        if (it == categories.end()) throw std::invalid_argument("unknown scene class '" + name + "'");
        return static_cast<std::size_t>(it - categories.begin());
    }

    void validate() const {
        if (width == 0 || height == 0 || width % 64 != 0 || height % 64 != 0)
            throw std::invalid_argument("scene size must be a positive multiple of 64");
        if (categories.empty()) throw std::invalid_argument("scene spec has no categories");
        for (const auto& r : rules) {
            class_index(r.a);
            class_index(r.b);
            if (!(r.p >= 0 && r.p <= 1)) throw std::invalid_argument("rule probability outside [0, 1]");
        }
        for (const auto& [a, b] : lookalikes) {
            class_index(a);
            class_index(b);
        }
        if (min_objects > max_objects) throw std::invalid_argument("min_objects exceeds max_objects");
        if (!(min_size >= 2 && min_size <= max_size && max_size <= static_cast<double>(std::min(width, height))))
            throw std::invalid_argument("object size range does not fit the image");
        if (!(max_overlap >= 0 && max_overlap <= 1)) throw std::invalid_argument("max_overlap outside [0, 1]");
        if (!base_classes().size()) throw std::invalid_argument("every class is a rule target; nothing to seed scenes");
    }

    /// Classes drawn freely; rule targets appear only through their rules.
    std::vector<std::size_t> base_classes() const {
        std::vector<bool> target(categories.size(), false);
        for (const auto& r : rules) target[class_index(r.b)] = true;
        std::vector<std::size_t> out;
        for (std::size_t c = 0; c < categories.size(); ++c)
            if (!target[c]) out.push_back(c);
        return out;
    }

    std::vector<Glyph> glyphs() const {
        std::vector<Glyph> g(categories.size());
        for (std::size_t c = 0; c < categories.size(); ++c) {
            const double hue = std::fmod(0.13 + 0.618034 * static_cast<double>(c), 1.0);
            g[c].shape = static_cast<Shape>(c % kShapes);
            g[c].rgb = hsv(hue, 0.75, 0.95);
        }
        for (const auto& [a, b] : lookalikes) {
            const auto ia = class_index(a), ib = class_index(b);
            g[ib] = g[ia];
            for (auto& v : g[ib].rgb) v = std::clamp(v + 0.04, 0.0, 1.0);
        }
        return g;
    }

    static std::array<double, 3> hsv(double h, double s, double v) {
        const double c = v * s, hp = h * 6.0, x = c * (1 - std::fabs(std::fmod(hp, 2.0) - 1));
        std::array<double, 3> rgb{};
        switch (static_cast<int>(hp) % 6) {
            case 0: rgb = {c, x, 0}; break;
            case 1: rgb = {x, c, 0}; break;
            case 2: rgb = {0, c, x}; break;
            case 3: rgb = {0, x, c}; break;
            case 4: rgb = {x, 0, c}; break;
            default: rgb = {c, 0, x}; break;
        }
        for (auto& e : rgb) e += v - c;
        return rgb;
    }
};

struct Annotation {
    std::size_t class_id = 0;
    detector::Box box;
};

struct Scene {
    Tensor image;  // [3 x H x W], values in [0, 1]
    std::vector<Annotation> objects;
    std::size_t requested = 0;  // objects the sampler asked for
};

inline bool glyph_covers(Shape s, double u, double v) {
    // u, v in [0, 1] across the glyph box
    const double x = 2 * u - 1, y = 2 * v - 1;
    switch (s) {
        case Shape::rectangle: return true;
        case Shape::ellipse: return x * x + y * y <= 1.0;
        case Shape::triangle: return std::fabs(x) <= v;
        case Shape::cross: return std::fabs(x) <= 0.35 || std::fabs(y) <= 0.35;
        case Shape::ring: {
            const double r = x * x + y * y;
            return r <= 1.0 && r >= 0.3;
        }
        case Shape::diamond: return std::fabs(x) + std::fabs(y) <= 1.0;
    }
    return false;
}

namespace detail {

inline double overlap_fraction(const detector::Box& a, const detector::Box& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    return ix * iy / std::min(a.area(), b.area());
}

}  // namespace detail

/// Renders one scene. Classes are sampled first (base classes uniformly, then
/// rules in order), then placed at random integer positions; an object that
/// cannot be placed within max_overlap after the configured attempts is dropped.
inline Scene generate_scene(const SceneSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    const auto base = spec.base_classes();
    std::uniform_int_distribution<std::size_t> count_dist(spec.min_objects, spec.max_objects);
    std::uniform_int_distribution<std::size_t> base_dist(0, base.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::size_t> classes;
    const std::size_t n = count_dist(rng);
    for (std::size_t i = 0; i < n; ++i) classes.push_back(base[base_dist(rng)]);
    for (const auto& r : spec.rules) {
        const auto a = spec.class_index(r.a), b = spec.class_index(r.b);
        if (std::find(classes.begin(), classes.end(), a) != classes.end() && unit(rng) < r.p) classes.push_back(b);
    }

    Scene sc;
    sc.requested = classes.size();
    const double W = static_cast<double>(spec.width), H = static_cast<double>(spec.height);
    std::uniform_int_distribution<int> size_dist(static_cast<int>(std::ceil(spec.min_size)),
                                                 static_cast<int>(std::floor(spec.max_size)));
    for (auto c : classes) {
        for (std::size_t attempt = 0; attempt < spec.placement_attempts; ++attempt) {
            const double w = size_dist(rng), h = size_dist(rng);
            std::uniform_int_distribution<int> xd(0, static_cast<int>(W - w)), yd(0, static_cast<int>(H - h));
            detector::Box b{double(xd(rng)), double(yd(rng)), w, h};
            bool ok = true;
            for (const auto& o : sc.objects)
                if (detail::overlap_fraction(b, o.box) > spec.max_overlap) ok = false;
            if (ok) {
                sc.objects.push_back({c, b});
                break;
            }
        }
    }

    // Background: base tone, a soft gradient and per-pixel texture.
    const std::size_t h = spec.height, w = spec.width, plane = h * w;
    std::vector<double> px(3 * plane);
    const std::array<double, 3> tone{0.32 + 0.06 * unit(rng), 0.36 + 0.06 * unit(rng), 0.30 + 0.06 * unit(rng)};
    const double gx = 0.1 * (unit(rng) - 0.5), gy = 0.1 * (unit(rng) - 0.5);
    std::uniform_real_distribution<double> tex(-spec.texture, spec.texture);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double grad = gx * (double(x) / W - 0.5) + gy * (double(y) / H - 0.5);
            const double t = tex(rng);
            for (std::size_t ch = 0; ch < 3; ++ch)
                px[ch * plane + y * w + x] = std::clamp(tone[ch] + grad + t, 0.0, 1.0);
        }
    const auto glyphs = spec.glyphs();
    for (const auto& o : sc.objects) {
        const auto& g = glyphs[o.class_id];
        const auto x0 = static_cast<std::size_t>(o.box.x), y0 = static_cast<std::size_t>(o.box.y);
        const auto bw = static_cast<std::size_t>(o.box.w), bh = static_cast<std::size_t>(o.box.h);
        for (std::size_t y = y0; y < y0 + bh; ++y)
            for (std::size_t x = x0; x < x0 + bw; ++x) {
                const double u = (double(x - x0) + 0.5) / o.box.w, v = (double(y - y0) + 0.5) / o.box.h;
                if (!glyph_covers(g.shape, u, v)) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) px[ch * plane + y * w + x] = g.rgb[ch];
            }
    }
    sc.image = Tensor({3, h, w}, std::move(px));
    return sc;
}

/// Independent per-scene seed so a scene depends only on (seed, index).
inline std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::vector<Scene> generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
    std::vector<Scene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::mt19937_64 rng(scene_seed(seed, i));
        out.push_back(generate_scene(spec, rng));
    }
    return out;
}

}  // namespace cogsc::scene
