#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary. Nothing here calls into the code under test beyond the
// plain data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cogsc/cogsc.hpp"

namespace support {

using cogsc::Tensor;

inline Tensor random_tensor(cogsc::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(cogsc::numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Central finite differences

/// Relative error with a floor of 1e-3 on the denominator, so gradients that are
/// zero up to rounding are judged on absolute error.
inline double relative_error(double analytic, double numeric) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
}

struct GradCheck {
    double max_rel = 0;
    std::size_t checked = 0;
};

/// Compares analytic gradients of a scalar function against central differences
/// for every element of every input. f must rebuild its graph on each call.
inline GradCheck check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-5) {
    for (auto& t : inputs) t.zero_grad();
    f().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) analytic.push_back(t.grad_or_zero());
    GradCheck r;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto d = inputs[k].data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double keep = d[i];
            d[i] = keep + h;
            const double up = f().item();
            d[i] = keep - h;
            const double down = f().item();
            d[i] = keep;
            r.max_rel = std::max(r.max_rel, relative_error(analytic[k][i], (up - down) / (2 * h)));
            ++r.checked;
        }
    }
    return r;
}

/// Scalar loss sum(y * probe) for a fixed random probe, keeping outputs O(1) and
/// exercising every output element with a distinct weight.
inline Tensor probe_loss(const Tensor& y, const Tensor& probe) {
    return cogsc::sum(cogsc::elementwise_mul(y, probe));
}

// ---------------------------------------------------------------------------
// Convolution oracles

inline std::vector<double> naive_conv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
    const long cin = long(x.dim(0)), h = long(x.dim(1)), wd = long(x.dim(2));
    const long cout = long(w.dim(0)), k = long(w.dim(2)), s = long(stride), p = long(pad);
    const long oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
    std::vector<double> y(std::size_t(cout * oh * ow), 0.0);
    for (long co = 0; co < cout; ++co)
        for (long oy = 0; oy < oh; ++oy)
            for (long ox = 0; ox < ow; ++ox) {
                double acc = 0;
                for (long ci = 0; ci < cin; ++ci)
                    for (long ky = 0; ky < k; ++ky)
                        for (long kx = 0; kx < k; ++kx) {
                            const long iy = oy * s - p + ky, ix = ox * s - p + kx;
                            if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                            acc += x[std::size_t((ci * h + iy) * wd + ix)] *
                                   w[std::size_t(((co * cin + ci) * k + ky) * k + kx)];
                        }
                y[std::size_t((co * oh + oy) * ow + ox)] = acc;
            }
    return y;
}

/// Transposed convolution by scattering each input value through the kernel;
/// weight layout [cin x cout x k x k].
inline std::vector<double> naive_deconv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
    const long cin = long(x.dim(0)), h = long(x.dim(1)), wd = long(x.dim(2));
    const long cout = long(w.dim(1)), k = long(w.dim(2)), s = long(stride), p = long(pad);
    const long oh = (h - 1) * s - 2 * p + k, ow = (wd - 1) * s - 2 * p + k;
    std::vector<double> y(std::size_t(cout * oh * ow), 0.0);
    for (long ci = 0; ci < cin; ++ci)
        for (long iy = 0; iy < h; ++iy)
            for (long ix = 0; ix < wd; ++ix)
                for (long co = 0; co < cout; ++co)
                    for (long ky = 0; ky < k; ++ky)
                        for (long kx = 0; kx < k; ++kx) {
                            const long oy = iy * s - p + ky, ox = ix * s - p + kx;
                            if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
                            y[std::size_t((co * oh + oy) * ow + ox)] +=
                                x[std::size_t((ci * h + iy) * wd + ix)] *
                                w[std::size_t(((ci * cout + co) * k + ky) * k + kx)];
                        }
    return y;
}

// ---------------------------------------------------------------------------
// Detection oracles

inline double box_iou(const cogsc::detector::Box& a, const cogsc::detector::Box& b) {
    const double x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
    const double x1 = std::min(a.x + a.w, b.x + b.w), y1 = std::min(a.y + a.h, b.y + b.h);
    const double inter = (x1 > x0 && y1 > y0) ? (x1 - x0) * (y1 - y0) : 0.0;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Quadratic greedy NMS: repeatedly take the highest-scoring remaining box of
/// each (image, class) and drop everything overlapping it above the threshold.
inline std::vector<cogsc::detector::Detection> reference_nms(std::vector<cogsc::detector::Detection> dets,
                                                             double thr, std::size_t cap) {
    using cogsc::detector::Detection;
    std::vector<Detection> kept;
    std::vector<bool> alive(dets.size(), true);
    while (true) {
        int best = -1;
        for (std::size_t i = 0; i < dets.size(); ++i)
            if (alive[i] && (best < 0 || dets[i].confidence > dets[std::size_t(best)].confidence)) best = int(i);
        if (best < 0) break;
        const auto b = dets[std::size_t(best)];
        alive[std::size_t(best)] = false;
        kept.push_back(b);
        for (std::size_t j = 0; j < dets.size(); ++j)
            if (alive[j] && dets[j].image_id == b.image_id && dets[j].class_id == b.class_id &&
                box_iou(dets[j].box, b.box) > thr)
                alive[j] = false;
    }
    std::stable_sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
        if (a.image_id != b.image_id) return a.image_id < b.image_id;
        return a.confidence > b.confidence;
    });
    std::vector<Detection> out;
    std::map<std::size_t, std::size_t> per;
    for (const auto& d : kept)
        if (per[d.image_id]++ < cap) out.push_back(d);
    return out;
}

/// True positives among the first n detections (descending confidence), matching
/// from scratch: each detection takes the best-overlapping unmatched ground truth.
inline std::size_t prefix_true_positives(const std::vector<cogsc::detector::Detection>& sorted, std::size_t n,
                                         const std::vector<cogsc::detector::GroundTruth>& gts, double thr) {
    std::vector<bool> used(gts.size(), false);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        int best = -1;
        double best_iou = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].image_id != sorted[i].image_id) continue;
            const double o = box_iou(sorted[i].box, gts[g].box);
            if (o >= thr && o > best_iou) {
                best = int(g);
                best_iou = o;
            }
        }
        if (best >= 0) {
            used[std::size_t(best)] = true;
            ++tp;
        }
    }
    return tp;
}

/// Exhaustive PR-curve evaluation of one class: precision and recall at every
/// prefix of the ranking, then for each of the 101 recall levels the best
/// precision attained at any operating point reaching that recall.
inline double reference_ap(const std::vector<cogsc::detector::Detection>& dets,
                           const std::vector<cogsc::detector::GroundTruth>& gts, std::size_t cls, double thr) {
    std::vector<cogsc::detector::Detection> d;
    for (const auto& x : dets)
        if (x.class_id == cls) d.push_back(x);
    std::vector<cogsc::detector::GroundTruth> g;
    for (const auto& x : gts)
        if (x.class_id == cls) g.push_back(x);
    std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
    std::vector<std::pair<double, double>> points;  // (recall, precision)
    for (std::size_t n = 1; n <= d.size(); ++n) {
        const double tp = double(prefix_true_positives(d, n, g, thr));
        points.emplace_back(tp / double(g.size()), tp / double(n));
    }
    double total = 0;
    for (int r = 0; r <= 100; ++r) {
        double best = 0;
        for (auto [rec, prec] : points)
            if (rec >= r / 100.0 - 1e-12) best = std::max(best, prec);
        total += best;
    }
    return total / 101.0;
}

// ---------------------------------------------------------------------------
// Random detector fixtures

inline cogsc::detector::Box random_box(std::mt19937_64& rng, double extent = 64) {
    std::uniform_real_distribution<double> pos(0, extent * 0.7), size(4, extent * 0.4);
    return {pos(rng), pos(rng), size(rng), size(rng)};
}

inline std::vector<cogsc::detector::Detection> random_detections(std::mt19937_64& rng, std::size_t n,
                                                                 std::size_t images, std::size_t classes) {
    std::uniform_int_distribution<std::size_t> img(0, images - 1), cls(0, classes - 1);
    std::uniform_real_distribution<double> conf(0, 1);
    std::vector<cogsc::detector::Detection> d;
    for (std::size_t i = 0; i < n; ++i) d.push_back({img(rng), cls(rng), conf(rng), random_box(rng)});
    return d;
}

struct ToyGraph {
    Tensor proposals, scores, kg, embeddings;
    std::vector<std::size_t> rows, group;
};

inline ToyGraph toy_graph(std::mt19937_64& rng, std::size_t m, std::size_t k, std::size_t c, std::size_t dim,
                          std::size_t images = 1) {
    ToyGraph t;
    t.proposals = random_tensor({m, dim}, rng, -1, 1, true);
    t.scores = cogsc::softmax(random_tensor({m, c}, rng, -2, 2));
    t.kg = random_tensor({k, dim}, rng);
    t.embeddings = random_tensor({k, 5}, rng);
    for (std::size_t i = 0; i < c; ++i) t.rows.push_back(i % k);
    for (std::size_t i = 0; i < m; ++i) t.group.push_back(i % images);
    return t;
}

// ---------------------------------------------------------------------------
// Small model configuration used by harness-level tests

inline cogsc::ExperimentConfig tiny_config() {
    cogsc::ExperimentConfig c;
    c.blocks = {4, 8, 8, 8};
    c.cf = 4;
    c.ratio = 1.0 / 24;
    c.batch_size = 4;
    c.lr = 3e-3;
    c.epochs = 3;
    c.checkpoint = "";
    c.kg_source = std::string(COGSC_SOURCE_DIR) + "/data/kg_source.tsv";
    c.kg_synonyms = std::string(COGSC_SOURCE_DIR) + "/data/synonyms.tsv";
    c.kg_walks = 4;
    c.kg_epochs = 5;
    c.ndim = 8;
    c.rgat_hidden = 8;
    c.rgat_layers = 2;
    c.categories = {"plane", "ship", "storage_tank", "harbor", "large_vehicle", "roundabout"};
    c.rules = {{"harbor", "ship", 0.9}, {"roundabout", "large_vehicle", 0.9}};
    c.train_scenes = 16;
    c.test_scenes = 8;
    return c;
}

}  // namespace support
