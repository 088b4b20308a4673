#pragma once

// Receiver-side detection: proposal features, initial classification,
// weighted-graph assembly over proposals and knowledge-graph nodes,
// relational graph attention, final heads, multi-task loss, NMS and AP.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cogsc/knowledge.hpp"
#include "cogsc/layers.hpp"
#include "cogsc/pipeline.hpp"

namespace cogsc::detector {

// ---------------------------------------------------------------------------
// Boxes

/// Axis-aligned box; (x, y) is the top-left corner, in pixels.
struct Box {
    double x = 0, y = 0, w = 0, h = 0;

    double area() const { return w * h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    bool operator==(const Box&) const = default;
};

inline double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

using BoxDelta = std::array<double, 4>;

/// (dx/w, dy/h, log(w'/w), log(h'/h)) of target relative to proposal, on box centres.
inline BoxDelta encode_box(const Box& proposal, const Box& target) {
    return {(target.cx() - proposal.cx()) / proposal.w, (target.cy() - proposal.cy()) / proposal.h,
            std::log(target.w / proposal.w), std::log(target.h / proposal.h)};
}

inline Box decode_box(const Box& proposal, const BoxDelta& t) {
    const double cx = proposal.cx() + t[0] * proposal.w;
    const double cy = proposal.cy() + t[1] * proposal.h;
    const double w = proposal.w * std::exp(std::clamp(t[2], -4.0, 4.0));
    const double h = proposal.h * std::exp(std::clamp(t[3], -4.0, 4.0));
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
}

struct GroundTruth {
    std::size_t image_id = 0;
    std::size_t class_id = 0;
    Box box;
};

struct Detection {
    std::size_t image_id = 0;
    std::size_t class_id = 0;
    double confidence = 0;
    Box box;
};

// ---------------------------------------------------------------------------
// NMS

/// Greedy per (image, class) suppression by descending confidence; survivors are
/// then capped at max_detections per image, highest confidence first.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold, std::size_t max_detections = 100) {
    if (!(iou_threshold > 0 && iou_threshold < 1)) throw std::invalid_argument("nms: threshold must lie in (0, 1)");
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.image_id != b.image_id) return a.image_id < b.image_id;
        return a.confidence > b.confidence;
    });
    std::vector<Detection> kept;
    std::vector<bool> dead(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dead[i]) continue;
        kept.push_back(dets[i]);
        for (std::size_t j = i + 1; j < dets.size() && dets[j].image_id == dets[i].image_id; ++j)
            if (!dead[j] && dets[j].class_id == dets[i].class_id && iou(dets[i].box, dets[j].box) > iou_threshold)
                dead[j] = true;
    }
    std::vector<Detection> out;
    std::map<std::size_t, std::size_t> per_image;
    for (const auto& d : kept)
        if (per_image[d.image_id]++ < max_detections) out.push_back(d);
    return out;
}

// ---------------------------------------------------------------------------
// Average precision

enum class SizeBand { all, small, medium, large };

inline bool in_band(double area, SizeBand band) {
    switch (band) {
        case SizeBand::all: return true;
        case SizeBand::small: return area < 32.0 * 32.0;
        case SizeBand::medium: return area >= 32.0 * 32.0 && area < 96.0 * 96.0;
        case SizeBand::large: return area >= 96.0 * 96.0;
    }
    return false;
}

/// 101-point interpolated precision over a recall/precision sequence.
inline double interpolated_ap(const std::vector<double>& recall, std::vector<double> precision) {
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double total = 0;
    std::size_t idx = 0;
    for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        while (idx < recall.size() && recall[idx] < level - 1e-12) ++idx;
        total += idx < recall.size() ? precision[idx] : 0.0;
    }
    return total / 101.0;
}

/// AP for one class, or nullopt when the class has no ground truth in the band.
/// Detections are matched greedily (descending confidence, ties by input order)
/// to the unmatched ground truth of the same image with highest IoU >= threshold.
/// Ground truth outside the band is ignored: detections matched to it, and
/// unmatched detections whose area lies outside the band, count neither way.
inline std::optional<double> average_precision_class(const std::vector<Detection>& dets,
                                                     const std::vector<GroundTruth>& gts, std::size_t class_id,
                                                     double iou_thr, SizeBand band) {
    std::vector<const GroundTruth*> g;
    std::size_t positives = 0;
    for (const auto& gt : gts)
        if (gt.class_id == class_id) {
            g.push_back(&gt);
            positives += in_band(gt.box.area(), band);
        }
    if (positives == 0) return std::nullopt;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < dets.size(); ++i)
        if (dets[i].class_id == class_id) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
    std::vector<bool> used(g.size(), false);
    std::vector<double> recall, precision;
    double tp = 0, fp = 0;
    for (auto di : order) {
        const auto& d = dets[di];
        int best = -1;
        bool best_ignored = true;
        double best_iou = iou_thr;
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (used[k] || g[k]->image_id != d.image_id) continue;
            const bool ignored = !in_band(g[k]->box.area(), band);
            if (best >= 0 && !best_ignored && ignored) continue;
            const double o = iou(d.box, g[k]->box);
            if (o < iou_thr) continue;
            if (best < 0 || (best_ignored && !ignored) || o > best_iou) {
                best = static_cast<int>(k);
                best_iou = o;
                best_ignored = ignored;
            }
        }
        if (best >= 0) {
            used[static_cast<std::size_t>(best)] = true;
            if (best_ignored) continue;
            tp += 1;
        } else {
            if (!in_band(d.box.area(), band)) continue;
            fp += 1;
        }
        recall.push_back(tp / static_cast<double>(positives));
        precision.push_back(tp / (tp + fp));
    }
    return interpolated_ap(recall, precision);
}

/// Mean over classes with ground truth in the band; -1 when no class qualifies.
inline double mean_average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                     std::size_t num_classes, double iou_thr, SizeBand band = SizeBand::all) {
    double total = 0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < num_classes; ++c)
        if (auto ap = average_precision_class(dets, gts, c, iou_thr, band)) {
            total += *ap;
            ++counted;
        }
    return counted ? total / static_cast<double>(counted) : -1.0;
}

// ---------------------------------------------------------------------------
// Proposals

enum class ProposalMode { oracle_jitter, grid };

inline ProposalMode parse_proposal_mode(const std::string& s) {
    if (s == "oracle_jitter") return ProposalMode::oracle_jitter;
    if (s == "grid") return ProposalMode::grid;
    throw std::invalid_argument("unknown proposal mode '" + s + "'");
}

inline Box clip_box(Box b, double image_w, double image_h) {
    const double x0 = std::clamp(b.x, 0.0, image_w - 1.0), y0 = std::clamp(b.y, 0.0, image_h - 1.0);
    const double x1 = std::clamp(b.x + b.w, x0 + 1.0, image_w), y1 = std::clamp(b.y + b.h, y0 + 1.0, image_h);
    return {x0, y0, x1 - x0, y1 - y0};
}

/// Ground-truth boxes perturbed by uniform +-jitter (fraction of w / h) in position and size.
inline std::vector<Box> jitter_boxes(const std::vector<Box>& truth, double jitter, double image_w, double image_h,
                                     std::mt19937_64& rng) {
    std::vector<Box> out;
    if (jitter == 0.0) return truth;
    std::uniform_real_distribution<double> u(-jitter, jitter);
    for (const auto& b : truth) {
        const double dx = u(rng) * b.w, dy = u(rng) * b.h;
        const double sw = 1.0 + u(rng), sh = 1.0 + u(rng);
        const double w = b.w * sw, h = b.h * sh;
        out.push_back(clip_box({b.cx() + dx - 0.5 * w, b.cy() + dy - 0.5 * h, w, h}, image_w, image_h));
    }
    return out;
}

/// Sliding windows of each size at the given stride, fully inside the image.
inline std::vector<Box> grid_boxes(std::size_t image_w, std::size_t image_h, std::size_t stride,
                                   const std::vector<std::size_t>& sizes) {
    std::vector<Box> out;
    for (auto s : sizes)
        for (std::size_t y = 0; y + s <= image_h; y += stride)
            for (std::size_t x = 0; x + s <= image_w; x += stride)
                out.push_back({double(x), double(y), double(s), double(s)});
    return out;
}

/// FPN level (index into F2..F6, restricted to F2..F5) for a box of the given scale.
inline std::size_t level_for_box(const Box& b, std::size_t image_h) {
    const double canonical = 4.0 * static_cast<double>(image_h) / static_cast<double>(image_h >> 2);  // 4 x stride(F2)
    const double s = std::sqrt(std::max(b.area(), 1.0));
    const double lvl = std::floor(std::log2(s / canonical) + 0.5);
    return static_cast<std::size_t>(std::clamp(lvl, 0.0, 3.0));
}

/// Feature-map cells covered by a box on a level with the given stride.
inline CellRect box_cells(const Box& b, double stride, std::size_t h, std::size_t w) {
    auto lo = [&](double v, std::size_t lim) {
        return std::min(static_cast<std::size_t>(std::max(0.0, std::floor(v / stride))), lim - 1);
    };
    auto hi = [&](double v, std::size_t lim) {
        return std::min(static_cast<std::size_t>(std::max(1.0, std::ceil(v / stride))), lim);
    };
    return {lo(b.y, h), hi(b.y + b.h, h), lo(b.x, w), hi(b.x + b.w, w)};
}

/// Proposal box with its pooled semantic feature and initial class scores.
struct ProposalBox {
    Box box;
    std::vector<double> feature;
    std::vector<double> init_scores;
};

/// 2x2 average pool of the decoded features under each box, flattened and linearly projected.
class ProposalPooler {
public:
    ProposalPooler() = default;

    ProposalPooler(ParameterSet& ps, std::size_t cf, std::size_t ndim, std::mt19937_64& rng)
        : cf_(cf), projection_(Linear::make(ps, "detector.pool_projection", cf * 4, ndim, rng)) {}

    /// [M x ndim]; boxes must be non-empty.
    Tensor operator()(const pipeline::MultiScaleFeatures& f, const std::vector<Box>& boxes, std::size_t image_h) const {
        if (boxes.empty()) throw std::invalid_argument("ProposalPooler: no boxes");
        std::vector<Tensor> rows;
        for (const auto& b : boxes) {
            const auto lvl = level_for_box(b, image_h);
            const Tensor& fm = f[lvl];
            const double stride = static_cast<double>(image_h) / static_cast<double>(fm.dim(1));
            Tensor pooled = roi_average_pool(fm, box_cells(b, stride, fm.dim(1), fm.dim(2)), 2);
            rows.push_back(reshape(pooled, {1, cf_ * 4}));
        }
        return projection_(concat(rows));
    }

private:
    std::size_t cf_ = 0;
    Linear projection_;
};

// ---------------------------------------------------------------------------
// Weighted graph

enum Relation : std::size_t { kg_to_kg = 0, kg_to_proposal = 1, proposal_to_proposal = 2 };
inline constexpr std::size_t kRelations = 3;

struct UndirectedEdge {
    std::size_t a, b;
    double weight;
};

struct LinkEdge {
    std::size_t kg;        // KG node row
    std::size_t proposal;  // proposal row
    std::size_t category;
    double weight;
};

/// Directed edges of one relation over the unified node index
/// (proposals first, then KG nodes), with differentiable weights.
struct RelationEdges {
    std::vector<std::size_t> src, dst;
    Tensor weight;  // [E], undefined when empty
    std::size_t size() const { return src.size(); }
};

struct WeightedGraph {
    std::size_t num_proposals = 0;
    std::size_t num_kg = 0;
    Tensor proposal_features;  // [M x N] (undefined when M == 0)
    Tensor kg_features;        // [K x N]
    std::vector<UndirectedEdge> kg_kg;
    std::vector<LinkEdge> kg_proposal;
    std::vector<UndirectedEdge> proposal_proposal;
    std::array<RelationEdges, kRelations> relations;

    std::size_t num_nodes() const { return num_proposals + num_kg; }

    Tensor node_features() const {
        return num_proposals ? concat({proposal_features, kg_features}) : kg_features;
    }
};

namespace detail {

inline Tensor row_dot(const Tensor& a, const Tensor& b) {
    Tensor prod = elementwise_mul(a, b);
    return reshape(matmul(prod, Tensor({a.dim(1), 1}, 1.0)), {a.dim(0)});
}

/// Row normalization with a small floor so all-zero rows give zero similarity.
inline Tensor safe_normalize_rows(const Tensor& x) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
        inv[i] = 1.0 / std::sqrt(s + 1e-24);
    }
    if (std::all_of(inv.begin(), inv.end(), [](double v) { return v < 1e12; })) return l2_normalize_rows(x);
    return row_scale(x, Tensor::vector(inv));
}

}  // namespace detail

/// Assembles the three-relation graph.
///   proposals:   B [M x N] (may be undefined for M = 0) with initial scores MC [M x C]
///   kg_nodes:    [K x N] KG node features entering the network
///   embeddings:  [K x D] raw node embeddings (kg-kg weights are their cosines)
///   category_rows[c]: KG row of category c
///   group[i]:    image of proposal i; proposal-proposal edges stay within an image
inline WeightedGraph build_weighted_graph(const Tensor& proposals, const Tensor& init_scores, const Tensor& kg_nodes,
                                          const Tensor& embeddings, const std::vector<std::size_t>& category_rows,
                                          std::vector<std::size_t> group = {}) {
    WeightedGraph g;
    g.num_proposals = proposals.defined() ? proposals.dim(0) : 0;
    g.num_kg = kg_nodes.dim(0);
    g.proposal_features = proposals;
    g.kg_features = kg_nodes;
    const std::size_t m = g.num_proposals, k = g.num_kg;
    if (embeddings.dim(0) != k) throw ShapeError("build_weighted_graph: embedding rows differ from KG node count");
    if (group.empty()) group.assign(m, 0);

    // kg <-> kg: cosine of embeddings, every unordered pair.
    {
        auto& rel = g.relations[kg_to_kg];
        std::vector<double> w;
        const std::size_t d = embeddings.dim(1);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) {
                const double c = knowledge::cosine(embeddings.data().subspan(i * d, d), embeddings.data().subspan(j * d, d));
                g.kg_kg.push_back({i, j, c});
                for (auto [s, t] : {std::pair{i, j}, std::pair{j, i}}) {
                    rel.src.push_back(m + s);
                    rel.dst.push_back(m + t);
                    w.push_back(c);
                }
            }
        if (!w.empty()) rel.weight = Tensor::vector(std::move(w));
    }
    if (m == 0) return g;

    const std::size_t c_count = init_scores.dim(1);
    if (init_scores.dim(0) != m) throw ShapeError("build_weighted_graph: score rows differ from proposal count");
    if (category_rows.size() < c_count)
        throw std::invalid_argument("build_weighted_graph: category " + std::to_string(category_rows.size()) +
                                    " has no knowledge-graph node");
    // kg -> proposal: top-3 initial predictions, ties to the lower class index.
    {
        auto& rel = g.relations[kg_to_proposal];
        std::vector<std::size_t> picks;
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<std::size_t> cls(c_count);
            std::iota(cls.begin(), cls.end(), std::size_t{0});
            std::stable_sort(cls.begin(), cls.end(), [&](std::size_t a, std::size_t b) {
                return init_scores[i * c_count + a] > init_scores[i * c_count + b];
            });
            for (std::size_t r = 0; r < std::min<std::size_t>(3, c_count); ++r) {
                const std::size_t c = cls[r];
                if (category_rows[c] >= k) throw std::invalid_argument("category row out of range");
                g.kg_proposal.push_back({category_rows[c], i, c, init_scores[i * c_count + c]});
                rel.src.push_back(m + category_rows[c]);
                rel.dst.push_back(i);
                picks.push_back(i * c_count + c);
            }
        }
        rel.weight = pick(init_scores, picks);
    }
    // proposal <-> proposal: cosine of features within an image.
    {
        auto& rel = g.relations[proposal_to_proposal];
        std::vector<std::size_t> ea, eb;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j)
                if (group[i] == group[j]) {
                    ea.push_back(i);
                    eb.push_back(j);
                }
        if (!ea.empty()) {
            Tensor unit = detail::safe_normalize_rows(proposals);
            Tensor cos = detail::row_dot(gather_rows(unit, ea), gather_rows(unit, eb));
            for (std::size_t e = 0; e < ea.size(); ++e) g.proposal_proposal.push_back({ea[e], eb[e], cos[e]});
            std::vector<std::size_t> twice;
            for (std::size_t e = 0; e < ea.size(); ++e) {
                rel.src.push_back(ea[e]);
                rel.dst.push_back(eb[e]);
                rel.src.push_back(eb[e]);
                rel.dst.push_back(ea[e]);
                twice.push_back(e);
                twice.push_back(e);
            }
            rel.weight = pick(cos, twice);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Relational graph attention

struct RelationParams {
    Tensor w;        // [din x dout]  node transform
    Tensor u;        // [dout x dout] edge-embedding transform
    Tensor phi_w;    // [1 x dout]    scalar edge weight -> dout
    Tensor phi_b;    // [dout]
    Tensor att_dst;  // [dout x 1]
    Tensor att_src;  // [dout x 1]
    Tensor att_edge; // [dout x 1]
};

struct HeadParams {
    Tensor self_w;  // [din x dout]
    std::array<RelationParams, kRelations> rel;
};

struct LayerParams {
    std::size_t din = 0, dout = 0;
    bool concat_heads = true;
    std::vector<HeadParams> heads;
};

/// Attention coefficients of one (layer, head, relation), for inspection.
struct AttentionTrace {
    std::size_t layer, head, relation;
    std::vector<std::size_t> dst;
    std::vector<double> alpha;
};

struct RGATConfig {
    std::size_t input_dim = 1024;
    std::size_t hidden_dim = 512;
    std::size_t output_dim = 1024;
    std::size_t layers = 3;
    std::size_t heads = 2;
    double negative_slope = 0.2;
};

/// Per layer, head and relation r:
///   m_ij  = W_r h_j + U_r phi_r(w_ij),  phi_r(w) = tanh(w v_r + c_r)
///   e_ij  = LeakyReLU(a_r . [W_r h_i || W_r h_j || phi_r(w_ij)])
///   a_ij  = softmax over in-neighbours j of i within r
///   h_i'  = W_self h_i + sum_r sum_j a_ij m_ij
/// Hidden layers concatenate heads and apply ReLU; the last layer averages heads.
class RGAT {
public:
    RGAT() = default;

    RGAT(ParameterSet& ps, const RGATConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
        if (cfg.layers < 1 || cfg.heads < 1) throw std::invalid_argument("R-GAT needs at least one layer and head");
        std::size_t din = cfg.input_dim;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            LayerParams lp;
            const bool last = l + 1 == cfg.layers;
            lp.din = din;
            lp.dout = last ? cfg.output_dim : cfg.hidden_dim;
            lp.concat_heads = !last;
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                const std::string base = "rgat.l" + std::to_string(l) + ".h" + std::to_string(h);
                HeadParams hp;
                hp.self_w = ps.add(base + ".self", xavier_uniform({lp.din, lp.dout}, lp.din, lp.dout, rng));
                for (std::size_t r = 0; r < kRelations; ++r) {
                    const std::string rb = base + ".r" + std::to_string(r);
                    auto& rp = hp.rel[r];
                    rp.w = ps.add(rb + ".w", xavier_uniform({lp.din, lp.dout}, lp.din, lp.dout, rng));
                    rp.u = ps.add(rb + ".u", xavier_uniform({lp.dout, lp.dout}, lp.dout, lp.dout, rng));
                    rp.phi_w = ps.add(rb + ".phi_w", xavier_uniform({1, lp.dout}, 1, lp.dout, rng));
                    rp.phi_b = ps.add(rb + ".phi_b", zeros_param({lp.dout}));
                    rp.att_dst = ps.add(rb + ".att_dst", xavier_uniform({lp.dout, 1}, lp.dout, 1, rng));
                    rp.att_src = ps.add(rb + ".att_src", xavier_uniform({lp.dout, 1}, lp.dout, 1, rng));
                    rp.att_edge = ps.add(rb + ".att_edge", xavier_uniform({lp.dout, 1}, lp.dout, 1, rng));
                }
                lp.heads.push_back(std::move(hp));
            }
            layers_.push_back(std::move(lp));
            din = last ? lp.dout : lp.dout * cfg.heads;
        }
    }

    const RGATConfig& config() const { return cfg_; }
    std::vector<LayerParams>& layers() { return layers_; }

    /// Returns all node states after the last layer, [(M + K) x output_dim].
    Tensor forward_nodes(const WeightedGraph& g, std::vector<AttentionTrace>* trace = nullptr) const {
        Tensor h = g.node_features();
        if (h.dim(1) != cfg_.input_dim)
            throw ShapeError("R-GAT expects node features of width " + std::to_string(cfg_.input_dim) + ", got " +
                             shape_str(h.shape()));
        const std::size_t n = g.num_nodes();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& lp = layers_[l];
            std::vector<Tensor> outs;
            for (std::size_t hd = 0; hd < lp.heads.size(); ++hd) {
                const auto& hp = lp.heads[hd];
                Tensor acc = matmul(h, hp.self_w);
                for (std::size_t r = 0; r < kRelations; ++r) {
                    const auto& edges = g.relations[r];
                    if (edges.size() == 0) continue;
                    const auto& rp = hp.rel[r];
                    const std::size_t e = edges.size();
                    Tensor hr = matmul(h, rp.w);
                    Tensor phi = tanh(add_row(matmul(reshape(edges.weight, {e, 1}), rp.phi_w), rp.phi_b));
                    Tensor s_dst = matmul(hr, rp.att_dst);
                    Tensor s_src = matmul(hr, rp.att_src);
                    Tensor logits = add(add(reshape(gather_rows(s_dst, edges.dst), {e}),
                                            reshape(gather_rows(s_src, edges.src), {e})),
                                        reshape(matmul(phi, rp.att_edge), {e}));
                    Tensor alpha = segment_softmax(leaky_relu(logits, cfg_.negative_slope), edges.dst, n);
                    if (trace) trace->push_back({l, hd, r, edges.dst, alpha.values()});
                    Tensor msg = add(gather_rows(hr, edges.src), matmul(phi, rp.u));
                    acc = add(acc, scatter_add_rows(row_scale(msg, alpha), edges.dst, n));
                }
                outs.push_back(acc);
            }
            if (lp.concat_heads) {
                h = relu(concat_columns(outs));
            } else {
                Tensor s = outs[0];
                for (std::size_t i = 1; i < outs.size(); ++i) s = add(s, outs[i]);
                h = scale(s, 1.0 / static_cast<double>(outs.size()));
            }
        }
        return h;
    }

    /// Enhanced proposal features [M x output_dim].
    Tensor operator()(const WeightedGraph& g, std::vector<AttentionTrace>* trace = nullptr) const {
        if (g.num_proposals == 0) throw std::invalid_argument("R-GAT: graph has no proposal nodes");
        return slice(forward_nodes(g, trace), 0, g.num_proposals);
    }

private:
    RGATConfig cfg_;
    std::vector<LayerParams> layers_;
};

// ---------------------------------------------------------------------------
// Heads and loss

struct HeadOutputs {
    Tensor cls_logits;  // [M x (C+1)], last column is background
    Tensor reg;         // [M x 4]
};

struct FinalHeads {
    Linear classifier;
    Linear regressor;

    static FinalHeads make(ParameterSet& ps, std::size_t dim, std::size_t num_classes, std::mt19937_64& rng) {
        return {Linear::make(ps, "detector.cls", dim, num_classes + 1, rng),
                Linear::make(ps, "detector.reg", dim, 4, rng)};
    }

    HeadOutputs operator()(const Tensor& features) const { return {classifier(features), regressor(features)}; }
};

/// Classification targets with background = num_classes; regression targets only for positives.
struct LossTargets {
    std::vector<std::size_t> labels;
    std::vector<BoxDelta> deltas;
    std::vector<bool> positive;
};

namespace detail {

/// Row-wise index of each target class, validating the targets against the prediction shapes.
inline std::vector<std::size_t> target_indices(const Tensor& scores, const Tensor& reg, const LossTargets& tg) {
    const std::size_t m = scores.dim(0), c = scores.dim(1);
    if (tg.labels.size() != m || tg.positive.size() != m || tg.deltas.size() != m)
        throw ShapeError("multi_task_loss: target count differs from prediction rows");
    if (reg.dim(0) != m || reg.dim(1) != 4)
        throw ShapeError("multi_task_loss: regression output " + shape_str(reg.shape()) + " for " +
                         std::to_string(m) + " proposals");
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (tg.labels[i] >= c) throw std::invalid_argument("multi_task_loss: label out of range");
        idx[i] = i * c + tg.labels[i];
    }
    return idx;
}

/// target_log_probs [M] holds log p_i[y_i].
inline Tensor assemble_loss(const Tensor& target_log_probs, const Tensor& reg, const LossTargets& tg, double lambda,
                            double n_cls, double n_reg) {
    Tensor loss = scale(sum(target_log_probs), -1.0 / n_cls);
    std::vector<std::size_t> pos_idx;
    std::vector<double> target;
    for (std::size_t i = 0; i < tg.labels.size(); ++i)
        if (tg.positive[i])
            for (std::size_t k = 0; k < 4; ++k) {
                pos_idx.push_back(i * 4 + k);
                target.push_back(tg.deltas[i][k]);
            }
    if (!pos_idx.empty() && lambda != 0.0) {
        Tensor diff = sub(pick(reg, pos_idx), Tensor::vector(target));
        loss = add(loss, scale(sum(smooth_l1(diff)), lambda / n_reg));
    }
    return loss;
}

inline void check_normalizers(double n_cls, double n_reg) {
    if (!(n_cls > 0) || !(n_reg > 0)) throw std::invalid_argument("multi_task_loss: N_cls and N_reg must be positive");
}

}  // namespace detail

/// (1/N_cls) sum -log p_i[y_i] + lambda (1/N_reg) sum p*_i smoothL1(t_i - t*_i), from log-probabilities.
inline Tensor multi_task_loss_log(const Tensor& log_probs, const Tensor& reg, const LossTargets& tg, double lambda,
                                  double n_cls, double n_reg) {
    detail::check_normalizers(n_cls, n_reg);
    auto idx = detail::target_indices(log_probs, reg, tg);
    return detail::assemble_loss(pick(log_probs, idx), reg, tg, lambda, n_cls, n_reg);
}

/// Same loss from class probabilities p [M x C']; only the target entries need be positive.
inline Tensor multi_task_loss(const Tensor& probs, const Tensor& reg, const LossTargets& tg, double lambda,
                              double n_cls, double n_reg) {
    detail::check_normalizers(n_cls, n_reg);
    auto idx = detail::target_indices(probs, reg, tg);
    return detail::assemble_loss(log(pick(probs, idx)), reg, tg, lambda, n_cls, n_reg);
}

inline Tensor multi_task_loss_logits(const Tensor& logits, const Tensor& reg, const LossTargets& tg, double lambda,
                                     double n_cls, double n_reg) {
    return multi_task_loss_log(log_softmax(logits), reg, tg, lambda, n_cls, n_reg);
}

// ---------------------------------------------------------------------------
// Detector

struct DetectorConfig {
    std::size_t num_classes = 6;
    std::size_t feature_channels = 16;
    std::size_t ndim = 1024;
    std::size_t kg_dim = 16;
    std::size_t rgat_hidden = 512;
    std::size_t rgat_layers = 3;
    std::size_t rgat_heads = 2;
    bool kg_enabled = true;
    std::size_t image_h = 64;
    std::size_t image_w = 64;
};

struct DetectorOutputs {
    Tensor init_logits;  // [M x C] (undefined when the graph is bypassed)
    Tensor init_probs;
    HeadOutputs heads;
};

/// Knowledge-graph context the detector consumes: node embeddings and the KG row of each class.
struct KnowledgeContext {
    Tensor embeddings;  // [K x D]
    std::vector<std::size_t> category_rows;
};

class Detector {
public:
    Detector() = default;

    Detector(ParameterSet& ps, const DetectorConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
        pooler_ = ProposalPooler(ps, cfg.feature_channels, cfg.ndim, rng);
        if (cfg.kg_enabled) {
            init_cls_ = Linear::make(ps, "detector.init_cls", cfg.ndim, cfg.num_classes, rng);
            if (cfg.kg_dim != cfg.ndim) kg_projection_ = Linear::make(ps, "detector.kg_projection", cfg.kg_dim, cfg.ndim, rng);
            rgat_ = RGAT(ps, {cfg.ndim, cfg.rgat_hidden, cfg.ndim, cfg.rgat_layers, cfg.rgat_heads, 0.2}, rng);
        }
        heads_ = FinalHeads::make(ps, cfg.ndim, cfg.num_classes, rng);
    }

    const DetectorConfig& config() const { return cfg_; }
    const ProposalPooler& pooler() const { return pooler_; }

    Tensor kg_node_features(const KnowledgeContext& kg) const {
        return kg_projection_ ? (*kg_projection_)(kg.embeddings) : kg.embeddings;
    }

    /// B [M x ndim] pooled features; group[i] = image of proposal i.
    DetectorOutputs forward(const Tensor& features, const std::vector<std::size_t>& group,
                            const KnowledgeContext* kg) const {
        DetectorOutputs out;
        if (!cfg_.kg_enabled) {
            out.heads = heads_(features);
            return out;
        }
        if (!kg) throw std::invalid_argument("detector: knowledge graph context required when kg is enabled");
        out.init_logits = init_cls_(features);
        out.init_probs = softmax(out.init_logits);
        auto graph = build_weighted_graph(features, out.init_probs, kg_node_features(*kg), kg->embeddings,
                                          kg->category_rows, group);
        out.heads = heads_(rgat_(graph));
        return out;
    }

private:
    DetectorConfig cfg_;
    ProposalPooler pooler_;
    Linear init_cls_;
    std::optional<Linear> kg_projection_;
    RGAT rgat_;
    FinalHeads heads_;
};

/// Per-proposal detections: class = argmax over non-background probabilities,
/// confidence = that probability, box decoded from the regression offsets.
inline std::vector<Detection> to_detections(const HeadOutputs& out, const std::vector<Box>& boxes,
                                            std::size_t image_id, double image_w, double image_h) {
    Tensor probs = softmax(out.cls_logits);
    const std::size_t c1 = probs.dim(1);
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c + 1 < c1; ++c)
            if (probs[i * c1 + c] > probs[i * c1 + best]) best = c;
        BoxDelta t{out.reg[i * 4], out.reg[i * 4 + 1], out.reg[i * 4 + 2], out.reg[i * 4 + 3]};
        dets.push_back({image_id, best, probs[i * c1 + best], clip_box(decode_box(boxes[i], t), image_w, image_h)});
    }
    return dets;
}

}  // namespace cogsc::detector
