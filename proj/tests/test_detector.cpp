#include <gtest/gtest.h>

#include "support.hpp"

using namespace cogsc;
using namespace cogsc::detector;
using support::random_detections;
using support::random_box;
using support::random_tensor;
using support::toy_graph;

namespace {

bool same(const Detection& a, const Detection& b) {
    return a.image_id == b.image_id && a.class_id == b.class_id && a.confidence == b.confidence && a.box == b.box;
}

// Plain-loop R-GAT forward pass over the unified node list.
std::vector<double> reference_rgat(RGAT& net, const WeightedGraph& g) {
    const std::size_t n = g.num_nodes();
    const double slope = net.config().negative_slope;
    std::vector<double> h = g.node_features().values();
    std::size_t din = net.config().input_dim;
    auto mat = [](const std::vector<double>& x, std::size_t rows, std::size_t k, const Tensor& w) {
        const std::size_t m = w.dim(1);
        std::vector<double> y(rows * m, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t a = 0; a < k; ++a)
                for (std::size_t b = 0; b < m; ++b) y[i * m + b] += x[i * k + a] * w[a * m + b];
        return y;
    };
    for (const auto& lp : net.layers()) {
        const std::size_t d = lp.dout;
        std::vector<std::vector<double>> outs;
        for (const auto& hp : lp.heads) {
            auto acc = mat(h, n, din, hp.self_w);
            for (std::size_t r = 0; r < kRelations; ++r) {
                const auto& ed = g.relations[r];
                if (ed.size() == 0) continue;
                const auto& rp = hp.rel[r];
                auto hr = mat(h, n, din, rp.w);
                std::vector<std::vector<double>> phi(ed.size(), std::vector<double>(d));
                std::vector<double> logit(ed.size());
                for (std::size_t e = 0; e < ed.size(); ++e) {
                    double s = 0;
                    for (std::size_t k = 0; k < d; ++k) {
                        phi[e][k] = std::tanh(ed.weight[e] * rp.phi_w[k] + rp.phi_b[k]);
                        s += hr[ed.dst[e] * d + k] * rp.att_dst[k] + hr[ed.src[e] * d + k] * rp.att_src[k] +
                             phi[e][k] * rp.att_edge[k];
                    }
                    logit[e] = s > 0 ? s : slope * s;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double mx = -INFINITY, z = 0;
                    for (std::size_t e = 0; e < ed.size(); ++e)
                        if (ed.dst[e] == i) mx = std::max(mx, logit[e]);
                    for (std::size_t e = 0; e < ed.size(); ++e)
                        if (ed.dst[e] == i) z += std::exp(logit[e] - mx);
                    for (std::size_t e = 0; e < ed.size(); ++e) {
                        if (ed.dst[e] != i) continue;
                        const double a = std::exp(logit[e] - mx) / z;
                        for (std::size_t k = 0; k < d; ++k) {
                            double m = hr[ed.src[e] * d + k];
                            for (std::size_t q = 0; q < d; ++q) m += phi[e][q] * rp.u[q * d + k];
                            acc[i * d + k] += a * m;
                        }
                    }
                }
            }
            outs.push_back(acc);
        }
        if (lp.concat_heads) {
            const std::size_t w = d * outs.size();
            h.assign(n * w, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t hd = 0; hd < outs.size(); ++hd)
                    for (std::size_t k = 0; k < d; ++k) h[i * w + hd * d + k] = std::max(0.0, outs[hd][i * d + k]);
            din = w;
        } else {
            h.assign(n * d, 0.0);
            for (const auto& o : outs)
                for (std::size_t i = 0; i < n * d; ++i) h[i] += o[i] / double(outs.size());
            din = d;
        }
    }
    return h;
}

}  // namespace

TEST(Boxes, IouExamples) {
    EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 0, 2, 2}), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
    EXPECT_EQ(iou({0, 0, 1, 1}, {5, 5, 1, 1}), 0.0);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        auto a = random_box(rng), b = random_box(rng);
        EXPECT_NEAR(iou(a, b), support::box_iou(a, b), 1e-14);
        EXPECT_EQ(iou(a, b), iou(b, a));
    }
}

TEST(Boxes, EncodeDecodeRoundTrip) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        auto p = random_box(rng), t = random_box(rng);
        auto back = decode_box(p, encode_box(p, t));
        EXPECT_NEAR(back.x, t.x, 1e-9);
        EXPECT_NEAR(back.y, t.y, 1e-9);
        EXPECT_NEAR(back.w, t.w, 1e-9);
        EXPECT_NEAR(back.h, t.h, 1e-9);
    }
    Box p{3, 4, 10, 20};
    EXPECT_EQ(decode_box(p, {0, 0, 0, 0}), p);
    EXPECT_EQ(encode_box(p, p), (BoxDelta{0, 0, 0, 0}));
    // Extreme log-scale offsets are clamped before exponentiation.
    EXPECT_NEAR(decode_box(p, {0, 0, 50, 0}).w, 10 * std::exp(4.0), 1e-9);
}

TEST(Nms, Examples) {
    std::vector<Detection> d{{0, 0, 0.9, {0, 0, 10, 10}}, {0, 0, 0.8, {1, 0, 10, 10}}, {0, 1, 0.7, {1, 0, 10, 10}},
                             {1, 0, 0.6, {1, 0, 10, 10}}};
    auto k = nms(d, 0.5);
    ASSERT_EQ(k.size(), 3u);
    EXPECT_EQ(k[0].confidence, 0.9);
    EXPECT_EQ(k[1].confidence, 0.7);
    EXPECT_EQ(k[2].image_id, 1u);
    // IoU exactly at the threshold survives.
    std::vector<Detection> e{{0, 0, 0.9, {0, 0, 2, 2}}, {0, 0, 0.8, {1, 0, 2, 2}}};
    EXPECT_EQ(nms(e, 1.0 / 3.0 + 1e-12).size(), 2u);
    EXPECT_EQ(nms(e, 0.3).size(), 1u);
    EXPECT_THROW(nms(e, 0.0), std::invalid_argument);
    EXPECT_THROW(nms(e, 1.0), std::invalid_argument);
    EXPECT_TRUE(nms({}, 0.5).empty());
}

TEST(Nms, MatchesQuadraticOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        auto d = random_detections(rng, 50, 3, 3);
        for (double thr : {0.3, 0.5, 0.7})
            for (std::size_t cap : {5, 100}) {
                auto got = nms(d, thr, cap), want = support::reference_nms(d, thr, cap);
                ASSERT_EQ(got.size(), want.size());
                for (std::size_t i = 0; i < got.size(); ++i) EXPECT_TRUE(same(got[i], want[i]));
            }
    }
}

TEST(Nms, InputOrderDoesNotMatter) {
    std::mt19937_64 rng(4);
    auto d = random_detections(rng, 60, 2, 2);
    auto base = nms(d, 0.5);
    for (int i = 0; i < 5; ++i) {
        std::shuffle(d.begin(), d.end(), rng);
        auto k = nms(d, 0.5);
        ASSERT_EQ(k.size(), base.size());
        for (std::size_t j = 0; j < k.size(); ++j) EXPECT_TRUE(same(k[j], base[j]));
    }
}

TEST(Nms, KeptBoxesNeverOverlapAboveThreshold) {
    std::mt19937_64 rng(5);
    auto k = nms(random_detections(rng, 200, 2, 2), 0.4);
    for (std::size_t i = 0; i < k.size(); ++i)
        for (std::size_t j = i + 1; j < k.size(); ++j)
            if (k[i].image_id == k[j].image_id && k[i].class_id == k[j].class_id) {
                EXPECT_LE(iou(k[i].box, k[j].box), 0.4);
            }
}

TEST(AveragePrecision, PerfectAndEmpty) {
    std::vector<GroundTruth> g{{0, 0, {0, 0, 10, 10}}, {1, 0, {5, 5, 10, 10}}};
    std::vector<Detection> d{{0, 0, 0.9, {0, 0, 10, 10}}, {1, 0, 0.8, {5, 5, 10, 10}}};
    EXPECT_DOUBLE_EQ(*average_precision_class(d, g, 0, 0.5, SizeBand::all), 1.0);
    EXPECT_EQ(*average_precision_class({}, g, 0, 0.5, SizeBand::all), 0.0);
    EXPECT_FALSE(average_precision_class(d, g, 1, 0.5, SizeBand::all).has_value());
    EXPECT_EQ(mean_average_precision(d, {}, 3, 0.5), -1.0);
}

TEST(AveragePrecision, HandWorkedRanking) {
    // Five objects; ranked hits TP TP FP TP FP TP FP FP leave one object unfound.
    std::vector<GroundTruth> g;
    for (int i = 0; i < 5; ++i) g.push_back({0, 0, {double(12 * i), 0, 10, 10}});
    const bool hit[] = {true, true, false, true, false, true, false, false};
    std::vector<Detection> d;
    int next = 0;
    for (int i = 0; i < 8; ++i) {
        Box b = hit[i] ? g[std::size_t(next++)].box : Box{double(10 * i), 40, 10, 10};
        d.push_back({0, 0, 1.0 - 0.1 * i, b});
    }
    const double want = (41 * 1.0 + 20 * 0.75 + 20 * (4.0 / 6.0)) / 101.0;
    EXPECT_NEAR(*average_precision_class(d, g, 0, 0.5, SizeBand::all), want, 1e-12);
    EXPECT_NEAR(want, support::reference_ap(d, g, 0, 0.5), 1e-12);
}

TEST(AveragePrecision, MatchesExhaustiveOracle) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<GroundTruth> g;
        std::uniform_int_distribution<std::size_t> img(0, 2), cls(0, 1);
        for (int i = 0; i < 12; ++i) g.push_back({img(rng), cls(rng), random_box(rng)});
        std::vector<Detection> d;
        std::uniform_real_distribution<double> conf(0, 1), jit(-3, 3);
        for (const auto& gt : g)
            if (conf(rng) < 0.7) {
                Box b = gt.box;
                b.x += jit(rng);
                b.y += jit(rng);
                d.push_back({gt.image_id, gt.class_id, conf(rng), b});
            }
        auto noise = random_detections(rng, 10, 3, 2);
        d.insert(d.end(), noise.begin(), noise.end());
        for (double thr : {0.5, 0.75})
            for (std::size_t c = 0; c < 2; ++c) {
                auto ap = average_precision_class(d, g, c, thr, SizeBand::all);
                if (!ap) continue;
                EXPECT_NEAR(*ap, support::reference_ap(d, g, c, thr), 1e-12) << "trial " << trial;
            }
    }
}

TEST(AveragePrecision, SizeBandsIgnoreOtherSizes) {
    std::vector<GroundTruth> g{{0, 0, {0, 0, 8, 8}}, {0, 0, {20, 20, 40, 40}}};
    std::vector<Detection> d{{0, 0, 0.9, {0, 0, 8, 8}}, {0, 0, 0.8, {20, 20, 40, 40}}};
    EXPECT_DOUBLE_EQ(*average_precision_class(d, g, 0, 0.5, SizeBand::small), 1.0);
    EXPECT_DOUBLE_EQ(*average_precision_class(d, g, 0, 0.5, SizeBand::medium), 1.0);
    EXPECT_FALSE(average_precision_class(d, g, 0, 0.5, SizeBand::large).has_value());
    EXPECT_TRUE(in_band(32.0 * 32.0 - 1, SizeBand::small));
    EXPECT_TRUE(in_band(32.0 * 32.0, SizeBand::medium));
    EXPECT_TRUE(in_band(96.0 * 96.0, SizeBand::large));
}

TEST(Proposals, GridAndJitter) {
    auto grid = grid_boxes(64, 64, 16, {16});
    EXPECT_EQ(grid.size(), 16u);
    for (const auto& b : grid) EXPECT_LE(b.x + b.w, 64.0);
    std::mt19937_64 rng(7);
    std::vector<Box> truth{{4, 4, 10, 12}, {30, 20, 8, 8}};
    EXPECT_EQ(jitter_boxes(truth, 0.0, 64, 64, rng), truth);
    for (const auto& b : jitter_boxes(truth, 0.3, 64, 64, rng)) {
        EXPECT_GE(b.x, 0.0);
        EXPECT_LE(b.x + b.w, 64.0);
        EXPECT_GT(b.w, 0.0);
    }
    EXPECT_EQ(parse_proposal_mode("grid"), ProposalMode::grid);
    EXPECT_THROW(parse_proposal_mode("selective"), std::invalid_argument);
}

TEST(Graph, SingleProposalFourConcepts) {
    std::mt19937_64 rng(8);
    auto t = toy_graph(rng, 1, 4, 5, 6);
    auto g = build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows);
    EXPECT_EQ(g.kg_proposal.size(), 3u);
    EXPECT_EQ(g.proposal_proposal.size(), 0u);
    EXPECT_EQ(g.kg_kg.size(), 6u);
    EXPECT_EQ(g.num_nodes(), 5u);
}

TEST(Graph, EdgeCountIdentities) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> pm(1, 9), pk(1, 7), pc(1, 6), pi(1, 3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = pm(rng), k = pk(rng), c = pc(rng), images = pi(rng);
        auto t = toy_graph(rng, m, k, c, 4, images);
        auto g = build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows, t.group);
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) pairs += t.group[i] == t.group[j];
        EXPECT_EQ(g.kg_kg.size(), k * (k - 1) / 2);
        EXPECT_EQ(g.kg_proposal.size(), m * std::min<std::size_t>(3, c));
        EXPECT_EQ(g.proposal_proposal.size(), pairs);
        EXPECT_EQ(g.relations[kg_to_kg].size(), 2 * g.kg_kg.size());
        EXPECT_EQ(g.relations[kg_to_proposal].size(), g.kg_proposal.size());
        EXPECT_EQ(g.relations[proposal_to_proposal].size(), 2 * pairs);
        for (const auto& e : g.kg_kg) EXPECT_LE(std::fabs(e.weight), 1.0);
        for (const auto& e : g.kg_proposal) {
            EXPECT_EQ(e.weight, t.scores[e.proposal * c + e.category]);
            for (std::size_t other = 0; other < c; ++other) {
                bool linked = false;
                for (const auto& f : g.kg_proposal) linked |= f.proposal == e.proposal && f.category == other;
                if (!linked) {
                    EXPECT_LE(t.scores[e.proposal * c + other], e.weight);
                }
            }
        }
    }
}

TEST(Graph, IdenticalFeaturesGiveUnitWeight) {
    std::mt19937_64 rng(10);
    auto t = toy_graph(rng, 3, 2, 3, 4);
    auto row = random_tensor({1, 4}, rng);
    t.proposals = concat({row, row, scale(row, 2.0)});
    auto g = build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows);
    for (const auto& e : g.proposal_proposal) EXPECT_NEAR(e.weight, 1.0, 1e-12);
}

TEST(Graph, WithoutProposalsOnlyConceptEdgesRemain) {
    std::mt19937_64 rng(11);
    auto t = toy_graph(rng, 1, 4, 3, 4);
    auto g = build_weighted_graph(Tensor(), Tensor(), t.kg, t.embeddings, t.rows);
    EXPECT_EQ(g.kg_kg.size(), 6u);
    EXPECT_TRUE(g.kg_proposal.empty());
    EXPECT_TRUE(g.proposal_proposal.empty());
}

TEST(Graph, MissingCategoryNodeRejected) {
    std::mt19937_64 rng(12);
    auto t = toy_graph(rng, 2, 3, 4, 4);
    t.rows.pop_back();
    try {
        build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("category 3"), std::string::npos);
    }
}

TEST(Rgat, MatchesPlainLoopReference) {
    std::mt19937_64 rng(13);
    for (std::size_t layers : {1, 2, 3}) {
        ParameterSet ps;
        RGAT net(ps, {6, 5, 6, layers, 2, 0.2}, rng);
        for (auto& [name, t] : ps.entries())
            if (name.ends_with("phi_b"))
                for (auto& v : const_cast<Tensor&>(t).data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        auto t = toy_graph(rng, 4, 3, 3, 6, 2);
        auto g = build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows, t.group);
        auto out = net.forward_nodes(g);
        EXPECT_EQ(out.shape(), (Shape{7, 6}));
        EXPECT_LT(support::max_abs_diff(out.values(), reference_rgat(net, g)), 1e-10) << layers << " layers";
    }
}

TEST(Rgat, AttentionIsNormalizedPerReceiver) {
    std::mt19937_64 rng(14);
    ParameterSet ps;
    RGAT net(ps, {4, 4, 4, 2, 2, 0.2}, rng);
    auto t = toy_graph(rng, 5, 4, 3, 4, 2);
    auto g = build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows, t.group);
    std::vector<AttentionTrace> trace;
    net(g, &trace);
    EXPECT_EQ(trace.size(), 2u * 2u * 3u);
    for (const auto& tr : trace) {
        std::map<std::size_t, double> total;
        for (std::size_t e = 0; e < tr.alpha.size(); ++e) {
            EXPECT_GE(tr.alpha[e], 0.0);
            total[tr.dst[e]] += tr.alpha[e];
        }
        for (auto [_, s] : total) EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Rgat, IsolatedNodeGetsOnlyItsSelfTransform) {
    std::mt19937_64 rng(15);
    ParameterSet ps;
    RGAT net(ps, {3, 4, 2, 1, 2, 0.2}, rng);
    WeightedGraph g;
    g.num_kg = 1;
    g.kg_features = random_tensor({1, 3}, rng);
    auto out = net.forward_nodes(g);
    const auto& heads = net.layers()[0].heads;
    for (std::size_t k = 0; k < 2; ++k) {
        double want = 0;
        for (const auto& hp : heads)
            for (std::size_t a = 0; a < 3; ++a) want += g.kg_features[a] * hp.self_w[a * 2 + k] / 2.0;
        EXPECT_NEAR(out[k], want, 1e-14);
    }
}

TEST(Rgat, RejectsWrongFeatureWidth) {
    std::mt19937_64 rng(16);
    ParameterSet ps;
    RGAT net(ps, {4, 4, 4, 1, 1, 0.2}, rng);
    auto t = toy_graph(rng, 2, 2, 2, 5);
    auto g = build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows);
    EXPECT_THROW(net.forward_nodes(g), ShapeError);
    EXPECT_THROW(RGAT(ps, {4, 4, 4, 0, 1, 0.2}, rng), std::invalid_argument);
}

TEST(Rgat, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(17);
    ParameterSet ps;
    RGAT net(ps, {4, 3, 4, 2, 2, 0.2}, rng);
    auto t = toy_graph(rng, 3, 3, 3, 4, 1);
    t.scores = random_tensor({3, 3}, rng, 0.05, 0.95, true);
    auto probe = random_tensor({3, 4}, rng);
    std::vector<Tensor> inputs{t.proposals, t.scores};
    for (auto& [name, p] : ps.entries())
        if (name.rfind("rgat.l0.h0", 0) == 0 || name.rfind("rgat.l1.h1", 0) == 0) inputs.push_back(p);
    auto r = support::check_gradients(
        [&] {
            auto g = build_weighted_graph(t.proposals, t.scores, t.kg, t.embeddings, t.rows);
            return support::probe_loss(net(g), probe);
        },
        inputs);
    EXPECT_LT(r.max_rel, 1e-4);
    EXPECT_GT(r.checked, 100u);
}

TEST(Detector, ZeroInitialClassifierGivesUniformRows) {
    std::mt19937_64 rng(18);
    ParameterSet ps;
    DetectorConfig cfg;
    cfg.num_classes = 4;
    cfg.feature_channels = 2;
    cfg.ndim = 6;
    cfg.kg_dim = 3;
    cfg.rgat_hidden = 4;
    cfg.rgat_layers = 2;
    Detector det(ps, cfg, rng);
    for (auto& v : const_cast<Tensor&>(ps.get("detector.init_cls.weight")).data()) v = 0;
    KnowledgeContext kg{random_tensor({5, 3}, rng), {0, 1, 2, 3}};
    auto out = det.forward(random_tensor({3, 6}, rng), {0, 0, 0}, &kg);
    for (double p : out.init_probs.values()) EXPECT_NEAR(p, 0.25, 1e-15);
    EXPECT_EQ(out.heads.cls_logits.shape(), (Shape{3, 5}));
    EXPECT_EQ(out.heads.reg.shape(), (Shape{3, 4}));
    EXPECT_THROW(det.forward(random_tensor({3, 6}, rng), {0, 0, 0}, nullptr), std::invalid_argument);
}

TEST(Detector, BypassWithoutKnowledge) {
    std::mt19937_64 rng(19);
    ParameterSet ps;
    DetectorConfig cfg;
    cfg.num_classes = 3;
    cfg.ndim = 5;
    cfg.kg_enabled = false;
    Detector det(ps, cfg, rng);
    for (const auto& [name, _] : ps.entries()) EXPECT_EQ(name.find("rgat"), std::string::npos);
    auto out = det.forward(random_tensor({2, 5}, rng), {0, 0}, nullptr);
    EXPECT_FALSE(out.init_probs.defined());
    EXPECT_EQ(out.heads.cls_logits.shape(), (Shape{2, 4}));
}

TEST(Loss, HandComputedValue) {
    // One positive proposal: p = 0.5 on its class and a regression error of 2 on one coordinate.
    Tensor probs({1, 2}, std::vector<double>{0.5, 0.5});
    Tensor reg({1, 4}, std::vector<double>{2, 0, 0, 0});
    LossTargets tg{{0}, {BoxDelta{0, 0, 0, 0}}, {true}};
    const double v = multi_task_loss(probs, reg, tg, 1.0, 1, 1).item();
    EXPECT_NEAR(v, -std::log(0.5) + 1.5, 1e-12);
    EXPECT_NEAR(v, 2.19315, 5e-6);
}

TEST(Loss, PerfectPredictionsAndLambdaZero) {
    Tensor probs({2, 3}, std::vector<double>{1, 0, 0, 0, 0, 1});
    Tensor reg({2, 4}, std::vector<double>{0.1, 0.2, 0.3, 0.4, 9, 9, 9, 9});
    LossTargets tg{{0, 2}, {BoxDelta{0.1, 0.2, 0.3, 0.4}, BoxDelta{}}, {true, false}};
    EXPECT_EQ(multi_task_loss(probs, reg, tg, 1.0, 2, 2).item(), 0.0);
    Tensor soft({2, 3}, std::vector<double>{0.6, 0.2, 0.2, 0.1, 0.1, 0.8});
    Tensor bad({2, 4}, 5.0);
    const double cls_only = multi_task_loss(soft, bad, tg, 0.0, 2, 2).item();
    EXPECT_NEAR(cls_only, -(std::log(0.6) + std::log(0.8)) / 2, 1e-12);
    EXPECT_THROW(multi_task_loss(soft, bad, tg, 1.0, 0, 2), std::invalid_argument);
    tg.labels[0] = 3;
    EXPECT_THROW(multi_task_loss(soft, bad, tg, 1.0, 2, 2), std::invalid_argument);
}

TEST(Loss, LogitFormMatchesFiniteDifferences) {
    std::mt19937_64 rng(20);
    auto logits = random_tensor({3, 4}, rng, -2, 2, true), reg = random_tensor({3, 4}, rng, -3, 3, true);
    LossTargets tg{{0, 3, 2}, {BoxDelta{0.1, -0.4, 0.2, 0.0}, BoxDelta{}, BoxDelta{1.5, -2.0, 0.3, 0.7}}, {true, false, true}};
    auto r = support::check_gradients([&] { return multi_task_loss_logits(logits, reg, tg, 1.0, 3, 3); }, {logits, reg});
    EXPECT_LT(r.max_rel, 1e-5);
    const double a = multi_task_loss_logits(logits, reg, tg, 1.0, 3, 3).item();
    const double b = multi_task_loss(softmax(logits), reg, tg, 1.0, 3, 3).item();
    EXPECT_NEAR(a, b, 1e-12);
}

TEST(Detections, ArgmaxExcludesBackground) {
    HeadOutputs out{Tensor({2, 3}, std::vector<double>{0, 2, 5, 1, 0, 0}), Tensor({2, 4}, 0.0)};
    std::vector<Box> boxes{{0, 0, 8, 8}, {10, 10, 8, 8}};
    auto d = to_detections(out, boxes, 7, 64, 64);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].class_id, 1u);
    EXPECT_NEAR(d[0].confidence, std::exp(2.0) / (1 + std::exp(2.0) + std::exp(5.0)), 1e-12);
    EXPECT_EQ(d[1].class_id, 0u);
    EXPECT_EQ(d[1].image_id, 7u);
    EXPECT_EQ(d[1].box, boxes[1]);
}
