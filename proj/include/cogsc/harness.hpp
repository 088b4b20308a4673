#pragma once

// End-to-end model assembly, training, evaluation, sweeps and ablations.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cogsc/channel.hpp"
#include "cogsc/config.hpp"
#include "cogsc/detector.hpp"
#include "cogsc/knowledge.hpp"
#include "cogsc/params.hpp"
#include "cogsc/pipeline.hpp"
#include "cogsc/report.hpp"
#include "cogsc/scene.hpp"

namespace cogsc::harness {

using detector::Box;
using detector::KnowledgeContext;

// ---------------------------------------------------------------------------
// Knowledge graph

struct KnowledgeArtifacts {
    knowledge::KnowledgeGraph graph;
    knowledge::NodeEmbeddings embeddings;
};

inline std::map<std::string, std::string> load_synonyms(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synonym table '" + path + "'");
    return knowledge::parse_synonyms(in);
}

inline KnowledgeArtifacts build_knowledge(const ExperimentConfig& cfg) {
    auto source = knowledge::load_triples(cfg.kg_source);
    auto graph = knowledge::build_graph(source, cfg.categories, load_synonyms(cfg.kg_synonyms),
                                        {cfg.kg_max_hops, cfg.kg_min_degree});
    knowledge::WalkConfig wc;
    wc.walks_per_node = cfg.kg_walks;
    wc.walk_length = cfg.kg_walk_length;
    wc.window = cfg.kg_window;
    wc.negatives = cfg.kg_negatives;
    wc.epochs = cfg.kg_epochs;
    wc.learning_rate = cfg.kg_lr;
    std::mt19937_64 rng(cfg.kg_seed);
    auto emb = knowledge::embed_nodes(graph, cfg.kg_dim, wc, rng);
    return {std::move(graph), std::move(emb)};
}

inline KnowledgeContext knowledge_context(const KnowledgeArtifacts& kg, const std::vector<std::string>& categories) {
    KnowledgeContext ctx;
    ctx.embeddings = kg.embeddings.table.detach();
    for (const auto& c : categories) {
        auto it = kg.graph.category_nodes().find(c);
        if (it == kg.graph.category_nodes().end())
            throw std::invalid_argument("class '" + c + "' has no category node in the knowledge graph");
        ctx.category_rows.push_back(kg.embeddings.node_index.at(it->second));
    }
    return ctx;
}

/// Writes <prefix>.tsv (canonical graph) and <prefix>.emb (embeddings).
inline void write_knowledge(const KnowledgeArtifacts& kg, const std::string& prefix) {
    std::ofstream g(prefix + ".tsv"), e(prefix + ".emb");
    if (!g || !e) throw std::runtime_error("cannot write knowledge artifacts under '" + prefix + "'");
    knowledge::write_graph(g, kg.graph);
    knowledge::write_embeddings(e, kg.embeddings);
}

// ---------------------------------------------------------------------------
// Model

inline pipeline::PipelineConfig pipeline_config(const ExperimentConfig& cfg) {
    pipeline::PipelineConfig p;
    p.image_h = p.image_w = cfg.image_size;
    p.blocks = cfg.blocks;
    p.cf = cfg.cf;
    p.sa_enabled = cfg.sa_enabled;
    p.multiscale = cfg.multiscale;
    const std::size_t n = 3 * cfg.image_size * cfg.image_size;
    p.cenc = pipeline::channels_for_ratio(cfg.ratio, n, pipeline::coded_level_dims(p.image_h, p.image_w, p.multiscale))
                 .channels;
    return p;
}

inline pipeline::RatioChoice ratio_choice(const ExperimentConfig& cfg) {
    const std::size_t n = 3 * cfg.image_size * cfg.image_size;
    return pipeline::channels_for_ratio(cfg.ratio, n,
                                        pipeline::coded_level_dims(cfg.image_size, cfg.image_size, cfg.multiscale));
}

inline double noise_power_for(double snr_db, double power) {
    return std::isinf(snr_db) && snr_db > 0 ? 0.0 : channel::snr_to_noise_power(snr_db, power);
}

/// Image in [0, 1] shifted to zero mean range.
inline Tensor normalize_image(const Tensor& image) { return add_scalar(image, -0.5); }

class Model {
public:
    Model(const ExperimentConfig& cfg, std::optional<KnowledgeContext> kg) : cfg_(cfg), kg_(std::move(kg)) {
        validate(cfg);
        if (cfg.kg_enabled && !kg_) throw std::invalid_argument("model: kg.enabled requires a knowledge graph");
        if (!cfg.kg_enabled) kg_.reset();
        pcfg_ = pipeline_config(cfg);
        ratio_ = ratio_choice(cfg);
        std::mt19937_64 rng(cfg.seed);
        extractor_ = pipeline::Extractor(params_, pcfg_, rng);
        codec_ = pipeline::Codec(params_, pcfg_, rng);
        detector::DetectorConfig dc;
        dc.num_classes = cfg.categories.size();
        dc.feature_channels = cfg.cf;
        dc.ndim = cfg.ndim;
        dc.kg_dim = kg_ ? kg_->embeddings.dim(1) : cfg.kg_dim;
        dc.rgat_hidden = cfg.rgat_hidden;
        dc.rgat_layers = cfg.rgat_layers;
        dc.rgat_heads = cfg.rgat_heads;
        dc.kg_enabled = cfg.kg_enabled;
        dc.image_h = dc.image_w = cfg.image_size;
        detector_ = detector::Detector(params_, dc, rng);
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ExperimentConfig& config() const { return cfg_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    const pipeline::RatioChoice& ratio() const { return ratio_; }
    const std::optional<KnowledgeContext>& knowledge() const { return kg_; }
    const detector::Detector& detector() const { return detector_; }

    /// Transmitter and channel: decoded multi-scale features at the receiver.
    pipeline::MultiScaleFeatures transmit(const Tensor& image, double snr_db, channel::Kind kind,
                                          std::mt19937_64& rng) const {
        auto f = extractor_(normalize_image(image), snr_db);
        auto code = codec_.encode(f);
        auto rx = pipeline::transmit_features(code, {kind, noise_power_for(snr_db, cfg_.power), cfg_.power}, rng);
        return codec_.decode(rx);
    }

    /// Detector over a batch: pooled features for every image's boxes, one graph per batch
    /// with proposal cliques per image. Images without boxes are skipped.
    detector::DetectorOutputs detect(const std::vector<pipeline::MultiScaleFeatures>& feats,
                                     const std::vector<std::vector<Box>>& boxes) const {
        std::vector<Tensor> parts;
        std::vector<std::size_t> group;
        for (std::size_t i = 0; i < feats.size(); ++i) {
            if (boxes[i].empty()) continue;
            parts.push_back(detector_.pooler()(feats[i], boxes[i], cfg_.image_size));
            group.insert(group.end(), boxes[i].size(), i);
        }
        if (parts.empty()) throw std::invalid_argument("detect: no proposals in batch");
        return detector_.forward(parts.size() == 1 ? parts[0] : concat(parts), group, kg_ ? &*kg_ : nullptr);
    }

private:
    ExperimentConfig cfg_;
    std::optional<KnowledgeContext> kg_;
    pipeline::PipelineConfig pcfg_;
    pipeline::RatioChoice ratio_;
    ParameterSet params_;
    pipeline::Extractor extractor_;
    pipeline::Codec codec_;
    detector::Detector detector_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline Checkpoint make_checkpoint(const Model& m) {
    Checkpoint ck;
    ck.meta = to_text(m.config());
    append_parameters(ck, m.params());
    if (const auto& kg = m.knowledge()) {
        ck.records.push_back({"kg.embeddings", kg->embeddings.shape(), kg->embeddings.values()});
        std::vector<double> rows(kg->category_rows.begin(), kg->category_rows.end());
        ck.records.push_back({"kg.category_rows", {rows.size()}, rows});
    }
    return ck;
}

inline void save_model(const Model& m, const std::string& path) { save_checkpoint(path, make_checkpoint(m)); }

inline std::optional<KnowledgeContext> checkpoint_knowledge(const Checkpoint& ck) {
    if (!ck.has("kg.embeddings")) return std::nullopt;
    KnowledgeContext kg;
    const auto& e = ck.find("kg.embeddings");
    kg.embeddings = Tensor(e.shape, e.values);
    for (double v : ck.find("kg.category_rows").values) kg.category_rows.push_back(static_cast<std::size_t>(v));
    return kg;
}

/// Rebuilds the model described by the checkpoint's own configuration.
inline std::unique_ptr<Model> load_model(const Checkpoint& ck) {
    auto m = std::make_unique<Model>(parse_config(ck.meta), checkpoint_knowledge(ck));
    load_parameters(ck, m->params());
    return m;
}

/// Loads a checkpoint into a model built from an explicit configuration;
/// shape disagreements are rejected naming both shapes.
inline std::unique_ptr<Model> load_model(const Checkpoint& ck, const ExperimentConfig& cfg) {
    auto kg = checkpoint_knowledge(ck);
    if (cfg.kg_enabled && !kg) throw std::invalid_argument("checkpoint carries no knowledge graph but kg.enabled=true");
    auto m = std::make_unique<Model>(cfg, kg);
    load_parameters(ck, m->params());
    return m;
}

inline std::unique_ptr<Model> load_model(const std::string& path) { return load_model(load_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Training samples

struct TrainingSample {
    std::vector<Box> boxes;
    detector::LossTargets targets;
};

/// Jittered copies of every ground-truth box (positive when IoU >= 0.5 with its
/// source) plus random background boxes whose IoU with all ground truth is < 0.3.
inline TrainingSample training_sample(const scene::Scene& sc, const ExperimentConfig& cfg, std::mt19937_64& rng) {
    const double W = static_cast<double>(cfg.image_size);
    const std::size_t C = cfg.categories.size();
    TrainingSample s;
    std::vector<Box> truth;
    for (const auto& o : sc.objects) truth.push_back(o.box);
    auto jittered = detector::jitter_boxes(truth, cfg.jitter, W, W, rng);
    for (std::size_t i = 0; i < jittered.size(); ++i) {
        const bool pos = detector::iou(jittered[i], truth[i]) >= 0.5;
        s.boxes.push_back(jittered[i]);
        s.targets.labels.push_back(pos ? sc.objects[i].class_id : C);
        s.targets.positive.push_back(pos);
        s.targets.deltas.push_back(pos ? detector::encode_box(jittered[i], truth[i]) : detector::BoxDelta{});
    }
    std::uniform_real_distribution<double> size(cfg.min_size, cfg.max_size), unit(0.0, 1.0);
    for (std::size_t b = 0; b < cfg.background_boxes; ++b) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            const double w = size(rng), h = size(rng);
            Box box{std::floor(unit(rng) * (W - w)), std::floor(unit(rng) * (W - h)), w, h};
            bool clear = true;
            for (const auto& t : truth) clear = clear && detector::iou(box, t) < 0.3;
            if (!clear) continue;
            s.boxes.push_back(box);
            s.targets.labels.push_back(C);
            s.targets.positive.push_back(false);
            s.targets.deltas.push_back({});
            break;
        }
    }
    if (s.boxes.size() > cfg.train_max_detections) {
        s.boxes.resize(cfg.train_max_detections);
        s.targets.labels.resize(cfg.train_max_detections);
        s.targets.positive.resize(cfg.train_max_detections);
        s.targets.deltas.resize(cfg.train_max_detections);
    }
    return s;
}

/// Detection loss plus the auxiliary cross-entropy of the initial classifier (weight 1, positives only).
inline Tensor batch_loss(const detector::DetectorOutputs& out, const detector::LossTargets& tg, double lambda) {
    const double m = static_cast<double>(tg.labels.size());
    Tensor loss = detector::multi_task_loss_logits(out.heads.cls_logits, out.heads.reg, tg, lambda, m, m);
    if (out.init_logits.defined()) {
        const std::size_t c = out.init_logits.dim(1);
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < tg.labels.size(); ++i)
            if (tg.positive[i]) idx.push_back(i * c + tg.labels[i]);
        if (!idx.empty())
            loss = add(loss, scale(sum(pick(log_softmax(out.init_logits), idx)), -1.0 / static_cast<double>(idx.size())));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    Adam(ParameterSet& ps, double beta1, double beta2, double weight_decay, double eps = 1e-8)
        : ps_(ps), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {
        for (const auto& [_, t] : ps.entries()) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1 - std::pow(b1_, static_cast<double>(t_)), c2 = 1 - std::pow(b2_, static_cast<double>(t_));
        const auto& entries = ps_.entries();
        for (std::size_t p = 0; p < entries.size(); ++p) {
            Tensor w = entries[p].second;
            if (!w.has_grad()) continue;
            auto data = w.data();
            const auto g = w.grad();
            auto& m = m_[p];
            auto& v = v_[p];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double gi = g[i] + wd_ * data[i];
                m[i] = b1_ * m[i] + (1 - b1_) * gi;
                v[i] = b2_ * v[i] + (1 - b2_) * gi * gi;
                data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

private:
    ParameterSet& ps_;
    double b1_, b2_, wd_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

/// Optimizes the model in place. Batches are visited in a per-epoch shuffled order;
/// each batch draws its SNR (uniform over the SA range, or the fixed training SNR)
/// and its channel noise from the training stream.
inline TrainResult train(Model& model, const std::vector<scene::Scene>& data, std::ostream* log = nullptr) {
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    const auto& cfg = model.config();
    std::mt19937_64 rng(scene::scene_seed(cfg.seed, 0xC0FFEE));
    Adam opt(model.params(), cfg.momentum, cfg.beta2, cfg.weight_decay);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    TrainResult result;
    auto last_good = model.params().snapshot();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate_at(cfg, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double snr = cfg.sa_enabled
                                   ? std::uniform_real_distribution<double>(cfg.sa_snr_min, cfg.sa_snr_max)(rng)
                                   : cfg.train_snr_db;
            std::vector<pipeline::MultiScaleFeatures> feats;
            std::vector<std::vector<Box>> boxes;
            detector::LossTargets tg;
            for (std::size_t k = start; k < end; ++k) {
                const auto& sc = data[order[k]];
                auto sample = training_sample(sc, cfg, rng);
                if (sample.boxes.empty()) continue;
                feats.push_back(model.transmit(sc.image, snr, cfg.channel_kind, rng));
                boxes.push_back(sample.boxes);
                tg.labels.insert(tg.labels.end(), sample.targets.labels.begin(), sample.targets.labels.end());
                tg.positive.insert(tg.positive.end(), sample.targets.positive.begin(), sample.targets.positive.end());
                tg.deltas.insert(tg.deltas.end(), sample.targets.deltas.begin(), sample.targets.deltas.end());
            }
            if (feats.empty()) continue;
            model.params().zero_grad();
            Tensor loss = batch_loss(model.detect(feats, boxes), tg, cfg.lambda);
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                model.params().restore(last_good);
                if (!cfg.checkpoint.empty()) save_model(model, cfg.checkpoint);
                throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) +
                                       " (non-finite loss); restored last finite parameters" +
                                       (cfg.checkpoint.empty() ? std::string() : " and saved " + cfg.checkpoint));
            }
            loss.backward();
            opt.step(lr);
            total += lv;
            ++batches;
        }
        last_good = model.params().snapshot();
        const double mean_loss = batches ? total / static_cast<double>(batches) : 0.0;
        result.epoch_loss.push_back(mean_loss);
        if (log)
            *log << "epoch " << epoch + 1 << " loss " << report::fixed(mean_loss) << " lr " << lr << std::endl;
    }
    return result;
}

inline std::vector<scene::Scene> training_set(const ExperimentConfig& cfg) {
    return scene::generate_dataset(cfg.scene_spec(), cfg.train_scenes, cfg.data_seed);
}

inline std::vector<scene::Scene> test_set(const ExperimentConfig& cfg) {
    return scene::generate_dataset(cfg.scene_spec(), cfg.test_scenes, cfg.data_seed + 1);
}

inline std::optional<KnowledgeContext> knowledge_for(const ExperimentConfig& cfg) {
    if (!cfg.kg_enabled) return std::nullopt;
    return knowledge_context(build_knowledge(cfg), cfg.categories);
}

/// Builds (or reuses) the knowledge graph, trains, and saves the checkpoint when a path is configured.
inline std::unique_ptr<Model> train_model(const ExperimentConfig& cfg, const std::vector<scene::Scene>& data,
                                          std::optional<KnowledgeContext> kg, std::ostream* log = nullptr,
                                          TrainResult* result = nullptr) {
    auto model = std::make_unique<Model>(cfg, cfg.kg_enabled ? std::move(kg) : std::nullopt);
    auto r = train(*model, data, log);
    if (result) *result = std::move(r);
    if (!cfg.checkpoint.empty()) save_model(*model, cfg.checkpoint);
    return model;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ImageResult {
    std::vector<detector::Detection> detections;
};

/// Proposals for an evaluation image.
inline std::vector<Box> eval_proposals(const scene::Scene& sc, const ExperimentConfig& cfg, std::mt19937_64& rng) {
    if (detector::parse_proposal_mode(cfg.proposals) == detector::ProposalMode::grid)
        return detector::grid_boxes(cfg.image_size, cfg.image_size, cfg.grid_stride, cfg.grid_sizes);
    std::vector<Box> truth;
    for (const auto& o : sc.objects) truth.push_back(o.box);
    const double W = static_cast<double>(cfg.image_size);
    return detector::jitter_boxes(truth, cfg.jitter, W, W, rng);
}

/// Full pipeline for one image; the image's stream depends only on (eval seed, index).
inline std::vector<detector::Detection> detect_image(const Model& model, const scene::Scene& sc, std::size_t index,
                                                     channel::Kind kind, double snr_db, const ExperimentConfig& ecfg) {
    NoGradGuard guard;
    std::mt19937_64 rng(scene::scene_seed(ecfg.eval_seed, index));
    auto boxes = eval_proposals(sc, ecfg, rng);
    if (boxes.empty()) return {};
    auto feats = model.transmit(sc.image, snr_db, kind, rng);
    auto out = model.detect({feats}, {boxes});
    const double W = static_cast<double>(model.config().image_size);
    auto dets = detector::to_detections(out.heads, boxes, index, W, W);
    std::erase_if(dets, [&](const detector::Detection& d) { return d.confidence < ecfg.score_threshold; });
    return detector::nms(std::move(dets), ecfg.nms, ecfg.max_detections);
}

inline std::vector<detector::GroundTruth> ground_truth(const std::vector<scene::Scene>& data) {
    std::vector<detector::GroundTruth> gts;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (const auto& o : data[i].objects) gts.push_back({i, o.class_id, o.box});
    return gts;
}

/// Detections for every image, sharded over eval.workers threads; merged in image order.
inline std::vector<detector::Detection> detect_all(const Model& model, const std::vector<scene::Scene>& data,
                                                   channel::Kind kind, double snr_db, const ExperimentConfig& ecfg) {
    std::vector<std::vector<detector::Detection>> per(data.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(ecfg.workers, data.size()));
    auto run = [&](std::size_t w) {
        for (std::size_t i = w; i < data.size(); i += workers) per[i] = detect_image(model, data[i], i, kind, snr_db, ecfg);
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }
    std::vector<detector::Detection> all;
    for (auto& d : per) all.insert(all.end(), d.begin(), d.end());
    return all;
}

inline report::MetricsRow metrics_row(const std::vector<detector::Detection>& dets,
                                      const std::vector<detector::GroundTruth>& gts, std::size_t num_classes) {
    using detector::SizeBand;
    report::MetricsRow r;
    r.ap50 = detector::mean_average_precision(dets, gts, num_classes, 0.5);
    r.map = r.ap50;
    r.ap75 = detector::mean_average_precision(dets, gts, num_classes, 0.75);
    r.ap_s = detector::mean_average_precision(dets, gts, num_classes, 0.5, SizeBand::small);
    r.ap_m = detector::mean_average_precision(dets, gts, num_classes, 0.5, SizeBand::medium);
    r.ap_l = detector::mean_average_precision(dets, gts, num_classes, 0.5, SizeBand::large);
    return r;
}

/// One metrics row for the model on a dataset at one channel condition.
/// Evaluation settings (NMS, proposals, seeds, workers) come from ecfg.
inline report::MetricsRow evaluate(const Model& model, const std::vector<scene::Scene>& data, channel::Kind kind,
                                   double snr_db, const std::string& condition, const ExperimentConfig& ecfg,
                                   std::vector<detector::Detection>* detections = nullptr) {
    if (model.config().categories != ecfg.categories)
        throw std::invalid_argument("evaluate: dataset classes differ from the model's classes");
    auto dets = detect_all(model, data, kind, snr_db, ecfg);
    auto r = metrics_row(dets, ground_truth(data), model.config().categories.size());
    r.condition = condition;
    r.channel = channel::to_string(kind);
    r.snr_db = snr_db;
    r.ratio = model.ratio().achieved;
    if (detections) *detections = std::move(dets);
    return r;
}

inline report::MetricsRow evaluate(const Model& model, const std::vector<scene::Scene>& data, channel::Kind kind,
                                   double snr_db, const std::string& condition = "eval") {
    return evaluate(model, data, kind, snr_db, condition, model.config());
}

/// Label describing a model's switches, e.g. "ms+sa+kg" or "ms+fixed9+nokg".
inline std::string condition_name(const ExperimentConfig& c) {
    std::string s = c.multiscale ? "ms" : "spliced";
    s += c.sa_enabled ? "+sa" : "+fixed" + report::fixed(c.train_snr_db, 0);
    s += c.kg_enabled ? "+kg" : "+nokg";
    return s;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepOutputs {
    std::vector<report::MetricsRow> rows;
    std::string csv_path;
    std::vector<std::string> plot_paths;
};

inline void ensure_parent(const std::string& path) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

/// Writes <prefix>.csv and one <prefix>_<channel>.svg per channel.
inline SweepOutputs write_results(const std::vector<report::MetricsRow>& rows, const std::string& prefix,
                                  const std::string& title) {
    SweepOutputs out;
    out.rows = rows;
    ensure_parent(prefix);
    out.csv_path = prefix + ".csv";
    report::write_csv_file(out.csv_path, rows);
    std::vector<std::string> channels;
    for (const auto& r : rows)
        if (std::find(channels.begin(), channels.end(), r.channel) == channels.end()) channels.push_back(r.channel);
    for (const auto& ch : channels) {
        const auto path = prefix + "_" + ch + ".svg";
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write '" + path + "'");
        os << report::svg_line_plot(title + " (" + ch + ")", "SNR (dB)", "mAP", report::series_for_channel(rows, ch));
        out.plot_paths.push_back(path);
    }
    return out;
}

/// Evaluates each ratio's checkpoint over the SNR x channel grid.
inline SweepOutputs sweep(const ExperimentConfig& cfg) {
    if (cfg.sweep_checkpoints.size() != cfg.sweep_ratios.size())
        throw std::invalid_argument("sweep: " + std::to_string(cfg.sweep_ratios.size()) + " ratios but " +
                                    std::to_string(cfg.sweep_checkpoints.size()) + " checkpoints");
    std::vector<std::string> missing;
    for (const auto& p : cfg.sweep_checkpoints)
        if (!std::filesystem::exists(p)) missing.push_back(p);
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw std::invalid_argument("sweep: missing checkpoints: " + list);
    }
    const auto data = test_set(cfg);
    std::vector<report::MetricsRow> rows;
    for (std::size_t i = 0; i < cfg.sweep_ratios.size(); ++i) {
        auto model = load_model(cfg.sweep_checkpoints[i]);
        if (std::fabs(model->config().ratio - cfg.sweep_ratios[i]) > 1e-9)
            throw std::invalid_argument("sweep: checkpoint " + cfg.sweep_checkpoints[i] + " was trained at ratio " +
                                        config_detail::format_double(model->config().ratio) + ", expected " +
                                        config_detail::format_double(cfg.sweep_ratios[i]));
        for (const auto& ch : cfg.sweep_channels)
            for (double snr : cfg.sweep_snr)
                rows.push_back(evaluate(*model, data, channel::parse_kind(ch), snr, condition_name(model->config()), cfg));
    }
    return write_results(rows, cfg.sweep_output, "mAP versus SNR");
}

// ---------------------------------------------------------------------------
// Ablation

enum class Switch { kg, sa, multiscale };

inline Switch parse_switch(const std::string& s) {
    if (s == "kg") return Switch::kg;
    if (s == "sa") return Switch::sa;
    if (s == "multiscale") return Switch::multiscale;
    throw std::invalid_argument("unknown ablation switch '" + s + "' (expected kg, sa or multiscale)");
}

inline std::set<std::string> switch_keys(Switch s) {
    switch (s) {
        case Switch::kg: return {"kg.enabled"};
        case Switch::sa: return {"sa.enabled", "training.snr_db"};
        case Switch::multiscale: return {"codec.multiscale"};
    }
    return {};
}

/// Rejects a pair of configurations that differ in anything except the switch
/// (output paths excepted).
inline void check_ablation_pair(const ExperimentConfig& a, const ExperimentConfig& b, Switch s) {
    auto allowed = switch_keys(s);
    allowed.insert({"training.checkpoint", "training.log"});
    const auto ma = to_map(a), mb = to_map(b);
    std::string diff;
    for (const auto& [k, v] : ma)
        if (!allowed.count(k) && mb.at(k) != v) diff += (diff.empty() ? "" : ", ") + k;
    if (!diff.empty()) throw std::invalid_argument("ablation variants differ beyond the switch: " + diff);
}

struct Variant {
    std::string name;
    ExperimentConfig cfg;
};

inline std::vector<Variant> ablation_variants(const ExperimentConfig& base, Switch s) {
    std::vector<Variant> v;
    auto with = [&](const std::string& name, auto edit) {
        ExperimentConfig c = base;
        edit(c);
        c.checkpoint = base.ablate_output + "_" + name + ".ckpt";
        c.log = "";
        v.push_back({name, c});
    };
    switch (s) {
        case Switch::kg:
            with("kg_on", [](ExperimentConfig& c) { c.kg_enabled = true; });
            with("kg_off", [](ExperimentConfig& c) { c.kg_enabled = false; });
            break;
        case Switch::sa:
            with("sa", [](ExperimentConfig& c) { c.sa_enabled = true; });
            for (double snr : base.ablate_fixed_snr)
                with("fixed" + report::fixed(snr, 0), [snr](ExperimentConfig& c) {
                    c.sa_enabled = false;
                    c.train_snr_db = snr;
                });
            break;
        case Switch::multiscale:
            with("ms_on", [](ExperimentConfig& c) { c.multiscale = true; });
            with("ms_off", [](ExperimentConfig& c) { c.multiscale = false; });
            break;
    }
    for (std::size_t i = 1; i < v.size(); ++i) check_ablation_pair(v[0].cfg, v[i].cfg, s);
    return v;
}

struct DeltaRow {
    std::string reference, variant, channel;
    double snr_db, ref_map, var_map, delta;
};

struct AblationReport {
    std::vector<report::MetricsRow> rows;
    std::vector<DeltaRow> deltas;
    std::string csv_path, delta_path;
};

/// Deltas of each variant against the first, per (channel, SNR), on CSV-rounded values.
inline std::vector<DeltaRow> ablation_deltas(const std::vector<report::MetricsRow>& rows) {
    std::vector<DeltaRow> out;
    if (rows.empty()) return out;
    const auto& ref = rows.front().condition;
    for (const auto& r : rows) {
        if (r.condition == ref) continue;
        for (const auto& q : rows)
            if (q.condition == ref && q.channel == r.channel && q.snr_db == r.snr_db) {
                const double a = report::rounded(q.map), b = report::rounded(r.map);
                out.push_back({ref, r.condition, r.channel, r.snr_db, a, b, report::rounded(a - b)});
            }
    }
    return out;
}

inline void write_deltas(const std::string& path, const std::vector<DeltaRow>& deltas) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    os << "reference,variant,channel,snr_db,reference_mAP,variant_mAP,delta_mAP\n";
    for (const auto& d : deltas)
        os << d.reference << ',' << d.variant << ',' << d.channel << ',' << report::fixed(d.snr_db, 2) << ','
           << report::fixed(d.ref_map) << ',' << report::fixed(d.var_map) << ',' << report::fixed(d.delta) << '\n';
}

/// Trains every variant of the switch on the same data and seeds, evaluates all of
/// them over the sweep SNR x channel grid and writes paired rows plus deltas.
inline AblationReport ablate(const ExperimentConfig& base, Switch s, std::ostream* log = nullptr) {
    const auto variants = ablation_variants(base, s);
    const auto train_data = training_set(base);
    const auto test_data = test_set(base);
    std::optional<KnowledgeContext> kg;
    for (const auto& v : variants)
        if (v.cfg.kg_enabled && !kg) kg = knowledge_for(v.cfg);
    AblationReport rep;
    for (const auto& v : variants) {
        ensure_parent(v.cfg.checkpoint);
        if (log) *log << "training variant " << v.name << std::endl;
        auto model = train_model(v.cfg, train_data, kg, log);
        for (const auto& ch : base.sweep_channels)
            for (double snr : base.sweep_snr)
                rep.rows.push_back(evaluate(*model, test_data, channel::parse_kind(ch), snr, v.name, base));
    }
    rep.deltas = ablation_deltas(rep.rows);
    const std::string names[] = {"kg", "sa", "multiscale"};
    const std::string prefix = base.ablate_output + "_" + names[static_cast<int>(s)];
    auto files = write_results(rep.rows, prefix, "ablation: " + names[static_cast<int>(s)]);
    rep.csv_path = files.csv_path;
    rep.delta_path = prefix + "_delta.csv";
    write_deltas(rep.delta_path, rep.deltas);
    return rep;
}

}  // namespace cogsc::harness
