#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cogsc/cogsc.hpp"

using namespace cogsc;

namespace {

std::vector<std::string> overrides;

ExperimentConfig config_or_default(const std::string& path) {
    auto cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    std::string text;
    for (const auto& o : overrides) text += o + '\n';
    return text.empty() ? cfg : parse_config(text, cfg);
}

int kg_build(const std::string& config_path, const std::string& out) {
    auto cfg = config_or_default(config_path);
    auto kg = harness::build_knowledge(cfg);
    const auto prefix = out.empty() ? cfg.kg_output : out;
    harness::ensure_parent(prefix);
    harness::write_knowledge(kg, prefix);
    std::cout << "entities " << kg.graph.entities().size() << " relations " << kg.graph.relations().size()
              << " triples " << kg.graph.triples().size() << " -> " << prefix << ".tsv, " << prefix << ".emb\n";
    return 0;
}

int train(const std::string& config_path) {
    auto cfg = config_or_default(config_path);
    std::ofstream logfile;
    std::ostream* log = &std::cout;
    if (!cfg.log.empty()) {
        harness::ensure_parent(cfg.log);
        logfile.open(cfg.log);
        log = &logfile;
    }
    harness::ensure_parent(cfg.checkpoint);
    auto data = harness::training_set(cfg);
    auto model = harness::train_model(cfg, data, harness::knowledge_for(cfg), log);
    std::cout << "saved " << cfg.checkpoint << " (" << model->params().total_values() << " parameters, ratio "
              << report::fixed(model->ratio().achieved) << ")\n";
    return 0;
}

int eval(const std::string& ckpt, double snr, const std::string& channel_name, const std::string& config_path,
         const std::string& detections_path) {
    auto ck = load_checkpoint(ckpt);
    auto model = config_path.empty() ? harness::load_model(ck) : harness::load_model(ck, config_or_default(config_path));
    const auto& cfg = model->config();
    auto data = harness::test_set(cfg);
    std::vector<detector::Detection> dets;
    auto row = harness::evaluate(*model, data, channel::parse_kind(channel_name), snr,
                                 harness::condition_name(cfg), cfg, &dets);
    report::write_csv(std::cout, {row});
    if (!detections_path.empty()) {
        std::ofstream os(detections_path);
        report::write_detections(os, dets, cfg.categories);
    }
    return 0;
}

int sweep(const std::string& config_path) {
    auto out = harness::sweep(config_or_default(config_path));
    std::cout << "wrote " << out.csv_path << " (" << out.rows.size() << " rows)";
    for (const auto& p : out.plot_paths) std::cout << ", " << p;
    std::cout << '\n';
    return 0;
}

int ablate(const std::string& config_path, const std::string& which) {
    auto rep = harness::ablate(config_or_default(config_path), harness::parse_switch(which), &std::cout);
    std::cout << "wrote " << rep.csv_path << " and " << rep.delta_path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cognitive semantic-communication link simulator"};
    app.require_subcommand(1);

    std::string config, out, ckpt, channel_name = "awgn", detections, which;
    double snr = 0;

    auto* kg = app.add_subcommand("kg-build", "Build the knowledge graph and its node embeddings");
    kg->add_option("--config", config, "Experiment config (key=value)");
    kg->add_option("--out", out, "Output prefix (default: kg.output)");

    auto* tr = app.add_subcommand("train", "Train a model and save its checkpoint");
    tr->add_option("--config", config, "Experiment config")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint at one channel condition");
    ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    ev->add_option("--snr", snr, "SNR in dB")->required();
    ev->add_option("--channel", channel_name, "awgn or rayleigh")->check(CLI::IsMember({"awgn", "rayleigh"}));
    ev->add_option("--config", config, "Override config (shapes must match the checkpoint)");
    ev->add_option("--detections", detections, "Write detection records here");

    auto* sw = app.add_subcommand("sweep", "Evaluate checkpoints over SNR x ratio x channel");
    sw->add_option("--config", config, "Experiment config")->required();

    auto* ab = app.add_subcommand("ablate", "Train and compare variants differing in one switch");
    ab->add_option("--switch", which, "kg, sa or multiscale")->required()->check(
        CLI::IsMember({"kg", "sa", "multiscale"}));
    ab->add_option("--config", config, "Experiment config");

    for (auto* sub : {kg, tr, sw, ab})
        sub->add_option("--set", overrides, "Override a config key (key=value, repeatable)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*kg) return kg_build(config, out);
        if (*tr) return train(config);
        if (*ev) return eval(ckpt, snr, channel_name, config, detections);
        if (*sw) return sweep(config);
        if (*ab) return ablate(config, which);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
