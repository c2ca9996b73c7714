// Command-line front end: prepare -> quanv -> train -> eval -> report.
#include <algorithm>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tsq/config.hpp"
#include "tsq/errors.hpp"
#include "tsq/pipeline.hpp"
#include "tsq/synth.hpp"

namespace {

using namespace tsq;
namespace fs = std::filesystem;

// Config-file keys are option names with '_' or '-'; flags given on the
// command line win.
void apply_config_file(CLI::App &app, CLI::App &sub, const config::KeyValues &kv) {
    for (const auto &[key, value] : kv) {
        std::string name = "--" + key;
        std::replace(name.begin() + 2, name.end(), '_', '-');
        CLI::Option *opt = sub.get_option_no_throw(name);
        if (opt == nullptr) {
            opt = app.get_option_no_throw(name);
        }
        if (opt == nullptr || opt->count() > 0) {
            continue;
        }
        opt->add_result(value);
        opt->run_callback();
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Traffic-sign classification with classical and quanvolutional networks"};
    app.require_subcommand(1);
    app.fallthrough();
    std::uint64_t seed = 0;
    std::string config_path;
    app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--config", config_path, "key = value file; command-line flags take precedence");

    pipeline::PrepareOptions prep;
    auto *prepare = app.add_subcommand("prepare", "Scan, filter and split an image directory into a manifest");
    prepare->add_option("--root", prep.root, "Dataset root with one directory per class")->required();
    prepare->add_option("--out", prep.out_manifest, "Manifest CSV to write")->required();
    prepare->add_option("--min-size", prep.min_size, "Keep images strictly larger than this on both sides")
        ->capture_default_str();
    prepare->add_option("--max-samples", prep.max_samples, "Stratified subsample size (0 keeps all)")
        ->capture_default_str();

    pipeline::QuanvOptions qo;
    auto *quanv = app.add_subcommand("quanv", "Precompute quanvolution features for every split");
    quanv->add_option("--manifest", qo.manifest, "Manifest CSV")->required();
    quanv->add_option("--cache-dir", qo.cache_dir, "Output directory for the feature caches")->required();
    quanv->add_option("--layers", qo.layers, "Random layers per circuit")->capture_default_str();
    quanv->add_option("--n-filters", qo.n_filters, "Independent circuits per patch")->capture_default_str();
    quanv->add_option("--embed-scale", qo.embed_scale, "Angle = scale * pixel")->capture_default_str();
    quanv->add_option("--image-size", qo.image_size, "Side of the resized grayscale image")->capture_default_str();

    pipeline::TrainOptions to;
    std::string train_model = "classical";
    auto *train = app.add_subcommand("train", "Train the classical or the quanv model");
    train->add_option("--model", train_model, "classical | quanv")->capture_default_str();
    train->add_option("--input", to.input, "Manifest (classical) or feature cache directory (quanv)")->required();
    train->add_option("--batch-size", to.batch_size)->capture_default_str();
    train->add_option("--epochs", to.epochs)->capture_default_str();
    train->add_option("--lr", to.learning_rate, "Adam learning rate")->capture_default_str();
    train->add_option("--out", to.out, "Model file to write")->required();
    train->add_option("--history", to.history, "History CSV (default <out>.history.csv)");
    train->add_option("--image-size", to.image_size)->capture_default_str();

    pipeline::EvalOptions eo;
    std::string eval_split = "test";
    auto *eval = app.add_subcommand("eval", "Evaluate a model on one split");
    eval->add_option("--model", eo.model, "Model file")->required();
    eval->add_option("--input", eo.input, "Manifest or feature cache directory")->required();
    eval->add_option("--split", eval_split, "train | val | test")->capture_default_str();
    eval->add_option("--out", eo.out_report, "Report JSON; a .csv summary is written next to it")->required();
    eval->add_option("--top-k", eo.top_k, "Most confused class pairs to list")->capture_default_str();
    eval->add_option("--beta", eo.beta)->capture_default_str();

    pipeline::ReportOptions ro;
    auto *report = app.add_subcommand("report", "Merge eval reports into one table");
    report->add_option("reports", ro.reports, "Report JSON files")->required();
    report->add_option("--out", ro.out_csv, "Consolidated CSV");
    report->add_option("--text", ro.out_text, "Aligned text table");

    synth::SynthOptions so;
    auto *synth = app.add_subcommand("synth", "Write a synthetic traffic-sign image set");
    fs::path synth_root;
    synth->add_option("--out", synth_root, "Output root")->required();
    synth->add_option("--classes", so.n_classes)->capture_default_str();
    synth->add_option("--per-class", so.per_class)->capture_default_str();
    synth->add_option("--min-side", so.min_side)->capture_default_str();
    synth->add_option("--max-side", so.max_side)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e);
    }

    try {
        CLI::App *active = app.get_subcommands().front();
        if (!config_path.empty()) {
            apply_config_file(app, *active, config::load_key_values(config_path));
        }
        auto &log = std::cerr;
        if (active == prepare) {
            prep.seed = seed;
            pipeline::cmd_prepare(prep, log);
        } else if (active == quanv) {
            qo.seed = seed;
            pipeline::cmd_quanv(qo, log);
        } else if (active == train) {
            to.seed = seed;
            to.model = pipeline::parse_model_kind(train_model);
            pipeline::cmd_train(to, log);
        } else if (active == eval) {
            eo.split = data::parse_split(eval_split);
            pipeline::cmd_eval(eo, log);
        } else if (active == report) {
            pipeline::cmd_report(ro, std::cout);
        } else if (active == synth) {
            so.seed = seed;
            synth::write_synthetic_signs(synth_root, so);
        }
    } catch (const tsq::Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
