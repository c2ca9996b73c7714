#include "tsq/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "tsq/binio.hpp"
#include "tsq/errors.hpp"
#include "tsq/hash.hpp"

namespace tsq::pipeline {

using json = nlohmann::ordered_json;
using data::Split;

namespace {

constexpr std::array kSplits{Split::Train, Split::Val, Split::Test};

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t parse_hex(const std::string &s) { return std::stoull(s, nullptr, 16); }

const std::string &require_key(const config::KeyValues &kv, const std::string &key, const std::string &where) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw ConfigError(where + ": missing '" + key + "'");
    }
    return it->second;
}

struct LoadedData {
    nn::Dataset<float> set;
    std::size_t n_classes = 0;
    std::uint64_t dataset_hash = 0;
};

LoadedData load_for(ModelKind kind, const fs::path &input, Split split, std::size_t image_size) {
    LoadedData d;
    if (kind == ModelKind::Classical) {
        const auto manifest = data::read_manifest(input);
        d.set = load_image_split(manifest, split, image_size);
        d.n_classes = manifest.n_classes;
        d.dataset_hash = file_hash(input);
    } else {
        const auto info = read_cache_info(input);
        d.set = load_feature_split(input, split);
        d.n_classes = info.n_classes;
        d.dataset_hash = info.dataset_hash;
    }
    return d;
}

nn::SampleShape sample_shape(const nn::Tensor<float> &t) {
    if (t.shape.size() != 4) {
        throw ConfigError("expected image-shaped inputs");
    }
    return {t.shape[1], t.shape[2], t.shape[3], false};
}

} // namespace

std::string_view model_name(ModelKind kind) noexcept {
    return kind == ModelKind::Classical ? "classical" : "quanv";
}

ModelKind parse_model_kind(std::string_view name) {
    if (name == "classical") return ModelKind::Classical;
    if (name == "quanv") return ModelKind::Quanv;
    throw ConfigError("unknown model kind '" + std::string(name) + "' (expected classical|quanv)");
}

std::uint64_t file_hash(const fs::path &path) { return Fnv1a64{}.update(read_file_bytes(path)).digest(); }

// ---- prepare ------------------------------------------------------------------

// Output locations are left out: the same inputs and settings give the same
// artifact bytes wherever they are written.
config::RunConfig PrepareOptions::run_config() const {
    return {"prepare",
            {{"root", root.string()},
             {"min_size", std::to_string(min_size)},
             {"seed", std::to_string(seed)},
             {"max_samples", std::to_string(max_samples)}}};
}

PrepareResult cmd_prepare(const PrepareOptions &options, std::ostream &log) {
    const auto rc = options.run_config();
    LockFile lock(options.out_manifest);
    PrepareResult r;
    data::DatasetManifest m = data::scan_dataset_dir(options.root);
    r.scanned = m.records.size();
    m.records = data::filter_by_size(m.records, options.min_size);
    r.kept_after_filter = m.records.size();
    log << "scanned " << r.scanned << " images in " << m.n_classes << " classes; " << r.kept_after_filter
        << " larger than " << options.min_size << "x" << options.min_size << "\n";
    if (m.records.empty()) {
        throw ConfigError("no images larger than " + std::to_string(options.min_size) + "x" +
                          std::to_string(options.min_size) + " under " + options.root.string());
    }
    m.records = data::stratified_subsample(m.records, m.n_classes, options.max_samples, options.seed);
    m = data::split_dataset(std::move(m), options.seed);

    r.per_class.resize(m.n_classes);
    for (const auto &rec : m.records) {
        auto &c = r.per_class[rec.class_id];
        (rec.split == Split::Train ? c.train : rec.split == Split::Val ? c.val : c.test)++;
    }
    for (std::size_t c = 0; c < m.n_classes; ++c) {
        log << "  class " << std::setw(3) << c << " (" << m.class_names[c] << "): train " << r.per_class[c].train
            << ", val " << r.per_class[c].val << ", test " << r.per_class[c].test << "\n";
    }
    write_file_atomic(options.out_manifest, data::manifest_to_csv(m, "config_hash=" + config::hex64(rc.hash())));
    r.manifest = std::move(m);
    return r;
}

// ---- quanv --------------------------------------------------------------------

quanv::QuanvFilterSpec QuanvOptions::filter_spec() const {
    quanv::QuanvFilterSpec s;
    s.seed = seed;
    s.n_random_layers = layers;
    s.n_filters = n_filters;
    s.embed_scale = embed_scale;
    return s;
}

config::RunConfig QuanvOptions::run_config() const {
    return {"quanv",
            {{"manifest", manifest.string()},
             {"seed", std::to_string(seed)},
             {"layers", std::to_string(layers)},
             {"n_filters", std::to_string(n_filters)},
             {"embed_scale", fmt_double(embed_scale)},
             {"image_size", std::to_string(image_size)}}};
}

fs::path cache_file(const fs::path &cache_dir, Split split) {
    return cache_dir / (std::string(data::split_name(split)) + ".qnvf");
}

QuanvResult cmd_quanv(const QuanvOptions &options, std::ostream &log) {
    const auto spec = options.filter_spec();
    spec.validate();
    auto rc = options.run_config();
    const auto manifest = data::read_manifest(options.manifest);
    const std::uint64_t dataset_hash = file_hash(options.manifest);
    rc.values["dataset_hash"] = config::hex64(dataset_hash);

    fs::create_directories(options.cache_dir);
    LockFile lock(options.cache_dir / "cache");
    QuanvResult result;
    result.up_to_date = true;
    for (auto split : kSplits) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto records = manifest.split(split);
        auto r = quanv::quanv_dataset(records, spec, cache_file(options.cache_dir, split), options.image_size);
        log << data::split_name(split) << ": " << r.index.size() << " records (" << r.computed << " computed, "
            << r.reused << " reused, " << r.errors.size() << " errors) in " << std::fixed << std::setprecision(2)
            << seconds_since(t0) << " s" << std::defaultfloat << "\n";
        for (const auto &e : r.errors) {
            log << "  skipped " << e << "\n";
        }
        result.up_to_date = result.up_to_date && r.up_to_date;
        result.splits.push_back(std::move(r));
    }

    config::KeyValues info = rc.values;
    info["n_classes"] = std::to_string(manifest.n_classes);
    info["spec_hash"] = config::hex64(spec.hash());
    info["config_hash"] = config::hex64(rc.hash());
    const std::string info_text = config::to_text(info);
    const fs::path info_path = options.cache_dir / "cache.cfg";
    if (!fs::exists(info_path) || read_file_text(info_path) != info_text) {
        write_file_atomic(info_path, info_text);
        result.up_to_date = false;
    }
    log << (result.up_to_date ? "cache up to date\n" : "cache written\n");

    if (options.layers == 0) {
        double worst = 0.0;
        for (std::size_t s = 0; s < kSplits.size(); ++s) {
            const auto &r = result.splits[s];
            if (r.index.empty()) {
                continue;
            }
            const auto cache = quanv::read_feature_cache(r.cache_path);
            const auto img = data::load_preprocessed(r.index.front().path, options.image_size);
            const auto &fm = cache.records.front().map;
            for (std::size_t y = 0; y < fm.height; ++y) {
                for (std::size_t x = 0; x < fm.width; ++x) {
                    const float px[4] = {img.at(2 * y, 2 * x), img.at(2 * y, 2 * x + 1), img.at(2 * y + 1, 2 * x),
                                         img.at(2 * y + 1, 2 * x + 1)};
                    for (std::size_t c = 0; c < fm.channels; ++c) {
                        const double expect = std::cos(options.embed_scale * px[c % 4]);
                        worst = std::max(worst, std::abs(static_cast<double>(fm.at(y, x, c)) - expect));
                    }
                }
            }
        }
        result.cos_identity_error = worst;
        log << "zero-layer cos identity check: max error " << worst << (worst <= 1e-6 ? " (ok)\n" : " (FAILED)\n");
    }
    return result;
}

// ---- data loading -------------------------------------------------------------

nn::Dataset<float> load_image_split(const data::DatasetManifest &manifest, Split split, std::size_t image_size) {
    const auto records = manifest.split(split);
    nn::Dataset<float> d{nn::Tensor<float>({records.size(), image_size, image_size, 1}), {}};
    const std::size_t per = image_size * image_size;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto img = data::load_preprocessed(records[i].path, image_size);
        std::copy(img.values.data(), img.values.data() + per, d.inputs.sample(i));
        d.labels.push_back(records[i].class_id);
    }
    return d;
}

CacheInfo read_cache_info(const fs::path &cache_dir) {
    const fs::path path = cache_dir / "cache.cfg";
    if (!fs::exists(path)) {
        throw ConfigError("not a feature cache directory (no cache.cfg): " + cache_dir.string());
    }
    const auto kv = config::load_key_values(path);
    CacheInfo info;
    info.n_classes = std::stoull(require_key(kv, "n_classes", path.string()));
    info.dataset_hash = parse_hex(require_key(kv, "dataset_hash", path.string()));
    info.spec_hash = parse_hex(require_key(kv, "spec_hash", path.string()));
    return info;
}

nn::Dataset<float> load_feature_split(const fs::path &cache_dir, Split split) {
    const auto cache = quanv::read_feature_cache(cache_file(cache_dir, split));
    if (cache.records.empty()) {
        return {nn::Tensor<float>({0, 1, 1, 1}), {}};
    }
    const auto &first = cache.records.front().map;
    nn::Dataset<float> d{nn::Tensor<float>({cache.records.size(), first.height, first.width, first.channels}), {}};
    for (std::size_t i = 0; i < cache.records.size(); ++i) {
        const auto &m = cache.records[i].map;
        if (m.height != first.height || m.width != first.width || m.channels != first.channels) {
            throw ConfigError("feature cache record " + std::to_string(i) + " has inconsistent shape");
        }
        std::copy(m.values.data(), m.values.data() + m.values.size(), d.inputs.sample(i));
        d.labels.push_back(cache.records[i].label);
    }
    return d;
}

// ---- train --------------------------------------------------------------------

fs::path TrainOptions::history_path() const {
    if (!history.empty()) {
        return history;
    }
    fs::path p = out;
    p += ".history.csv";
    return p;
}

config::RunConfig TrainOptions::run_config() const {
    return {"train",
            {{"model", std::string(model_name(model))},
             {"input", input.string()},
             {"batch_size", std::to_string(batch_size)},
             {"epochs", std::to_string(epochs)},
             {"lr", fmt_double(learning_rate)},
             {"seed", std::to_string(seed)},
             {"image_size", std::to_string(image_size)}}};
}

TrainSummary cmd_train(const TrainOptions &options, std::ostream &log) {
    auto rc = options.run_config();
    const auto train_data = load_for(options.model, options.input, Split::Train, options.image_size);
    const auto val_data = load_for(options.model, options.input, Split::Val, options.image_size);
    if (train_data.set.inputs.batch() == 0) {
        throw ConfigError("training split is empty in " + options.input.string());
    }
    const nn::SampleShape shape = sample_shape(train_data.set.inputs);
    if (options.model == ModelKind::Classical && (shape.c != 1 || shape.h != options.image_size)) {
        throw ConfigError("classical model expects grayscale images");
    }
    rc.values["dataset_hash"] = config::hex64(train_data.dataset_hash);
    rc.values["n_classes"] = std::to_string(train_data.n_classes);

    const nn::ModelSpec spec = nn::default_architecture(shape, train_data.n_classes);
    LockFile lock(options.out);
    log << "model " << model_name(options.model) << ": " << spec.describe() << "\n"
        << "training on " << train_data.set.inputs.batch() << " samples, validating on "
        << val_data.set.inputs.batch() << "\n";

    nn::TrainConfig tc;
    tc.batch_size = options.batch_size;
    tc.epochs = options.epochs;
    tc.adam.learning_rate = options.learning_rate;
    tc.seed = options.seed;
    const auto t0 = std::chrono::steady_clock::now();
    auto result = nn::train(spec, train_data.set, val_data.set, tc, [&](const nn::EpochStats &s) {
        log << "epoch " << s.epoch << "/" << tc.epochs << "  loss " << std::fixed << std::setprecision(4)
            << s.train_loss << "  acc " << s.train_acc << "  val_loss " << s.val_loss << "  val_acc " << s.val_acc
            << "  (" << std::setprecision(1) << seconds_since(t0) << " s)" << std::defaultfloat << "\n";
    });

    nn::save_model(options.out, result.model, {rc.hash(), rc.text()});
    write_file_atomic(options.history_path(), nn::history_to_csv(result.history));
    const auto &last = result.history.back();
    log << "final train accuracy " << last.train_acc << ", validation accuracy " << last.val_acc << "\n";
    return {std::move(result.history), spec.describe(), train_data.dataset_hash};
}

// ---- eval ---------------------------------------------------------------------

config::RunConfig EvalOptions::run_config() const {
    return {"eval",
            {{"model", model.string()},
             {"input", input.string()},
             {"split", std::string(data::split_name(split))},
             {"top_k", std::to_string(top_k)},
             {"beta", fmt_double(beta)}}};
}

EvalResult cmd_eval(const EvalOptions &options, std::ostream &log) {
    const auto rc = options.run_config();
    const auto loaded = nn::load_model(options.model);
    const auto train_cfg = config::parse_key_values(loaded.metadata.config_text);
    const std::string where = options.model.string();
    EvalResult r;
    r.model = parse_model_kind(require_key(train_cfg, "model", where));
    r.batch_size = std::stoull(require_key(train_cfg, "batch_size", where));
    const std::size_t image_size = std::stoull(require_key(train_cfg, "image_size", where));

    const auto d = load_for(r.model, options.input, options.split, image_size);
    if (d.n_classes != loaded.network.n_classes()) {
        throw ConfigError("model predicts " + std::to_string(loaded.network.n_classes()) + " classes but " +
                          options.input.string() + " has " + std::to_string(d.n_classes));
    }
    if (d.set.inputs.batch() == 0) {
        throw ConfigError(std::string(data::split_name(options.split)) + " split is empty");
    }
    if (!(sample_shape(d.set.inputs) == loaded.network.spec().input)) {
        throw ConfigError("input shape does not match the model input");
    }

    const auto pred = nn::predict(loaded.network, d.set.inputs);
    r.confusion = metrics::confusion_matrix(d.set.labels, pred, d.n_classes);
    r.report = metrics::macro_metrics(r.confusion, options.beta);
    r.report.top_confused_pairs = metrics::top_confused_pairs(r.confusion, options.top_k);

    json j;
    j["model"] = model_name(r.model);
    j["batch_size"] = r.batch_size;
    j["split"] = data::split_name(options.split);
    j["n_classes"] = d.n_classes;
    j["dataset_hash"] = config::hex64(d.dataset_hash);
    j["train_config_hash"] = config::hex64(loaded.metadata.config_hash);
    j["eval_config_hash"] = config::hex64(rc.hash());
    j["train_config"] = train_cfg;
    j["eval_config"] = rc.values;
    j["total"] = r.report.total;
    j["accuracy"] = r.report.accuracy;
    j["precision"] = r.report.macro_precision;
    j["recall"] = r.report.macro_recall;
    j["fbeta"] = r.report.macro_fbeta;
    j["beta"] = r.report.beta;
    json per_class = json::array();
    for (const auto &c : r.report.per_class) {
        per_class.push_back({{"class", c.class_id},
                             {"support", c.support},
                             {"predicted", c.predicted},
                             {"precision", c.precision},
                             {"recall", c.recall},
                             {"fbeta", c.fbeta},
                             {"precision_undefined", c.precision_undefined},
                             {"recall_undefined", c.recall_undefined}});
    }
    j["per_class"] = per_class;
    json pairs = json::array();
    for (const auto &p : r.report.top_confused_pairs) {
        pairs.push_back({{"true", p.true_class}, {"predicted", p.predicted_class}, {"count", p.count}});
    }
    j["top_confused_pairs"] = pairs;
    json cm = json::array();
    for (Eigen::Index t = 0; t < r.confusion.counts.rows(); ++t) {
        json row = json::array();
        for (Eigen::Index p = 0; p < r.confusion.counts.cols(); ++p) {
            row.push_back(r.confusion.counts(t, p));
        }
        cm.push_back(row);
    }
    j["confusion_matrix"] = cm;

    r.json_path = options.out_report;
    r.csv_path = fs::path(options.out_report).replace_extension(".csv");
    LockFile lock(r.json_path);
    write_file_atomic(r.json_path, j.dump(2) + "\n");
    char row[256];
    std::snprintf(row, sizeof(row), "%s\n%s,%zu,%.6f,%.6f,%.6f,%.6f\n", kSummaryCsvHeader,
                  std::string(model_name(r.model)).c_str(), r.batch_size, r.report.accuracy,
                  r.report.macro_precision, r.report.macro_recall, r.report.macro_fbeta);
    write_file_atomic(r.csv_path, std::string_view(row));

    log << model_name(r.model) << " (batch " << r.batch_size << ") on " << data::split_name(options.split)
        << ": accuracy " << r.report.accuracy << ", precision " << r.report.macro_precision << ", recall "
        << r.report.macro_recall << ", f-beta " << r.report.macro_fbeta << " over " << r.report.total
        << " samples\n";
    for (const auto &p : r.report.top_confused_pairs) {
        log << "  confused " << p.true_class << " -> " << p.predicted_class << ": " << p.count << "\n";
    }
    return r;
}

// ---- report -------------------------------------------------------------------

ReportTable cmd_report(const ReportOptions &options, std::ostream &log) {
    if (options.reports.empty()) {
        throw ValidationError("report needs at least one report file");
    }
    std::map<std::size_t, ReportRow> rows;
    std::optional<std::size_t> n_classes;
    std::optional<std::string> dataset_hash;
    std::map<std::string, std::string> dataset_by_model;
    for (const auto &path : options.reports) {
        json j;
        try {
            j = json::parse(read_file_text(path));
        } catch (const json::exception &e) {
            throw DecodeError(path.string() + ": " + e.what());
        }
        const auto model = parse_model_kind(j.at("model").get<std::string>());
        const auto batch = j.at("batch_size").get<std::size_t>();
        const auto classes = j.at("n_classes").get<std::size_t>();
        if (n_classes && *n_classes != classes) {
            throw ValidationError("inconsistent n_classes across reports (" + std::to_string(*n_classes) + " vs " +
                                  std::to_string(classes) + " in " + path.string() + ")");
        }
        n_classes = classes;
        const auto hash = j.at("dataset_hash").get<std::string>();
        // Classical runs hash the manifest; quanv runs carry the manifest hash
        // through cache.cfg, so both must agree.
        if (dataset_hash && *dataset_hash != hash) {
            throw ValidationError("reports come from different datasets (" + *dataset_hash + " vs " + hash + " in " +
                                  path.string() + ")");
        }
        dataset_hash = hash;

        auto &row = rows[batch];
        row.batch_size = batch;
        const int m = model == ModelKind::Classical ? 0 : 1;
        if (row.cells[0][m]) {
            throw ValidationError("duplicate report for model " + std::string(model_name(model)) + " at batch size " +
                                  std::to_string(batch));
        }
        row.cells[0][m] = j.at("accuracy").get<double>();
        row.cells[1][m] = j.at("precision").get<double>();
        row.cells[2][m] = j.at("recall").get<double>();
        row.cells[3][m] = j.at("fbeta").get<double>();
    }

    ReportTable table;
    for (auto &[batch, row] : rows) {
        row.flagged = row.cells[0][0] && row.cells[0][1] && *row.cells[0][0] < *row.cells[0][1] - 0.02;
        table.rows.push_back(row);
    }

    auto cell = [](const std::optional<double> &v) {
        if (!v) return std::string("-");
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.4f", *v);
        return std::string(buf);
    };
    const char *metric_names[4] = {"accuracy", "precision", "recall", "fbeta"};
    std::ostringstream csv;
    csv << "batch_size";
    for (auto name : metric_names) {
        csv << ',' << name << "_cnn," << name << "_qnn";
    }
    csv << '\n';
    std::ostringstream text;
    text << "Batch |     Accuracy    |    Precision    |      Recall     |      F-beta\n"
         << " size |   CNN      QNN  |   CNN      QNN  |   CNN      QNN  |   CNN      QNN\n"
         << "------+-----------------+-----------------+-----------------+----------------\n";
    for (const auto &row : table.rows) {
        csv << row.batch_size;
        text << std::setw(5) << row.batch_size << " |";
        for (int m = 0; m < 4; ++m) {
            csv << ',' << cell(row.cells[m][0]) << ',' << cell(row.cells[m][1]);
            text << ' ' << std::setw(7) << cell(row.cells[m][0]) << "  " << std::setw(6) << cell(row.cells[m][1])
                 << (m < 3 ? " |" : "");
        }
        text << (row.flagged ? "  *" : "") << '\n';
    }
    if (std::any_of(table.rows.begin(), table.rows.end(), [](const ReportRow &r) { return r.flagged; })) {
        text << "* classical accuracy more than 2 points below quanv; inspect this run\n";
    }
    table.csv = csv.str();
    table.text = text.str();

    if (!options.out_csv.empty()) {
        write_file_atomic(options.out_csv, table.csv);
    }
    if (!options.out_text.empty()) {
        write_file_atomic(options.out_text, table.text);
    }
    log << table.text;
    return table;
}

} // namespace tsq::pipeline
