#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tsq/config.hpp"
#include "tsq/data.hpp"
#include "tsq/metrics.hpp"
#include "tsq/nn.hpp"
#include "tsq/quanv.hpp"

namespace tsq::pipeline {

namespace fs = std::filesystem;

inline constexpr std::size_t kImageSize = 64;

enum class ModelKind { Classical, Quanv };

std::string_view model_name(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view name);

// ---- prepare ------------------------------------------------------------------

struct PrepareOptions {
    fs::path root;
    fs::path out_manifest;
    std::size_t min_size = 64;
    std::uint64_t seed = 0;
    std::size_t max_samples = 0; // 0 keeps everything

    config::RunConfig run_config() const;
};

struct ClassCounts {
    std::size_t train = 0, val = 0, test = 0;
};

struct PrepareResult {
    data::DatasetManifest manifest;
    std::vector<ClassCounts> per_class;
    std::size_t scanned = 0;
    std::size_t kept_after_filter = 0;
};

/// scan -> size filter -> optional stratified subsample -> 80:10:10 split ->
/// manifest CSV. ConfigError when nothing survives the filter.
PrepareResult cmd_prepare(const PrepareOptions &options, std::ostream &log);

// ---- quanv --------------------------------------------------------------------

struct QuanvOptions {
    fs::path manifest;
    fs::path cache_dir;
    std::uint64_t seed = 0;
    std::size_t layers = 2;
    std::size_t n_filters = 1;
    double embed_scale = std::numbers::pi;
    std::size_t image_size = kImageSize;

    quanv::QuanvFilterSpec filter_spec() const;
    config::RunConfig run_config() const;
};

struct QuanvResult {
    std::vector<quanv::QuanvDatasetResult> splits; // train, val, test
    bool up_to_date = false;
    /// Max |feature - cos(scale * pixel)| over the first record of each split;
    /// only computed when layers == 0.
    std::optional<double> cos_identity_error;
};

/// Writes `<cache_dir>/{train,val,test}.qnvf` and `<cache_dir>/cache.cfg`.
QuanvResult cmd_quanv(const QuanvOptions &options, std::ostream &log);

fs::path cache_file(const fs::path &cache_dir, data::Split split);

// ---- train --------------------------------------------------------------------

struct TrainOptions {
    ModelKind model = ModelKind::Classical;
    fs::path input; // manifest (classical) or cache dir (quanv)
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    fs::path out;     // model file
    fs::path history; // defaults to <out>.history.csv
    std::size_t image_size = kImageSize;

    fs::path history_path() const;
    config::RunConfig run_config() const;
};

struct TrainSummary {
    std::vector<nn::EpochStats> history;
    std::string architecture;
    std::uint64_t dataset_hash = 0;
};

TrainSummary cmd_train(const TrainOptions &options, std::ostream &log);

// ---- eval ---------------------------------------------------------------------

struct EvalOptions {
    fs::path model;
    fs::path input;
    data::Split split = data::Split::Test;
    fs::path out_report; // JSON; the CSV summary goes next to it as .csv
    std::size_t top_k = 10;
    double beta = 1.0;

    config::RunConfig run_config() const;
};

struct EvalResult {
    metrics::ConfusionMatrix confusion;
    metrics::MetricsReport report;
    ModelKind model = ModelKind::Classical;
    std::size_t batch_size = 0;
    fs::path json_path, csv_path;
};

EvalResult cmd_eval(const EvalOptions &options, std::ostream &log);

inline constexpr const char *kSummaryCsvHeader = "model,batch_size,accuracy,precision,recall,fbeta";

// ---- report -------------------------------------------------------------------

struct ReportOptions {
    std::vector<fs::path> reports;
    fs::path out_csv;
    fs::path out_text; // optional aligned table
};

struct ReportRow {
    std::size_t batch_size = 0;
    // [metric][model]: metric order accuracy, precision, recall, fbeta;
    // model order classical (CNN), quanv (QNN).
    std::optional<double> cells[4][2];
    /// Both models present and classical accuracy below quanv accuracy - 0.02.
    bool flagged = false;
};

struct ReportTable {
    std::vector<ReportRow> rows;
    std::string csv;
    std::string text;
};

/// ValidationError on duplicate (model, batch) pairs, mismatched n_classes or
/// dataset hashes.
ReportTable cmd_report(const ReportOptions &options, std::ostream &log);

// ---- loading helpers shared with tests ---------------------------------------

nn::Dataset<float> load_image_split(const data::DatasetManifest &manifest, data::Split split,
                                    std::size_t image_size);

struct CacheInfo {
    std::size_t n_classes = 0;
    std::uint64_t dataset_hash = 0;
    std::uint64_t spec_hash = 0;
};

CacheInfo read_cache_info(const fs::path &cache_dir);
nn::Dataset<float> load_feature_split(const fs::path &cache_dir, data::Split split);

std::uint64_t file_hash(const fs::path &path);

} // namespace tsq::pipeline
