#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tsq::metrics {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t n_classes = 0;
    CountMatrix counts;

    std::int64_t total() const { return counts.sum(); }
};

struct ClassMetrics {
    std::size_t class_id = 0;
    std::int64_t support = 0;    // true count
    std::int64_t predicted = 0;  // predicted count
    double precision = 0, recall = 0, fbeta = 0;
    bool precision_undefined = false; // no predictions of this class
    bool recall_undefined = false;    // no true samples of this class
};

struct ConfusedPair {
    std::size_t true_class = 0;
    std::size_t predicted_class = 0;
    std::int64_t count = 0;
    bool operator==(const ConfusedPair &) const = default;
};

struct MetricsReport {
    double accuracy = 0;
    double macro_precision = 0;
    double macro_recall = 0;
    double macro_fbeta = 0;
    double beta = 1.0;
    std::int64_t total = 0;
    std::vector<ClassMetrics> per_class;
    std::vector<ConfusedPair> top_confused_pairs;
};

/// ValidationError on length mismatch or a label >= n_classes.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> true_labels,
                                 std::span<const std::size_t> predicted_labels, std::size_t n_classes);

/// Macro averages over the classes that occur in the true labels; zero
/// denominators yield 0 and set the per-class flag. ValidationError on an
/// empty matrix or beta <= 0.
MetricsReport macro_metrics(const ConfusionMatrix &cm, double beta = 1.0);

/// Off-diagonal cells by count descending, ties by (true, predicted).
std::vector<ConfusedPair> top_confused_pairs(const ConfusionMatrix &cm, std::size_t k);

double fbeta_score(double precision, double recall, double beta);

} // namespace tsq::metrics
