#include "tsq/metrics.hpp"

#include <algorithm>

#include "tsq/errors.hpp"

namespace tsq::metrics {

ConfusionMatrix confusion_matrix(std::span<const std::size_t> true_labels,
                                 std::span<const std::size_t> predicted_labels, std::size_t n_classes) {
    if (true_labels.size() != predicted_labels.size()) {
        throw ValidationError("confusion matrix: " + std::to_string(true_labels.size()) + " true labels vs " +
                              std::to_string(predicted_labels.size()) + " predictions");
    }
    const auto n = static_cast<Eigen::Index>(n_classes);
    ConfusionMatrix cm{n_classes, CountMatrix::Zero(n, n)};
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        if (true_labels[i] >= n_classes || predicted_labels[i] >= n_classes) {
            throw ValidationError("confusion matrix: label out of range at index " + std::to_string(i));
        }
        ++cm.counts(static_cast<Eigen::Index>(true_labels[i]), static_cast<Eigen::Index>(predicted_labels[i]));
    }
    return cm;
}

double fbeta_score(double precision, double recall, double beta) {
    const double b2 = beta * beta;
    const double denom = b2 * precision + recall;
    return denom > 0.0 ? (1.0 + b2) * precision * recall / denom : 0.0;
}

MetricsReport macro_metrics(const ConfusionMatrix &cm, double beta) {
    if (!(beta > 0.0)) {
        throw ValidationError("beta must be positive");
    }
    const std::int64_t total = cm.total();
    if (cm.n_classes == 0 || total == 0) {
        throw ValidationError("metrics of an empty confusion matrix");
    }
    MetricsReport r;
    r.beta = beta;
    r.total = total;
    r.accuracy = static_cast<double>(cm.counts.trace()) / static_cast<double>(total);

    std::size_t present = 0;
    for (Eigen::Index c = 0; c < cm.counts.rows(); ++c) {
        ClassMetrics m;
        m.class_id = static_cast<std::size_t>(c);
        const std::int64_t tp = cm.counts(c, c);
        m.support = cm.counts.row(c).sum();
        m.predicted = cm.counts.col(c).sum();
        m.precision_undefined = m.predicted == 0;
        m.recall_undefined = m.support == 0;
        m.precision = m.predicted ? static_cast<double>(tp) / static_cast<double>(m.predicted) : 0.0;
        m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
        m.fbeta = fbeta_score(m.precision, m.recall, beta);
        if (m.support > 0) {
            ++present;
            r.macro_precision += m.precision;
            r.macro_recall += m.recall;
            r.macro_fbeta += m.fbeta;
        }
        r.per_class.push_back(m);
    }
    r.macro_precision /= static_cast<double>(present);
    r.macro_recall /= static_cast<double>(present);
    r.macro_fbeta /= static_cast<double>(present);
    return r;
}

std::vector<ConfusedPair> top_confused_pairs(const ConfusionMatrix &cm, std::size_t k) {
    std::vector<ConfusedPair> pairs;
    for (Eigen::Index t = 0; t < cm.counts.rows(); ++t) {
        for (Eigen::Index p = 0; p < cm.counts.cols(); ++p) {
            if (t != p && cm.counts(t, p) > 0) {
                pairs.push_back({static_cast<std::size_t>(t), static_cast<std::size_t>(p), cm.counts(t, p)});
            }
        }
    }
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const ConfusedPair &a, const ConfusedPair &b) { return a.count > b.count; });
    if (pairs.size() > k) {
        pairs.resize(k);
    }
    return pairs;
}

} // namespace tsq::metrics
