#pragma once

#include "somnonet/data/recording.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace somnonet::metrics {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t classes = data::kNumStages;
    std::vector<std::uint64_t> counts = std::vector<std::uint64_t>(classes * classes, 0);

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::size_t n) : classes(n), counts(n * n, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const
    {
        return counts[truth * classes + pred];
    }
    std::uint64_t total() const;
    /// Elementwise sum; shards of an evaluation merge this way.
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    bool operator==(const ConfusionMatrix&) const = default;
};

/// Frames whose label is excluded are skipped. Throws UsageError on a length mismatch or
/// an excluded prediction for a scored frame.
ConfusionMatrix confusion(std::span<const data::SleepStage> preds,
                          std::span<const data::SleepStage> labels);

/// Integer class ids in [0, classes); negative labels are skipped.
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels,
                          std::size_t classes);

struct StageMetrics {
    double overall_accuracy = 0.0;
    std::vector<double> per_class_f1;
    std::vector<bool> present; // class occurs among the true labels
    double macro_f1 = 0.0;
    double kappa = 0.0;
};

/// F1 is 0 where precision + recall is 0. MF1 averages the classes present in the labels,
/// or all classes (absent ones as 0) with `absent_as_zero`. Cohen's kappa uses the
/// observed marginals and is 1 when chance agreement is 1 with perfect accuracy.
/// Throws UsageError on an empty matrix.
StageMetrics stage_metrics(const ConfusionMatrix& cm, bool absent_as_zero = false);

std::string metrics_json(const StageMetrics& m, const ConfusionMatrix& cm);
std::string metrics_csv_header(std::size_t classes = data::kNumStages);
std::string metrics_csv_row(const StageMetrics& m);
/// Bare C x C grid of counts, rows true class, columns predicted, in stage order.
std::string confusion_csv(const ConfusionMatrix& cm);

} // namespace somnonet::metrics
