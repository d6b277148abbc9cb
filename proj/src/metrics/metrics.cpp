#include "somnonet/metrics/metrics.hpp"

#include "somnonet/errors.hpp"

#include <cstdio>
#include <json.hpp>

namespace somnonet::metrics {

using data::SleepStage;

std::uint64_t ConfusionMatrix::total() const
{
    std::uint64_t n = 0;
    for (auto c : counts) {
        n += c;
    }
    return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other)
{
    if (other.classes != classes) {
        throw UsageError("cannot merge confusion matrices of different sizes");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        counts[i] += other.counts[i];
    }
    return *this;
}

ConfusionMatrix confusion(std::span<const SleepStage> preds, std::span<const SleepStage> labels)
{
    if (preds.size() != labels.size()) {
        throw UsageError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!data::is_scored(labels[i])) {
            continue;
        }
        if (!data::is_scored(preds[i])) {
            throw UsageError("confusion: excluded prediction at index " + std::to_string(i));
        }
        cm.at(data::stage_index(labels[i]), data::stage_index(preds[i])) += 1;
    }
    return cm;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels,
                          std::size_t classes)
{
    if (preds.size() != labels.size()) {
        throw UsageError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) {
            continue;
        }
        const auto t = static_cast<std::size_t>(labels[i]);
        if (t >= classes || preds[i] < 0 || static_cast<std::size_t>(preds[i]) >= classes) {
            throw UsageError("confusion: class id out of range at index " + std::to_string(i));
        }
        cm.at(t, static_cast<std::size_t>(preds[i])) += 1;
    }
    return cm;
}

StageMetrics stage_metrics(const ConfusionMatrix& cm, bool absent_as_zero)
{
    const std::uint64_t total = cm.total();
    if (total == 0) {
        throw UsageError("stage_metrics: empty confusion matrix");
    }
    const std::size_t c = cm.classes;
    const double n = static_cast<double>(total);
    std::vector<double> row(c, 0.0);
    std::vector<double> col(c, 0.0);
    double trace = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const double v = static_cast<double>(cm.at(i, j));
            row[i] += v;
            col[j] += v;
        }
        trace += static_cast<double>(cm.at(i, i));
    }

    StageMetrics m;
    m.overall_accuracy = trace / n;
    double f1_sum = 0.0;
    std::size_t f1_count = 0;
    for (std::size_t k = 0; k < c; ++k) {
        const double tp = static_cast<double>(cm.at(k, k));
        const double precision = col[k] > 0.0 ? tp / col[k] : 0.0;
        const double recall = row[k] > 0.0 ? tp / row[k] : 0.0;
        const double denom = precision + recall;
        const double f1 = denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
        m.per_class_f1.push_back(f1);
        m.present.push_back(row[k] > 0.0);
        if (row[k] > 0.0 || absent_as_zero) {
            f1_sum += f1;
            ++f1_count;
        }
    }
    m.macro_f1 = f1_count ? f1_sum / static_cast<double>(f1_count) : 0.0;

    double pe = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        pe += (row[k] / n) * (col[k] / n);
    }
    if (pe >= 1.0) {
        m.kappa = m.overall_accuracy == 1.0 ? 1.0 : 0.0;
    } else {
        m.kappa = (m.overall_accuracy - pe) / (1.0 - pe);
    }
    return m;
}

namespace {

std::string class_label(std::size_t k, std::size_t classes)
{
    if (classes == data::kNumStages) {
        return std::string(data::stage_name(data::kAllStages[k]));
    }
    return std::to_string(k);
}

} // namespace

std::string metrics_json(const StageMetrics& m, const ConfusionMatrix& cm)
{
    nlohmann::ordered_json j;
    j["overall_accuracy"] = m.overall_accuracy;
    j["macro_f1"] = m.macro_f1;
    j["kappa"] = m.kappa;
    nlohmann::ordered_json f1;
    for (std::size_t k = 0; k < m.per_class_f1.size(); ++k) {
        f1[class_label(k, cm.classes)] = m.per_class_f1[k];
    }
    j["per_class_f1"] = f1;
    j["scored_frames"] = cm.total();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < cm.classes; ++i) {
        nlohmann::json r = nlohmann::json::array();
        for (std::size_t k = 0; k < cm.classes; ++k) {
            r.push_back(cm.at(i, k));
        }
        rows.push_back(r);
    }
    j["confusion"] = rows;
    return j.dump(2) + "\n";
}

std::string metrics_csv_header(std::size_t classes)
{
    std::string out = "overall_accuracy,macro_f1,kappa";
    for (std::size_t k = 0; k < classes; ++k) {
        out += ",f1_" + class_label(k, classes);
    }
    return out + "\n";
}

std::string metrics_csv_row(const StageMetrics& m)
{
    char buf[40];
    std::string out;
    auto put = [&](double v, bool first) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out += (first ? "" : ",") + std::string(buf);
    };
    put(m.overall_accuracy, true);
    put(m.macro_f1, false);
    put(m.kappa, false);
    for (double f : m.per_class_f1) {
        put(f, false);
    }
    return out + "\n";
}

std::string confusion_csv(const ConfusionMatrix& cm)
{
    std::string out;
    for (std::size_t i = 0; i < cm.classes; ++i) {
        for (std::size_t k = 0; k < cm.classes; ++k) {
            out += (k ? "," : "") + std::to_string(cm.at(i, k));
        }
        out += "\n";
    }
    return out;
}

} // namespace somnonet::metrics
