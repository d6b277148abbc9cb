#pragma once

#include "somnonet/data/recording.hpp"
#include "somnonet/model/config.hpp"
#include "somnonet/nn/ops.hpp"
#include "somnonet/nn/tensor.hpp"
#include "somnonet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace testing {

using somnonet::Rng;
using somnonet::nn::Shape;
using somnonet::nn::Tensor;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                                    bool grad = true)
{
    std::vector<double> v(somnonet::nn::numel(shape));
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    Tensor<double> t(std::move(shape), std::move(v));
    t.set_requires_grad(grad);
    return t;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Central finite differences of a random projection of f's output, against reverse mode.
/// Relative error per element: |a - n| / max(floor, |a|, |n|).
inline GradCheck check_gradients(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> inputs, Rng& rng, double h = 1e-5, double floor = 1e-6,
    std::size_t max_per_input = 64)
{
    for (auto& in : inputs) {
        in.zero_grad();
    }
    const Tensor<double> y = f(inputs);
    std::vector<double> r(y.size());
    for (double& v : r) {
        v = rng.uniform(-1.0, 1.0);
    }
    const Tensor<double> proj(y.shape(), r);
    auto projected = [&](const Tensor<double>& out) {
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            s += out[i] * r[i];
        }
        return s;
    };
    somnonet::nn::backward(somnonet::nn::sum(somnonet::nn::mul(y, proj)));

    GradCheck result;
    for (auto& in : inputs) {
        if (!in.requires_grad()) {
            continue;
        }
        std::vector<double> analytic(in.size(), 0.0);
        if (in.has_grad()) {
            std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
        }
        std::vector<std::size_t> idx(in.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        if (idx.size() > max_per_input) {
            rng.shuffle(idx);
            idx.resize(max_per_input);
        }
        for (std::size_t i : idx) {
            const double saved = in[i];
            double plus = 0.0;
            double minus = 0.0;
            {
                somnonet::nn::NoGradGuard guard;
                in[i] = saved + h;
                plus = projected(f(inputs));
                in[i] = saved - h;
                minus = projected(f(inputs));
            }
            in[i] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double denom = std::max({floor, std::abs(analytic[i]), std::abs(numeric)});
            result.max_rel_error =
                std::max(result.max_rel_error, std::abs(analytic[i] - numeric) / denom);
            ++result.checked;
        }
    }
    return result;
}

/// A small architecture that keeps model-level tests fast: 3 chunks of 40 samples.
inline somnonet::model::ModelConfig tiny_config()
{
    somnonet::model::ModelConfig cfg;
    cfg.n_chunks = 3;
    cfg.branch_channels = {2, 3};
    cfg.block_channels = {3, 4};
    cfg.feature_dim = 4;
    cfg.local_hidden = 3;
    cfg.global_hidden = 2;
    cfg.global_layers = 2;
    cfg.context_frames = 3;
    cfg.nano_hidden = 2;
    return cfg;
}

/// Random recording at 4 Hz (120 samples per epoch) with labels cycling through stages
/// and a stage-dependent offset so that a model can learn something.
inline somnonet::data::Recording tiny_recording(std::size_t epochs, std::uint64_t seed)
{
    Rng rng(seed);
    somnonet::data::Recording rec;
    rec.sampling_rate_hz = 4;
    rec.epoch_len_s = 30;
    for (std::size_t e = 0; e < epochs; ++e) {
        const auto stage = somnonet::data::kAllStages[(e / 2) % 5];
        std::vector<float> samples(120);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            samples[i] = static_cast<float>(rng.normal() +
                                            2.0 * somnonet::data::stage_index(stage) *
                                                std::sin(0.3 * static_cast<double>(i)));
        }
        rec.epochs.push_back(std::move(samples));
        rec.labels.push_back(stage);
    }
    return rec;
}

struct MetricOracle {
    double oa = 0.0;
    std::vector<double> f1;
    double mf1 = 0.0;
    double kappa = 0.0;
};

/// Staging metrics counted straight from the raw lists, without a confusion matrix.
inline MetricOracle recount(const std::vector<int>& preds, const std::vector<int>& labels,
                            int classes)
{
    MetricOracle o;
    const double n = static_cast<double>(labels.size());
    double agree = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        agree += preds[i] == labels[i] ? 1.0 : 0.0;
    }
    o.oa = agree / n;
    double pe = 0.0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        double tp = 0, fp = 0, fn = 0, in_labels = 0, in_preds = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            tp += preds[i] == c && labels[i] == c;
            fp += preds[i] == c && labels[i] != c;
            fn += preds[i] != c && labels[i] == c;
            in_labels += labels[i] == c;
            in_preds += preds[i] == c;
        }
        const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        const double f1 =
            precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        o.f1.push_back(f1);
        if (in_labels > 0) {
            o.mf1 += f1;
            ++present;
        }
        pe += (in_labels / n) * (in_preds / n);
    }
    o.mf1 /= present;
    o.kappa = pe == 1.0 ? (o.oa == 1.0 ? 1.0 : 0.0) : (o.oa - pe) / (1 - pe);
    return o;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("somnonet_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing
