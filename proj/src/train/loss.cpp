#include "somnonet/train/loss.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/nn/ops.hpp"

#include <algorithm>
#include <cmath>

namespace somnonet::train {

using nn::Tensor;

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, data::SleepStage label)
{
    if (!data::is_scored(label)) {
        throw UsageError("cross_entropy: excluded frames carry no loss");
    }
    const data::SleepStage labels[1] = {label};
    return cross_entropy(nn::reshape(logits, {1, logits.size()}), std::span(labels),
                         std::span<const double>{});
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const data::SleepStage> labels,
                        std::span<const double> class_weights)
{
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + nn::shape_string(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t k = logits.dim(0);
    const std::size_t c = logits.dim(1);
    if (!class_weights.empty() && class_weights.size() != c) {
        throw ShapeError("cross_entropy: " + std::to_string(class_weights.size()) +
                         " class weights for " + std::to_string(c) + " classes");
    }
    const auto x = logits.data();
    // Softmax rows are kept for the backward pass.
    std::vector<T> prob(k * c, T{0});
    std::vector<T> row_weight(k, T{0});
    double total = 0.0;
    double weight_sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
        if (!data::is_scored(labels[r])) {
            continue;
        }
        const std::size_t y = data::stage_index(labels[r]);
        if (y >= c) {
            throw ShapeError("cross_entropy: label index " + std::to_string(y) + " for " +
                             std::to_string(c) + " classes");
        }
        const double w = class_weights.empty() ? 1.0 : class_weights[y];
        const T* row = x.data() + r * c;
        const T peak = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(static_cast<double>(row[j] - peak));
        }
        for (std::size_t j = 0; j < c; ++j) {
            prob[r * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - peak)) / z);
        }
        const double loss = std::log(z) - static_cast<double>(row[y] - peak);
        total += w * loss;
        weight_sum += w;
        row_weight[r] = static_cast<T>(w);
    }
    if (weight_sum <= 0.0) {
        throw UsageError("cross_entropy: no scored frame in the batch");
    }
    std::vector<std::size_t> targets(k, 0);
    for (std::size_t r = 0; r < k; ++r) {
        if (data::is_scored(labels[r])) {
            targets[r] = data::stage_index(labels[r]);
        }
    }
    const T inv = static_cast<T>(1.0 / weight_sum);
    return nn::make_result<T>(
        {1}, {static_cast<T>(total / weight_sum)}, {logits}, "cross_entropy",
        [prob = std::move(prob), row_weight = std::move(row_weight),
         targets = std::move(targets), k, c, inv](nn::Node<T>& self) {
            auto g = self.inputs[0]->grad_buffer();
            const T seed = self.grad[0] * inv;
            for (std::size_t r = 0; r < k; ++r) {
                if (row_weight[r] == T{0}) {
                    continue;
                }
                const T scale = seed * row_weight[r];
                for (std::size_t j = 0; j < c; ++j) {
                    g[r * c + j] += scale * (prob[r * c + j] - (j == targets[r] ? T{1} : T{0}));
                }
            }
        });
}

template Tensor<float> cross_entropy<float>(const Tensor<float>&, data::SleepStage);
template Tensor<double> cross_entropy<double>(const Tensor<double>&, data::SleepStage);
template Tensor<float> cross_entropy<float>(const Tensor<float>&, std::span<const data::SleepStage>,
                                            std::span<const double>);
template Tensor<double> cross_entropy<double>(const Tensor<double>&,
                                              std::span<const data::SleepStage>,
                                              std::span<const double>);

} // namespace somnonet::train
