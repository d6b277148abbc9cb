#pragma once

#include "somnonet/data/recording.hpp"
#include "somnonet/nn/tensor.hpp"

#include <span>

namespace somnonet::train {

/// -log softmax(logits)[label] for one frame, logits [C]. Throws UsageError for an
/// excluded label.
template <class T>
nn::Tensor<T> cross_entropy(const nn::Tensor<T>& logits, data::SleepStage label);

/// Mean loss over the rows of logits [K, C] whose label is scored; excluded rows add
/// nothing and do not count. With class weights the mean is weighted by w[label].
/// Throws UsageError when no row is scored.
template <class T>
nn::Tensor<T> cross_entropy(const nn::Tensor<T>& logits, std::span<const data::SleepStage> labels,
                            std::span<const double> class_weights = {});

} // namespace somnonet::train
