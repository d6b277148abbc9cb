#pragma once

#include "somnonet/nn/tensor.hpp"

#include <span>
#include <vector>

namespace somnonet::nn {

// Structural and elementwise primitives. All are differentiable and defined for
// float and double.

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T> Tensor<T> square(const Tensor<T>& a);

/// Sum / mean of all elements, shape [1].
template <class T> Tensor<T> sum(const Tensor<T>& a);
template <class T> Tensor<T> mean(const Tensor<T>& a);

/// Element `index` of the flattened tensor, shape [1].
template <class T> Tensor<T> element(const Tensor<T>& a, std::size_t index);

template <class T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Concatenation along `axis`; all other extents must agree.
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Mean over `axis`, which is removed from the shape.
template <class T> Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis);

/// Gathers slices along axis 0: out[k] = a[rows[k]]. Rows may repeat; gradients add up.
template <class T> Tensor<T> take_rows(const Tensor<T>& a, std::span<const std::size_t> rows);

} // namespace somnonet::nn
