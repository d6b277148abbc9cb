#pragma once

#include "somnonet/nn/tensor.hpp"
#include "somnonet/rng.hpp"

namespace somnonet::nn {

enum class Mode { train, eval };
enum class Padding { none, same };
enum class PoolKind { max, avg, global_avg };
enum class Direction { forward, backward };

// Layer parameters. Factory functions initialise weights uniformly in +-sqrt(1/fan_in)
// (recurrent layers: +-sqrt(1/hidden)) and flag them as requiring gradients.

template <class T>
struct Conv1dParams {
    Tensor<T> weight; // [out_ch, in_ch, k]
    Tensor<T> bias;   // [out_ch]
};

struct ConvOptions {
    std::size_t dilation = 1;
    std::size_t stride = 1;
    Padding padding = Padding::none;
};

template <class T>
struct BatchNormParams {
    Tensor<T> gamma;        // [ch]
    Tensor<T> beta;         // [ch]
    Tensor<T> running_mean; // [ch], not trained
    Tensor<T> running_var;  // [ch], not trained
    T momentum = T(0.1);
    T eps = T(1e-5);
};

template <class T>
struct LinearParams {
    Tensor<T> weight; // [out, in]
    Tensor<T> bias;   // [out]
};

/// Gates are stacked in the order update (z), reset (r), candidate (n).
template <class T>
struct GruParams {
    Tensor<T> weight_ih; // [3h, in]
    Tensor<T> weight_hh; // [3h, h]
    Tensor<T> bias_ih;   // [3h]
    Tensor<T> bias_hh;   // [3h]

    std::size_t hidden() const { return weight_hh.dim(1); }
    std::size_t input() const { return weight_ih.dim(1); }
};

template <class T> Conv1dParams<T> make_conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t k, Rng& rng);
template <class T> BatchNormParams<T> make_batchnorm(std::size_t channels);
template <class T> LinearParams<T> make_linear(std::size_t in, std::size_t out, Rng& rng);
template <class T> GruParams<T> make_gru(std::size_t in, std::size_t hidden, Rng& rng);

/// x: [ch_in, T] or [batch, ch_in, T].
/// out[c, t] = bias[c] + sum_{i,j} kernel[c, i, j] * in[i, t*stride + j*dilation - pad_left].
/// `same` zero-pads so that T' = ceil(T / stride).
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Conv1dParams<T>& params, ConvOptions options);

/// min(max(x, 0), 6); the gradient passes only where 0 < x < 6.
template <class T>
Tensor<T> relu6(const Tensor<T>& x);

/// x: [ch, T] or [batch, ch, T]; statistics are per channel over batch and time.
/// Train mode normalises with batch statistics and updates the running estimates
/// (unbiased variance); eval mode uses the running estimates and mutates nothing.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& params, Mode mode);

/// x: [ch, T] or [batch, ch, T]. `global_avg` ignores window/stride and returns a
/// length-1 time axis. Max routes the gradient to the first maximum of each window.
template <class T>
Tensor<T> pool1d(const Tensor<T>& x, PoolKind kind, std::size_t window = 2, std::size_t stride = 2);

/// x: [..., in] -> [..., out], x W^T + b.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& params);

/// seq: [T, in] or [batch, T, in] -> [.., T, h]. h0 = 0. The backward direction runs
/// over the reversed sequence and writes its outputs back in original time order.
template <class T>
Tensor<T> gru_layer(const Tensor<T>& seq, const GruParams<T>& params, Direction direction);

/// Forward and backward GRU outputs concatenated per time step: [.., T, 2h].
template <class T>
Tensor<T> bigru(const Tensor<T>& seq, const GruParams<T>& fwd, const GruParams<T>& bwd);

} // namespace somnonet::nn
