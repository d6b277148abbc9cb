#include "somnonet/nn/layers.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace somnonet::nn {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// out[c] += sum_r m[r, c] in row order. Eigen's vectorised reductions choose their
// summation order from the buffer address, so they are avoided where results must be
// reproducible run to run.
template <class T, class M>
void add_column_sums(const M& m, T* out)
{
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out[c] += m(r, c);
        }
    }
}

template <class T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng)
{
    std::vector<T> v(numel(shape));
    for (auto& x : v) {
        x = static_cast<T>(rng.uniform(-bound, bound));
    }
    Tensor<T> t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

template <class T>
void expect_shape(const Tensor<T>& t, const Shape& expected, const std::string& what)
{
    if (t.shape() != expected) {
        throw ShapeError(what + ": expected shape " + shape_string(expected) + ", got " +
                         shape_string(t.shape()));
    }
}

// Batch, channel and time extents of a [C, T] or [B, C, T] tensor.
struct Bct {
    std::size_t batch;
    std::size_t channels;
    std::size_t time;
    bool batched;
};

template <class T>
Bct split_bct(const Tensor<T>& x, const char* op)
{
    if (x.rank() == 2) {
        return {1, x.dim(0), x.dim(1), false};
    }
    if (x.rank() == 3) {
        return {x.dim(0), x.dim(1), x.dim(2), true};
    }
    throw ShapeError(std::string(op) + ": expected [ch, T] or [batch, ch, T], got " +
                     shape_string(x.shape()));
}

Shape join_bct(const Bct& d, std::size_t channels, std::size_t time)
{
    return d.batched ? Shape{d.batch, channels, time} : Shape{channels, time};
}

template <class T>
T sigmoid(T v)
{
    return T{1} / (T{1} + std::exp(-v));
}

} // namespace

template <class T>
Conv1dParams<T> make_conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t k, Rng& rng)
{
    const double bound = std::sqrt(1.0 / static_cast<double>(in_ch * k));
    return {uniform_param<T>({out_ch, in_ch, k}, bound, rng), uniform_param<T>({out_ch}, bound, rng)};
}

template <class T>
BatchNormParams<T> make_batchnorm(std::size_t channels)
{
    BatchNormParams<T> p;
    p.gamma = Tensor<T>(Shape{channels}, T{1});
    p.gamma.set_requires_grad(true);
    p.beta = Tensor<T>(Shape{channels}, T{0});
    p.beta.set_requires_grad(true);
    p.running_mean = Tensor<T>(Shape{channels}, T{0});
    p.running_var = Tensor<T>(Shape{channels}, T{1});
    return p;
}

template <class T>
LinearParams<T> make_linear(std::size_t in, std::size_t out, Rng& rng)
{
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    return {uniform_param<T>({out, in}, bound, rng), uniform_param<T>({out}, bound, rng)};
}

template <class T>
GruParams<T> make_gru(std::size_t in, std::size_t hidden, Rng& rng)
{
    if (in == 0 || hidden == 0) {
        throw ConfigError("GRU input and hidden sizes must be positive");
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(hidden));
    GruParams<T> p;
    p.weight_ih = uniform_param<T>({3 * hidden, in}, bound, rng);
    p.weight_hh = uniform_param<T>({3 * hidden, hidden}, bound, rng);
    p.bias_ih = uniform_param<T>({3 * hidden}, bound, rng);
    p.bias_hh = uniform_param<T>({3 * hidden}, bound, rng);
    return p;
}

template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Conv1dParams<T>& params, ConvOptions options)
{
    const Bct d = split_bct(x, "conv1d");
    const auto& w = params.weight;
    if (w.rank() != 3 || w.dim(1) != d.channels) {
        throw ShapeError("conv1d: kernel " + shape_string(w.shape()) +
                         " does not accept input " + shape_string(x.shape()));
    }
    const std::size_t c_out = w.dim(0);
    const std::size_t k = w.dim(2);
    expect_shape(params.bias, {c_out}, "conv1d bias");
    if (options.dilation == 0 || options.stride == 0 || k == 0) {
        throw ShapeError("conv1d: dilation, stride and kernel size must be positive");
    }
    const std::size_t span = (k - 1) * options.dilation + 1;
    std::size_t t_out = 0;
    std::size_t pad_left = 0;
    if (options.padding == Padding::same) {
        t_out = (d.time + options.stride - 1) / options.stride;
        const std::size_t needed = (t_out - 1) * options.stride + span;
        pad_left = needed > d.time ? (needed - d.time) / 2 : 0;
    } else {
        if (d.time < span) {
            throw ShapeError("conv1d: input length " + std::to_string(d.time) +
                             " shorter than dilated kernel span " + std::to_string(span));
        }
        t_out = (d.time - span) / options.stride + 1;
    }
    if (t_out == 0) {
        throw ShapeError("conv1d: empty output for input " + shape_string(x.shape()));
    }

    const std::size_t c_in = d.channels;
    const std::size_t rows = c_in * k;
    const bool pointwise = k == 1 && options.stride == 1 && pad_left == 0 && t_out == d.time;
    const auto stride = options.stride;
    const auto dilation = options.dilation;
    const auto time = d.time;

    // im2col of one batch item into `col` [c_in*k, t_out]
    auto fill_col = [=](const T* src, Mat<T>& col) {
        col.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t_out));
        for (std::size_t i = 0; i < c_in; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                T* dst = col.data() + (i * k + j) * t_out;
                for (std::size_t t = 0; t < t_out; ++t) {
                    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + j * dilation) -
                                               static_cast<std::ptrdiff_t>(pad_left);
                    dst[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(time))
                                 ? src[i * time + static_cast<std::size_t>(pos)]
                                 : T{0};
                }
            }
        }
    };

    std::vector<T> out(d.batch * c_out * t_out);
    ConstMatMap<T> wm(w.data().data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(rows));
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(params.bias.data().data(),
                                                               static_cast<Eigen::Index>(c_out));
    Mat<T> col;
    for (std::size_t b = 0; b < d.batch; ++b) {
        const T* src = x.data().data() + b * c_in * time;
        MatMap<T> ob(out.data() + b * c_out * t_out, static_cast<Eigen::Index>(c_out),
                     static_cast<Eigen::Index>(t_out));
        if (pointwise) {
            ConstMatMap<T> xb(src, static_cast<Eigen::Index>(c_in), static_cast<Eigen::Index>(time));
            ob.noalias() = wm * xb;
        } else {
            fill_col(src, col);
            ob.noalias() = wm * col;
        }
        ob.colwise() += bias;
    }

    return make_result<T>(
        join_bct(d, c_out, t_out), std::move(out), {x, params.weight, params.bias}, "conv1d",
        [=](Node<T>& self) {
            const auto& xin = self.inputs[0];
            const auto& win = self.inputs[1];
            const auto& bin = self.inputs[2];
            ConstMatMap<T> wmat(win->value.data(), static_cast<Eigen::Index>(c_out),
                                static_cast<Eigen::Index>(rows));
            T* gw = win->requires_grad ? win->grad_buffer().data() : nullptr;
            T* gb = bin->requires_grad ? bin->grad_buffer().data() : nullptr;
            T* gx = xin->requires_grad ? xin->grad_buffer().data() : nullptr;
            Mat<T> colm;
            Mat<T> dcol;
            for (std::size_t b = 0; b < d.batch; ++b) {
                ConstMatMap<T> gout(self.grad.data() + b * c_out * t_out,
                                    static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(t_out));
                const T* src = xin->value.data() + b * c_in * time;
                if (gb) {
                    const T* g = self.grad.data() + b * c_out * t_out;
                    for (std::size_t c = 0; c < c_out; ++c) {
                        T acc = T{0};
                        for (std::size_t t = 0; t < t_out; ++t) {
                            acc += g[c * t_out + t];
                        }
                        gb[c] += acc;
                    }
                }
                if (gw) {
                    MatMap<T> gwm(gw, static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(rows));
                    if (pointwise) {
                        ConstMatMap<T> xb(src, static_cast<Eigen::Index>(c_in),
                                          static_cast<Eigen::Index>(time));
                        gwm.noalias() += gout * xb.transpose();
                    } else {
                        fill_col(src, colm);
                        gwm.noalias() += gout * colm.transpose();
                    }
                }
                if (gx) {
                    T* gxb = gx + b * c_in * time;
                    if (pointwise) {
                        MatMap<T> gxm(gxb, static_cast<Eigen::Index>(c_in), static_cast<Eigen::Index>(time));
                        gxm.noalias() += wmat.transpose() * gout;
                    } else {
                        dcol.noalias() = wmat.transpose() * gout;
                        for (std::size_t i = 0; i < c_in; ++i) {
                            for (std::size_t j = 0; j < k; ++j) {
                                const T* g = dcol.data() + (i * k + j) * t_out;
                                for (std::size_t t = 0; t < t_out; ++t) {
                                    const std::ptrdiff_t pos =
                                        static_cast<std::ptrdiff_t>(t * stride + j * dilation) -
                                        static_cast<std::ptrdiff_t>(pad_left);
                                    if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(time)) {
                                        gxb[i * time + static_cast<std::size_t>(pos)] += g[t];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

template <class T>
Tensor<T> relu6(const Tensor<T>& x)
{
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::min(std::max(x[i], T{0}), T{6});
    }
    return make_result<T>(x.shape(), std::move(out), {x}, "relu6", [](Node<T>& self) {
        auto& in = self.inputs[0];
        auto g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = in->value[i];
            if (v > T{0} && v < T{6}) {
                g[i] += self.grad[i];
            }
        }
    });
}

template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& params, Mode mode)
{
    const Bct d = split_bct(x, "batchnorm");
    const std::size_t ch = d.channels;
    expect_shape(params.gamma, {ch}, "batchnorm gamma");
    expect_shape(params.beta, {ch}, "batchnorm beta");
    expect_shape(params.running_mean, {ch}, "batchnorm running mean");
    expect_shape(params.running_var, {ch}, "batchnorm running variance");
    const std::size_t count = d.batch * d.time;
    if (mode == Mode::train && count < 2) {
        throw UsageError("batchnorm in train mode needs at least 2 values per channel, got " +
                         std::to_string(count));
    }

    std::vector<T> mu(ch);
    std::vector<T> inv_std(ch);
    if (mode == Mode::train) {
        for (std::size_t c = 0; c < ch; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < d.batch; ++b) {
                const T* p = x.data().data() + (b * ch + c) * d.time;
                for (std::size_t t = 0; t < d.time; ++t) {
                    s += static_cast<double>(p[t]);
                }
            }
            const double m = s / static_cast<double>(count);
            double v = 0.0;
            for (std::size_t b = 0; b < d.batch; ++b) {
                const T* p = x.data().data() + (b * ch + c) * d.time;
                for (std::size_t t = 0; t < d.time; ++t) {
                    const double dv = static_cast<double>(p[t]) - m;
                    v += dv * dv;
                }
            }
            const double var = v / static_cast<double>(count);
            mu[c] = static_cast<T>(m);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(params.eps)));
            const T unbiased = static_cast<T>(v / static_cast<double>(count - 1));
            auto rm = params.running_mean.data();
            auto rv = params.running_var.data();
            rm[c] = (T{1} - params.momentum) * rm[c] + params.momentum * mu[c];
            rv[c] = (T{1} - params.momentum) * rv[c] + params.momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < ch; ++c) {
            mu[c] = params.running_mean[c];
            inv_std[c] = T{1} / std::sqrt(params.running_var[c] + params.eps);
        }
    }

    std::vector<T> out(x.size());
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (b * ch + c) * d.time;
            const T g = params.gamma[c] * inv_std[c];
            const T shift = params.beta[c] - mu[c] * g;
            for (std::size_t t = 0; t < d.time; ++t) {
                out[base + t] = x[base + t] * g + shift;
            }
        }
    }

    const bool batch_stats = mode == Mode::train;
    return make_result<T>(
        x.shape(), std::move(out), {x, params.gamma, params.beta}, "batchnorm",
        [d, mu = std::move(mu), inv_std = std::move(inv_std), batch_stats, count](Node<T>& self) {
            const auto& xin = self.inputs[0];
            const auto& gin = self.inputs[1];
            const auto& bin = self.inputs[2];
            const std::size_t ch = d.channels;
            for (std::size_t c = 0; c < ch; ++c) {
                T sum_dy{0};
                T sum_dy_xhat{0};
                for (std::size_t b = 0; b < d.batch; ++b) {
                    const std::size_t base = (b * ch + c) * d.time;
                    for (std::size_t t = 0; t < d.time; ++t) {
                        const T xhat = (xin->value[base + t] - mu[c]) * inv_std[c];
                        sum_dy += self.grad[base + t];
                        sum_dy_xhat += self.grad[base + t] * xhat;
                    }
                }
                if (gin->requires_grad) {
                    gin->grad_buffer()[c] += sum_dy_xhat;
                }
                if (bin->requires_grad) {
                    bin->grad_buffer()[c] += sum_dy;
                }
                if (xin->requires_grad) {
                    auto gx = xin->grad_buffer();
                    const T scale_c = gin->value[c] * inv_std[c];
                    const T mean_dy = sum_dy / static_cast<T>(count);
                    const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(count);
                    for (std::size_t b = 0; b < d.batch; ++b) {
                        const std::size_t base = (b * ch + c) * d.time;
                        for (std::size_t t = 0; t < d.time; ++t) {
                            if (batch_stats) {
                                const T xhat = (xin->value[base + t] - mu[c]) * inv_std[c];
                                gx[base + t] +=
                                    scale_c * (self.grad[base + t] - mean_dy - xhat * mean_dy_xhat);
                            } else {
                                gx[base + t] += scale_c * self.grad[base + t];
                            }
                        }
                    }
                }
            }
        });
}

template <class T>
Tensor<T> pool1d(const Tensor<T>& x, PoolKind kind, std::size_t window, std::size_t stride)
{
    const Bct d = split_bct(x, "pool1d");
    const std::size_t rows = d.batch * d.channels;
    if (kind == PoolKind::global_avg) {
        if (d.time == 0) {
            throw ShapeError("pool1d: global average over an empty time axis");
        }
        std::vector<T> out(rows);
        const T inv = T{1} / static_cast<T>(d.time);
        for (std::size_t r = 0; r < rows; ++r) {
            T s{0};
            for (std::size_t t = 0; t < d.time; ++t) {
                s += x[r * d.time + t];
            }
            out[r] = s * inv;
        }
        return make_result<T>(join_bct(d, d.channels, 1), std::move(out), {x}, "global_avg_pool",
                              [rows, time = d.time, inv](Node<T>& self) {
                                  auto g = self.inputs[0]->grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      for (std::size_t t = 0; t < time; ++t) {
                                          g[r * time + t] += self.grad[r] * inv;
                                      }
                                  }
                              });
    }
    if (window == 0 || stride == 0) {
        throw ShapeError("pool1d: window and stride must be positive");
    }
    if (window > d.time) {
        throw ShapeError("pool1d: window " + std::to_string(window) + " exceeds length " +
                         std::to_string(d.time));
    }
    const std::size_t t_out = (d.time - window) / stride + 1;
    std::vector<T> out(rows * t_out);
    const std::size_t time = d.time;
    if (kind == PoolKind::max) {
        std::vector<std::size_t> arg(rows * t_out);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t t = 0; t < t_out; ++t) {
                const std::size_t start = r * time + t * stride;
                std::size_t best = start;
                for (std::size_t j = 1; j < window; ++j) {
                    if (x[start + j] > x[best]) {
                        best = start + j;
                    }
                }
                arg[r * t_out + t] = best;
                out[r * t_out + t] = x[best];
            }
        }
        return make_result<T>(join_bct(d, d.channels, t_out), std::move(out), {x}, "max_pool",
                              [arg = std::move(arg)](Node<T>& self) {
                                  auto g = self.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < arg.size(); ++i) {
                                      g[arg[i]] += self.grad[i];
                                  }
                              });
    }
    const T inv = T{1} / static_cast<T>(window);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t t = 0; t < t_out; ++t) {
            T s{0};
            for (std::size_t j = 0; j < window; ++j) {
                s += x[r * time + t * stride + j];
            }
            out[r * t_out + t] = s * inv;
        }
    }
    return make_result<T>(join_bct(d, d.channels, t_out), std::move(out), {x}, "avg_pool",
                          [rows, t_out, time, window, stride, inv](Node<T>& self) {
                              auto g = self.inputs[0]->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t t = 0; t < t_out; ++t) {
                                      for (std::size_t j = 0; j < window; ++j) {
                                          g[r * time + t * stride + j] += self.grad[r * t_out + t] * inv;
                                      }
                                  }
                              }
                          });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& params)
{
    const auto& w = params.weight;
    if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(1)) {
        throw ShapeError("linear: weight " + shape_string(w.shape()) + " does not accept input " +
                         shape_string(x.shape()));
    }
    const std::size_t in = w.dim(1);
    const std::size_t out_dim = w.dim(0);
    expect_shape(params.bias, {out_dim}, "linear bias");
    const std::size_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;

    std::vector<T> out(rows * out_dim);
    ConstMatMap<T> xm(x.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
    ConstMatMap<T> wm(w.data().data(), static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in));
    MatMap<T> om(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_dim));
    om.noalias() = xm * wm.transpose();
    Eigen::Map<const RowVec<T>> bias(params.bias.data().data(), static_cast<Eigen::Index>(out_dim));
    om.rowwise() += bias;

    return make_result<T>(
        std::move(out_shape), std::move(out), {x, params.weight, params.bias}, "linear",
        [rows, in, out_dim](Node<T>& self) {
            const auto& xin = self.inputs[0];
            const auto& win = self.inputs[1];
            const auto& bin = self.inputs[2];
            ConstMatMap<T> gout(self.grad.data(), static_cast<Eigen::Index>(rows),
                                static_cast<Eigen::Index>(out_dim));
            if (xin->requires_grad) {
                MatMap<T> gx(xin->grad_buffer().data(), static_cast<Eigen::Index>(rows),
                             static_cast<Eigen::Index>(in));
                ConstMatMap<T> wm(win->value.data(), static_cast<Eigen::Index>(out_dim),
                                  static_cast<Eigen::Index>(in));
                gx.noalias() += gout * wm;
            }
            if (win->requires_grad) {
                MatMap<T> gw(win->grad_buffer().data(), static_cast<Eigen::Index>(out_dim),
                             static_cast<Eigen::Index>(in));
                ConstMatMap<T> xm(xin->value.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(in));
                gw.noalias() += gout.transpose() * xm;
            }
            if (bin->requires_grad) {
                add_column_sums(gout, bin->grad_buffer().data());
            }
        });
}

template <class T>
Tensor<T> gru_layer(const Tensor<T>& seq, const GruParams<T>& params, Direction direction)
{
    std::size_t batch = 1;
    std::size_t steps = 0;
    std::size_t in = 0;
    if (seq.rank() == 2) {
        steps = seq.dim(0);
        in = seq.dim(1);
    } else if (seq.rank() == 3) {
        batch = seq.dim(0);
        steps = seq.dim(1);
        in = seq.dim(2);
    } else {
        throw ShapeError("gru_layer: expected [T, in] or [batch, T, in], got " +
                         shape_string(seq.shape()));
    }
    if (steps == 0) {
        throw ShapeError("gru_layer: sequence must have at least one step");
    }
    const std::size_t h = params.weight_hh.rank() == 2 ? params.weight_hh.dim(1) : 0;
    if (h == 0) {
        throw ShapeError("gru_layer: hidden size must be positive");
    }
    expect_shape(params.weight_ih, {3 * h, in}, "gru weight_ih");
    expect_shape(params.weight_hh, {3 * h, h}, "gru weight_hh");
    expect_shape(params.bias_ih, {3 * h}, "gru bias_ih");
    expect_shape(params.bias_hh, {3 * h}, "gru bias_hh");

    const auto B = static_cast<Eigen::Index>(batch);
    const auto H = static_cast<Eigen::Index>(h);
    const auto H3 = static_cast<Eigen::Index>(3 * h);
    ConstMatMap<T> xm(seq.data().data(), static_cast<Eigen::Index>(batch * steps),
                      static_cast<Eigen::Index>(in));
    ConstMatMap<T> wih(params.weight_ih.data().data(), H3, static_cast<Eigen::Index>(in));
    ConstMatMap<T> whh(params.weight_hh.data().data(), H3, H);
    Eigen::Map<const RowVec<T>> bih(params.bias_ih.data().data(), H3);
    Eigen::Map<const RowVec<T>> bhh(params.bias_hh.data().data(), H3);

    Mat<T> gi = xm * wih.transpose();
    gi.rowwise() += bih;

    // Saved activations, indexed [step][batch][h] in processing order.
    const std::size_t per_step = batch * h;
    auto saved_z = std::make_shared<std::vector<T>>(steps * per_step);
    auto saved_r = std::make_shared<std::vector<T>>(steps * per_step);
    auto saved_n = std::make_shared<std::vector<T>>(steps * per_step);
    auto saved_ghn = std::make_shared<std::vector<T>>(steps * per_step);
    auto saved_hprev = std::make_shared<std::vector<T>>(steps * per_step);

    std::vector<T> out(batch * steps * h);
    Mat<T> hstate = Mat<T>::Zero(B, H);
    Mat<T> gh(B, H3);
    const bool reverse = direction == Direction::backward;
    for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t t = reverse ? steps - 1 - s : s;
        gh.noalias() = hstate * whh.transpose();
        gh.rowwise() += bhh;
        for (std::size_t b = 0; b < batch; ++b) {
            const T* gir = gi.data() + (b * steps + t) * 3 * h;
            const T* ghr = gh.data() + b * 3 * h;
            T* hrow = hstate.data() + b * h;
            const std::size_t base = s * per_step + b * h;
            for (std::size_t j = 0; j < h; ++j) {
                const T z = sigmoid(gir[j] + ghr[j]);
                const T r = sigmoid(gir[h + j] + ghr[h + j]);
                const T ghn = ghr[2 * h + j];
                const T n = std::tanh(gir[2 * h + j] + r * ghn);
                const T hp = hrow[j];
                (*saved_z)[base + j] = z;
                (*saved_r)[base + j] = r;
                (*saved_n)[base + j] = n;
                (*saved_ghn)[base + j] = ghn;
                (*saved_hprev)[base + j] = hp;
                const T hn = (T{1} - z) * n + z * hp;
                hrow[j] = hn;
                out[(b * steps + t) * h + j] = hn;
            }
        }
    }

    Shape out_shape = seq.shape();
    out_shape.back() = h;
    std::vector<Tensor<T>> inputs{seq, params.weight_ih, params.weight_hh, params.bias_ih,
                                  params.bias_hh};
    return make_result<T>(
        std::move(out_shape), std::move(out), inputs, reverse ? "gru_backward" : "gru_forward",
        [=](Node<T>& self) {
            const auto& xin = self.inputs[0];
            const auto& wih_n = self.inputs[1];
            const auto& whh_n = self.inputs[2];
            const auto& bih_n = self.inputs[3];
            const auto& bhh_n = self.inputs[4];
            ConstMatMap<T> whh_m(whh_n->value.data(), H3, H);
            Mat<T> dgi = Mat<T>::Zero(static_cast<Eigen::Index>(batch * steps), H3);
            Mat<T> dh = Mat<T>::Zero(B, H);
            Mat<T> dgh(B, H3);
            Mat<T> dh_prev(B, H);
            Mat<T> gwhh = Mat<T>::Zero(H3, H);
            RowVec<T> gbhh = RowVec<T>::Zero(H3);
            for (std::size_t s = steps; s-- > 0;) {
                const std::size_t t = reverse ? steps - 1 - s : s;
                for (std::size_t b = 0; b < batch; ++b) {
                    const T* go = self.grad.data() + (b * steps + t) * h;
                    T* dhr = dh.data() + b * h;
                    T* dgir = dgi.data() + (b * steps + t) * 3 * h;
                    T* dghr = dgh.data() + b * 3 * h;
                    T* dhp = dh_prev.data() + b * h;
                    const std::size_t base = s * per_step + b * h;
                    for (std::size_t j = 0; j < h; ++j) {
                        const T z = (*saved_z)[base + j];
                        const T r = (*saved_r)[base + j];
                        const T n = (*saved_n)[base + j];
                        const T ghn = (*saved_ghn)[base + j];
                        const T hp = (*saved_hprev)[base + j];
                        const T g = dhr[j] + go[j];
                        const T dn_pre = g * (T{1} - z) * (T{1} - n * n);
                        const T dz_pre = g * (hp - n) * z * (T{1} - z);
                        const T dr_pre = dn_pre * ghn * r * (T{1} - r);
                        dgir[j] = dz_pre;
                        dgir[h + j] = dr_pre;
                        dgir[2 * h + j] = dn_pre;
                        dghr[j] = dz_pre;
                        dghr[h + j] = dr_pre;
                        dghr[2 * h + j] = dn_pre * r;
                        dhp[j] = g * z;
                    }
                }
                ConstMatMap<T> hprev(saved_hprev->data() + s * per_step, B, H);
                gwhh.noalias() += dgh.transpose() * hprev;
                add_column_sums(dgh, gbhh.data());
                dh.noalias() = dh_prev;
                dh.noalias() += dgh * whh_m;
            }
            if (whh_n->requires_grad) {
                MatMap<T>(whh_n->grad_buffer().data(), H3, H) += gwhh;
            }
            if (bhh_n->requires_grad) {
                Eigen::Map<RowVec<T>>(bhh_n->grad_buffer().data(), H3) += gbhh;
            }
            if (bih_n->requires_grad) {
                add_column_sums(dgi, bih_n->grad_buffer().data());
            }
            if (wih_n->requires_grad) {
                ConstMatMap<T> x_m(xin->value.data(), static_cast<Eigen::Index>(batch * steps),
                                   static_cast<Eigen::Index>(in));
                MatMap<T>(wih_n->grad_buffer().data(), H3, static_cast<Eigen::Index>(in)).noalias() +=
                    dgi.transpose() * x_m;
            }
            if (xin->requires_grad) {
                ConstMatMap<T> wih_m(wih_n->value.data(), H3, static_cast<Eigen::Index>(in));
                MatMap<T>(xin->grad_buffer().data(), static_cast<Eigen::Index>(batch * steps),
                          static_cast<Eigen::Index>(in))
                    .noalias() += dgi * wih_m;
            }
        });
}

template <class T>
Tensor<T> bigru(const Tensor<T>& seq, const GruParams<T>& fwd, const GruParams<T>& bwd)
{
    auto f = gru_layer(seq, fwd, Direction::forward);
    auto b = gru_layer(seq, bwd, Direction::backward);
    return concat<T>({f, b}, seq.rank() - 1);
}

#define SOMNONET_INSTANTIATE(T)                                                                  \
    template Conv1dParams<T> make_conv1d<T>(std::size_t, std::size_t, std::size_t, Rng&);       \
    template BatchNormParams<T> make_batchnorm<T>(std::size_t);                                  \
    template LinearParams<T> make_linear<T>(std::size_t, std::size_t, Rng&);                     \
    template GruParams<T> make_gru<T>(std::size_t, std::size_t, Rng&);                           \
    template Tensor<T> conv1d(const Tensor<T>&, const Conv1dParams<T>&, ConvOptions);            \
    template Tensor<T> relu6(const Tensor<T>&);                                                  \
    template Tensor<T> batchnorm(const Tensor<T>&, BatchNormParams<T>&, Mode);                   \
    template Tensor<T> pool1d(const Tensor<T>&, PoolKind, std::size_t, std::size_t);             \
    template Tensor<T> linear(const Tensor<T>&, const LinearParams<T>&);                         \
    template Tensor<T> gru_layer(const Tensor<T>&, const GruParams<T>&, Direction);              \
    template Tensor<T> bigru(const Tensor<T>&, const GruParams<T>&, const GruParams<T>&);

SOMNONET_INSTANTIATE(float)
SOMNONET_INSTANTIATE(double)

#undef SOMNONET_INSTANTIATE

} // namespace somnonet::nn
