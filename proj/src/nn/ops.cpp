#include "somnonet/nn/ops.hpp"

#include "somnonet/errors.hpp"

#include <algorithm>

namespace somnonet::nn {

namespace {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) +
                         " does not match " + shape_string(b.shape()));
    }
}

} // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](Node<T>& self) {
        for (auto& in : self.inputs) {
            if (in->requires_grad) {
                auto g = in->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return make_result<T>(a.shape(), std::move(out), {a, b}, "sub", [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& in = self.inputs[k];
            if (in->requires_grad) {
                auto g = in->grad_buffer();
                const T sign = k == 0 ? T{1} : T{-1};
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += sign * self.grad[i];
                }
            }
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](Node<T>& self) {
        auto& x = self.inputs[0];
        auto& y = self.inputs[1];
        if (x->requires_grad) {
            auto g = x->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * y->value[i];
            }
        }
        if (y->requires_grad) {
            auto g = y->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * x->value[i];
            }
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor)
{
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * factor;
    }
    return make_result<T>(a.shape(), std::move(out), {a}, "scale", [factor](Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

template <class T>
Tensor<T> square(const Tensor<T>& a)
{
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * a[i];
    }
    return make_result<T>(a.shape(), std::move(out), {a}, "square", [](Node<T>& self) {
        auto& x = self.inputs[0];
        auto g = x->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += T{2} * x->value[i] * self.grad[i];
        }
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a)
{
    T total{0};
    for (T v : a.data()) {
        total += v;
    }
    return make_result<T>(Shape{1}, {total}, {a}, "sum", [](Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        for (auto& v : g) {
            v += self.grad[0];
        }
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a)
{
    if (a.size() == 0) {
        throw ShapeError("mean of an empty tensor");
    }
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <class T>
Tensor<T> element(const Tensor<T>& a, std::size_t index)
{
    if (index >= a.size()) {
        throw ShapeError("element " + std::to_string(index) + " out of range for shape " +
                         shape_string(a.shape()));
    }
    return make_result<T>(Shape{1}, {a[index]}, {a}, "element", [index](Node<T>& self) {
        self.inputs[0]->grad_buffer()[index] += self.grad[0];
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape)
{
    if (numel(shape) != a.size()) {
        throw ShapeError("cannot reshape " + shape_string(a.shape()) + " to " +
                         shape_string(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    return make_result<T>(std::move(shape), std::move(out), {a}, "reshape", [](Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis)
{
    if (parts.empty()) {
        throw ShapeError("concat of zero tensors");
    }
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) {
        throw ShapeError("concat axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(ref.size()));
    }
    Shape out_shape = ref;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool compatible = s.size() == ref.size();
        for (std::size_t d = 0; compatible && d < s.size(); ++d) {
            compatible = d == axis || s[d] == ref[d];
        }
        if (!compatible) {
            throw ShapeError("concat: shape " + shape_string(s) + " incompatible with " +
                             shape_string(ref) + " along axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) {
        outer *= ref[d];
    }
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < ref.size(); ++d) {
        inner *= ref[d];
    }
    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<T> out(numel(out_shape));
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
        }
        widths.push_back(w);
        offset += w;
    }
    return make_result<T>(std::move(out_shape), std::move(out), parts, "concat",
                          [outer, out_row, widths](Node<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                  const std::size_t w = widths[k];
                                  if (self.inputs[k]->requires_grad) {
                                      auto g = self.inputs[k]->grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          for (std::size_t i = 0; i < w; ++i) {
                                              g[o * w + i] += self.grad[o * out_row + off + i];
                                          }
                                      }
                                  }
                                  off += w;
                              }
                          });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis)
{
    const Shape& s = a.shape();
    if (axis >= s.size()) {
        throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(s));
    }
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) {
        outer *= s[d];
    }
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < s.size(); ++d) {
        inner *= s[d];
    }
    const std::size_t n = s[axis];
    if (n == 0) {
        throw ShapeError("mean_axis over an empty axis");
    }
    Shape out_shape;
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (d != axis) {
            out_shape.push_back(s[d]);
        }
    }
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    std::vector<T> out(outer * inner, T{0});
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
            const T* src = a.data().data() + (o * n + k) * inner;
            T* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                dst[i] += src[i];
            }
        }
        for (std::size_t i = 0; i < inner; ++i) {
            out[o * inner + i] *= inv;
        }
    }
    return make_result<T>(std::move(out_shape), std::move(out), {a}, "mean_axis",
                          [outer, inner, n, inv](Node<T>& self) {
                              auto g = self.inputs[0]->grad_buffer();
                              for (std::size_t o = 0; o < outer; ++o) {
                                  for (std::size_t k = 0; k < n; ++k) {
                                      for (std::size_t i = 0; i < inner; ++i) {
                                          g[(o * n + k) * inner + i] += self.grad[o * inner + i] * inv;
                                      }
                                  }
                              }
                          });
}

template <class T>
Tensor<T> take_rows(const Tensor<T>& a, std::span<const std::size_t> rows)
{
    if (a.rank() == 0) {
        throw ShapeError("take_rows on a rank-0 tensor");
    }
    const std::size_t n_rows = a.dim(0);
    const std::size_t width = a.size() / std::max<std::size_t>(n_rows, 1);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    for (std::size_t r : idx) {
        if (r >= n_rows) {
            throw ShapeError("take_rows: row " + std::to_string(r) + " out of range for " +
                             shape_string(a.shape()));
        }
    }
    Shape out_shape = a.shape();
    out_shape[0] = idx.size();
    std::vector<T> out(idx.size() * width);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(k * width));
    }
    return make_result<T>(std::move(out_shape), std::move(out), {a}, "take_rows",
                          [idx = std::move(idx), width](Node<T>& self) {
                              auto g = self.inputs[0]->grad_buffer();
                              for (std::size_t k = 0; k < idx.size(); ++k) {
                                  for (std::size_t i = 0; i < width; ++i) {
                                      g[idx[k] * width + i] += self.grad[k * width + i];
                                  }
                              }
                          });
}

#define SOMNONET_INSTANTIATE(T)                                                                  \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> scale(const Tensor<T>&, T);                                               \
    template Tensor<T> square(const Tensor<T>&);                                                 \
    template Tensor<T> sum(const Tensor<T>&);                                                    \
    template Tensor<T> mean(const Tensor<T>&);                                                   \
    template Tensor<T> element(const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
    template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                                 \
    template Tensor<T> take_rows(const Tensor<T>&, std::span<const std::size_t>);

SOMNONET_INSTANTIATE(float)
SOMNONET_INSTANTIATE(double)

#undef SOMNONET_INSTANTIATE

} // namespace somnonet::nn
