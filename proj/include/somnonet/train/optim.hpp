#pragma once

#include "somnonet/nn/tensor.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace somnonet::train {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

/// Moments mirror the registered parameters, in registration order.
template <class T>
struct OptimState {
    AdamHyper hyper;
    std::vector<nn::Tensor<T>> params;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t t = 0;

    /// True when `tensor` (by identity) is registered.
    bool holds(const nn::Tensor<T>& tensor) const;
};

template <class T>
OptimState<T> make_optim_state(std::vector<nn::Tensor<T>> params, const AdamHyper& hyper);

/// Decoupled weight decay:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// A parameter without an accumulated gradient is updated with g = 0.
template <class T>
void adamw_step(OptimState<T>& state, double lr);

/// Plain Adam, no weight decay term at all.
template <class T>
void adam_step(OptimState<T>& state, double lr);

template <class T>
void zero_grad(OptimState<T>& state);

struct LrSchedule {
    double base_lr = 1e-4;
    double max_lr = 1e-3;
    std::uint64_t period_steps = 2;
};

/// Throws ConfigError unless 0 < base_lr <= max_lr and period_steps >= 2.
void validate(const LrSchedule& sched);

/// Triangular cycle: base -> max over the first half period, max -> base over the second.
double cyclic_lr(std::uint64_t step, const LrSchedule& sched);

/// Counts epochs without a strict improvement of the best validation loss.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Records the loss of the next epoch (1-based) and returns true if it is a new best.
    bool update(double val_loss);
    bool should_stop() const { return since_best_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }
    std::size_t epochs_seen() const { return epoch_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

} // namespace somnonet::train
