#include "somnonet/train/optim.hpp"

#include "somnonet/errors.hpp"

#include <cmath>

namespace somnonet::train {

template <class T>
bool OptimState<T>::holds(const nn::Tensor<T>& tensor) const
{
    for (const auto& p : params) {
        if (p.node() == tensor.node()) {
            return true;
        }
    }
    return false;
}

template <class T>
OptimState<T> make_optim_state(std::vector<nn::Tensor<T>> params, const AdamHyper& hyper)
{
    OptimState<T> s;
    s.hyper = hyper;
    for (const auto& p : params) {
        s.m.emplace_back(p.size(), T{0});
        s.v.emplace_back(p.size(), T{0});
    }
    s.params = std::move(params);
    return s;
}

namespace {

template <class T>
void check_shapes(const OptimState<T>& s)
{
    if (s.m.size() != s.params.size() || s.v.size() != s.params.size()) {
        throw UsageError("optimizer state does not match its parameter list");
    }
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        const auto& p = s.params[i];
        if (s.m[i].size() != p.size() || s.v[i].size() != p.size() ||
            (p.has_grad() && p.grad().size() != p.size())) {
            throw UsageError("optimizer moment " + std::to_string(i) +
                             " does not match parameter shape " + nn::shape_string(p.shape()));
        }
    }
}

} // namespace

template <class T>
void adamw_step(OptimState<T>& s, double lr)
{
    check_shapes(s);
    ++s.t;
    const auto& h = s.hyper;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        auto& p = s.params[i];
        auto theta = p.data();
        const auto grad = p.grad();
        auto& m = s.m[i];
        auto& v = s.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
            const double mj = h.beta1 * static_cast<double>(m[j]) + (1.0 - h.beta1) * g;
            const double vj = h.beta2 * static_cast<double>(v[j]) + (1.0 - h.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double m_hat = mj / c1;
            const double v_hat = vj / c2;
            const double th = static_cast<double>(theta[j]);
            theta[j] = static_cast<T>(th - lr * (m_hat / (std::sqrt(v_hat) + h.eps) +
                                                 h.weight_decay * th));
        }
    }
}

template <class T>
void adam_step(OptimState<T>& s, double lr)
{
    check_shapes(s);
    ++s.t;
    const auto& h = s.hyper;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        auto& p = s.params[i];
        auto theta = p.data();
        const auto grad = p.grad();
        auto& m = s.m[i];
        auto& v = s.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
            const double mj = h.beta1 * static_cast<double>(m[j]) + (1.0 - h.beta1) * g;
            const double vj = h.beta2 * static_cast<double>(v[j]) + (1.0 - h.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            theta[j] = static_cast<T>(static_cast<double>(theta[j]) -
                                      lr * ((mj / c1) / (std::sqrt(vj / c2) + h.eps)));
        }
    }
}

template <class T>
void zero_grad(OptimState<T>& s)
{
    for (auto& p : s.params) {
        p.zero_grad();
    }
}

void validate(const LrSchedule& sched)
{
    if (!(sched.base_lr > 0.0) || !(sched.max_lr >= sched.base_lr)) {
        throw ConfigError("learning-rate bounds need 0 < base_lr <= max_lr");
    }
    if (sched.period_steps < 2) {
        throw ConfigError("cyclic schedule period must be at least 2 steps");
    }
}

double cyclic_lr(std::uint64_t step, const LrSchedule& sched)
{
    const double x = static_cast<double>(step % sched.period_steps) /
                     static_cast<double>(sched.period_steps);
    const double tri = std::max(0.0, 1.0 - std::abs(2.0 * x - 1.0));
    return sched.base_lr + (sched.max_lr - sched.base_lr) * tri;
}

bool EarlyStopping::update(double val_loss)
{
    ++epoch_;
    if (val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epoch_;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

template struct OptimState<float>;
template struct OptimState<double>;
template OptimState<float> make_optim_state<float>(std::vector<nn::Tensor<float>>, const AdamHyper&);
template OptimState<double> make_optim_state<double>(std::vector<nn::Tensor<double>>,
                                                     const AdamHyper&);
template void adamw_step<float>(OptimState<float>&, double);
template void adamw_step<double>(OptimState<double>&, double);
template void adam_step<float>(OptimState<float>&, double);
template void adam_step<double>(OptimState<double>&, double);
template void zero_grad<float>(OptimState<float>&);
template void zero_grad<double>(OptimState<double>&);

} // namespace somnonet::train
