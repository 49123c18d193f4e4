#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevseg/tensor.hpp"

namespace bevseg {

struct AdamWOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// One decoupled-decay AdamW update of a single parameter array. `step` is the
// 1-based index of this update (used for bias correction). Moments see only
// the gradient; decay is applied to the parameter directly, scaled by lr.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t step,
                  double lr, const AdamWOptions& opt) {
    if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
        throw DimensionError("adamw: parameter/gradient/moment sizes differ");
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    const double decay = 1.0 - lr * opt.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
        const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1, vhat = vi / bc2;
        param[i] = static_cast<T>(param[i] * decay - lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
}

template <typename T>
struct AdamWState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;
};

// Optimizer over a fixed list of parameters, each with its own learning-rate
// multiplier slot (parameter groups).
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, std::vector<std::size_t> group_of, AdamWOptions opt = {})
        : params_(std::move(params)), group_of_(std::move(group_of)), opt_(opt) {
        if (group_of_.empty()) group_of_.assign(params_.size(), 0);
        if (group_of_.size() != params_.size()) throw std::invalid_argument("adamw: group list size mismatch");
        std::size_t groups = 0;
        for (auto g : group_of_) groups = std::max(groups, g + 1);
        group_lr_.assign(std::max<std::size_t>(groups, 1), opt_.lr);
        for (const auto& p : params_) {
            state_.m.emplace_back(p.numel(), T(0));
            state_.v.emplace_back(p.numel(), T(0));
        }
    }

    void set_group_lr(std::size_t group, double lr) { group_lr_.at(group) = lr; }
    double group_lr(std::size_t group) const { return group_lr_.at(group); }
    const AdamWOptions& options() const { return opt_; }
    AdamWState<T>& state() { return state_; }
    const AdamWState<T>& state() const { return state_; }

    // Applies one update from the parameters' current gradients.
    void step() {
        const std::uint64_t t = ++state_.step;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            auto g = p.grad();
            if (debug_checks()) detail::check_finite<T>(std::span<const T>(g.data(), g.size()), "adamw gradient");
            adamw_update<T>(p.data(), g, state_.m[i], state_.v[i], t, group_lr_[group_of_[i]], opt_);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    const std::vector<Tensor<T>>& params() const { return params_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::size_t> group_of_;
    std::vector<double> group_lr_;
    AdamWOptions opt_;
    AdamWState<T> state_;
};

}  // namespace bevseg
