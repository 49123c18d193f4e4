#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "bevseg/tensor.hpp"

namespace bevseg {

struct GradCheckOptions {
    double eps = 1e-5;
    // Denominator floor for the relative error, so near-zero gradients are
    // judged on absolute error.
    double abs_floor = 1e-3;
    // Cap on coordinates probed per input (evenly strided); 0 = all.
    std::size_t max_per_input = 0;
};

struct GradCheckResult {
    double max_rel_error = 0;
    double max_abs_error = 0;
    std::size_t checked = 0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
};

// Compares tape gradients of the scalar f() with respect to each tensor in
// `inputs` against central differences. Reports, never asserts.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                  GradCheckOptions opt = {}) {
    std::vector<bool> had_flag;
    for (auto& x : inputs) {
        had_flag.push_back(x.requires_grad());
        x.set_requires_grad(true);
        x.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        Tensor<double> out;
        {
            TapeScope<double> scope(tape);
            out = f();
        }
        if (out.numel() != 1) throw DimensionError("grad_check: f must return a scalar, got " + shape_str(out.shape()));
        tape.backward(out);
        for (auto& x : inputs) {
            auto g = x.grad();
            analytic.emplace_back(g.begin(), g.end());
        }
    }

    GradCheckResult r;
    NoGradScope<double> no_grad;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& x = inputs[t];
        const std::size_t n = x.numel();
        const std::size_t step = (opt.max_per_input && n > opt.max_per_input) ? n / opt.max_per_input : 1;
        for (std::size_t i = 0; i < n; i += step) {
            const double saved = x[i];
            x[i] = saved + opt.eps;
            const double fp = f().item();
            x[i] = saved - opt.eps;
            const double fm = f().item();
            x[i] = saved;
            const double numeric = (fp - fm) / (2.0 * opt.eps);
            const double a = analytic[t][i];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
            ++r.checked;
            r.max_abs_error = std::max(r.max_abs_error, abs_err);
            if (rel > r.max_rel_error || r.checked == 1) {
                r.max_rel_error = std::max(r.max_rel_error, rel);
                r.worst_input = t;
                r.worst_index = i;
                r.worst_analytic = a;
                r.worst_numeric = numeric;
            }
        }
    }
    for (std::size_t t = 0; t < inputs.size(); ++t) inputs[t].set_requires_grad(had_flag[t]);
    return r;
}

inline GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                                  GradCheckOptions opt = {}) {
    return grad_check([&]() { return f(x); }, std::vector<Tensor<double>>{x}, opt);
}

}  // namespace bevseg
