#pragma once

// Dense row-major tensors with an explicit reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage. Operations that see an
// active Tape and at least one input with requires_grad record a closure on
// the tape; Tape::backward replays those closures in exact reverse order and
// every closure accumulates (+=) into its inputs' gradient buffers, so fan-out
// is handled by plain addition.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bevseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Process-wide switch for NaN/Inf detection on op outputs and gradients.
inline bool& debug_checks() {
    static bool enabled = false;
    return enabled;
}

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first touched
    bool requires_grad = false;
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<TensorStorage<T>>()) {
        validate(shape);
        s_->value.assign(shape_numel(shape), fill);
        s_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<TensorStorage<T>>()) {
        validate(shape);
        if (shape_numel(shape) != values.size())
            throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        s_->shape = std::move(shape);
        s_->value = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    bool defined() const noexcept { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
    std::size_t numel() const { return s_->value.size(); }

    std::span<T> data() { return s_->value; }
    std::span<const T> data() const { return s_->value; }
    std::vector<T>& values() { return s_->value; }
    const std::vector<T>& values() const { return s_->value; }
    T& operator[](std::size_t i) { return s_->value[i]; }
    const T& operator[](std::size_t i) const { return s_->value[i]; }
    T item() const {
        if (numel() != 1) throw DimensionError("item: tensor has shape " + shape_str(shape()));
        return s_->value[0];
    }

    bool requires_grad() const noexcept { return s_ && s_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        s_->requires_grad = on;
        return *this;
    }

    bool has_grad() const noexcept { return s_ && !s_->grad.empty(); }
    // Gradient buffer, zero-allocated on first access.
    // The handle is shared, so a const handle still exposes a writable
    // gradient (adjoints accumulate into captured inputs).
    std::span<T> grad() const {
        if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
        return s_->grad;
    }
    void zero_grad() {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    // Same values, no gradient link.
    Tensor detach() const { return Tensor(shape(), values()); }
    Tensor clone() const { return detach(); }

    // Identity of the underlying storage.
    const TensorStorage<T>* id() const noexcept { return s_.get(); }
    std::shared_ptr<TensorStorage<T>> storage() const { return s_; }

private:
    static void validate(const Shape& shape) {
        for (auto d : shape)
            if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_str(shape));
    }

    std::shared_ptr<TensorStorage<T>> s_;
};

template <typename T>
class Tape {
public:
    void record(std::function<void()> adjoint) { entries_.push_back(std::move(adjoint)); }

    // Seeds d(root)/d(root) = 1 and replays adjoints newest-first.
    void backward(Tensor<T>& root) {
        if (root.numel() != 1) throw DimensionError("backward: root must be scalar, got " + shape_str(root.shape()));
        root.grad()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

    void clear() { entries_.clear(); }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<std::function<void()>> entries_;
};

template <typename T>
Tape<T>*& active_tape() {
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

// Makes `tape` the recording target for this thread until destroyed.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
    ~TapeScope() { active_tape<T>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// Suspends recording (inference, finite differences).
template <typename T>
class NoGradScope {
public:
    NoGradScope() : prev_(active_tape<T>()) { active_tape<T>() = nullptr; }
    ~NoGradScope() { active_tape<T>() = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* prev_;
};

namespace detail {

template <typename T, typename... Ts>
bool needs_grad(const Tensor<T>& first, const Ts&... rest) {
    if (!active_tape<T>()) return false;
    bool any = first.defined() && first.requires_grad();
    ((any = any || (rest.defined() && rest.requires_grad())), ...);
    return any;
}

template <typename T>
bool needs_grad_list(const std::vector<Tensor<T>>& xs) {
    if (!active_tape<T>()) return false;
    for (const auto& x : xs)
        if (x.defined() && x.requires_grad()) return true;
    return false;
}

template <typename T>
void check_finite(std::span<const T> xs, const char* where) {
    for (T v : xs)
        if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + where);
}

// Marks `out` as differentiable and records its adjoint.
template <typename T, typename F>
Tensor<T>& finish(Tensor<T>& out, bool record, const char* op, F&& adjoint) {
    if (debug_checks()) check_finite<T>(out.data(), op);
    if (record) {
        out.set_requires_grad(true);
        active_tape<T>()->record(std::forward<F>(adjoint));
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GEMM kernels. All operands row-major contiguous. For each output element the
// reduction index advances strictly in order, so results do not depend on the
// element's position in the output (row/column permutations are exact).

namespace kernel {

// c[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    constexpr std::size_t kBlockK = 256;
    constexpr std::size_t kBlockN = 1024;
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
        const std::size_t j1 = std::min(n, j0 + kBlockN);
        for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
            const std::size_t p1 = std::min(k, p0 + kBlockK);
            std::size_t i = 0;
            for (; i + 4 <= m; i += 4) {
                T* c0 = c + i * n;
                T* c1 = c0 + n;
                T* c2 = c1 + n;
                T* c3 = c2 + n;
                const T* a0 = a + i * k;
                const T* a1 = a0 + k;
                const T* a2 = a1 + k;
                const T* a3 = a2 + k;
                for (std::size_t p = p0; p < p1; ++p) {
                    const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
                    const T* br = b + p * n;
                    for (std::size_t j = j0; j < j1; ++j) {
                        const T bv = br[j];
                        c0[j] += v0 * bv;
                        c1[j] += v1 * bv;
                        c2[j] += v2 * bv;
                        c3[j] += v3 * bv;
                    }
                }
            }
            for (; i < m; ++i) {
                T* cr = c + i * n;
                const T* ar = a + i * k;
                for (std::size_t p = p0; p < p1; ++p) {
                    const T v = ar[p];
                    const T* br = b + p * n;
                    for (std::size_t j = j0; j < j1; ++j) cr[j] += v * br[j];
                }
            }
        }
    }
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
    std::vector<T> t(rows * cols);
    constexpr std::size_t B = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += B)
        for (std::size_t j0 = 0; j0 < cols; j0 += B)
            for (std::size_t i = i0; i < std::min(rows, i0 + B); ++i)
                for (std::size_t j = j0; j < std::min(cols, j0 + B); ++j) t[j * rows + i] = a[i * cols + j];
    return t;
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    auto bt = transposed(b, n, k);
    gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

// c[m,n] (+)= a[k,m]^T * b[k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
    auto at = transposed(a, k, m);
    gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The second operand may equal the first's shape or
// match a suffix of it (it is then repeated over the leading dimensions).

namespace detail {

template <typename T>
void check_suffix(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
    if (!ok)
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_suffix(a, b, "add");
    Tensor<T> out(a.shape());
    const std::size_t n = a.numel(), nb = b.numel();
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < n; i += nb)
        for (std::size_t j = 0; j < nb; ++j) o[i + j] = x[i + j] + y[j];
    bool rec = detail::needs_grad(a, b);
    return detail::finish(out, rec, "add", [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            const std::size_t nb = gb.size();
            for (std::size_t i = 0; i < g.size(); i += nb)
                for (std::size_t j = 0; j < nb; ++j) gb[j] += g[i + j];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_suffix(a, b, "sub");
    Tensor<T> out(a.shape());
    const std::size_t n = a.numel(), nb = b.numel();
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < n; i += nb)
        for (std::size_t j = 0; j < nb; ++j) o[i + j] = x[i + j] - y[j];
    bool rec = detail::needs_grad(a, b);
    return detail::finish(out, rec, "sub", [a, b, out]() mutable {
        auto g = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            const std::size_t nb = gb.size();
            for (std::size_t i = 0; i < g.size(); i += nb)
                for (std::size_t j = 0; j < nb; ++j) gb[j] -= g[i + j];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_suffix(a, b, "mul");
    Tensor<T> out(a.shape());
    const std::size_t n = a.numel(), nb = b.numel();
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < n; i += nb)
        for (std::size_t j = 0; j < nb; ++j) o[i + j] = x[i + j] * y[j];
    bool rec = detail::needs_grad(a, b);
    return detail::finish(out, rec, "mul", [a, b, out]() mutable {
        auto g = out.grad();
        auto x = a.data();
        auto y = b.data();
        const std::size_t nb = y.size();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); i += nb)
                for (std::size_t j = 0; j < nb; ++j) ga[i + j] += g[i + j] * y[j];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (std::size_t i = 0; i < g.size(); i += nb)
                for (std::size_t j = 0; j < nb; ++j) gb[j] += g[i + j] * x[i + j];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "scale", [a, out, s]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "sum", [a, out]() mutable {
        const T g = out.grad()[0];
        for (auto& v : a.grad()) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Row-major reinterpretation; copies values.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor<T> out(std::move(shape), a.values());
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "reshape", [a, out]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
}

// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() < 2) throw DimensionError("transpose: rank < 2 in " + shape_str(a.shape()));
    Shape s = a.shape();
    const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
    const std::size_t batch = a.numel() / (r * c);
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    Tensor<T> out(s);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        auto t = kernel::transposed(a.data().data() + bi * r * c, r, c);
        std::copy(t.begin(), t.end(), out.data().begin() + bi * r * c);
    }
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "transpose", [a, out, r, c, batch]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        for (std::size_t bi = 0; bi < batch; ++bi) {
            auto t = kernel::transposed(g.data() + bi * r * c, c, r);
            for (std::size_t i = 0; i < r * c; ++i) ga[bi * r * c + i] += t[i];
        }
    });
}

// Concatenates along axis 0; trailing dimensions must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    Shape s = parts[0].shape();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1))
            throw DimensionError("concat: " + shape_str(p.shape()) + " vs " + shape_str(s));
        rows += p.dim(0);
    }
    s[0] = rows;
    Tensor<T> out(s);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.numel();
    }
    bool rec = detail::needs_grad_list(parts);
    return detail::finish(out, rec, "concat", [parts, out]() mutable {
        auto g = out.grad();
        std::size_t off = 0;
        for (auto p : parts) {
            if (p.requires_grad()) {
                auto gp = p.grad();
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
            }
            off += p.numel();
        }
    });
}

// Rows [begin, end) along axis 0.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t begin, std::size_t end) {
    if (begin >= end || end > a.dim(0))
        throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             shape_str(a.shape()));
    Shape s = a.shape();
    const std::size_t inner = a.numel() / s[0];
    s[0] = end - begin;
    Tensor<T> out(s);
    std::copy(a.data().begin() + begin * inner, a.data().begin() + end * inner, out.data().begin());
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "slice", [a, out, begin, inner]() mutable {
        auto g = out.grad();
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * inner + i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Matrix product a[..,m,k] x b[..,k,n]. Batch dimensions must be equal, or one
// side must be a plain matrix that is shared across the other's batch.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    auto fail = [&] { return DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape())); };
    if (a.rank() < 2 || b.rank() < 2) throw fail();
    const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const std::size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (k != k2) throw fail();
    const std::size_t ba = a.numel() / (m * k), bb = b.numel() / (k * n);
    Shape out_shape;
    if (a.rank() >= b.rank()) {
        out_shape.assign(a.shape().begin(), a.shape().end() - 2);
        if (b.rank() > 2 && !std::equal(b.shape().begin(), b.shape().end() - 2, out_shape.end() - (b.rank() - 2)))
            throw fail();
    } else {
        out_shape.assign(b.shape().begin(), b.shape().end() - 2);
        if (a.rank() > 2) throw fail();
    }
    if (ba != bb && ba != 1 && bb != 1) throw fail();
    const std::size_t batch = std::max(ba, bb);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = out.data().data();
    for (std::size_t i = 0; i < batch; ++i)
        kernel::gemm_nn(m, n, k, pa + (ba == 1 ? 0 : i) * m * k, pb + (bb == 1 ? 0 : i) * k * n, pc + i * m * n, false);
    bool rec = detail::needs_grad(a, b);
    return detail::finish(out, rec, "matmul", [a, b, out, m, n, k, ba, bb, batch]() mutable {
        const T* g = out.grad().data();
        if (a.requires_grad()) {
            T* ga = a.grad().data();
            const T* pb = b.data().data();
            for (std::size_t i = 0; i < batch; ++i)
                kernel::gemm_nt(m, k, n, g + i * m * n, pb + (bb == 1 ? 0 : i) * k * n,
                                ga + (ba == 1 ? 0 : i) * m * k, true);
        }
        if (b.requires_grad()) {
            T* gb = b.grad().data();
            const T* pa = a.data().data();
            for (std::size_t i = 0; i < batch; ++i)
                kernel::gemm_tn(k, n, m, pa + (ba == 1 ? 0 : i) * m * k, g + i * m * n,
                                gb + (bb == 1 ? 0 : i) * k * n, true);
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax along `axis`. When `group` > 0 the normalizer is accumulated as a sum
// of per-group partial sums over contiguous runs of `group` entries, so that
// permuting whole groups permutes the output exactly when there are two groups.

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis, std::size_t group = 0) {
    if (axis >= a.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                                               shape_str(a.shape()));
    const std::size_t len = a.dim(axis);
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
    const std::size_t outer = a.numel() / (len * inner);
    if (group == 0 || len % group != 0) group = len;
    Tensor<T> out(a.shape());
    auto x = a.data();
    auto y = out.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = x[base];
            for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
            T total = 0;
            for (std::size_t g0 = 0; g0 < len; g0 += group) {
                T part = 0;
                for (std::size_t i = g0; i < g0 + group; ++i) {
                    const T e = std::exp(x[base + i * inner] - mx);
                    y[base + i * inner] = e;
                    part += e;
                }
                total += part;
            }
            const T inv = T(1) / total;
            for (std::size_t i = 0; i < len; ++i) y[base + i * inner] *= inv;
        }
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "softmax", [a, out, len, inner, outer]() mutable {
        auto g = out.grad();
        auto y = out.data();
        auto ga = a.grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = 0;
                for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t j = base + i * inner;
                    ga[j] += y[j] * (g[j] - dot);
                }
            }
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    auto x = a.data();
    auto y = out.data();
    // NaN passes through so a bad input still shows up in the loss
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] < T(0) ? T(0) : x[i];
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "relu", [a, out]() mutable {
        auto g = out.grad();
        auto x = a.data();
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (x[i] > T(0)) ga[i] += g[i];
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    auto x = a.data();
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
    bool rec = detail::needs_grad(a);
    return detail::finish(out, rec, "sigmoid", [a, out]() mutable {
        auto g = out.grad();
        auto y = out.data();
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
}

// Converts precision. The result carries no gradient link.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& a) {
    std::vector<To> v(a.data().begin(), a.data().end());
    return Tensor<To>(a.shape(), std::move(v));
}

}  // namespace bevseg
