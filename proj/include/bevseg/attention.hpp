#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "bevseg/tensor.hpp"

namespace bevseg {

// Scaled dot-product attention over `heads` heads of width C/heads.
// q is [Nq, C], k and v are [Nk, C]; returns [Nq, C]. When `probs` is given it
// receives the row-stochastic attention matrix as [heads, Nq, Nk].
template <typename T>
Tensor<T> multihead_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                              Tensor<T>* probs = nullptr) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.shape() != v.shape() || q.dim(1) != k.dim(1) ||
        heads == 0 || q.dim(1) % heads != 0)
        throw DimensionError("multihead_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                             ", v " + shape_str(v.shape()) + ", heads " + std::to_string(heads));
    const std::size_t nq = q.dim(0), nk = k.dim(0), c = q.dim(1), d = c / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    const bool rec = detail::needs_grad(q, k, v);

    auto head_slice = [](const Tensor<T>& x, std::size_t rows, std::size_t c, std::size_t d, std::size_t h) {
        std::vector<T> out(rows * d);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * c + h * d + j];
        return out;
    };

    Tensor<T> out({nq, c});
    Tensor<T> p_all;
    if (rec || probs) p_all = Tensor<T>({heads, nq, nk});
    std::vector<T> scores(nq * nk), head_out(nq * d);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = head_slice(q, nq, c, d, h);
        auto kh = head_slice(k, nk, c, d, h);
        auto vh = head_slice(v, nk, c, d, h);
        kernel::gemm_nt(nq, nk, d, qh.data(), kh.data(), scores.data(), false);
        for (std::size_t i = 0; i < nq; ++i) {
            T* row = scores.data() + i * nk;
            T mx = row[0] * scale;
            for (std::size_t j = 0; j < nk; ++j) {
                row[j] *= scale;
                mx = std::max(mx, row[j]);
            }
            T total = 0;
            for (std::size_t j = 0; j < nk; ++j) {
                row[j] = std::exp(row[j] - mx);
                total += row[j];
            }
            const T inv = T(1) / total;
            for (std::size_t j = 0; j < nk; ++j) row[j] *= inv;
        }
        kernel::gemm_nn(nq, d, nk, scores.data(), vh.data(), head_out.data(), false);
        for (std::size_t i = 0; i < nq; ++i)
            for (std::size_t j = 0; j < d; ++j) out[i * c + h * d + j] = head_out[i * d + j];
        if (p_all.defined()) std::copy(scores.begin(), scores.end(), p_all.data().begin() + h * nq * nk);
    }
    if (probs) *probs = p_all;
    return detail::finish(out, rec, "multihead_attention",
                          [q, k, v, out, p_all, heads, nq, nk, c, d, scale, head_slice]() mutable {
                              auto g = out.grad();
                              std::vector<T> go(nq * d), gp(nq * nk), tmp_q(nq * d), tmp_kv(nk * d);
                              for (std::size_t h = 0; h < heads; ++h) {
                                  const T* p = p_all.data().data() + h * nq * nk;
                                  for (std::size_t i = 0; i < nq; ++i)
                                      for (std::size_t j = 0; j < d; ++j) go[i * d + j] = g[i * c + h * d + j];
                                  auto qh = head_slice(q, nq, c, d, h);
                                  auto kh = head_slice(k, nk, c, d, h);
                                  auto vh = head_slice(v, nk, c, d, h);
                                  if (v.requires_grad()) {
                                      kernel::gemm_tn(nk, d, nq, p, go.data(), tmp_kv.data(), false);
                                      auto gv = v.grad();
                                      for (std::size_t r = 0; r < nk; ++r)
                                          for (std::size_t j = 0; j < d; ++j) gv[r * c + h * d + j] += tmp_kv[r * d + j];
                                  }
                                  if (!q.requires_grad() && !k.requires_grad()) continue;
                                  kernel::gemm_nt(nq, nk, d, go.data(), vh.data(), gp.data(), false);
                                  for (std::size_t i = 0; i < nq; ++i) {
                                      T* row = gp.data() + i * nk;
                                      const T* pr = p + i * nk;
                                      T dot = 0;
                                      for (std::size_t j = 0; j < nk; ++j) dot += row[j] * pr[j];
                                      for (std::size_t j = 0; j < nk; ++j) row[j] = pr[j] * (row[j] - dot) * scale;
                                  }
                                  if (q.requires_grad()) {
                                      kernel::gemm_nn(nq, d, nk, gp.data(), kh.data(), tmp_q.data(), false);
                                      auto gq = q.grad();
                                      for (std::size_t r = 0; r < nq; ++r)
                                          for (std::size_t j = 0; j < d; ++j) gq[r * c + h * d + j] += tmp_q[r * d + j];
                                  }
                                  if (k.requires_grad()) {
                                      kernel::gemm_tn(nk, d, nq, gp.data(), qh.data(), tmp_kv.data(), false);
                                      auto gk = k.grad();
                                      for (std::size_t r = 0; r < nk; ++r)
                                          for (std::size_t j = 0; j < d; ++j) gk[r * c + h * d + j] += tmp_kv[r * d + j];
                                  }
                              }
                          });
}

}  // namespace bevseg
