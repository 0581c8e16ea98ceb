#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "bttr/tensor.hpp"

namespace bttr {

inline constexpr real kNegInf = -std::numeric_limits<real>::infinity();

// ---------------------------------------------------------------- gemm
// Row-major accumulating kernels; backward passes reuse the transposed forms.
namespace detail {

// The gemm kernels process four rows (or columns) per pass so each loaded
// line of the other operand is reused four times; this roughly halves the
// memory traffic and lets the compiler keep the accumulators in registers.
// All-zero strips are skipped, which matters for sparse backward gradients.
inline void gemm_nn(const real* a, const real* b, real* c, int m, int k, int n) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const real* a0 = a + static_cast<std::size_t>(i) * k;
        const real *a1 = a0 + k, *a2 = a1 + k, *a3 = a2 + k;
        real* c0 = c + static_cast<std::size_t>(i) * n;
        real *c1 = c0 + n, *c2 = c1 + n, *c3 = c2 + n;
        for (int p = 0; p < k; ++p) {
            real v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            if (v0 == real(0) && v1 == real(0) && v2 == real(0) && v3 == real(0)) continue;
            const real* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                real bv = bp[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        const real* ai = a + static_cast<std::size_t>(i) * k;
        real* ci = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            real av = ai[p];
            if (av == real(0)) continue;
            const real* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
inline void gemm_nt(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const real* ai = a + static_cast<std::size_t>(i) * k;
        real* ci = c + static_cast<std::size_t>(i) * n;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const real* b0 = b + static_cast<std::size_t>(j) * k;
            const real *b1 = b0 + k, *b2 = b1 + k, *b3 = b2 + k;
            real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int p = 0; p < k; ++p) {
                real av = ai[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            ci[j] += s0;
            ci[j + 1] += s1;
            ci[j + 2] += s2;
            ci[j + 3] += s3;
        }
        for (; j < n; ++j) {
            const real* bj = b + static_cast<std::size_t>(j) * k;
            real acc = 0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// c[m,n] += a[k,m]^T * b[k,n]
inline void gemm_tn(const real* a, const real* b, real* c, int m, int k, int n) {
    int p = 0;
    for (; p + 4 <= k; p += 4) {
        const real* a0 = a + static_cast<std::size_t>(p) * m;
        const real *a1 = a0 + m, *a2 = a1 + m, *a3 = a2 + m;
        const real* b0 = b + static_cast<std::size_t>(p) * n;
        const real *b1 = b0 + n, *b2 = b1 + n, *b3 = b2 + n;
        for (int i = 0; i < m; ++i) {
            real v0 = a0[i], v1 = a1[i], v2 = a2[i], v3 = a3[i];
            if (v0 == real(0) && v1 == real(0) && v2 == real(0) && v3 == real(0)) continue;
            real* ci = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
        }
    }
    for (; p < k; ++p) {
        const real* ap = a + static_cast<std::size_t>(p) * m;
        const real* bp = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            real av = ap[i];
            if (av == real(0)) continue;
            real* ci = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

inline void check_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2) throw DimensionError(std::string(what) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------- basic ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<real> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_op(a.shape(), std::move(out), {a, b}, [ai = a.impl(), bi = b.impl()](TensorImpl& o) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bi->grad[i] += o.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<real> out(a.values());
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_op(a.shape(), std::move(out), {a, b}, [ai = a.impl(), bi = b.impl()](TensorImpl& o) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i] * bi->values[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bi->grad[i] += o.grad[i] * ai->values[i];
        }
    });
}

inline Tensor scale(const Tensor& a, real c) {
    std::vector<real> out(a.values());
    for (auto& x : out) x *= c;
    return make_op(a.shape(), std::move(out), {a}, [ai = a.impl(), c](TensorImpl& o) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += c * o.grad[i];
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, real(-1))); }

// x[m,d] + bias[d] broadcast over rows
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    detail::check_2d(x, "add_bias");
    int m = x.dim(0), d = x.dim(1);
    if (bias.ndim() != 1 || bias.dim(0) != d)
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs matrix " + shape_str(x.shape()));
    std::vector<real> out(x.values());
    const auto& bv = bias.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] += bv[j];
    return make_op(x.shape(), std::move(out), {x, bias}, [xi = x.impl(), bi = bias.impl(), m, d](TensorImpl& o) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < d; ++j) bi->grad[j] += o.grad[static_cast<std::size_t>(i) * d + j];
        }
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<real> out(a.values());
    for (auto& x : out) x = std::max(x, real(0));
    return make_op(a.shape(), std::move(out), {a}, [ai = a.impl()](TensorImpl& o) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            if (ai->values[i] > real(0)) ai->grad[i] += o.grad[i];
    });
}

// Inverted-scaling dropout; mask entries are 0/1 and come from the caller's rng.
inline Tensor dropout(const Tensor& x, const Tensor& mask, real p) {
    if (p <= real(0)) return x;
    if (x.shape() != mask.shape())
        throw DimensionError("dropout mask shape " + shape_str(mask.shape()) + " vs " + shape_str(x.shape()));
    real inv = real(1) / (real(1) - p);
    std::vector<real> out(x.values());
    const auto& mv = mask.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mv[i] * inv;
    return make_op(x.shape(), std::move(out), {x, mask}, [xi = x.impl(), mi = mask.impl(), inv](TensorImpl& o) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += o.grad[i] * mi->values[i] * inv;
    });
}

inline Tensor make_dropout_mask(RngState& rng, const Shape& shape, real p) {
    std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform() < p ? real(0) : real(1);
    return Tensor::from_values(shape, std::move(v));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw DimensionError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    std::vector<real> out(static_cast<std::size_t>(m) * n, real(0));
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_op({m, n}, std::move(out), {a, b}, [ai = a.impl(), bi = b.impl(), m, k, n](TensorImpl& o) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            detail::gemm_nt(o.grad.data(), bi->values.data(), ai->grad.data(), m, n, k);
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            detail::gemm_tn(ai->values.data(), o.grad.data(), bi->grad.data(), k, m, n);
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::check_2d(a, "transpose");
    int m = a.dim(0), n = a.dim(1);
    std::vector<real> out(static_cast<std::size_t>(m) * n);
    const auto& av = a.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    return make_op({n, m}, std::move(out), {a}, [ai = a.impl(), m, n](TensorImpl& o) {
        ai->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ai->grad[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j) * m + i];
    });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    std::vector<real> out(a.values());
    return make_op(std::move(shape), std::move(out), {a}, [ai = a.impl()](TensorImpl& o) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i];
    });
}

// contiguous row slice of a 2-D tensor
inline Tensor rows(const Tensor& a, int start, int count) {
    detail::check_2d(a, "rows");
    int m = a.dim(0), d = a.dim(1);
    if (start < 0 || count < 0 || start + count > m)
        throw DimensionError("rows [" + std::to_string(start) + "," + std::to_string(start + count) +
                             ") out of range for " + shape_str(a.shape()));
    auto first = a.values().begin() + static_cast<std::ptrdiff_t>(start) * d;
    std::vector<real> out(first, first + static_cast<std::ptrdiff_t>(count) * d);
    return make_op({count, d}, std::move(out), {a}, [ai = a.impl(), start, d](TensorImpl& o) {
        ai->ensure_grad();
        std::size_t off = static_cast<std::size_t>(start) * d;
        for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[off + i] += o.grad[i];
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd) throw DimensionError("concat axis " + std::to_string(axis) + " out of range");
    Shape out_shape = parts[0].shape();
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
    int total_axis = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw DimensionError("concat rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != axis && p.dim(i) != parts[0].dim(i))
                throw DimensionError("concat shape mismatch: " + shape_str(p.shape()) + " vs " +
                                     shape_str(parts[0].shape()));
        total_axis += p.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = total_axis;

    std::vector<real> out(static_cast<std::size_t>(outer) * total_axis * inner);
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::int64_t ext = static_cast<std::int64_t>(p.dim(axis)) * inner;
        const auto& pv = p.values();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(pv.begin() + o * ext, pv.begin() + (o + 1) * ext,
                      out.begin() + o * (static_cast<std::int64_t>(total_axis) * inner) + off);
        off += ext;
    }
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<std::int64_t> exts;
    for (const auto& p : parts) {
        impls.push_back(p.impl());
        exts.push_back(static_cast<std::int64_t>(p.dim(axis)) * inner);
    }
    std::int64_t stride = static_cast<std::int64_t>(total_axis) * inner;
    return make_op(std::move(out_shape), std::move(out), parts,
                   [impls, exts, offsets, outer, stride](TensorImpl& o) {
                       for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                           auto& p = *impls[pi];
                           if (!p.requires_grad) continue;
                           p.ensure_grad();
                           for (std::int64_t ob = 0; ob < outer; ++ob) {
                               const real* src = o.grad.data() + ob * stride + offsets[pi];
                               real* dst = p.grad.data() + ob * exts[pi];
                               for (std::int64_t i = 0; i < exts[pi]; ++i) dst[i] += src[i];
                           }
                       }
                   });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
    real acc = 0;
    for (real v : a.values()) acc += v;
    return make_op({1}, {acc}, {a}, [ai = a.impl()](TensorImpl& o) {
        ai->ensure_grad();
        for (auto& g : ai->grad) g += o.grad[0];
    });
}

// weighted sum against a constant weight vector; the masked-mean building block
inline Tensor dot_const(const Tensor& a, std::vector<real> weights) {
    if (static_cast<std::int64_t>(weights.size()) != a.numel())
        throw DimensionError("dot_const weight count " + std::to_string(weights.size()) + " vs " +
                             shape_str(a.shape()));
    real acc = 0;
    const auto& av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * weights[i];
    return make_op({1}, {acc}, {a}, [ai = a.impl(), w = std::move(weights)](TensorImpl& o) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < w.size(); ++i) ai->grad[i] += o.grad[0] * w[i];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), real(1) / static_cast<real>(a.numel())); }

// ---------------------------------------------------------------- softmax / losses

namespace detail {
// softmax over a row of n entries; -inf entries map to exact 0; an all-(-inf)
// row yields all zeros (padded rows stay inert).
inline void softmax_row(const real* x, real* y, int n) {
    real mx = kNegInf;
    for (int i = 0; i < n; ++i) mx = std::max(mx, x[i]);
    if (mx == kNegInf) {
        std::fill(y, y + n, real(0));
        return;
    }
    real denom = 0;
    for (int i = 0; i < n; ++i) {
        y[i] = (x[i] == kNegInf) ? real(0) : std::exp(x[i] - mx);
        denom += y[i];
    }
    real inv = real(1) / denom;
    for (int i = 0; i < n; ++i) y[i] *= inv;
}
}  // namespace detail

// softmax along the last axis
inline Tensor softmax(const Tensor& a) {
    if (a.ndim() < 1) throw DimensionError("softmax on rank-0 tensor");
    int n = a.dim(a.ndim() - 1);
    std::int64_t rows_n = a.numel() / n;
    std::vector<real> out(a.values().size());
    for (std::int64_t r = 0; r < rows_n; ++r)
        detail::softmax_row(a.values().data() + r * n, out.data() + r * n, n);
    return make_op(a.shape(), std::move(out), {a}, [ai = a.impl(), rows_n, n](TensorImpl& o) {
        ai->ensure_grad();
        for (std::int64_t r = 0; r < rows_n; ++r) {
            const real* y = o.values.data() + r * n;
            const real* gy = o.grad.data() + r * n;
            real dot = 0;
            for (int i = 0; i < n; ++i) dot += y[i] * gy[i];
            real* gx = ai->grad.data() + r * n;
            for (int i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
        }
    });
}

// per-row -log softmax(logits)[target]; returns an [m] tensor of losses
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
    detail::check_2d(logits, "cross_entropy");
    int m = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != m)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(m) + " rows");
    for (int t : targets)
        if (t < 0 || t >= v)
            throw ContractError("cross_entropy target id " + std::to_string(t) + " outside vocab of " +
                                std::to_string(v));
    std::vector<real> probs(static_cast<std::size_t>(m) * v);
    std::vector<real> out(static_cast<std::size_t>(m));
    for (int r = 0; r < m; ++r) {
        const real* x = logits.values().data() + static_cast<std::size_t>(r) * v;
        real* p = probs.data() + static_cast<std::size_t>(r) * v;
        detail::softmax_row(x, p, v);
        out[static_cast<std::size_t>(r)] = -std::log(std::max(p[targets[static_cast<std::size_t>(r)]],
                                                              std::numeric_limits<real>::min()));
    }
    return make_op({m}, std::move(out), {logits},
                   [li = logits.impl(), probs = std::move(probs), targets, m, v](TensorImpl& o) {
                       li->ensure_grad();
                       for (int r = 0; r < m; ++r) {
                           real g = o.grad[static_cast<std::size_t>(r)];
                           if (g == real(0)) continue;
                           const real* p = probs.data() + static_cast<std::size_t>(r) * v;
                           real* gx = li->grad.data() + static_cast<std::size_t>(r) * v;
                           for (int j = 0; j < v; ++j) gx[j] += g * p[j];
                           gx[targets[static_cast<std::size_t>(r)]] -= g;
                       }
                   });
}

inline Tensor cross_entropy(const Tensor& logits, int target_id) {
    Tensor l2 = logits.ndim() == 1 ? reshape(logits, {1, logits.dim(0)}) : logits;
    return cross_entropy_rows(l2, {target_id});
}

// ---------------------------------------------------------------- table lookup

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    detail::check_2d(table, "embedding_lookup");
    int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw ContractError("embedding id " + std::to_string(id) + " outside table of " + std::to_string(v));
    int m = static_cast<int>(ids.size());
    std::vector<real> out(static_cast<std::size_t>(m) * d);
    for (int r = 0; r < m; ++r)
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(r)]) * d, d,
                    out.data() + static_cast<std::size_t>(r) * d);
    return make_op({m, d}, std::move(out), {table}, [ti = table.impl(), ids, d](TensorImpl& o) {
        ti->ensure_grad();
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const real* g = o.grad.data() + r * d;
            real* dst = ti->grad.data() + static_cast<std::size_t>(ids[r]) * d;
            for (int j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
}

// ---------------------------------------------------------------- normalization

// layer norm over the last axis, with affine parameters
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = real(1e-5)) {
    int d = x.dim(x.ndim() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layernorm affine params must have " + std::to_string(d) + " entries");
    std::int64_t rows_n = x.numel() / d;
    std::vector<real> out(x.values().size());
    std::vector<real> inv_std(static_cast<std::size_t>(rows_n));
    std::vector<real> xhat(x.values().size());
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    for (std::int64_t r = 0; r < rows_n; ++r) {
        const real* xr = xv.data() + r * d;
        real m = 0;
        for (int j = 0; j < d; ++j) m += xr[j];
        m /= d;
        real var = 0;
        for (int j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
        var /= d;
        real is = real(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        real* hr = xhat.data() + r * d;
        real* yr = out.data() + r * d;
        for (int j = 0; j < d; ++j) {
            hr[j] = (xr[j] - m) * is;
            yr[j] = gv[j] * hr[j] + bv[j];
        }
    }
    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(xhat),
                    inv_std = std::move(inv_std), rows_n, d](TensorImpl& o) {
                       if (gi->requires_grad) gi->ensure_grad();
                       if (bi->requires_grad) bi->ensure_grad();
                       if (xi->requires_grad) xi->ensure_grad();
                       for (std::int64_t r = 0; r < rows_n; ++r) {
                           const real* gy = o.grad.data() + r * d;
                           const real* hr = xhat.data() + r * d;
                           if (gi->requires_grad)
                               for (int j = 0; j < d; ++j) gi->grad[j] += gy[j] * hr[j];
                           if (bi->requires_grad)
                               for (int j = 0; j < d; ++j) bi->grad[j] += gy[j];
                           if (xi->requires_grad) {
                               real sum_g = 0, sum_gh = 0;
                               for (int j = 0; j < d; ++j) {
                                   real gh = gy[j] * gi->values[j];
                                   sum_g += gh;
                                   sum_gh += gh * hr[j];
                               }
                               real is = inv_std[static_cast<std::size_t>(r)];
                               real* gx = xi->grad.data() + r * d;
                               for (int j = 0; j < d; ++j) {
                                   real gh = gy[j] * gi->values[j];
                                   gx[j] += is * (gh - sum_g / d - hr[j] * sum_gh / d);
                               }
                           }
                       }
                   });
}

// training-mode batch norm over [N,C,H,W]; batch statistics are returned so the
// owning layer can maintain running averages
inline Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              std::vector<real>* batch_mean_out, std::vector<real>* batch_var_out,
                              real eps = real(1e-5)) {
    if (x.ndim() != 4) throw DimensionError("batchnorm expects [N,C,H,W], got " + shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.numel() != c || beta.numel() != c)
        throw DimensionError("batchnorm affine params must have " + std::to_string(c) + " entries");
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    std::int64_t cnt = static_cast<std::int64_t>(n) * plane;
    const auto& xv = x.values();
    std::vector<real> mean_c(static_cast<std::size_t>(c), 0), var_c(static_cast<std::size_t>(c), 0);
    for (int ci = 0; ci < c; ++ci) {
        real s = 0;
        for (int ni = 0; ni < n; ++ni) {
            const real* p = xv.data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) s += p[i];
        }
        real m = s / static_cast<real>(cnt);
        real v2 = 0;
        for (int ni = 0; ni < n; ++ni) {
            const real* p = xv.data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) v2 += (p[i] - m) * (p[i] - m);
        }
        mean_c[static_cast<std::size_t>(ci)] = m;
        var_c[static_cast<std::size_t>(ci)] = v2 / static_cast<real>(cnt);
    }
    if (batch_mean_out) *batch_mean_out = mean_c;
    if (batch_var_out) *batch_var_out = var_c;

    std::vector<real> out(xv.size());
    std::vector<real> inv_std(static_cast<std::size_t>(c));
    for (int ci = 0; ci < c; ++ci)
        inv_std[static_cast<std::size_t>(ci)] = real(1) / std::sqrt(var_c[static_cast<std::size_t>(ci)] + eps);
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const real* p = xv.data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
            real* q = out.data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
            real m = mean_c[static_cast<std::size_t>(ci)], is = inv_std[static_cast<std::size_t>(ci)];
            real g = gv[static_cast<std::size_t>(ci)], b = bv[static_cast<std::size_t>(ci)];
            for (std::int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - m) * is + b;
        }

    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), mean_c = std::move(mean_c),
                    inv_std = std::move(inv_std), n, c, plane, cnt](TensorImpl& o) {
                       if (gi->requires_grad) gi->ensure_grad();
                       if (bi->requires_grad) bi->ensure_grad();
                       if (xi->requires_grad) xi->ensure_grad();
                       for (int ci = 0; ci < c; ++ci) {
                           real m = mean_c[static_cast<std::size_t>(ci)];
                           real is = inv_std[static_cast<std::size_t>(ci)];
                           real g = gi->values[static_cast<std::size_t>(ci)];
                           real sum_gy = 0, sum_gyh = 0;
                           for (int ni = 0; ni < n; ++ni) {
                               std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
                               const real* gy = o.grad.data() + base;
                               const real* xr = xi->values.data() + base;
                               for (std::int64_t i = 0; i < plane; ++i) {
                                   sum_gy += gy[i];
                                   sum_gyh += gy[i] * (xr[i] - m) * is;
                               }
                           }
                           if (gi->requires_grad) gi->grad[static_cast<std::size_t>(ci)] += sum_gyh;
                           if (bi->requires_grad) bi->grad[static_cast<std::size_t>(ci)] += sum_gy;
                           if (xi->requires_grad) {
                               real inv_cnt = real(1) / static_cast<real>(cnt);
                               for (int ni = 0; ni < n; ++ni) {
                                   std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
                                   const real* gy = o.grad.data() + base;
                                   const real* xr = xi->values.data() + base;
                                   real* gx = xi->grad.data() + base;
                                   for (std::int64_t i = 0; i < plane; ++i) {
                                       real xhat = (xr[i] - m) * is;
                                       gx[i] += g * is * (gy[i] - sum_gy * inv_cnt - xhat * sum_gyh * inv_cnt);
                                   }
                               }
                           }
                       }
                   });
}

// inference-mode batch norm using frozen running statistics
inline Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             const std::vector<real>& running_mean, const std::vector<real>& running_var,
                             real eps = real(1e-5)) {
    if (x.ndim() != 4) throw DimensionError("batchnorm expects [N,C,H,W], got " + shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1);
    std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    std::vector<real> out(x.values().size());
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            real is = real(1) / std::sqrt(running_var[static_cast<std::size_t>(ci)] + eps);
            real m = running_mean[static_cast<std::size_t>(ci)];
            real g = gv[static_cast<std::size_t>(ci)], b = bv[static_cast<std::size_t>(ci)];
            const real* p = xv.data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
            real* q = out.data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - m) * is + b;
        }
    // affine in x; grads for x/gamma/beta only (eval mode is normally no-grad)
    return make_op(x.shape(), std::move(out), {x, gamma, beta}, [](TensorImpl&) {});
}

// ---------------------------------------------------------------- convolution

namespace detail {
inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

inline void im2col(const real* img, int c, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow,
                   real* col) {
    // col is [c*kh*kw, oh*ow]
    for (int ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                real* dst = col + (static_cast<std::int64_t>(ci) * kh * kw + ki * kw + kj) *
                                      (static_cast<std::int64_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + ki;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride - pad + kj;
                        dst[static_cast<std::int64_t>(oi) * ow + oj] =
                            (ii >= 0 && ii < h && jj >= 0 && jj < w)
                                ? img[(static_cast<std::int64_t>(ci) * h + ii) * w + jj]
                                : real(0);
                    }
                }
            }
}

inline void col2im_add(const real* col, int c, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow,
                       real* img) {
    for (int ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const real* src = col + (static_cast<std::int64_t>(ci) * kh * kw + ki * kw + kj) *
                                            (static_cast<std::int64_t>(oh) * ow);
                for (int oi = 0; oi < oh; ++oi) {
                    int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        int jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= w) continue;
                        img[(static_cast<std::int64_t>(ci) * h + ii) * w + jj] +=
                            src[static_cast<std::int64_t>(oi) * ow + oj];
                    }
                }
            }
}
}  // namespace detail

// x: [N,C,H,W] (or [C,H,W]), w: [C_out,C,kh,kw]; cross-correlation convention
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0) {
    Tensor x4 = x;
    bool squeeze = false;
    if (x.ndim() == 3) {
        x4 = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
        squeeze = true;
    }
    if (x4.ndim() != 4 || w.ndim() != 4)
        throw DimensionError("conv2d expects [N,C,H,W] and [Cout,C,kh,kw], got " + shape_str(x.shape()) + " and " +
                             shape_str(w.shape()));
    int n = x4.dim(0), c = x4.dim(1), h = x4.dim(2), ww = x4.dim(3);
    int cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (cin != c)
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                             shape_str(w.shape()));
    if (kh > h + 2 * pad || kw > ww + 2 * pad)
        throw DimensionError("conv2d kernel " + shape_str(w.shape()) + " larger than padded input " +
                             shape_str(x.shape()));
    int oh = detail::conv_out_extent(h, kh, stride, pad);
    int ow = detail::conv_out_extent(ww, kw, stride, pad);
    std::int64_t ck = static_cast<std::int64_t>(c) * kh * kw;
    std::int64_t sp = static_cast<std::int64_t>(oh) * ow;

    std::vector<real> out(static_cast<std::size_t>(n) * cout * sp, real(0));
    std::vector<real> col(static_cast<std::size_t>(ck * sp));
    for (int ni = 0; ni < n; ++ni) {
        detail::im2col(x4.values().data() + static_cast<std::int64_t>(ni) * c * h * ww, c, h, ww, kh, kw, stride,
                       pad, oh, ow, col.data());
        detail::gemm_nn(w.values().data(), col.data(), out.data() + static_cast<std::int64_t>(ni) * cout * sp,
                        cout, static_cast<int>(ck), static_cast<int>(sp));
    }

    Tensor y = make_op({n, cout, oh, ow}, std::move(out), {x4, w},
                       [xi = x4.impl(), wi = w.impl(), n, c, h, ww, cout, kh, kw, stride, pad, oh, ow, ck,
                        sp](TensorImpl& o) {
                           std::vector<real> col(static_cast<std::size_t>(ck * sp));
                           std::vector<real> gcol(static_cast<std::size_t>(ck * sp));
                           if (wi->requires_grad) wi->ensure_grad();
                           if (xi->requires_grad) xi->ensure_grad();
                           for (int ni = 0; ni < n; ++ni) {
                               const real* go = o.grad.data() + static_cast<std::int64_t>(ni) * cout * sp;
                               if (wi->requires_grad) {
                                   detail::im2col(xi->values.data() + static_cast<std::int64_t>(ni) * c * h * ww,
                                                  c, h, ww, kh, kw, stride, pad, oh, ow, col.data());
                                   // gradW += gradOut * col^T
                                   detail::gemm_nt(go, col.data(), wi->grad.data(), cout, static_cast<int>(sp),
                                                  static_cast<int>(ck));
                               }
                               if (xi->requires_grad) {
                                   std::fill(gcol.begin(), gcol.end(), real(0));
                                   // gradCol = W^T * gradOut
                                   detail::gemm_tn(wi->values.data(), go, gcol.data(), static_cast<int>(ck),
                                                  cout, static_cast<int>(sp));
                                   detail::col2im_add(gcol.data(), c, h, ww, kh, kw, stride, pad, oh, ow,
                                                      xi->grad.data() + static_cast<std::int64_t>(ni) * c * h * ww);
                               }
                           }
                       });
    if (squeeze) return reshape(y, {cout, oh, ow});
    return y;
}

// ceil-mode average pooling; divisor is the actual (clipped) window size, so a
// 1x1 input passes through unchanged
inline Tensor avgpool2d(const Tensor& x, int kernel = 2, int stride = 2) {
    if (x.ndim() != 4) throw DimensionError("avgpool2d expects [N,C,H,W], got " + shape_str(x.shape()));
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int oh = (h + stride - 1) / stride;
    int ow = (w + stride - 1) / stride;
    std::vector<real> out(static_cast<std::size_t>(n) * c * oh * ow, real(0));
    const auto& xv = x.values();
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const real* p = xv.data() + (static_cast<std::int64_t>(ni) * c + ci) * h * w;
            real* q = out.data() + (static_cast<std::int64_t>(ni) * c + ci) * oh * ow;
            for (int oi = 0; oi < oh; ++oi)
                for (int oj = 0; oj < ow; ++oj) {
                    int i0 = oi * stride, j0 = oj * stride;
                    int i1 = std::min(i0 + kernel, h), j1 = std::min(j0 + kernel, w);
                    real s = 0;
                    for (int i = i0; i < i1; ++i)
                        for (int j = j0; j < j1; ++j) s += p[static_cast<std::int64_t>(i) * w + j];
                    q[static_cast<std::int64_t>(oi) * ow + oj] = s / static_cast<real>((i1 - i0) * (j1 - j0));
                }
        }
    return make_op({n, c, oh, ow}, std::move(out), {x}, [xi = x.impl(), n, c, h, w, oh, ow, kernel,
                                                         stride](TensorImpl& o) {
        xi->ensure_grad();
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                real* gx = xi->grad.data() + (static_cast<std::int64_t>(ni) * c + ci) * h * w;
                const real* gy = o.grad.data() + (static_cast<std::int64_t>(ni) * c + ci) * oh * ow;
                for (int oi = 0; oi < oh; ++oi)
                    for (int oj = 0; oj < ow; ++oj) {
                        int i0 = oi * stride, j0 = oj * stride;
                        int i1 = std::min(i0 + kernel, h), j1 = std::min(j0 + kernel, w);
                        real g = gy[static_cast<std::int64_t>(oi) * ow + oj] /
                                 static_cast<real>((i1 - i0) * (j1 - j0));
                        for (int i = i0; i < i1; ++i)
                            for (int j = j0; j < j1; ++j) gx[static_cast<std::int64_t>(i) * w + j] += g;
                    }
            }
    });
}

// extract image `n` of an [N,C,H,W] batch as an [H*W, C] row matrix
inline Tensor image_to_rows(const Tensor& x, int n) {
    if (x.ndim() != 4) throw DimensionError("image_to_rows expects [N,C,H,W], got " + shape_str(x.shape()));
    int nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (n < 0 || n >= nb) throw DimensionError("image_to_rows index " + std::to_string(n) + " out of range");
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    std::vector<real> out(static_cast<std::size_t>(plane) * c);
    const auto& xv = x.values();
    for (int ci = 0; ci < c; ++ci) {
        const real* p = xv.data() + (static_cast<std::int64_t>(n) * c + ci) * plane;
        for (std::int64_t i = 0; i < plane; ++i) out[static_cast<std::size_t>(i * c + ci)] = p[i];
    }
    return make_op({static_cast<int>(plane), c}, std::move(out), {x}, [xi = x.impl(), n, c, plane](TensorImpl& o) {
        xi->ensure_grad();
        for (int ci = 0; ci < c; ++ci) {
            real* gx = xi->grad.data() + (static_cast<std::int64_t>(n) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) gx[i] += o.grad[static_cast<std::size_t>(i * c + ci)];
        }
    });
}

}  // namespace bttr
