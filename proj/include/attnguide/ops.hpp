#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "attnguide/tensor.hpp"

// Differentiable operations over Tensor<S>. Every op validates shapes up
// front, computes the forward result, and records a backward rule on the
// active tape when some input requires gradients. There is no broadcasting
// beyond scalar-tensor; all shapes are explicit.

namespace attnguide {

namespace detail {

template <typename S>
inline bool any_requires_grad(std::initializer_list<const Tensor<S>*> ts) {
    for (const auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

// Marks `out` differentiable and records the backward closure when a tape is
// active. Without an active tape the op silently stays off the record
// (inference mode).
template <typename S>
inline void record(std::initializer_list<const Tensor<S>*> inputs, Tensor<S>& out,
                   std::function<void()> backward) {
    if (!any_requires_grad(inputs)) return;
    out.set_requires_grad(true);
    Tape<S>* tape = TapeScope<S>::active();
    if (!tape) return;
    std::vector<std::shared_ptr<TensorData<S>>> ins;
    ins.reserve(inputs.size());
    for (const auto* t : inputs) ins.push_back(t->ptr());
    tape->record(std::move(ins), out.ptr(), std::move(backward));
}

template <typename S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<S>({&a, &b}, out, [ad, bd, od] {
        const auto& g = od->grad;
        if (ad->requires_grad) {
            auto& ga = ensure_grad(*ad);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bd->requires_grad) {
            auto& gb = ensure_grad(*bd);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<S>({&a, &b}, out, [ad, bd, od] {
        const auto& g = od->grad;
        if (ad->requires_grad) {
            auto& ga = ensure_grad(*ad);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bd->requires_grad) {
            auto& gb = ensure_grad(*bd);
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<S>({&a, &b}, out, [ad, bd, od] {
        const auto& g = od->grad;
        if (ad->requires_grad) {
            auto& ga = ensure_grad(*ad);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd->data[i];
        }
        if (bd->requires_grad) {
            auto& gb = ensure_grad(*bd);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad->data[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "div");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) {
        if (b[i] == S(0)) throw NumericError("div: zero denominator at index " + std::to_string(i));
        out[i] = a[i] / b[i];
    }
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<S>({&a, &b}, out, [ad, bd, od] {
        const auto& g = od->grad;
        if (ad->requires_grad) {
            auto& ga = ensure_grad(*ad);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bd->data[i];
        }
        if (bd->requires_grad) {
            auto& gb = ensure_grad(*bd);
            for (size_t i = 0; i < g.size(); ++i)
                gb[i] -= g[i] * ad->data[i] / (bd->data[i] * bd->data[i]);
        }
    });
    return out;
}

// out = scale * x + shift, elementwise with scalar coefficients.
template <typename S>
Tensor<S> affine(const Tensor<S>& x, S scale_c, S shift_c) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) out[i] = scale_c * x[i] + shift_c;
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, scale_c] {
        const auto& g = od->grad;
        auto& gx = ensure_grad(*xd);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += scale_c * g[i];
    });
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return affine(x, c, S(0));
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const size_t m = a.size(0), k = a.size(1), n = b.size(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t p = 0; p < k; ++p) {
            const S av = pa[i * k + p];
            const S* brow = pb + p * n;
            S* orow = po + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    detail::record<S>({&a, &b}, out, [ad, bd, od, m, k, n] {
        const S* g = od->grad.data();
        if (ad->requires_grad) {
            auto& ga = ensure_grad(*ad);
            // dA = dOut * B^T; row-dot form keeps both operands contiguous
            const S* b = bd->data.data();
            for (size_t i = 0; i < m; ++i)
                for (size_t p = 0; p < k; ++p) {
                    const S* grow = g + i * n;
                    const S* brow = b + p * n;
                    S acc = S(0);
                    for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
        }
        if (bd->requires_grad) {
            auto& gb = ensure_grad(*bd);
            // dB = A^T * dOut
            for (size_t i = 0; i < m; ++i)
                for (size_t p = 0; p < k; ++p) {
                    const S av = ad->data[i * k + p];
                    for (size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                }
        }
    });
    return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
    if (x.rank() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_str(x.shape()));
    const size_t r = x.size(0), c = x.size(1);
    Tensor<S> out = Tensor<S>::zeros({c, r});
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, r, c] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
    return out;
}

// General axis permutation; `perm` maps output axis -> input axis.
template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<size_t>& perm) {
    const size_t nd = x.rank();
    if (perm.size() != nd) throw DimensionError("permute: rank mismatch");
    std::vector<bool> seen(nd, false);
    for (size_t p : perm) {
        if (p >= nd || seen[p]) throw ParameterError("permute: invalid permutation");
        seen[p] = true;
    }
    std::vector<size_t> out_shape(nd);
    for (size_t i = 0; i < nd; ++i) out_shape[i] = x.shape()[perm[i]];

    std::vector<size_t> in_strides(nd, 1), out_strides(nd, 1);
    for (size_t i = nd; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
    for (size_t i = nd; i-- > 1;) out_strides[i - 1] = out_strides[i] * out_shape[i];

    const size_t n = x.numel();
    // flat out index -> flat in index
    std::vector<size_t> src_index(n);
    std::vector<size_t> idx(nd, 0);
    for (size_t o = 0; o < n; ++o) {
        size_t src = 0;
        for (size_t i = 0; i < nd; ++i) src += idx[i] * in_strides[perm[i]];
        src_index[o] = src;
        for (size_t i = nd; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    Tensor<S> out = Tensor<S>::zeros(out_shape);
    for (size_t o = 0; o < n; ++o) out[o] = x[src_index[o]];
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, src_index = std::move(src_index)] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        for (size_t o = 0; o < g.size(); ++o) gx[src_index[o]] += g[o];
    });
    return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<size_t> new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(new_shape));
    Tensor<S> out(new_shape, x.data());
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return out;
}

// Columns [c0, c1) of a 2-D tensor.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, size_t c0, size_t c1) {
    if (x.rank() != 2) throw DimensionError("slice_cols: expected 2-D, got " + shape_str(x.shape()));
    const size_t r = x.size(0), c = x.size(1);
    if (c0 >= c1 || c1 > c) throw ParameterError("slice_cols: invalid column range");
    const size_t w = c1 - c0;
    Tensor<S> out = Tensor<S>::zeros({r, w});
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < w; ++j) out[i * w + j] = x[i * c + c0 + j];
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, r, c, c0, w] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < w; ++j) gx[i * c + c0 + j] += g[i * w + j];
    });
    return out;
}

// Horizontal concatenation of 2-D tensors with equal row counts.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ParameterError("concat_cols: no inputs");
    const size_t r = parts[0].size(0);
    size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.size(0) != r)
            throw DimensionError("concat_cols: row count mismatch at " + shape_str(p.shape()));
        total += p.size(1);
    }
    Tensor<S> out = Tensor<S>::zeros({r, total});
    size_t off = 0;
    for (const auto& p : parts) {
        const size_t w = p.size(1);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < w; ++j) out[i * total + off + j] = p[i * w + j];
        off += w;
    }
    bool rg = false;
    for (const auto& p : parts) rg = rg || p.requires_grad();
    if (rg) {
        out.set_requires_grad(true);
        if (Tape<S>* tape = TapeScope<S>::active()) {
            std::vector<std::shared_ptr<TensorData<S>>> ins;
            for (const auto& p : parts) ins.push_back(p.ptr());
            auto od = out.ptr();
            auto ins_copy = ins;
            tape->record(std::move(ins), od, [ins = std::move(ins_copy), od, r, total] {
                const auto& g = od->grad;
                size_t off2 = 0;
                for (const auto& in : ins) {
                    const size_t w = in->data.size() / r;
                    if (in->requires_grad) {
                        auto& gi = ensure_grad(*in);
                        for (size_t i = 0; i < r; ++i)
                            for (size_t j = 0; j < w; ++j) gi[i * w + j] += g[i * total + off2 + j];
                    }
                    off2 += w;
                }
            });
        }
    }
    return out;
}

// Stacks scalar tensors into a 1-D vector.
template <typename S>
Tensor<S> stack_scalars(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw ParameterError("stack_scalars: no inputs");
    std::vector<S> vals;
    vals.reserve(xs.size());
    for (const auto& x : xs) vals.push_back(x.scalar_value());
    Tensor<S> out({xs.size()}, std::move(vals));
    bool rg = false;
    for (const auto& x : xs) rg = rg || x.requires_grad();
    if (rg) {
        out.set_requires_grad(true);
        if (Tape<S>* tape = TapeScope<S>::active()) {
            std::vector<std::shared_ptr<TensorData<S>>> ins;
            for (const auto& x : xs) ins.push_back(x.ptr());
            auto od = out.ptr();
            auto ins_copy = ins;
            tape->record(std::move(ins), od, [ins = std::move(ins_copy), od] {
                const auto& g = od->grad;
                for (size_t i = 0; i < ins.size(); ++i)
                    if (ins[i]->requires_grad) ensure_grad(*ins[i])[0] += g[i];
            });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S acc = S(0);
    for (size_t i = 0; i < x.numel(); ++i) acc += x[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od] {
        auto& gx = ensure_grad(*xd);
        const S g = od->grad[0];
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
    const S inv = S(1) / static_cast<S>(x.numel());
    S acc = S(0);
    for (size_t i = 0; i < x.numel(); ++i) acc += x[i];
    Tensor<S> out = Tensor<S>::scalar(acc * inv);
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, inv] {
        auto& gx = ensure_grad(*xd);
        const S g = od->grad[0] * inv;
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return out;
}

// Sum of a 2-D tensor along one axis; axis 0 collapses rows -> shape (cols),
// axis 1 collapses columns -> shape (rows).
template <typename S>
Tensor<S> sum_axis(const Tensor<S>& x, size_t axis) {
    if (x.rank() != 2) throw DimensionError("sum_axis: expected 2-D, got " + shape_str(x.shape()));
    if (axis > 1) throw ParameterError("sum_axis: axis must be 0 or 1");
    const size_t r = x.size(0), c = x.size(1);
    Tensor<S> out = Tensor<S>::zeros({axis == 0 ? c : r});
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += x[i * c + j];
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, r, c, axis] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) gx[i * c + j] += g[axis == 0 ? j : i];
    });
    return out;
}

// Maximum element as a scalar. Backward routes the entire output gradient to
// exactly one argmax element; ties break to the lowest flat index.
template <typename S>
Tensor<S> reduce_max(const Tensor<S>& x) {
    if (x.numel() == 0) throw ParameterError("reduce_max: empty tensor");
    size_t arg = 0;
    S best = x[0];
    for (size_t i = 1; i < x.numel(); ++i)
        if (x[i] > best) {
            best = x[i];
            arg = i;
        }
    Tensor<S> out = Tensor<S>::scalar(best);
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, arg] {
        auto& gx = ensure_grad(*xd);
        gx[arg] += od->grad[0];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

// Row-wise softmax of exp(x/temperature), max-subtracted for stability.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x, S temperature) {
    if (!(temperature > S(0))) throw ParameterError("softmax_rows: temperature must be positive");
    if (x.rank() != 2) throw DimensionError("softmax_rows: expected 2-D, got " + shape_str(x.shape()));
    const size_t r = x.size(0), c = x.size(1);
    Tensor<S> out = Tensor<S>::zeros({r, c});
    for (size_t i = 0; i < r; ++i) {
        S mx = x[i * c];
        for (size_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
        S denom = S(0);
        for (size_t j = 0; j < c; ++j) {
            const S e = std::exp((x[i * c + j] - mx) / temperature);
            out[i * c + j] = e;
            denom += e;
        }
        for (size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od, r, c, temperature] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        const auto& y = od->data;
        for (size_t i = 0; i < r; ++i) {
            S dot = S(0);
            for (size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
            for (size_t j = 0; j < c; ++j)
                gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot) / temperature;
        }
    });
    return out;
}

// Exact GELU, x * Phi(x).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        out[i] = static_cast<S>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
    }
    auto xd = x.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, od] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        for (size_t i = 0; i < g.size(); ++i) {
            const double v = static_cast<double>(xd->data[i]);
            const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += g[i] * static_cast<S>(phi + v * pdf);
        }
    });
    return out;
}

// Layer normalization over the last axis of a 2-D tensor with learned gain
// and bias of shape (cols).
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5)) {
    if (x.rank() != 2) throw DimensionError("layer_norm: expected 2-D, got " + shape_str(x.shape()));
    const size_t r = x.size(0), c = x.size(1);
    if (gain.numel() != c || bias.numel() != c)
        throw DimensionError("layer_norm: gain/bias must have " + std::to_string(c) + " elements");
    Tensor<S> out = Tensor<S>::zeros({r, c});
    std::vector<S> inv_std(r), mu(r);
    for (size_t i = 0; i < r; ++i) {
        S m = S(0);
        for (size_t j = 0; j < c; ++j) m += x[i * c + j];
        m /= static_cast<S>(c);
        S var = S(0);
        for (size_t j = 0; j < c; ++j) {
            const S d = x[i * c + j] - m;
            var += d * d;
        }
        var /= static_cast<S>(c);
        const S is = S(1) / std::sqrt(var + eps);
        mu[i] = m;
        inv_std[i] = is;
        for (size_t j = 0; j < c; ++j)
            out[i * c + j] = (x[i * c + j] - m) * is * gain[j] + bias[j];
    }
    auto xd = x.ptr(), gd = gain.ptr(), bd = bias.ptr(), od = out.ptr();
    detail::record<S>({&x, &gain, &bias}, out,
                      [xd, gd, bd, od, r, c, mu = std::move(mu), inv_std = std::move(inv_std)] {
        const auto& g = od->grad;
        for (size_t i = 0; i < r; ++i) {
            const S is = inv_std[i];
            // xhat_j = (x_j - mu) * inv_std
            S sum_gy = S(0), sum_gy_xhat = S(0);
            for (size_t j = 0; j < c; ++j) {
                const S xhat = (xd->data[i * c + j] - mu[i]) * is;
                const S gy = g[i * c + j] * gd->data[j];
                sum_gy += gy;
                sum_gy_xhat += gy * xhat;
            }
            if (xd->requires_grad) {
                auto& gx = ensure_grad(*xd);
                const S invc = S(1) / static_cast<S>(c);
                for (size_t j = 0; j < c; ++j) {
                    const S xhat = (xd->data[i * c + j] - mu[i]) * is;
                    const S gy = g[i * c + j] * gd->data[j];
                    gx[i * c + j] += is * (gy - invc * sum_gy - invc * xhat * sum_gy_xhat);
                }
            }
            if (gd->requires_grad) {
                auto& gg = ensure_grad(*gd);
                for (size_t j = 0; j < c; ++j) {
                    const S xhat = (xd->data[i * c + j] - mu[i]) * is;
                    gg[j] += g[i * c + j] * xhat;
                }
            }
            if (bd->requires_grad) {
                auto& gb = ensure_grad(*bd);
                for (size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
            }
        }
    });
    return out;
}

// Rows of `table` selected by integer ids. Gradients scatter-add into the
// table; ids are not differentiable.
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D");
    const size_t v = table.size(0), d = table.size(1);
    for (int id : ids)
        if (id < 0 || static_cast<size_t>(id) >= v)
            throw ParameterError("embedding: id " + std::to_string(id) + " out of range [0, " +
                                 std::to_string(v) + ")");
    Tensor<S> out = Tensor<S>::zeros({ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] = table[static_cast<size_t>(ids[i]) * d + j];
    auto td = table.ptr(), od = out.ptr();
    detail::record<S>({&table}, out, [td, od, ids, d] {
        auto& gt = ensure_grad(*td);
        const auto& g = od->grad;
        for (size_t i = 0; i < ids.size(); ++i)
            for (size_t j = 0; j < d; ++j) gt[static_cast<size_t>(ids[i]) * d + j] += g[i * d + j];
    });
    return out;
}

// 2-D convolution of x with a fixed (non-learned) kernel under wrap (circular)
// padding. Differentiates with respect to x only; a kernel that sums to 1
// preserves the total mass of x exactly up to accumulation order.
template <typename S>
Tensor<S> conv2d_wrap(const Tensor<S>& x, const Tensor<S>& kernel) {
    if (x.rank() != 2) throw DimensionError("conv2d_wrap: input must be 2-D, got " + shape_str(x.shape()));
    if (kernel.rank() != 2 || kernel.size(0) != kernel.size(1))
        throw DimensionError("conv2d_wrap: kernel must be square 2-D");
    if (kernel.requires_grad())
        throw ParameterError("conv2d_wrap: kernel is fixed and must not require gradients");
    const size_t h = x.size(0), w = x.size(1), k = kernel.size(0);
    if (k % 2 == 0) throw ParameterError("conv2d_wrap: kernel size must be odd");
    const int half = static_cast<int>(k / 2);
    Tensor<S> out = Tensor<S>::zeros({h, w});
    auto wrap = [](int i, int n) {
        int m = i % n;
        return static_cast<size_t>(m < 0 ? m + n : m);
    };
    for (size_t i = 0; i < h; ++i)
        for (size_t j = 0; j < w; ++j) {
            S acc = S(0);
            for (size_t u = 0; u < k; ++u)
                for (size_t v = 0; v < k; ++v) {
                    const size_t si = wrap(static_cast<int>(i) + static_cast<int>(u) - half,
                                           static_cast<int>(h));
                    const size_t sj = wrap(static_cast<int>(j) + static_cast<int>(v) - half,
                                           static_cast<int>(w));
                    acc += kernel[u * k + v] * x[si * w + sj];
                }
            out[i * w + j] = acc;
        }
    auto xd = x.ptr(), kd = kernel.ptr(), od = out.ptr();
    detail::record<S>({&x}, out, [xd, kd, od, h, w, k, half, wrap] {
        auto& gx = ensure_grad(*xd);
        const auto& g = od->grad;
        for (size_t i = 0; i < h; ++i)
            for (size_t j = 0; j < w; ++j) {
                const S gv = g[i * w + j];
                for (size_t u = 0; u < k; ++u)
                    for (size_t v = 0; v < k; ++v) {
                        const size_t si = wrap(static_cast<int>(i) + static_cast<int>(u) - half,
                                               static_cast<int>(h));
                        const size_t sj = wrap(static_cast<int>(j) + static_cast<int>(v) - half,
                                               static_cast<int>(w));
                        gx[si * w + sj] += kd->data[u * k + v] * gv;
                    }
            }
    });
    return out;
}

// Normalized Gaussian kernel; kernel_size must be odd.
template <typename S>
Tensor<S> gaussian_kernel(S sigma, size_t kernel_size) {
    if (kernel_size % 2 == 0) throw ParameterError("gaussian_kernel: kernel size must be odd");
    if (!(sigma > S(0))) throw ParameterError("gaussian_kernel: sigma must be positive");
    const int half = static_cast<int>(kernel_size / 2);
    Tensor<S> k = Tensor<S>::zeros({kernel_size, kernel_size});
    S total = S(0);
    for (int u = -half; u <= half; ++u)
        for (int v = -half; v <= half; ++v) {
            const S val = static_cast<S>(
                std::exp(-(static_cast<double>(u * u + v * v)) / (2.0 * static_cast<double>(sigma) *
                                                                  static_cast<double>(sigma))));
            k[static_cast<size_t>(u + half) * kernel_size + static_cast<size_t>(v + half)] = val;
            total += val;
        }
    for (size_t i = 0; i < k.numel(); ++i) k[i] /= total;
    return k;
}

// Throws NumericError naming the first non-finite element, if any.
template <typename S>
void check_finite(const Tensor<S>& x, const char* what) {
    for (size_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(static_cast<double>(x[i])))
            throw NumericError(std::string(what) + ": non-finite value at flat index " +
                               std::to_string(i));
}

}  // namespace attnguide
