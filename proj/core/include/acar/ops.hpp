// Forward operators and their reverse-mode gradients. Convolutions go
// through im2col + a GEMM kept in accumulate-row form so the compiler can
// vectorize the inner loop without reassociation flags.

#pragma once

#include <cmath>
#include <cstring>

#include "acar/tensor.hpp"

namespace acar {

namespace detail {

// C[m,n] += A[m,k] * B[k,n], all row-major dense.
template <typename T>
void gemm_accum(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
std::vector<T> transpose2d(const T* a, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
    return out;
}

struct Conv2dDims {
    std::size_t batch, cin, h, w, cout, kh, kw, oh, ow;
    std::size_t stride, pad;
    bool batched_input;
};

inline Conv2dDims conv2d_dims(const Shape& in, const Shape& wt, const Shape& bias, std::size_t stride,
                              std::size_t pad) {
    if (wt.size() != 4) throw std::invalid_argument("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(wt));
    if (in.size() != 3 && in.size() != 4)
        throw std::invalid_argument("conv2d: input must be [Cin,H,W] or [B,Cin,H,W], got " + shape_str(in));
    Conv2dDims d{};
    d.batched_input = in.size() == 4;
    d.batch = d.batched_input ? in[0] : 1;
    d.cin = in[d.batched_input ? 1 : 0];
    d.h = in[d.batched_input ? 2 : 1];
    d.w = in[d.batched_input ? 3 : 2];
    d.cout = wt[0];
    d.kh = wt[2];
    d.kw = wt[3];
    d.stride = stride;
    d.pad = pad;
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (d.kh % 2 == 0 || d.kw % 2 == 0)
        throw std::invalid_argument("conv2d: kernel axes must be odd, got [" + std::to_string(d.kh) + "," +
                                    std::to_string(d.kw) + "]");
    if (wt[1] != d.cin)
        throw std::invalid_argument("conv2d: input channel axis " + std::to_string(d.cin) +
                                    " != weight Cin axis " + std::to_string(wt[1]));
    if (bias.size() != 1 || bias[0] != d.cout)
        throw std::invalid_argument("conv2d: bias must be [Cout]=" + std::to_string(d.cout) + ", got " +
                                    shape_str(bias));
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw)
        throw std::invalid_argument("conv2d: spatial axes " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                                    " too small for kernel with pad " + std::to_string(pad));
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// col is [Cin*kh*kw, oh*ow]; zero padding handled by leaving zeros.
template <typename T>
void im2col(const T* in, const Conv2dDims& d, T* col) {
    const std::size_t hw = d.oh * d.ow;
    std::fill(col, col + d.cin * d.kh * d.kw * hw, T(0));
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        for (std::size_t r = 0; r < d.kh; ++r) {
            for (std::size_t s = 0; s < d.kw; ++s) {
                T* crow = col + ((ci * d.kh + r) * d.kw + s) * hw;
                for (std::size_t oh = 0; oh < d.oh; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * d.stride + r) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    const T* irow = in + (ci * d.h + ih) * d.w;
                    T* corow = crow + oh * d.ow;
                    for (std::size_t ow = 0; ow < d.ow; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * d.stride + s) -
                                                  static_cast<std::ptrdiff_t>(d.pad);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        corow[ow] = irow[iw];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accum(const T* col, const Conv2dDims& d, T* din) {
    const std::size_t hw = d.oh * d.ow;
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        for (std::size_t r = 0; r < d.kh; ++r) {
            for (std::size_t s = 0; s < d.kw; ++s) {
                const T* crow = col + ((ci * d.kh + r) * d.kw + s) * hw;
                for (std::size_t oh = 0; oh < d.oh; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * d.stride + r) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    T* irow = din + (ci * d.h + ih) * d.w;
                    const T* corow = crow + oh * d.ow;
                    for (std::size_t ow = 0; ow < d.ow; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * d.stride + s) -
                                                  static_cast<std::ptrdiff_t>(d.pad);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        irow[iw] += corow[ow];
                    }
                }
            }
        }
    }
}

template <typename T>
void axis_extents(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& n, std::size_t& inner) {
    if (axis >= shape.size())
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    n = shape[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

}  // namespace detail

// --- convolution / affine ----------------------------------------------------

template <typename T>
TensorPtrT<T> conv2d(const TensorPtrT<T>& input, const TensorPtrT<T>& weight, const TensorPtrT<T>& bias,
                     std::size_t stride = 1, std::size_t pad = 0) {
    const auto d = detail::conv2d_dims(input->shape, weight->shape, bias->shape, stride, pad);
    const std::size_t hw = d.oh * d.ow;
    const std::size_t kdim = d.cin * d.kh * d.kw;
    const std::size_t in_sz = d.cin * d.h * d.w;

    std::vector<T> out(d.batch * d.cout * hw);
    std::vector<T> col(kdim * hw);
    for (std::size_t b = 0; b < d.batch; ++b) {
        detail::im2col(input->data.data() + b * in_sz, d, col.data());
        T* ob = out.data() + b * d.cout * hw;
        for (std::size_t co = 0; co < d.cout; ++co) std::fill(ob + co * hw, ob + (co + 1) * hw, bias->data[co]);
        detail::gemm_accum(weight->data.data(), col.data(), ob, d.cout, kdim, hw);
    }

    Shape oshape = d.batched_input ? Shape{d.batch, d.cout, d.oh, d.ow} : Shape{d.cout, d.oh, d.ow};
    TensorT<T>*in_raw = input.get(), *w_raw = weight.get(), *b_raw = bias.get();
    return make_node<T>(
        std::move(oshape), std::move(out), {input, weight, bias}, [=](TensorT<T>& self) {
            const std::size_t hw2 = d.oh * d.ow;
            std::vector<T> col2(kdim * hw2);
            std::vector<T> wt = detail::transpose2d(w_raw->data.data(), d.cout, kdim);
            const bool need_din = in_raw->requires_grad;
            const bool need_dw = w_raw->requires_grad;
            const bool need_db = b_raw->requires_grad;
            if (need_din) in_raw->ensure_grad();
            if (need_dw) w_raw->ensure_grad();
            if (need_db) b_raw->ensure_grad();
            std::vector<T> dcol(kdim * hw2);
            for (std::size_t b = 0; b < d.batch; ++b) {
                const T* go = self.grad.data() + b * d.cout * hw2;
                if (need_db) {
                    for (std::size_t co = 0; co < d.cout; ++co) {
                        T acc = T(0);
                        for (std::size_t j = 0; j < hw2; ++j) acc += go[co * hw2 + j];
                        b_raw->grad[co] += acc;
                    }
                }
                if (need_dw) {
                    detail::im2col(in_raw->data.data() + b * in_sz, d, col2.data());
                    std::vector<T> colT = detail::transpose2d(col2.data(), kdim, hw2);
                    detail::gemm_accum(go, colT.data(), w_raw->grad.data(), d.cout, hw2, kdim);
                }
                if (need_din) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_accum(wt.data(), go, dcol.data(), kdim, d.cout, hw2);
                    detail::col2im_accum(dcol.data(), d, in_raw->grad.data() + b * in_sz);
                }
            }
        });
}

template <typename T>
TensorPtrT<T> affine_map(const TensorPtrT<T>& input, const TensorPtrT<T>& weight, const TensorPtrT<T>& bias) {
    if (weight->ndim() != 2) throw std::invalid_argument("affine_map: weight must be [Dout,Din]");
    const std::size_t dout = weight->shape[0], din = weight->shape[1];
    if (input->ndim() < 1 || input->shape.back() != din)
        throw std::invalid_argument("affine_map: last input axis of " + shape_str(input->shape) + " != Din " +
                                    std::to_string(din));
    if (bias->ndim() != 1 || bias->shape[0] != dout)
        throw std::invalid_argument("affine_map: bias axis must be Dout " + std::to_string(dout));
    const std::size_t rows = input->numel() / din;

    std::vector<T> wt = detail::transpose2d(weight->data.data(), dout, din);
    std::vector<T> out(rows * dout);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < dout; ++o) out[r * dout + o] = bias->data[o];
    detail::gemm_accum(input->data.data(), wt.data(), out.data(), rows, din, dout);

    Shape oshape = input->shape;
    oshape.back() = dout;
    TensorT<T>*in_raw = input.get(), *w_raw = weight.get(), *b_raw = bias.get();
    return make_node<T>(std::move(oshape), std::move(out), {input, weight, bias}, [=](TensorT<T>& self) {
        const T* g = self.grad.data();
        if (b_raw->requires_grad) {
            b_raw->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < dout; ++o) b_raw->grad[o] += g[r * dout + o];
        }
        if (w_raw->requires_grad) {
            w_raw->ensure_grad();
            std::vector<T> gT = detail::transpose2d(g, rows, dout);
            detail::gemm_accum(gT.data(), in_raw->data.data(), w_raw->grad.data(), dout, rows, din);
        }
        if (in_raw->requires_grad) {
            in_raw->ensure_grad();
            detail::gemm_accum(g, w_raw->data.data(), in_raw->grad.data(), rows, dout, din);
        }
    });
}

// --- pointwise and normalization ---------------------------------------------

template <typename T>
TensorPtrT<T> softmax_axis(const TensorPtrT<T>& input, std::size_t axis) {
    std::size_t outer, n, inner;
    detail::axis_extents<T>(input->shape, axis, outer, n, inner);
    std::vector<T> out(input->numel());
    const T* x = input->data.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in_ = 0; in_ < inner; ++in_) {
            const std::size_t base = o * n * inner + in_;
            T mx = x[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
            T sum = T(0);
            for (std::size_t i = 0; i < n; ++i) {
                const T e = std::exp(x[base + i * inner] - mx);
                out[base + i * inner] = e;
                sum += e;
            }
            const T norm = T(1) / sum;
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] *= norm;
        }
    }
    TensorT<T>* in_raw = input.get();
    return make_node<T>(input->shape, std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        const T* y = self.data.data();
        const T* g = self.grad.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in_ = 0; in_ < inner; ++in_) {
                const std::size_t base = o * n * inner + in_;
                T dot = T(0);
                for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t k = base + i * inner;
                    in_raw->grad[k] += y[k] * (g[k] - dot);
                }
            }
        }
    });
}

template <typename T>
TensorPtrT<T> layer_norm(const TensorPtrT<T>& input, std::size_t axis, const TensorPtrT<T>& gain,
                         const TensorPtrT<T>& shift, T eps = T(1e-5)) {
    std::size_t outer, n, inner;
    detail::axis_extents<T>(input->shape, axis, outer, n, inner);
    if (gain->numel() != n || shift->numel() != n)
        throw std::invalid_argument("layer_norm: gain/shift must have extent " + std::to_string(n));

    // xhat is kept for the backward pass.
    auto xhat = std::make_shared<std::vector<T>>(input->numel());
    auto inv_sd = std::make_shared<std::vector<T>>(outer * inner);
    std::vector<T> out(input->numel());
    const T* x = input->data.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in_ = 0; in_ < inner; ++in_) {
            const std::size_t base = o * n * inner + in_;
            T mean = T(0);
            for (std::size_t i = 0; i < n; ++i) mean += x[base + i * inner];
            mean /= static_cast<T>(n);
            T var = T(0);
            for (std::size_t i = 0; i < n; ++i) {
                const T dfl = x[base + i * inner] - mean;
                var += dfl * dfl;
            }
            var /= static_cast<T>(n);
            const T isd = T(1) / std::sqrt(var + eps);
            (*inv_sd)[o * inner + in_] = isd;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = base + i * inner;
                const T xh = (x[k] - mean) * isd;
                (*xhat)[k] = xh;
                out[k] = gain->data[i] * xh + shift->data[i];
            }
        }
    }
    TensorT<T>*in_raw = input.get(), *g_raw = gain.get(), *s_raw = shift.get();
    return make_node<T>(input->shape, std::move(out), {input, gain, shift}, [=](TensorT<T>& self) {
        const T* g = self.grad.data();
        if (g_raw->requires_grad) g_raw->ensure_grad();
        if (s_raw->requires_grad) s_raw->ensure_grad();
        if (in_raw->requires_grad) in_raw->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in_ = 0; in_ < inner; ++in_) {
                const std::size_t base = o * n * inner + in_;
                const T isd = (*inv_sd)[o * inner + in_];
                T m1 = T(0), m2 = T(0);
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t k = base + i * inner;
                    const T gy = g[k] * g_raw->data[i];
                    m1 += gy;
                    m2 += gy * (*xhat)[k];
                }
                m1 /= static_cast<T>(n);
                m2 /= static_cast<T>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t k = base + i * inner;
                    if (g_raw->requires_grad) g_raw->grad[i] += g[k] * (*xhat)[k];
                    if (s_raw->requires_grad) s_raw->grad[i] += g[k];
                    if (in_raw->requires_grad) {
                        const T gy = g[k] * g_raw->data[i];
                        in_raw->grad[k] += (gy - m1 - (*xhat)[k] * m2) * isd;
                    }
                }
            }
        }
    });
}

template <typename T>
TensorPtrT<T> relu(const TensorPtrT<T>& input) {
    std::vector<T> out(input->numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input->data[i] > T(0) ? input->data[i] : T(0);
    TensorT<T>* in_raw = input.get();
    return make_node<T>(input->shape, std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (in_raw->data[i] > T(0)) in_raw->grad[i] += self.grad[i];
    });
}

template <typename T>
TensorPtrT<T> sigmoid(const TensorPtrT<T>& input) {
    std::vector<T> out(input->numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = input->data[i];
        out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    }
    TensorT<T>* in_raw = input.get();
    return make_node<T>(input->shape, std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T y = self.data[i];
            in_raw->grad[i] += self.grad[i] * y * (T(1) - y);
        }
    });
}

// Inverted dropout; a fixed seed makes the mask replayable. Identity in
// evaluation mode or at p == 0.
template <typename T>
TensorPtrT<T> dropout(const TensorPtrT<T>& input, double p, bool training, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return input;
    auto keep = std::make_shared<std::vector<char>>(input->numel());
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution drop(p);
    const T inv_keep = T(1) / static_cast<T>(1.0 - p);
    std::vector<T> out(input->numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool k = !drop(rng);
        (*keep)[i] = k;
        out[i] = k ? input->data[i] * inv_keep : T(0);
    }
    TensorT<T>* in_raw = input.get();
    return make_node<T>(input->shape, std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if ((*keep)[i]) in_raw->grad[i] += self.grad[i] * inv_keep;
    });
}

// --- pooling -----------------------------------------------------------------

// Max pool over the last two axes; non-divisible extents floor-truncate.
template <typename T>
TensorPtrT<T> max_pool2d(const TensorPtrT<T>& input, std::size_t k, std::size_t stride) {
    if (input->ndim() < 2) throw std::invalid_argument("max_pool2d: need at least 2 axes");
    if (k < 1 || stride < 1) throw std::invalid_argument("max_pool2d: kernel and stride must be >= 1");
    const std::size_t h = input->shape[input->ndim() - 2], w = input->shape[input->ndim() - 1];
    if (h < k || w < k)
        throw std::invalid_argument("max_pool2d: spatial axes " + std::to_string(h) + "x" + std::to_string(w) +
                                    " too small for kernel " + std::to_string(k));
    const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    const std::size_t lead = input->numel() / (h * w);

    auto argmax = std::make_shared<std::vector<std::size_t>>(lead * oh * ow);
    std::vector<T> out(lead * oh * ow);
    const T* x = input->data.data();
    for (std::size_t l = 0; l < lead; ++l) {
        const T* plane = x + l * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = (i * stride) * w + (j * stride);
                T bv = plane[best];
                for (std::size_t r = 0; r < k; ++r) {
                    for (std::size_t s = 0; s < k; ++s) {
                        const std::size_t idx = (i * stride + r) * w + (j * stride + s);
                        if (plane[idx] > bv) {
                            bv = plane[idx];
                            best = idx;
                        }
                    }
                }
                const std::size_t o = (l * oh + i) * ow + j;
                out[o] = bv;
                (*argmax)[o] = l * h * w + best;
            }
        }
    }
    Shape oshape = input->shape;
    oshape[oshape.size() - 2] = oh;
    oshape[oshape.size() - 1] = ow;
    TensorT<T>* in_raw = input.get();
    return make_node<T>(std::move(oshape), std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) in_raw->grad[(*argmax)[i]] += self.grad[i];
    });
}

// Mean over the last two axes, removing them. [.., H, W] -> [..].
template <typename T>
TensorPtrT<T> global_avg_spatial(const TensorPtrT<T>& input) {
    if (input->ndim() < 3) throw std::invalid_argument("global_avg_spatial: need at least 3 axes");
    const std::size_t h = input->shape[input->ndim() - 2], w = input->shape[input->ndim() - 1];
    const std::size_t lead = input->numel() / (h * w);
    std::vector<T> out(lead);
    const T inv = T(1) / static_cast<T>(h * w);
    for (std::size_t l = 0; l < lead; ++l) {
        T acc = T(0);
        const T* plane = input->data.data() + l * h * w;
        for (std::size_t i = 0; i < h * w; ++i) acc += plane[i];
        out[l] = acc * inv;
    }
    Shape oshape(input->shape.begin(), input->shape.end() - 2);
    TensorT<T>* in_raw = input.get();
    return make_node<T>(std::move(oshape), std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t l = 0; l < self.grad.size(); ++l) {
            const T gv = self.grad[l] * inv;
            T* plane = in_raw->grad.data() + l * h * w;
            for (std::size_t i = 0; i < h * w; ++i) plane[i] += gv;
        }
    });
}

// Per-channel max over the last two axes. [.., H, W] -> [..].
template <typename T>
TensorPtrT<T> spatial_max(const TensorPtrT<T>& input) {
    if (input->ndim() < 3) throw std::invalid_argument("spatial_max: need at least 3 axes");
    const std::size_t h = input->shape[input->ndim() - 2], w = input->shape[input->ndim() - 1];
    const std::size_t lead = input->numel() / (h * w);
    auto argmax = std::make_shared<std::vector<std::size_t>>(lead);
    std::vector<T> out(lead);
    for (std::size_t l = 0; l < lead; ++l) {
        const T* plane = input->data.data() + l * h * w;
        std::size_t best = 0;
        for (std::size_t i = 1; i < h * w; ++i)
            if (plane[i] > plane[best]) best = i;
        out[l] = plane[best];
        (*argmax)[l] = l * h * w + best;
    }
    Shape oshape(input->shape.begin(), input->shape.end() - 2);
    TensorT<T>* in_raw = input.get();
    return make_node<T>(std::move(oshape), std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t l = 0; l < self.grad.size(); ++l) in_raw->grad[(*argmax)[l]] += self.grad[l];
    });
}

// Mean over the time axis of [C,T,H,W] -> [C,H,W].
template <typename T>
TensorPtrT<T> temporal_avg(const TensorPtrT<T>& input) {
    if (input->ndim() != 4) throw std::invalid_argument("temporal_avg: input must be [C,T,H,W], got " +
                                                        shape_str(input->shape));
    const std::size_t c = input->shape[0], t = input->shape[1], hw = input->shape[2] * input->shape[3];
    std::vector<T> out(c * hw, T(0));
    const T inv = T(1) / static_cast<T>(t);
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ti = 0; ti < t; ++ti) {
            const T* src = input->data.data() + (ci * t + ti) * hw;
            T* dst = out.data() + ci * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
        T* dst = out.data() + ci * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] *= inv;
    }
    Shape oshape{c, input->shape[2], input->shape[3]};
    TensorT<T>* in_raw = input.get();
    return make_node<T>(std::move(oshape), std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t ci = 0; ci < c; ++ci) {
            const T* g = self.grad.data() + ci * hw;
            for (std::size_t ti = 0; ti < t; ++ti) {
                T* dst = in_raw->grad.data() + (ci * t + ti) * hw;
                for (std::size_t i = 0; i < hw; ++i) dst[i] += g[i] * inv;
            }
        }
    });
}

// --- layout ------------------------------------------------------------------

// Swap the first two axes; the remaining axes stay contiguous.
template <typename T>
TensorPtrT<T> transpose01(const TensorPtrT<T>& input) {
    if (input->ndim() < 2) throw std::invalid_argument("transpose01: need at least 2 axes");
    const std::size_t a = input->shape[0], b = input->shape[1];
    const std::size_t rest = input->numel() / (a * b);
    std::vector<T> out(input->numel());
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
            std::memcpy(out.data() + (j * a + i) * rest, input->data.data() + (i * b + j) * rest, rest * sizeof(T));
    Shape oshape = input->shape;
    std::swap(oshape[0], oshape[1]);
    TensorT<T>* in_raw = input.get();
    return make_node<T>(std::move(oshape), std::move(out), {input}, [=](TensorT<T>& self) {
        in_raw->ensure_grad();
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t i = 0; i < a; ++i) {
                const T* src = self.grad.data() + (j * a + i) * rest;
                T* dst = in_raw->grad.data() + (i * b + j) * rest;
                for (std::size_t r = 0; r < rest; ++r) dst[r] += src[r];
            }
    });
}

// Concatenate along axis 0; null entries are skipped (empty operand).
template <typename T>
TensorPtrT<T> concat_axis0(const std::vector<TensorPtrT<T>>& parts) {
    std::vector<TensorPtrT<T>> live;
    for (const auto& p : parts)
        if (p) live.push_back(p);
    if (live.empty()) throw std::invalid_argument("concat_axis0: no operands");
    const Shape& first = live[0]->shape;
    std::size_t total0 = 0;
    for (const auto& p : live) {
        if (p->ndim() != first.size() ||
            !std::equal(p->shape.begin() + 1, p->shape.end(), first.begin() + 1))
            throw std::invalid_argument("concat_axis0: trailing axes of " + shape_str(p->shape) +
                                        " do not match " + shape_str(first));
        total0 += p->shape[0];
    }
    Shape oshape = first;
    oshape[0] = total0;
    std::vector<T> out;
    out.reserve(shape_numel(oshape));
    for (const auto& p : live) out.insert(out.end(), p->data.begin(), p->data.end());

    std::vector<TensorT<T>*> raws;
    for (const auto& p : live) raws.push_back(p.get());
    return make_node<T>(std::move(oshape), std::move(out), live, [raws](TensorT<T>& self) {
        std::size_t off = 0;
        for (TensorT<T>* p : raws) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->numel(); ++i) p->grad[i] += self.grad[off + i];
            }
            off += p->numel();
        }
    });
}

template <typename T>
TensorPtrT<T> concat_channels(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    return concat_axis0<T>({a, b});
}

// Row-wise concatenation of [N,Da] and [N,Db] -> [N,Da+Db].
template <typename T>
TensorPtrT<T> concat_cols(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->shape[0] != b->shape[0])
        throw std::invalid_argument("concat_cols: need [N,Da],[N,Db] with equal N, got " + shape_str(a->shape) +
                                    " and " + shape_str(b->shape));
    const std::size_t n = a->shape[0], da = a->shape[1], db = b->shape[1];
    std::vector<T> out(n * (da + db));
    for (std::size_t r = 0; r < n; ++r) {
        std::memcpy(out.data() + r * (da + db), a->data.data() + r * da, da * sizeof(T));
        std::memcpy(out.data() + r * (da + db) + da, b->data.data() + r * db, db * sizeof(T));
    }
    TensorT<T>*a_raw = a.get(), *b_raw = b.get();
    return make_node<T>(Shape{n, da + db}, std::move(out), {a, b}, [=](TensorT<T>& self) {
        for (std::size_t r = 0; r < n; ++r) {
            const T* g = self.grad.data() + r * (da + db);
            if (a_raw->requires_grad) {
                a_raw->ensure_grad();
                for (std::size_t i = 0; i < da; ++i) a_raw->grad[r * da + i] += g[i];
            }
            if (b_raw->requires_grad) {
                b_raw->ensure_grad();
                for (std::size_t i = 0; i < db; ++i) b_raw->grad[r * db + i] += g[da + i];
            }
        }
    });
}

// Stack equally-shaped tensors into a new leading axis.
template <typename T>
TensorPtrT<T> stack0(const std::vector<TensorPtrT<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack0: no operands");
    const Shape& s = parts[0]->shape;
    for (const auto& p : parts)
        if (p->shape != s)
            throw std::invalid_argument("stack0: shape " + shape_str(p->shape) + " does not match " + shape_str(s));
    Shape oshape;
    oshape.push_back(parts.size());
    oshape.insert(oshape.end(), s.begin(), s.end());
    std::vector<T> out;
    out.reserve(shape_numel(oshape));
    for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
    std::vector<TensorT<T>*> raws;
    for (const auto& p : parts) raws.push_back(p.get());
    return make_node<T>(std::move(oshape), std::move(out), parts, [raws](TensorT<T>& self) {
        std::size_t off = 0;
        for (TensorT<T>* p : raws) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->numel(); ++i) p->grad[i] += self.grad[off + i];
            }
            off += p->numel();
        }
    });
}

// Broadcast a channel vector across an HxW grid: [C] -> [C,H,W].
template <typename T>
TensorPtrT<T> tile_spatial(const TensorPtrT<T>& vec, std::size_t h, std::size_t w) {
    if (vec->ndim() != 1) throw std::invalid_argument("tile_spatial: input must be [C]");
    const std::size_t c = vec->shape[0];
    std::vector<T> out(c * h * w);
    for (std::size_t ci = 0; ci < c; ++ci) std::fill(out.begin() + ci * h * w, out.begin() + (ci + 1) * h * w, vec->data[ci]);
    TensorT<T>* v_raw = vec.get();
    return make_node<T>(Shape{c, h, w}, std::move(out), {vec}, [=](TensorT<T>& self) {
        v_raw->ensure_grad();
        for (std::size_t ci = 0; ci < c; ++ci) {
            T acc = T(0);
            const T* g = self.grad.data() + ci * h * w;
            for (std::size_t i = 0; i < h * w; ++i) acc += g[i];
            v_raw->grad[ci] += acc;
        }
    });
}

// --- location-wise attention kernels -----------------------------------------

// scores[i,j,x,y] = scale * <Q[i,:,x,y], K[j,:,x,y]>
template <typename T>
TensorPtrT<T> location_scores(const TensorPtrT<T>& q, const TensorPtrT<T>& k, T scale) {
    if (q->ndim() != 4 || k->ndim() != 4 || q->shape[1] != k->shape[1] || q->shape[2] != k->shape[2] ||
        q->shape[3] != k->shape[3])
        throw std::invalid_argument("location_scores: shapes " + shape_str(q->shape) + " and " + shape_str(k->shape) +
                                    " must agree on [d,H,W]");
    const std::size_t n = q->shape[0], m = k->shape[0], d = q->shape[1], hw = q->shape[2] * q->shape[3];
    std::vector<T> out(n * m * hw, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            T* srow = out.data() + (i * m + j) * hw;
            for (std::size_t c = 0; c < d; ++c) {
                const T* qr = q->data.data() + (i * d + c) * hw;
                const T* kr = k->data.data() + (j * d + c) * hw;
                for (std::size_t p = 0; p < hw; ++p) srow[p] += qr[p] * kr[p];
            }
            for (std::size_t p = 0; p < hw; ++p) srow[p] *= scale;
        }
    TensorT<T>*q_raw = q.get(), *k_raw = k.get();
    return make_node<T>(Shape{n, m, q->shape[2], q->shape[3]}, std::move(out), {q, k}, [=](TensorT<T>& self) {
        if (q_raw->requires_grad) q_raw->ensure_grad();
        if (k_raw->requires_grad) k_raw->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const T* g = self.grad.data() + (i * m + j) * hw;
                for (std::size_t c = 0; c < d; ++c) {
                    const T* qr = q_raw->data.data() + (i * d + c) * hw;
                    const T* kr = k_raw->data.data() + (j * d + c) * hw;
                    if (q_raw->requires_grad) {
                        T* dq = q_raw->grad.data() + (i * d + c) * hw;
                        for (std::size_t p = 0; p < hw; ++p) dq[p] += scale * g[p] * kr[p];
                    }
                    if (k_raw->requires_grad) {
                        T* dk = k_raw->grad.data() + (j * d + c) * hw;
                        for (std::size_t p = 0; p < hw; ++p) dk[p] += scale * g[p] * qr[p];
                    }
                }
            }
    });
}

// out[i,c,x,y] = sum_j attn[i,j,x,y] * V[j,c,x,y]
template <typename T>
TensorPtrT<T> location_mix(const TensorPtrT<T>& attn, const TensorPtrT<T>& v) {
    if (attn->ndim() != 4 || v->ndim() != 4 || attn->shape[1] != v->shape[0] || attn->shape[2] != v->shape[2] ||
        attn->shape[3] != v->shape[3])
        throw std::invalid_argument("location_mix: attention " + shape_str(attn->shape) + " incompatible with values " +
                                    shape_str(v->shape));
    const std::size_t n = attn->shape[0], m = attn->shape[1], d = v->shape[1], hw = v->shape[2] * v->shape[3];
    std::vector<T> out(n * d * hw, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const T* arow = attn->data.data() + (i * m + j) * hw;
            for (std::size_t c = 0; c < d; ++c) {
                const T* vr = v->data.data() + (j * d + c) * hw;
                T* orow = out.data() + (i * d + c) * hw;
                for (std::size_t p = 0; p < hw; ++p) orow[p] += arow[p] * vr[p];
            }
        }
    TensorT<T>*a_raw = attn.get(), *v_raw = v.get();
    return make_node<T>(Shape{n, d, v->shape[2], v->shape[3]}, std::move(out), {attn, v}, [=](TensorT<T>& self) {
        if (a_raw->requires_grad) a_raw->ensure_grad();
        if (v_raw->requires_grad) v_raw->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const T* arow = a_raw->data.data() + (i * m + j) * hw;
                T* da = a_raw->requires_grad ? a_raw->grad.data() + (i * m + j) * hw : nullptr;
                for (std::size_t c = 0; c < d; ++c) {
                    const T* g = self.grad.data() + (i * d + c) * hw;
                    const T* vr = v_raw->data.data() + (j * d + c) * hw;
                    if (da)
                        for (std::size_t p = 0; p < hw; ++p) da[p] += g[p] * vr[p];
                    if (v_raw->requires_grad) {
                        T* dv = v_raw->grad.data() + (j * d + c) * hw;
                        for (std::size_t p = 0; p < hw; ++p) dv[p] += g[p] * arow[p];
                    }
                }
            }
    });
}

// --- elementwise arithmetic and reductions ------------------------------------

template <typename T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (a->shape != b->shape)
        throw std::invalid_argument("add: shape " + shape_str(a->shape) + " != " + shape_str(b->shape));
    std::vector<T> out(a->numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    TensorT<T>*a_raw = a.get(), *b_raw = b.get();
    return make_node<T>(a->shape, std::move(out), {a, b}, [=](TensorT<T>& self) {
        if (a_raw->requires_grad) a_raw->accumulate_grad(self.grad.data(), self.grad.size());
        if (b_raw->requires_grad) b_raw->accumulate_grad(self.grad.data(), self.grad.size());
    });
}

template <typename T>
TensorPtrT<T> mul(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (a->shape != b->shape)
        throw std::invalid_argument("mul: shape " + shape_str(a->shape) + " != " + shape_str(b->shape));
    std::vector<T> out(a->numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    TensorT<T>*a_raw = a.get(), *b_raw = b.get();
    return make_node<T>(a->shape, std::move(out), {a, b}, [=](TensorT<T>& self) {
        if (a_raw->requires_grad) {
            a_raw->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a_raw->grad[i] += self.grad[i] * b_raw->data[i];
        }
        if (b_raw->requires_grad) {
            b_raw->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b_raw->grad[i] += self.grad[i] * a_raw->data[i];
        }
    });
}

template <typename T>
TensorPtrT<T> scale_by(const TensorPtrT<T>& a, T c) {
    std::vector<T> out(a->numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * c;
    TensorT<T>* a_raw = a.get();
    return make_node<T>(a->shape, std::move(out), {a}, [=](TensorT<T>& self) {
        a_raw->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a_raw->grad[i] += self.grad[i] * c;
    });
}

template <typename T>
TensorPtrT<T> sum_all(const TensorPtrT<T>& a) {
    T acc = T(0);
    for (const T v : a->data) acc += v;
    TensorT<T>* a_raw = a.get();
    return make_node<T>(Shape{1}, std::vector<T>{acc}, {a}, [=](TensorT<T>& self) {
        a_raw->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : a_raw->grad) v += g;
    });
}

}  // namespace acar
