// Test-only reference implementations. Everything here is written as the
// most literal loop nest possible and stays independent of the library's
// production code paths; tests compare the two.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oracle {

// y[b,co,oh,ow] = bias[co] + sum_{ci,r,s} x[b,ci,oh*st-p+r,ow*st-p+s] * w[co,ci,r,s]
inline std::vector<double> conv2d_ref(const std::vector<double>& x, std::size_t batch, std::size_t cin,
                                      std::size_t h, std::size_t w, const std::vector<double>& wt,
                                      std::size_t cout, std::size_t kh, std::size_t kw,
                                      const std::vector<double>& bias, std::size_t stride, std::size_t pad,
                                      std::size_t& oh_out, std::size_t& ow_out) {
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    oh_out = oh;
    ow_out = ow;
    std::vector<double> y(batch * cout * oh * ow, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = bias[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t r = 0; r < kh; ++r)
                            for (std::size_t s = 0; s < kw; ++s) {
                                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(i * stride + r) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(j * stride + s) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(h) ||
                                    iw >= static_cast<std::ptrdiff_t>(w))
                                    continue;
                                acc += x[((b * cin + ci) * h + ih) * w + iw] * wt[((co * cin + ci) * kh + r) * kw + s];
                            }
                    y[((b * cout + co) * oh + i) * ow + j] = acc;
                }
    return y;
}

inline std::vector<double> affine_ref(const std::vector<double>& x, std::size_t rows, std::size_t din,
                                      const std::vector<double>& w, std::size_t dout,
                                      const std::vector<double>& b) {
    std::vector<double> y(rows * dout, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < dout; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < din; ++i) acc += x[r * din + i] * w[o * din + i];
            y[r * dout + o] = acc;
        }
    return y;
}

// High-precision softmax along a strided axis.
inline std::vector<double> softmax_ref(const std::vector<double>& x, std::size_t outer, std::size_t n,
                                       std::size_t inner) {
    std::vector<double> y(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in_ = 0; in_ < inner; ++in_) {
            const std::size_t base = o * n * inner + in_;
            long double mx = x[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max<long double>(mx, x[base + i * inner]);
            long double sum = 0.0L;
            for (std::size_t i = 0; i < n; ++i) sum += std::exp(static_cast<long double>(x[base + i * inner]) - mx);
            for (std::size_t i = 0; i < n; ++i)
                y[base + i * inner] =
                    static_cast<double>(std::exp(static_cast<long double>(x[base + i * inner]) - mx) / sum);
        }
    return y;
}

inline std::vector<double> maxpool_ref(const std::vector<double>& x, std::size_t lead, std::size_t h,
                                       std::size_t w, std::size_t k, std::size_t stride, std::size_t& oh_out,
                                       std::size_t& ow_out) {
    const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    oh_out = oh;
    ow_out = ow;
    std::vector<double> y(lead * oh * ow);
    for (std::size_t l = 0; l < lead; ++l)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double best = -1e300;
                for (std::size_t r = 0; r < k; ++r)
                    for (std::size_t s = 0; s < k; ++s)
                        best = std::max(best, x[l * h * w + (i * stride + r) * w + (j * stride + s)]);
                y[(l * oh + i) * ow + j] = best;
            }
    return y;
}

inline std::vector<double> temporal_avg_ref(const std::vector<double>& x, std::size_t c, std::size_t t,
                                            std::size_t hw) {
    std::vector<double> y(c * hw, 0.0);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < hw; ++i) {
            double acc = 0.0;
            for (std::size_t ti = 0; ti < t; ++ti) acc += x[(ci * t + ti) * hw + i];
            y[ci * hw + i] = acc / static_cast<double>(t);
        }
    return y;
}

// Direct bilinear RoIAlign with pixel centers at i+0.5 in normalized space.
inline std::vector<double> roi_align_ref(const std::vector<double>& feat, std::size_t c, std::size_t h,
                                         std::size_t w, double x1, double y1, double x2, double y2,
                                         std::size_t out, std::size_t ratio) {
    auto sample = [&](std::size_t ci, double gy, double gx) {
        gy = std::clamp(gy, 0.0, static_cast<double>(h - 1));
        gx = std::clamp(gx, 0.0, static_cast<double>(w - 1));
        const std::size_t y0 = std::min(static_cast<std::size_t>(gy), h - 1);
        const std::size_t x0 = std::min(static_cast<std::size_t>(gx), w - 1);
        const std::size_t y1i = std::min(y0 + 1, h - 1);
        const std::size_t x1i = std::min(x0 + 1, w - 1);
        const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
        const auto at = [&](std::size_t yy, std::size_t xx) { return feat[ci * h * w + yy * w + xx]; };
        return (1 - fy) * (1 - fx) * at(y0, x0) + (1 - fy) * fx * at(y0, x1i) + fy * (1 - fx) * at(y1i, x0) +
               fy * fx * at(y1i, x1i);
    };
    std::vector<double> y(c * out * out, 0.0);
    const double bw = (x2 - x1) / static_cast<double>(out), bh = (y2 - y1) / static_cast<double>(out);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t bi = 0; bi < out; ++bi)
            for (std::size_t bj = 0; bj < out; ++bj) {
                double acc = 0.0;
                for (std::size_t sy = 0; sy < ratio; ++sy)
                    for (std::size_t sx = 0; sx < ratio; ++sx) {
                        const double yn = y1 + (bi + (sy + 0.5) / ratio) * bh;
                        const double xn = x1 + (bj + (sx + 0.5) / ratio) * bw;
                        acc += sample(ci, yn * h - 0.5, xn * w - 0.5);
                    }
                y[(ci * out + bi) * out + bj] = acc / static_cast<double>(ratio * ratio);
            }
    return y;
}

// Brute-force location-wise attention: for every (i,x,y) build the length-M
// score vector over keys, softmax it, and mix the values.
inline void attention_ref(const std::vector<double>& q, std::size_t n, const std::vector<double>& k,
                          const std::vector<double>& v, std::size_t m, std::size_t d, std::size_t h,
                          std::size_t w, double scale, std::vector<double>& mixed_out,
                          std::vector<double>& attn_out) {
    const std::size_t hw = h * w;
    mixed_out.assign(n * d * hw, 0.0);
    attn_out.assign(n * m * hw, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t p = y * w + x;
                std::vector<double> s(m, 0.0);
                for (std::size_t j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d; ++c) acc += q[(i * d + c) * hw + p] * k[(j * d + c) * hw + p];
                    s[j] = acc * scale;
                }
                const double mx = *std::max_element(s.begin(), s.end());
                double denom = 0.0;
                for (std::size_t j = 0; j < m; ++j) denom += std::exp(s[j] - mx);
                for (std::size_t j = 0; j < m; ++j) {
                    const double a = std::exp(s[j] - mx) / denom;
                    attn_out[(i * m + j) * hw + p] = a;
                    for (std::size_t c = 0; c < d; ++c) mixed_out[(i * d + c) * hw + p] += a * v[(j * d + c) * hw + p];
                }
            }
}

// Per-location channel layer norm, population variance.
inline std::vector<double> layer_norm_ref(const std::vector<double>& x, std::size_t outer, std::size_t n,
                                          std::size_t inner, const std::vector<double>& gain,
                                          const std::vector<double>& shift, double eps) {
    std::vector<double> y(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in_ = 0; in_ < inner; ++in_) {
            const std::size_t base = o * n * inner + in_;
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += x[base + i * inner];
            mean /= n;
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = x[base + i * inner] - mean;
                var += d * d;
            }
            var /= n;
            for (std::size_t i = 0; i < n; ++i)
                y[base + i * inner] = gain[i] * (x[base + i * inner] - mean) / std::sqrt(var + eps) + shift[i];
        }
    return y;
}

// Direct-formula mixed loss in double precision.
inline double action_loss_ref(const std::vector<double>& logits, std::size_t n, std::size_t k,
                              const std::vector<std::vector<int>>& labels, const std::vector<std::size_t>& pose_ids) {
    std::vector<bool> is_pose(k, false);
    for (auto id : pose_ids) is_pose[id] = true;
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t c = 0; c < k; ++c) {
            if (is_pose[c]) continue;
            const double z = logits[a * k + c];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double y = labels[a][c];
            total += -(y * std::log(std::max(p, 1e-300)) + (1 - y) * std::log(std::max(1.0 - p, 1e-300)));
        }
        double mx = -1e300;
        for (auto id : pose_ids) mx = std::max(mx, logits[a * k + id]);
        double denom = 0.0;
        for (auto id : pose_ids) denom += std::exp(logits[a * k + id] - mx);
        for (auto id : pose_ids)
            if (labels[a][id]) total += -std::log(std::exp(logits[a * k + id] - mx) / denom);
    }
    return total / n;
}

// --- detection evaluation ------------------------------------------------------

struct RefBox {
    double x1, y1, x2, y2;
    std::string frame;  // opaque frame key
};

struct RefDet {
    RefBox box;
    double score;
};

inline double iou_ref(const RefBox& a, const RefBox& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

// Exhaustive AP: stable-sort detections by descending score, greedy match
// (best IoU among unmatched GT in the same frame, ties to the lower GT
// index), then integrate the all-point interpolated PR curve.
inline double average_precision_ref(std::vector<RefDet> dets, const std::vector<RefBox>& gts,
                                    double iou_thresh = 0.5) {
    if (gts.empty()) return -1.0;  // undefined
    std::stable_sort(dets.begin(), dets.end(), [](const RefDet& a, const RefDet& b) { return a.score > b.score; });
    std::vector<bool> matched(gts.size(), false);
    std::vector<int> tp(dets.size(), 0);
    for (std::size_t di = 0; di < dets.size(); ++di) {
        double best = -1.0;
        std::ptrdiff_t best_g = -1;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (matched[gi] || gts[gi].frame != dets[di].box.frame) continue;
            const double v = iou_ref(dets[di].box, gts[gi]);
            if (v > best) {
                best = v;
                best_g = static_cast<std::ptrdiff_t>(gi);
            }
        }
        if (best_g >= 0 && best >= iou_thresh) {
            matched[best_g] = true;
            tp[di] = 1;
        }
    }
    // all-point interpolation: area under the precision envelope
    std::vector<double> prec, rec;
    int tps = 0;
    for (std::size_t di = 0; di < dets.size(); ++di) {
        tps += tp[di];
        prec.push_back(static_cast<double>(tps) / static_cast<double>(di + 1));
        rec.push_back(static_cast<double>(tps) / static_cast<double>(gts.size()));
    }
    double ap = 0.0, prev_r = 0.0;
    for (std::size_t i = 0; i < prec.size(); ++i) {
        double env = 0.0;
        for (std::size_t j = i; j < prec.size(); ++j) env = std::max(env, prec[j]);
        ap += (rec[i] - prev_r) * env;
        prev_r = rec[i];
    }
    return ap;
}

// Scalar Nesterov recurrence: g = grad + wd*p; v = mu*v + g; p -= lr*(g + mu*v).
struct SgdScalarRef {
    double p, v = 0.0;
    void step(double grad, double lr, double mu, double wd) {
        const double g = grad + wd * p;
        v = mu * v + g;
        p -= lr * (g + mu * v);
    }
};

}  // namespace oracle
