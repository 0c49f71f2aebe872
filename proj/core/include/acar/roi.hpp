// RoIAlign over a pooled feature map plus the reduction to per-actor
// feature vectors. Boxes are normalized to [0,1] against the content
// region (pre-padding frame size), so padding never shifts geometry.

#pragma once

#include "acar/ops.hpp"

namespace acar {

struct DetectionBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // normalized [0,1]
    double score = 1.0;
    std::string video_id;
    double timestamp = 0.0;  // seconds
    bool is_ground_truth = false;
};

inline double box_area(const DetectionBox& b) {
    return std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
}

inline DetectionBox clip_box(DetectionBox b) {
    b.x1 = std::clamp(b.x1, 0.0, 1.0);
    b.y1 = std::clamp(b.y1, 0.0, 1.0);
    b.x2 = std::clamp(b.x2, 0.0, 1.0);
    b.y2 = std::clamp(b.y2, 0.0, 1.0);
    return b;
}

inline bool box_degenerate(const DetectionBox& b) { return box_area(b) < 1e-6; }

inline DetectionBox clip_and_validate(const DetectionBox& box) {
    DetectionBox b = clip_box(box);
    if (box_degenerate(b))
        throw std::invalid_argument("degenerate box (area < 1e-6) in video '" + b.video_id + "' at t=" +
                                    std::to_string(b.timestamp));
    return b;
}

// Bilinear sample with pixel centers at integer coordinates; gx/gy are
// already in grid space and get clamped to the border.
template <typename T>
T bilinear_at(const T* plane, std::size_t h, std::size_t w, T gy, T gx, T* wts = nullptr, std::size_t* idx = nullptr) {
    gy = std::clamp(gy, T(0), static_cast<T>(h - 1));
    gx = std::clamp(gx, T(0), static_cast<T>(w - 1));
    const std::size_t y0 = static_cast<std::size_t>(gy) >= h - 1 ? h - 1 : static_cast<std::size_t>(gy);
    const std::size_t x0 = static_cast<std::size_t>(gx) >= w - 1 ? w - 1 : static_cast<std::size_t>(gx);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const T fy = gy - static_cast<T>(y0);
    const T fx = gx - static_cast<T>(x0);
    const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx, w10 = fy * (T(1) - fx), w11 = fy * fx;
    if (wts) {
        wts[0] = w00; wts[1] = w01; wts[2] = w10; wts[3] = w11;
        idx[0] = y0 * w + x0; idx[1] = y0 * w + x1; idx[2] = y1 * w + x0; idx[3] = y1 * w + x1;
    }
    return w00 * plane[y0 * w + x0] + w01 * plane[y0 * w + x1] + w10 * plane[y1 * w + x0] + w11 * plane[y1 * w + x1];
}

// Each output bin averages sampling_ratio^2 bilinear samples at regularly
// spaced points inside the bin. Box coords scale by (W,H) without rounding;
// sample centers convert to grid space with the half-pixel shift.
template <typename T>
TensorPtrT<T> roi_align(const TensorPtrT<T>& feature, const DetectionBox& box, std::size_t out_h = 7,
                        std::size_t out_w = 7, std::size_t sampling_ratio = 2) {
    if (feature->ndim() != 3)
        throw std::invalid_argument("roi_align: feature must be [C,H,W], got " + shape_str(feature->shape));
    DetectionBox b = clip_box(box);
    if (box_degenerate(b))
        throw std::invalid_argument("roi_align: degenerate box in video '" + b.video_id + "' at t=" +
                                    std::to_string(b.timestamp));
    const std::size_t c = feature->shape[0], h = feature->shape[1], w = feature->shape[2];
    const std::size_t ns = sampling_ratio * sampling_ratio;
    const T bin_w = static_cast<T>((b.x2 - b.x1) / static_cast<double>(out_w));
    const T bin_h = static_cast<T>((b.y2 - b.y1) / static_cast<double>(out_h));

    // Sample positions in grid space are box-only, shared across channels.
    struct Tap {
        std::size_t idx[4];
        T wts[4];
    };
    auto taps = std::make_shared<std::vector<Tap>>(out_h * out_w * ns);
    for (std::size_t bi = 0; bi < out_h; ++bi) {
        for (std::size_t bj = 0; bj < out_w; ++bj) {
            for (std::size_t sy = 0; sy < sampling_ratio; ++sy) {
                for (std::size_t sx = 0; sx < sampling_ratio; ++sx) {
                    const T yn = static_cast<T>(b.y1) + (static_cast<T>(bi) + (static_cast<T>(sy) + T(0.5)) /
                                 static_cast<T>(sampling_ratio)) * bin_h;
                    const T xn = static_cast<T>(b.x1) + (static_cast<T>(bj) + (static_cast<T>(sx) + T(0.5)) /
                                 static_cast<T>(sampling_ratio)) * bin_w;
                    Tap& t = (*taps)[((bi * out_w + bj) * sampling_ratio + sy) * sampling_ratio + sx];
                    bilinear_at<T>(feature->data.data(), h, w, yn * static_cast<T>(h) - T(0.5),
                                   xn * static_cast<T>(w) - T(0.5), t.wts, t.idx);
                }
            }
        }
    }

    std::vector<T> out(c * out_h * out_w, T(0));
    const T inv_ns = T(1) / static_cast<T>(ns);
    for (std::size_t ci = 0; ci < c; ++ci) {
        const T* plane = feature->data.data() + ci * h * w;
        T* oplane = out.data() + ci * out_h * out_w;
        for (std::size_t bin = 0; bin < out_h * out_w; ++bin) {
            T acc = T(0);
            for (std::size_t s = 0; s < ns; ++s) {
                const Tap& t = (*taps)[bin * ns + s];
                acc += t.wts[0] * plane[t.idx[0]] + t.wts[1] * plane[t.idx[1]] + t.wts[2] * plane[t.idx[2]] +
                       t.wts[3] * plane[t.idx[3]];
            }
            oplane[bin] = acc * inv_ns;
        }
    }

    TensorT<T>* f_raw = feature.get();
    return make_node<T>(Shape{c, out_h, out_w}, std::move(out), {feature}, [=](TensorT<T>& self) {
        f_raw->ensure_grad();
        for (std::size_t ci = 0; ci < c; ++ci) {
            T* dplane = f_raw->grad.data() + ci * h * w;
            const T* g = self.grad.data() + ci * out_h * out_w;
            for (std::size_t bin = 0; bin < out_h * out_w; ++bin) {
                const T gv = g[bin] * inv_ns;
                for (std::size_t s = 0; s < ns; ++s) {
                    const Tap& t = (*taps)[bin * ns + s];
                    dplane[t.idx[0]] += gv * t.wts[0];
                    dplane[t.idx[1]] += gv * t.wts[1];
                    dplane[t.idx[2]] += gv * t.wts[2];
                    dplane[t.idx[3]] += gv * t.wts[3];
                }
            }
        }
    });
}

// Per-channel max over the RoI grid; this is the basic actor feature A_i.
template <typename T>
TensorPtrT<T> actor_feature(const TensorPtrT<T>& roi) {
    if (roi->ndim() != 3)
        throw std::invalid_argument("actor_feature: roi must be [C,h,w], got " + shape_str(roi->shape));
    return spatial_max(roi);
}

}  // namespace acar
