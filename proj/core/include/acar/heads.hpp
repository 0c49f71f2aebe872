// Classification heads and the mixed loss: per-class binary cross entropy
// on non-pose classes, softmax cross entropy over the pose block. Each
// actor carries exactly one pose label.

#pragma once

#include "acar/roi.hpp"

namespace acar {

struct ClassDef {
    std::string name;
    bool pose = false;
};

struct LabelSpec {
    std::size_t num_classes = 0;
    std::vector<std::size_t> pose_class_ids;
    std::vector<std::string> class_names;

    static LabelSpec from_classes(const std::vector<ClassDef>& defs) {
        LabelSpec s;
        s.num_classes = defs.size();
        for (std::size_t i = 0; i < defs.size(); ++i) {
            s.class_names.push_back(defs[i].name);
            if (defs[i].pose) s.pose_class_ids.push_back(i);
        }
        s.validate();
        return s;
    }

    void validate() const {
        if (num_classes == 0) throw std::invalid_argument("label spec: no classes");
        if (pose_class_ids.empty()) throw std::invalid_argument("label spec: pose class set must be non-empty");
        std::unordered_set<std::size_t> seen;
        for (std::size_t id : pose_class_ids) {
            if (id >= num_classes) throw std::invalid_argument("label spec: pose id out of range");
            if (!seen.insert(id).second) throw std::invalid_argument("label spec: duplicate pose id");
        }
    }

    std::vector<bool> pose_mask() const {
        std::vector<bool> m(num_classes, false);
        for (std::size_t id : pose_class_ids) m[id] = true;
        return m;
    }
};

struct ActorTarget {
    std::vector<std::uint8_t> labels;  // {0,1}^num_classes, exactly one pose positive
    DetectionBox box;
};

inline void validate_target(const ActorTarget& t, const LabelSpec& spec) {
    if (t.labels.size() != spec.num_classes)
        throw std::invalid_argument("target: label vector length " + std::to_string(t.labels.size()) +
                                    " != num_classes " + std::to_string(spec.num_classes));
    std::size_t pose_pos = 0;
    for (std::size_t id : spec.pose_class_ids) pose_pos += t.labels[id] ? 1 : 0;
    if (pose_pos != 1)
        throw std::invalid_argument("target: expected exactly one positive pose label, got " +
                                    std::to_string(pose_pos));
}

template <typename T>
TensorPtrT<T> linear_head(const std::vector<TensorPtrT<T>>& actors, const TensorPtrT<T>& weight,
                          const TensorPtrT<T>& bias) {
    return affine_map(stack0(actors), weight, bias);
}

// Mean over actors of [ sum of non-pose BCE terms + pose cross entropy ],
// in log-sum-exp form throughout.
template <typename T>
TensorPtrT<T> action_loss(const TensorPtrT<T>& logits, const std::vector<ActorTarget>& targets,
                          const LabelSpec& spec) {
    if (logits->ndim() != 2 || logits->shape[1] != spec.num_classes)
        throw std::invalid_argument("action_loss: logits must be [N," + std::to_string(spec.num_classes) +
                                    "], got " + shape_str(logits->shape));
    const std::size_t n = logits->shape[0], k = spec.num_classes;
    if (targets.size() != n)
        throw std::invalid_argument("action_loss: " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(n) + " actors");
    for (const auto& t : targets) validate_target(t, spec);

    const std::vector<bool> pose = spec.pose_mask();
    const auto& pids = spec.pose_class_ids;
    const T* z = logits->data.data();

    T total = T(0);
    for (std::size_t a = 0; a < n; ++a) {
        const T* za = z + a * k;
        // non-pose: BCE(sigmoid(z), y) = softplus(z) - y*z
        for (std::size_t c = 0; c < k; ++c) {
            if (pose[c]) continue;
            const T zc = za[c];
            const T sp = std::max(zc, T(0)) + std::log1p(std::exp(-std::abs(zc)));
            total += sp - (targets[a].labels[c] ? zc : T(0));
        }
        // pose: cross entropy of the softmax over pose logits
        T mx = za[pids[0]];
        for (std::size_t id : pids) mx = std::max(mx, za[id]);
        T lse = T(0);
        T ztrue = T(0);
        for (std::size_t id : pids) {
            lse += std::exp(za[id] - mx);
            if (targets[a].labels[id]) ztrue = za[id];
        }
        total += std::log(lse) + mx - ztrue;
    }
    total /= static_cast<T>(n);

    TensorT<T>* z_raw = logits.get();
    auto tgt = std::make_shared<std::vector<ActorTarget>>(targets);
    return make_node<T>(Shape{1}, std::vector<T>{total}, {logits}, [=](TensorT<T>& self) {
        z_raw->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(n);
        const T* zv = z_raw->data.data();
        for (std::size_t a = 0; a < n; ++a) {
            const T* za = zv + a * k;
            T* da = z_raw->grad.data() + a * k;
            for (std::size_t c = 0; c < k; ++c) {
                if (pose[c]) continue;
                const T zc = za[c];
                const T sig = zc >= T(0) ? T(1) / (T(1) + std::exp(-zc)) : std::exp(zc) / (T(1) + std::exp(zc));
                da[c] += g * (sig - ((*tgt)[a].labels[c] ? T(1) : T(0)));
            }
            T mx = za[pids[0]];
            for (std::size_t id : pids) mx = std::max(mx, za[id]);
            T denom = T(0);
            for (std::size_t id : pids) denom += std::exp(za[id] - mx);
            for (std::size_t id : pids) {
                const T sm = std::exp(za[id] - mx) / denom;
                da[id] += g * (sm - ((*tgt)[a].labels[id] ? T(1) : T(0)));
            }
        }
    });
}

// Sigmoid on non-pose logits, softmax over the pose block; no gradients.
template <typename T>
TensorPtrT<T> predict_scores(const TensorPtrT<T>& logits, const LabelSpec& spec) {
    if (logits->ndim() != 2 || logits->shape[1] != spec.num_classes)
        throw std::invalid_argument("predict_scores: logits must be [N," + std::to_string(spec.num_classes) + "]");
    const std::size_t n = logits->shape[0], k = spec.num_classes;
    const std::vector<bool> pose = spec.pose_mask();
    const auto& pids = spec.pose_class_ids;
    std::vector<T> out(n * k);
    for (std::size_t a = 0; a < n; ++a) {
        const T* za = logits->data.data() + a * k;
        T* oa = out.data() + a * k;
        for (std::size_t c = 0; c < k; ++c) {
            if (pose[c]) continue;
            const T zc = za[c];
            oa[c] = zc >= T(0) ? T(1) / (T(1) + std::exp(-zc)) : std::exp(zc) / (T(1) + std::exp(zc));
        }
        T mx = za[pids[0]];
        for (std::size_t id : pids) mx = std::max(mx, za[id]);
        T denom = T(0);
        for (std::size_t id : pids) denom += std::exp(za[id] - mx);
        for (std::size_t id : pids) oa[id] = std::exp(za[id] - mx) / denom;
    }
    return make_tensor<T>(Shape{n, k}, std::move(out));
}

}  // namespace acar
