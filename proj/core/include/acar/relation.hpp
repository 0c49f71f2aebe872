// First-order actor-context relation encoding, the HR2O location-wise
// attention operator, the relation classification head, and the
// actor-context feature bank with long-term attention.
//
// Attention is evaluated independently at every spatial location: queries,
// keys and values are 1x1 (optionally 3x3) convolutions of relation maps,
// scores are channel dot products at each (x,y) scaled by 1/sqrt(d), and
// the softmax runs over the key/actor axis only.

#pragma once

#include "acar/heads.hpp"

namespace acar {

struct Hr2oConfig {
    std::size_t d = 512;          // relation dimension
    std::size_t num_blocks = 1;   // one or two blocks
    std::size_t kernel_size = 1;  // Conv2D_q/k/v/f kernel
    double dropout_p = 0.2;
    bool pre_pool = true;  // 2x2 max pool before the blocks

    void validate() const {
        if (num_blocks != 1 && num_blocks != 2)
            throw std::invalid_argument("hr2o: num_blocks must be 1 or 2, got " + std::to_string(num_blocks));
        if (kernel_size % 2 == 0) throw std::invalid_argument("hr2o: kernel_size must be odd");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw std::invalid_argument("hr2o: dropout_p must be in [0,1)");
        if (d == 0) throw std::invalid_argument("hr2o: d must be positive");
    }

    template <typename T>
    T scale() const {
        return T(1) / std::sqrt(static_cast<T>(d));
    }
};

// Per-actor first-order relation features [N, d, H', W'].
template <typename T>
struct RelationMapT {
    TensorPtrT<T> features;
    std::vector<std::int64_t> actor_ids;

    void validate(std::size_t d) const {
        if (!features || features->ndim() != 4)
            throw std::invalid_argument("relation map: features must be [N,d,H,W]");
        if (features->shape[0] < 1) throw std::invalid_argument("relation map: need at least one actor");
        if (features->shape[1] != d)
            throw std::invalid_argument("relation map: d=" + std::to_string(features->shape[1]) +
                                        " != configured " + std::to_string(d));
        if (actor_ids.size() != features->shape[0])
            throw std::invalid_argument("relation map: actor id count mismatch");
    }
};

using RelationMap = RelationMapT<float>;

template <typename T>
struct BankEntryT {
    double timestamp = 0.0;
    RelationMapT<T> map;
};

// Time-indexed first-order relation maps at a fixed stride. Actor-less
// timestamps are simply absent, so consecutive entries sit an integer
// number of strides apart.
template <typename T>
struct FeatureBankT {
    std::vector<BankEntryT<T>> entries;
    double stride = 1.0;
    double window = 20.0;

    void validate() const {
        for (std::size_t i = 1; i < entries.size(); ++i) {
            const double gap = entries[i].timestamp - entries[i - 1].timestamp;
            if (gap <= 0) throw std::invalid_argument("feature bank: timestamps must be strictly increasing");
            const double k = gap / stride;
            if (std::abs(k - std::round(k)) > 1e-6)
                throw std::invalid_argument("feature bank: entry spacing " + std::to_string(gap) +
                                            " is not a multiple of stride " + std::to_string(stride));
        }
        if (!entries.empty()) {
            const auto& s0 = entries.front().map.features->shape;
            for (const auto& e : entries)
                if (e.map.features->shape[1] != s0[1] || e.map.features->shape[2] != s0[2] ||
                    e.map.features->shape[3] != s0[3])
                    throw std::invalid_argument("feature bank: entries disagree on [d,H,W]");
        }
    }

    // Entries within the centered window [t - window/2, t + window/2].
    std::vector<const BankEntryT<T>*> in_window(double t) const {
        std::vector<const BankEntryT<T>*> out;
        const double half = window / 2.0 + 1e-9;
        for (const auto& e : entries)
            if (std::abs(e.timestamp - t) <= half) out.push_back(&e);
        return out;
    }
};

using FeatureBank = FeatureBankT<float>;

// --- parameter bundles --------------------------------------------------------

template <typename T>
struct RelationEncoderParamsT {
    TensorPtrT<T> conv1_w, conv1_b;  // [d, 2C, 3, 3]
    TensorPtrT<T> conv2_w, conv2_b;  // [d, d, 3, 3]
};

template <typename T>
struct Hr2oBlockParamsT {
    TensorPtrT<T> wq, bq, wk, bk, wv, bv;
    TensorPtrT<T> wf, bf;  // zero-initialized: the residual path starts inert
    TensorPtrT<T> ln_gain, ln_shift;
};

// --- first-order relation encoding ---------------------------------------------

// Broadcast-concatenate each actor feature to every location of the
// context map (channels [V ; A_i]) and run the two-layer relation encoder.
template <typename T>
RelationMapT<T> encode_first_order(const TensorPtrT<T>& context, const std::vector<TensorPtrT<T>>& actors,
                                   const RelationEncoderParamsT<T>& enc,
                                   std::vector<std::int64_t> actor_ids = {}) {
    if (context->ndim() != 3)
        throw std::invalid_argument("encode_first_order: context must be [C,H,W], got " + shape_str(context->shape));
    if (actors.empty()) throw std::invalid_argument("encode_first_order: need at least one actor");
    const std::size_t c = context->shape[0], h = context->shape[1], w = context->shape[2];
    std::vector<TensorPtrT<T>> concats;
    concats.reserve(actors.size());
    for (const auto& a : actors) {
        if (a->ndim() != 1 || a->shape[0] != c)
            throw std::invalid_argument("encode_first_order: actor channels " + shape_str(a->shape) +
                                        " != context channels " + std::to_string(c));
        concats.push_back(concat_channels(context, tile_spatial(a, h, w)));
    }
    auto batch = stack0(concats);  // [N, 2C, H, W]
    auto x = relu(conv2d(batch, enc.conv1_w, enc.conv1_b, 1, 1));
    x = relu(conv2d(x, enc.conv2_w, enc.conv2_b, 1, 1));
    RelationMapT<T> out;
    out.features = x;
    if (actor_ids.empty()) {
        out.actor_ids.resize(actors.size());
        for (std::size_t i = 0; i < actors.size(); ++i) out.actor_ids[i] = static_cast<std::int64_t>(i);
    } else {
        if (actor_ids.size() != actors.size())
            throw std::invalid_argument("encode_first_order: actor id count mismatch");
        out.actor_ids = std::move(actor_ids);
    }
    return out;
}

// --- HR2O blocks ----------------------------------------------------------------

template <typename T>
struct Hr2oBlockResult {
    TensorPtrT<T> output;     // [N, d, H, W]
    TensorPtrT<T> attention;  // [N, M, H, W], rows sum to 1 over M
};

// One modified non-local block. Queries come from `queries`, keys/values
// from `keys_values`; self-attention passes the same map for both. The
// output is the residual sum queries + H.
template <typename T>
Hr2oBlockResult<T> hr2o_block(const TensorPtrT<T>& queries, const TensorPtrT<T>& keys_values,
                              const Hr2oBlockParamsT<T>& p, const Hr2oConfig& cfg, bool training,
                              std::uint64_t dropout_seed) {
    cfg.validate();
    if (queries->ndim() != 4 || keys_values->ndim() != 4)
        throw std::invalid_argument("hr2o_block: maps must be [N,d,H,W]");
    const std::size_t pad = cfg.kernel_size / 2;
    auto q = conv2d(queries, p.wq, p.bq, 1, pad);
    auto k = conv2d(keys_values, p.wk, p.bk, 1, pad);
    auto v = conv2d(keys_values, p.wv, p.bv, 1, pad);
    auto scores = location_scores(q, k, cfg.scale<T>());
    auto attn = softmax_axis(scores, 1);
    auto mixed = location_mix(attn, v);
    auto norm = layer_norm(mixed, 1, p.ln_gain, p.ln_shift, T(1e-5));
    auto act = relu(norm);
    auto h = dropout(conv2d(act, p.wf, p.bf, 1, pad), cfg.dropout_p, training, dropout_seed);
    return {add(queries, h), attn};
}

// Self-attention stack: optional 2x2 pre-pool, then num_blocks blocks with
// separate parameters.
template <typename T>
TensorPtrT<T> hr2o_stack(const RelationMapT<T>& f, const std::vector<Hr2oBlockParamsT<T>>& blocks,
                         const Hr2oConfig& cfg, bool training, std::uint64_t seed) {
    cfg.validate();
    if (blocks.size() != cfg.num_blocks)
        throw std::invalid_argument("hr2o_stack: expected " + std::to_string(cfg.num_blocks) + " block params");
    auto x = f.features;
    if (cfg.pre_pool) x = max_pool2d(x, 2, 2);
    for (std::size_t b = 0; b < blocks.size(); ++b)
        x = hr2o_block(x, x, blocks[b], cfg, training, mix_seed(seed, b, "hr2o.dropout")).output;
    return x;
}

// Long-term stack: queries from the current relation map, keys/values from
// the union of all in-window bank actors. Pre-pooling is forced off so the
// current map and the bank agree spatially. An empty window falls back to
// self-attention.
template <typename T>
TensorPtrT<T> acfb_stack(const RelationMapT<T>& current, const std::vector<const BankEntryT<T>*>& window,
                         const std::vector<Hr2oBlockParamsT<T>>& blocks, const Hr2oConfig& cfg, bool training,
                         std::uint64_t seed) {
    Hr2oConfig c = cfg;
    c.pre_pool = false;
    c.validate();
    if (blocks.size() != c.num_blocks)
        throw std::invalid_argument("acfb_stack: expected " + std::to_string(c.num_blocks) + " block params");
    TensorPtrT<T> kv;
    if (window.empty()) {
        kv = current.features;
    } else {
        std::vector<TensorPtrT<T>> maps;
        maps.reserve(window.size());
        for (const auto* e : window) {
            const auto& bs = e->map.features->shape;
            const auto& cs = current.features->shape;
            if (bs[1] != cs[1] || bs[2] != cs[2] || bs[3] != cs[3])
                throw std::invalid_argument("acfb_stack: bank entry shape " + shape_str(bs) +
                                            " does not match current map " + shape_str(cs));
            maps.push_back(e->map.features);
        }
        kv = concat_axis0(maps);
    }
    auto x = current.features;
    for (std::size_t b = 0; b < blocks.size(); ++b)
        x = hr2o_block(x, kv, blocks[b], c, training, mix_seed(seed, b, "acfb.dropout")).output;
    return x;
}

// --- relation heads --------------------------------------------------------------

template <typename T>
struct RelationHeadParamsT {
    RelationEncoderParamsT<T> encoder;
    std::vector<Hr2oBlockParamsT<T>> blocks;
    TensorPtrT<T> cls_w, cls_b;  // classifier on [pooled relation ; A_i]
};

template <typename T>
TensorPtrT<T> classify_pooled(const TensorPtrT<T>& stack_out, const std::vector<TensorPtrT<T>>& actors,
                              const TensorPtrT<T>& cls_w, const TensorPtrT<T>& cls_b) {
    auto pooled = global_avg_spatial(stack_out);     // [N, d]
    auto rois = stack0(actors);                      // [N, C]
    return affine_map(concat_cols(pooled, rois), cls_w, cls_b);
}

// encode_first_order -> hr2o_stack -> avg pool -> concat A_i -> classifier.
template <typename T>
TensorPtrT<T> acar_head(const TensorPtrT<T>& context, const std::vector<TensorPtrT<T>>& actors,
                        const RelationHeadParamsT<T>& p, const Hr2oConfig& cfg, bool training,
                        std::uint64_t seed) {
    auto rel = encode_first_order(context, actors, p.encoder);
    auto x = hr2o_stack(rel, p.blocks, cfg, training, seed);
    return classify_pooled(x, actors, p.cls_w, p.cls_b);
}

// As acar_head but with current-vs-long-term attention against the bank
// window around t.
template <typename T>
TensorPtrT<T> acfb_head(const TensorPtrT<T>& context, const std::vector<TensorPtrT<T>>& actors,
                        const FeatureBankT<T>& bank, double t, const RelationHeadParamsT<T>& p,
                        const Hr2oConfig& cfg, bool training, std::uint64_t seed) {
    auto rel = encode_first_order(context, actors, p.encoder);
    auto x = acfb_stack(rel, bank.in_window(t), p.blocks, cfg, training, seed);
    return classify_pooled(x, actors, p.cls_w, p.cls_b);
}

}  // namespace acar
