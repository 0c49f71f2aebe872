// Dense row-major float tensors with a dynamically taped reverse-mode
// gradient graph. The scalar type is a template parameter so the exact
// same code path can run in 64-bit shadow mode for gradient checking;
// production code uses TensorT<float>.
//
// Tape semantics: every op allocates a fresh node holding its inputs as
// shared parents plus a closure that routes the node's grad into them.
// backward() topologically sorts the graph, runs the closures, and then
// clears the tape so intermediate activations can be freed. Leaf grads
// (parameters, inputs) survive and accumulate until zero_grad().

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace acar {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Thread-local switch; when off, ops do not record parents or closures.
class GradMode {
  public:
    static bool& flag() {
        thread_local bool enabled = true;
        return enabled;
    }
    static bool enabled() { return flag(); }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::flag()) { GradMode::flag() = false; }
    ~NoGradGuard() { GradMode::flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorT : std::enable_shared_from_this<TensorT<T>> {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until first accumulation

    std::vector<std::shared_ptr<TensorT<T>>> parents;
    std::function<void(TensorT<T>&)> backward_fn;

    TensorT() = default;
    TensorT(Shape s, std::vector<T> d, bool rg = false)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        for (std::size_t ax : shape) {
            if (ax == 0) throw std::invalid_argument("tensor: zero-length axis in " + shape_str(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                        std::to_string(data.size()));
        }
    }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void accumulate_grad(const T* g, std::size_t n) {
        if (n != data.size()) throw std::invalid_argument("grad size mismatch");
        ensure_grad();
        for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
    }

    void zero_grad() { grad.assign(data.size(), T(0)); }

    // Reverse-mode pass from a scalar. Accumulates into every reachable
    // requires_grad leaf; the tape of visited interior nodes is dropped.
    void backward() {
        if (numel() != 1) throw std::invalid_argument("backward(): loss must be scalar, got " + shape_str(shape));
        if (!requires_grad) throw std::invalid_argument("backward(): loss does not require grad");

        std::vector<TensorT<T>*> order;
        std::unordered_set<TensorT<T>*> seen;
        std::vector<std::pair<TensorT<T>*, std::size_t>> stack;
        stack.emplace_back(this, 0);
        seen.insert(this);
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                TensorT<T>* p = node->parents[idx++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }

        ensure_grad();
        grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorT<T>* node = *it;
            if (node->backward_fn) {
                node->ensure_grad();
                node->backward_fn(*node);
            }
        }
        for (TensorT<T>* node : order) {
            if (node->backward_fn) {
                node->backward_fn = nullptr;
                node->parents.clear();
                if (node != this) node->grad.clear();  // interior grads are scratch
            }
        }
    }
};

template <typename T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

template <typename T>
TensorPtrT<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    return std::make_shared<TensorT<T>>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
TensorPtrT<T> zeros(const Shape& shape, bool requires_grad = false) {
    return make_tensor<T>(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
}

template <typename T>
TensorPtrT<T> full(const Shape& shape, T value, bool requires_grad = false) {
    return make_tensor<T>(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
}

// Result-node helper: wires parents + closure only when grad is flowing.
template <typename T>
TensorPtrT<T> make_node(Shape shape, std::vector<T> data, std::vector<TensorPtrT<T>> parents,
                        std::function<void(TensorT<T>&)> backward_fn) {
    auto out = make_tensor<T>(std::move(shape), std::move(data));
    bool any = false;
    for (const auto& p : parents)
        if (p->requires_grad) any = true;
    if (any && GradMode::enabled()) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
    }
    return out;
}

// --- deterministic seeding -------------------------------------------------

// FNV-1a over (seed, step, tag); used to derive per-invocation RNG streams
// so dropout masks, batch orders and jitters replay exactly.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t step, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull;
    auto eat = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    eat(seed);
    eat(step);
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

template <typename T>
void fill_uniform(TensorT<T>& t, T lo, T hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<T> dist(lo, hi);
    for (auto& v : t.data) v = dist(rng);
}

// --- parameters -------------------------------------------------------------

template <typename T>
struct ParameterT {
    std::string name;
    TensorPtrT<T> tensor;
};

// Ordered, uniquely named parameter registry. Insertion order is the
// serialization order for checkpoints.
template <typename T>
class ParamStoreT {
  public:
    TensorPtrT<T> add(const std::string& name, TensorPtrT<T> tensor) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        tensor->requires_grad = true;
        index_[name] = items_.size();
        items_.push_back({name, std::move(tensor)});
        return items_.back().tensor;
    }

    const TensorPtrT<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return items_[it->second].tensor;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<ParameterT<T>>& items() { return items_; }
    const std::vector<ParameterT<T>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    void zero_grad() {
        for (auto& p : items_) p.tensor->zero_grad();
    }

  private:
    std::vector<ParameterT<T>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// Fan-in scaled uniform init, seeded from the parameter name so values do
// not depend on registration order.
template <typename T>
TensorPtrT<T> init_fan_in(ParamStoreT<T>& store, const std::string& name, const Shape& shape, std::size_t fan_in,
                          std::uint64_t seed) {
    auto t = zeros<T>(shape);
    T bound = T(1) / std::sqrt(static_cast<T>(std::max<std::size_t>(fan_in, 1)));
    fill_uniform(*t, -bound, bound, mix_seed(seed, 0, "init." + name));
    return store.add(name, t);
}

template <typename T>
TensorPtrT<T> init_zero(ParamStoreT<T>& store, const std::string& name, const Shape& shape) {
    return store.add(name, zeros<T>(shape));
}

}  // namespace acar
