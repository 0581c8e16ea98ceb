#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace bttr {

using real = double;
using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream oss;
    oss << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) oss << ',';
        oss << s[i];
    }
    oss << ']';
    return oss.str();
}

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph construction in its scope; inference paths use this.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct TensorImpl {
    Shape shape;
    std::vector<real> values;
    std::vector<real> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void()> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), real(0));
    }
};

// Value-semantics handle to a graph node. Copies share storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), real(0), requires_grad);
    }
    static Tensor ones(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), real(1), requires_grad);
    }
    static Tensor filled(Shape shape, real v, bool requires_grad = false) {
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->values.assign(static_cast<std::size_t>(shape_numel(impl->shape)), v);
        impl->requires_grad = requires_grad && grad_enabled();
        return Tensor(std::move(impl));
    }
    static Tensor from_values(Shape shape, std::vector<real> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->values = std::move(values);
        impl->requires_grad = requires_grad && grad_enabled();
        return Tensor(std::move(impl));
    }
    static Tensor scalar(real v, bool requires_grad = false) {
        return from_values({1}, {v}, requires_grad);
    }

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t numel() const { return impl_->numel(); }
    bool requires_grad() const { return impl_->requires_grad; }

    std::vector<real>& values() { return impl_->values; }
    const std::vector<real>& values() const { return impl_->values; }
    std::vector<real>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    const std::vector<real>& grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), real(0));
    }

    real item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->values[0];
    }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Builds an op node. `fn` runs at backward time with output grad available.
inline Tensor make_op(Shape shape, std::vector<real> values, std::vector<Tensor> parents,
                      std::function<void(TensorImpl&)> fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    bool need = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.requires_grad()) need = true;
    }
    impl->requires_grad = need;
    if (need) {
        for (auto& p : parents) impl->parents.push_back(p.impl());
        TensorImpl* raw = impl.get();
        impl->backward_fn = [raw, fn = std::move(fn)]() { fn(*raw); };
    }
    return Tensor(std::move(impl));
}

// Reverse-topological sweep from a scalar loss. Grads accumulate; callers
// zero parameter grads between steps.
inline void backward(Tensor loss) {
    if (loss.numel() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    auto root = loss.impl();
    if (!root->requires_grad) return;

    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    // iterative post-order DFS
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// Counter-based deterministic RNG: identical seed and call sequence give
// identical draws on any platform (raw engine words only, no std distributions).
class RngState {
public:
    explicit RngState(std::uint64_t seed = 0) : seed_(seed), eng_(seed), count_(0) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t draw_count() const { return count_; }

    std::uint64_t next_u64() {
        ++count_;
        return eng_();
    }
    // uniform in [0, 1)
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }
    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }
    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection-free modulo bias is negligible for our n << 2^64
        return next_u64() % n;
    }
    bool bernoulli(real p) { return uniform() < p; }

    RngState fork(std::uint64_t stream) const {
        return RngState(seed_ ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    std::uint64_t count_;
};

inline Tensor rand_uniform(RngState& rng, Shape shape, real lo, real hi, bool requires_grad = false) {
    std::vector<real> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
inline Tensor init_linear(RngState& rng, Shape shape, int fan_in) {
    real b = real(1) / std::sqrt(static_cast<real>(fan_in));
    return rand_uniform(rng, std::move(shape), -b, b, true);
}

}  // namespace bttr
