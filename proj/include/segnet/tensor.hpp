#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a buffer of rank <= 4 in (batch, channel,
// height, width) order. Operations executed while a GradientTape is active
// and at least one input is tracked are appended to that tape together with
// a closure that maps the output gradient to input gradients. backward()
// replays the closures in reverse order of recording, which is a reverse
// topological order because a node can only consume earlier nodes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <type_traits>
#include <vector>

#include "segnet/error.hpp"
#include "segnet/rng.hpp"

namespace segnet {

/// Accumulator type: double, or T when T is wider.
template <typename T>
using accum_t = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 4;
inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

inline void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > kMaxRank)
        throw ShapeError("tensor rank must be in [1,4], got " + std::to_string(shape.size()));
    for (std::size_t e : shape)
        if (e == 0) throw ShapeError("tensor extents must be positive: " + to_string(shape));
}

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty == absent
    bool requires_grad = false;
    std::size_t node_id = kNoNode;
    std::uint64_t generation = 0;

    std::span<T> ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

inline std::uint64_t next_generation() {
    static thread_local std::uint64_t counter = 0;
    return ++counter;
}

}  // namespace detail

template <typename T = float>
class Tensor {
public:
    using value_type = T;
    using Impl = detail::TensorImpl<T>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
        validate_shape(shape);
        if (segnet::numel(shape) != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + to_string(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return constant(std::move(shape), T(0)); }

    static Tensor constant(Shape shape, T value) {
        validate_shape(shape);
        const std::size_t n = segnet::numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }

    /// Values uniform in [-bound, bound).
    static Tensor uniform(Shape shape, T bound, Rng& rng) {
        validate_shape(shape);
        std::vector<T> v(segnet::numel(shape));
        for (auto& x : v) x = static_cast<T>(bound * (2.0 * rng.uniform() - 1.0));
        return Tensor(std::move(shape), std::move(v));
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    bool defined() const noexcept { return static_cast<bool>(impl_); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// Mutable access for optimizers and finite-difference probes only.
    std::span<T> mutable_data() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return impl_->data[0];
    }

    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        const auto& s = impl_->shape;
        return impl_->data[((n * s[1] + c) * s[2] + h) * s[3] + w];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        impl_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> mutable_grad() { return impl_->grad; }
    /// Allocates a zero gradient when absent.
    std::span<T> ensure_grad() { return impl_->ensure_grad(); }
    void zero_grad() {
        if (impl_->grad.empty())
            impl_->ensure_grad();
        else
            std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }
    void drop_grad() { impl_->grad.clear(); }

    Tensor grad_tensor() const {
        if (!has_grad()) throw TapeError("tensor has no gradient");
        return Tensor(shape(), impl_->grad);
    }

    /// Deep copy of shape and values; gradient and tape linkage are dropped.
    Tensor clone() const { return Tensor(shape(), impl_->data); }

    /// Copy with a new shape of equal element count; differentiable.
    Tensor reshape(Shape shape) const;

    std::size_t node_id() const { return impl_->node_id; }
    std::uint64_t generation() const { return impl_->generation; }

    const std::shared_ptr<Impl>& impl() const { return impl_; }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<Impl> impl_;
};

template <typename T>
struct BackwardContext;

/// Record of one differentiable operation.
template <typename T>
struct TapeNode {
    std::string op;
    std::vector<std::shared_ptr<detail::TensorImpl<T>>> inputs;
    std::vector<std::size_t> input_ids;  // kNoNode for leaves
    std::vector<bool> needs_grad;
    std::shared_ptr<detail::TensorImpl<T>> output;
    std::function<void(BackwardContext<T>&)> backward;
};

/// Handed to an op's backward closure: the incoming output gradient and
/// accessors for the gradient buffers of the inputs that need one.
template <typename T>
struct BackwardContext {
    std::span<const T> grad_output;
    TapeNode<T>* node;

    /// Gradient buffer of input i, or an empty span if that input is untracked.
    std::span<T> grad_input(std::size_t i) {
        if (!node->needs_grad[i]) return {};
        return node->inputs[i]->ensure_grad();
    }
    bool needs(std::size_t i) const { return node->needs_grad[i]; }
};

template <typename T = float>
class Tape {
public:
    Tape() : generation_(detail::next_generation()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t generation() const noexcept { return generation_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const TapeNode<T>& node(std::size_t id) const { return nodes_.at(id); }

    bool on_tape(const Tensor<T>& t) const {
        return t.defined() && t.node_id() != kNoNode && t.generation() == generation_;
    }

    bool tracked(const Tensor<T>& t) const { return t.defined() && (t.requires_grad() || on_tape(t)); }

    /// Appends a node producing `output` from `inputs`. Undefined inputs
    /// (an absent bias) are kept as untracked placeholders.
    void record(std::string_view op, std::initializer_list<const Tensor<T>*> inputs,
                Tensor<T>& output, std::function<void(BackwardContext<T>&)> fn) {
        TapeNode<T> node;
        node.op = op;
        for (const Tensor<T>* in : inputs) {
            node.inputs.push_back(in->impl());
            node.input_ids.push_back(on_tape(*in) ? in->node_id() : kNoNode);
            node.needs_grad.push_back(tracked(*in));
        }
        node.output = output.impl();
        node.backward = std::move(fn);
        output.impl()->node_id = nodes_.size();
        output.impl()->generation = generation_;
        nodes_.push_back(std::move(node));
    }

    /// Populates gradients of every tracked tensor reachable from `loss`.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw TapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
        if (loss.node_id() != kNoNode && loss.generation() != generation_)
            throw TapeError("loss was recorded on a stale or different tape");
        if (!tracked(loss)) return;  // constant: nothing to differentiate

        for (auto& node : nodes_) node.output->grad.clear();
        auto impl = loss.impl();
        impl->ensure_grad()[0] += T(1);
        if (!on_tape(loss)) return;

        for (std::size_t id = loss.node_id() + 1; id-- > 0;) {
            TapeNode<T>& node = nodes_[id];
            if (node.output->grad.empty()) continue;
            BackwardContext<T> ctx{node.output->grad, &node};
            node.backward(ctx);
        }
    }

    /// Drops every node; tensors recorded so far become untracked.
    void clear() {
        nodes_.clear();
        generation_ = detail::next_generation();
    }

private:
    std::vector<TapeNode<T>> nodes_;
    std::uint64_t generation_;
};

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot() {
    static thread_local Tape<T>* slot = nullptr;
    return slot;
}
}  // namespace detail

/// Currently recording tape of this thread, or nullptr.
template <typename T>
Tape<T>* active_tape() {
    return detail::active_tape_slot<T>();
}

/// RAII scope: while alive, operations on tracked tensors are recorded.
template <typename T = float>
class GradientTape : public Tape<T> {
public:
    GradientTape() : previous_(detail::active_tape_slot<T>()) { detail::active_tape_slot<T>() = this; }
    ~GradientTape() { detail::active_tape_slot<T>() = previous_; }
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

private:
    Tape<T>* previous_;
};

/// Tape to record on if any input is tracked, else nullptr.
template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) return nullptr;
    for (const Tensor<T>* t : inputs)
        if (tape->tracked(*t)) return tape;
    return nullptr;
}

/// backward() on the active tape.
template <typename T>
void backward(const Tensor<T>& loss) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) {
        if (loss.node_id() != kNoNode) throw TapeError("backward() called after its tape was closed");
        if (loss.numel() != 1) throw TapeError("backward() needs a scalar loss");
        if (loss.requires_grad()) const_cast<Tensor<T>&>(loss).ensure_grad()[0] += T(1);
        return;
    }
    tape->backward(loss);
}

template <typename T>
void check_finite(const Tensor<T>& t, std::string_view op) {
    for (T v : t.data())
        if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape shape) const {
    validate_shape(shape);
    if (segnet::numel(shape) != numel())
        throw ShapeError("cannot reshape " + to_string(this->shape()) + " to " + to_string(shape));
    Tensor out(shape, impl_->data);
    if (Tape<T>* tape = recording_tape<T>({this})) {
        tape->record("reshape", {this}, out, [](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_output[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    std::vector<T> v(a.numel());
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = da[i] + db[i];
    Tensor<T> out(a.shape(), std::move(v));
    check_finite(out, "add");
    if (Tape<T>* tape = recording_tape<T>({&a, &b})) {
        tape->record("add", {&a, &b}, out, [](BackwardContext<T>& ctx) {
            for (std::size_t k = 0; k < 2; ++k) {
                auto g = ctx.grad_input(k);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_output[i];
            }
        });
    }
    return out;
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    std::vector<T> v(a.numel());
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = da[i] * db[i];
    Tensor<T> out(a.shape(), std::move(v));
    check_finite(out, "mul");
    if (Tape<T>* tape = recording_tape<T>({&a, &b})) {
        tape->record("mul", {&a, &b}, out, [a, b](BackwardContext<T>& ctx) {
            auto da = a.data(), db = b.data();
            if (auto g = ctx.grad_input(0); !g.empty())
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_output[i] * db[i];
            if (auto g = ctx.grad_input(1); !g.empty())
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_output[i] * da[i];
        });
    }
    return out;
}

/// Multiplication by a scalar constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> v(a.data().begin(), a.data().end());
    for (auto& x : v) x *= factor;
    Tensor<T> out(a.shape(), std::move(v));
    check_finite(out, "scale");
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        tape->record("scale", {&a}, out, [factor](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * ctx.grad_output[i];
        });
    }
    return out;
}

/// Sum of all elements as a [1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = 0;
    for (T x : a.data()) s += x;
    Tensor<T> out = Tensor<T>::scalar(s);
    check_finite(out, "sum");
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        tape->record("sum", {&a}, out, [](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            const T go = ctx.grad_output[0];
            for (auto& x : g) x += go;
        });
    }
    return out;
}

/// sum(a * weights) with constant weights: a random linear functional, used
/// to turn any op into a scalar for gradient checks.
template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& weights) {
    return sum(mul(a, weights));
}

namespace detail {
inline std::size_t spatial_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
    return n;
}
}  // namespace detail

/// Concatenation along the channel axis (axis 1). A zero-channel operand is
/// represented by an undefined Tensor and returns the other operand.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (!b.defined()) return a;
    if (!a.defined()) return b;
    if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0) ||
        !std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2))
        throw ShapeError("concat_channels: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t plane = detail::spatial_size(a.shape());
    Shape shape = a.shape();
    shape[1] = ca + cb;
    std::vector<T> v(numel(shape));
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(da.begin() + i * ca * plane, ca * plane, v.begin() + i * (ca + cb) * plane);
        std::copy_n(db.begin() + i * cb * plane, cb * plane, v.begin() + (i * (ca + cb) + ca) * plane);
    }
    Tensor<T> out(std::move(shape), std::move(v));
    if (Tape<T>* tape = recording_tape<T>({&a, &b})) {
        tape->record("concat_channels", {&a, &b}, out, [n, ca, cb, plane](BackwardContext<T>& ctx) {
            const auto& go = ctx.grad_output;
            if (auto g = ctx.grad_input(0); !g.empty())
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < ca * plane; ++k)
                        g[i * ca * plane + k] += go[i * (ca + cb) * plane + k];
            if (auto g = ctx.grad_input(1); !g.empty())
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < cb * plane; ++k)
                        g[i * cb * plane + k] += go[(i * (ca + cb) + ca) * plane + k];
        });
    }
    return out;
}

/// Channels [begin, end) of a rank >= 2 tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t end) {
    if (a.rank() < 2 || begin >= end || end > a.dim(1))
        throw ShapeError("slice_channels: invalid range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") for shape " + to_string(a.shape()));
    const std::size_t n = a.dim(0), c = a.dim(1), plane = detail::spatial_size(a.shape());
    const std::size_t cs = end - begin;
    Shape shape = a.shape();
    shape[1] = cs;
    std::vector<T> v(numel(shape));
    auto da = a.data();
    for (std::size_t i = 0; i < n; ++i)
        std::copy_n(da.begin() + (i * c + begin) * plane, cs * plane, v.begin() + i * cs * plane);
    Tensor<T> out(std::move(shape), std::move(v));
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        tape->record("slice_channels", {&a}, out, [n, c, cs, begin, plane](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < cs * plane; ++k)
                    g[(i * c + begin) * plane + k] += ctx.grad_output[i * cs * plane + k];
        });
    }
    return out;
}

/// out[i] = a[index[i]]; gradients scatter back. Backbone of pad/crop/flip.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, Shape shape, std::vector<std::size_t> index) {
    if (numel(shape) != index.size()) throw ShapeError("gather: index count does not match shape");
    std::vector<T> v(index.size());
    auto da = a.data();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= da.size()) throw ShapeError("gather: index out of range");
        v[i] = da[index[i]];
    }
    Tensor<T> out(std::move(shape), std::move(v));
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        tape->record("gather", {&a}, out, [index = std::move(index)](BackwardContext<T>& ctx) {
            auto g = ctx.grad_input(0);
            for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += ctx.grad_output[i];
        });
    }
    return out;
}

}  // namespace segnet
