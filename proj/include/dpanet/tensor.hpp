#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpanet/errors.hpp"

namespace dpanet {

/// Extent of a 4-axis (batch, channel, height, width) array. Width is the
/// fastest-varying axis.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {
bool& grad_mode();
std::uint64_t next_sequence();
}  // namespace detail

/// True when newly created operations are recorded for backward.
inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Branch decisions of piecewise-smooth ops (ReLU side, max-pool winner,
/// bilinear cell), one record per op call in execution order. While a tape
/// is installed on the thread, those ops pass their decisions through
/// exchange(). In replay mode they get the recorded decisions back, so a
/// forward pass evaluates the recorded smooth piece, extended past its
/// kinks.
class BranchTape {
   public:
    enum class Mode { record, replay };

    BranchTape();
    ~BranchTape();
    BranchTape(const BranchTape&) = delete;
    BranchTape& operator=(const BranchTape&) = delete;

    /// Switching to replay rewinds the tape and clears the crossing count.
    void set_mode(Mode mode);
    Mode mode() const { return mode_; }
    /// Starts the next replay pass from the first record.
    void rewind() { cursor_ = 0; }
    /// Record: stores `decisions`. Replay: replaces them with the recorded
    /// ones, counting entries that differ.
    void exchange(std::vector<std::int64_t>& decisions);
    /// Decisions that differed from the recording since the last rewind.
    std::size_t crossings() const { return crossings_; }

    static BranchTape* active();

   private:
    Mode mode_ = Mode::record;
    std::vector<std::vector<std::int64_t>> records_;
    std::size_t cursor_ = 0;
    std::size_t crossings_ = 0;
    BranchTape* previous_;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t sequence = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into its inputs' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class Graph;

/// Dense 4-axis array participating in a dynamic reverse-mode graph.
///
/// A Tensor is a shared handle: copies alias the same storage, the same way
/// an autograd variable does. Use clone() for an independent copy.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(shape, requires_grad);
    }
    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        return Tensor(shape, std::vector<T>(shape.numel(), value), requires_grad);
    }
    static Tensor scalar(T value) { return full({1, 1, 1, 1}, value); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }

    std::span<T> values() { return node_->value; }
    std::span<const T> values() const { return node_->value; }
    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }

    std::size_t index(int n, int c, int y, int x) const {
        const Shape& s = node_->shape;
        return ((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x;
    }
    T& at(int n, int c, int y, int x) { return node_->value[index(n, c, y, x)]; }
    T at(int n, int c, int y, int x) const { return node_->value[index(n, c, y, x)]; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Gradient buffer; reads as zeros when no backward pass reached it.
    std::span<const T> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    /// Independent leaf holding a copy of the values.
    Tensor clone(bool requires_grad = false) const {
        return Tensor(shape(), node_->value, requires_grad);
    }

    /// Runs reverse-mode differentiation from this scalar.
    void backward() const;

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

    /// Wraps the result of an operation. When any input requires grad and
    /// recording is enabled, the node is linked into the graph with the
    /// supplied gradient rule.
    static Tensor make_result(Shape shape, std::vector<T> values, const char* op,
                              std::vector<Tensor> inputs,
                              std::function<void(Node<T>&)> backward_fn);

   private:
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    std::shared_ptr<Node<T>> node_;
};

/// The recorded operations reachable from a root, in creation order.
/// Creation order is a topological order because an operation's inputs must
/// exist before it; backward walks the list in reverse.
template <typename T>
class Graph {
   public:
    static Graph collect(const Tensor<T>& root);

    std::span<Node<T>* const> nodes() const { return nodes_; }
    std::size_t operation_count() const;
    void run_backward(const Tensor<T>& root);

   private:
    std::vector<Node<T>*> nodes_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

/// Element-type conversion; the result is a leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& src, bool requires_grad = false) {
    std::vector<To> out(src.numel());
    auto in = src.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(in[i]);
    return Tensor<To>(src.shape(), std::move(out), requires_grad);
}

}  // namespace dpanet
