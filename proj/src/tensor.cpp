#include "dpanet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace dpanet {

std::string Shape::str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

namespace detail {

bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

std::uint64_t next_sequence() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

}  // namespace detail

namespace {
BranchTape*& live_tape() {
    thread_local BranchTape* tape = nullptr;
    return tape;
}
}  // namespace

BranchTape::BranchTape() : previous_(live_tape()) { live_tape() = this; }

BranchTape::~BranchTape() { live_tape() = previous_; }

BranchTape* BranchTape::active() { return live_tape(); }

void BranchTape::set_mode(Mode mode) {
    mode_ = mode;
    cursor_ = 0;
    crossings_ = 0;
}

void BranchTape::exchange(std::vector<std::int64_t>& decisions) {
    if (mode_ == Mode::record) {
        records_.push_back(decisions);
        return;
    }
    if (cursor_ >= records_.size() || records_[cursor_].size() != decisions.size())
        throw std::logic_error("branch tape replay diverged from the recorded op sequence");
    const auto& rec = records_[cursor_++];
    for (std::size_t i = 0; i < rec.size(); ++i) crossings_ += rec[i] != decisions[i];
    decisions = rec;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<T>(shape.numel(), T(0)), requires_grad) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw DimensionError("negative extent in shape " + shape.str());
    if (values.size() != shape.numel())
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape.str());
    node_ = std::make_shared<Node<T>>();
    node_->shape = shape;
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
    node_->sequence = detail::next_sequence();
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1)
        throw DimensionError("item() on non-scalar tensor " + shape().str());
    return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, const char* op,
                                 std::vector<Tensor> inputs,
                                 std::function<void(Node<T>&)> backward_fn) {
    Tensor out(shape, std::move(values), false);
    out.node_->op = op;
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    out.node_->requires_grad = true;
    out.node_->backward_fn = std::move(backward_fn);
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    return out;
}

template <typename T>
void Tensor<T>::backward() const {
    if (shape() != Shape{1, 1, 1, 1})
        throw DimensionError("backward() requires a 1x1x1x1 loss, got " + shape().str());
    Graph<T>::collect(*this).run_backward(*this);
}

template <typename T>
Graph<T> Graph<T>::collect(const Tensor<T>& root) {
    Graph g;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root.node()};
    seen.insert(root.node());
    while (!stack.empty()) {
        Node<T>* cur = stack.back();
        stack.pop_back();
        g.nodes_.push_back(cur);
        for (const auto& in : cur->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    std::sort(g.nodes_.begin(), g.nodes_.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->sequence < b->sequence; });
    return g;
}

template <typename T>
std::size_t Graph<T>::operation_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const Node<T>* n) { return !n->is_leaf(); }));
}

template <typename T>
void Graph<T>::run_backward(const Tensor<T>& root) {
    // Interior gradients are rebuilt on every pass; leaves accumulate.
    for (Node<T>* n : nodes_) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    }
    Node<T>* r = root.node();
    r->ensure_grad();
    r->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>* n = *it;
        if (n->is_leaf()) continue;
        for (const auto& in : n->inputs) {
            if (in->requires_grad) in->ensure_grad();
        }
        n->backward_fn(*n);
    }
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace dpanet
