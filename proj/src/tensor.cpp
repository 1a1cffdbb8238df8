#include "kmdx/tensor.hpp"

#include <algorithm>

namespace kmdx {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<long long>(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::param(Shape shape, std::vector<double> data, std::string name) {
    for (double& v : data) v = round_f32(v);
    Tensor t = from_data(std::move(shape), std::move(data));
    t.node()->requires_grad = true;
    t.node()->needs_grad = true;
    t.node()->name = std::move(name);
    return t;
}

double Tensor::item() const {
    if (numel() != 1)
        throw ContractError("item() on non-scalar tensor of shape " +
                            shape_str(shape()));
    return n_->value[0];
}

std::vector<double> Tensor::grad() const {
    if (n_->grad.empty()) return std::vector<double>(n_->value.size(), 0.0);
    return n_->grad;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw ContractError("tape already consumed by backward()");
    if (loss.numel() != 1)
        throw ContractError("backward() requires a scalar loss, got shape " +
                            shape_str(loss.shape()));
    consumed_ = true;
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    records_.clear();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
    g_active_tape = &tape;
}
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoTapeScope::NoTapeScope() : prev_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = prev_; }

namespace detail {

bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->needs_grad()) return true;
    return false;
}

void accumulate(const NodePtr& n, const std::vector<double>& g) {
    if (!n->needs_grad) return;
    n->ensure_grad();
    const size_t sz = n->grad.size();
    for (size_t i = 0; i < sz; ++i) n->grad[i] += g[i];
}

}  // namespace detail

}  // namespace kmdx
