#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kmdx/common.hpp"

namespace kmdx {

// One value in the computation graph. Nodes are immutable once produced by
// an op; gradients accumulate separately during backward.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;  // trainable leaf
    bool needs_grad = false;     // leaf or derived from one under an active tape
    std::string name;            // parameter path, empty for intermediates

    long long numel() const { return static_cast<long long>(value.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantic handle to a Node. Ops never mutate operand values.
class Tensor {
 public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    // Trainable leaf; values are snapped to the float32 grid (persisted
    // parameter state is float32).
    static Tensor param(Shape shape, std::vector<double> data,
                        std::string name);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    long long numel() const { return n_->numel(); }

    const std::vector<double>& data() const { return n_->value; }
    // State mutation outside the graph (optimizer, EMA); never call on a
    // tensor that participates in a live tape.
    std::vector<double>& mutable_data() { return n_->value; }

    double item() const;
    bool requires_grad() const { return n_->requires_grad; }
    bool needs_grad() const { return n_->needs_grad; }
    const std::string& name() const { return n_->name; }

    // Gradient of the last backward pass; zeros if the leaf was unreachable.
    std::vector<double> grad() const;
    void zero_grad() { n_->grad.clear(); }

    NodePtr node() const { return n_; }
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

 private:
    NodePtr n_;
};

// Ordered record of executed differentiable ops. Operands always precede
// their consumers, so one reverse sweep propagates all gradients. A tape is
// confined to one logical thread and is dead after backward().
class Tape {
 public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn) {
        records_.emplace_back(std::move(backward_fn));
    }

    size_t size() const { return records_.size(); }

    // Seeds d(loss)/d(loss)=1 and sweeps the records in reverse, visiting
    // each recorded op exactly once. The tape cannot be reused afterwards.
    void backward(const Tensor& loss);

    static Tape* active();

 private:
    friend class TapeScope;
    std::vector<std::function<void()>> records_;
    bool consumed_ = false;
};

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

 private:
    Tape* prev_;
};

// Suppresses recording (inference, momentum forward passes, oracles).
class NoTapeScope {
 public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
    Tape* prev_;
};

namespace detail {
// Shared by op implementations: decide whether the op must be recorded and
// mark the output accordingly.
bool tracing(std::initializer_list<const Tensor*> inputs);
void accumulate(const NodePtr& n, const std::vector<double>& g);
}  // namespace detail

}  // namespace kmdx
