#pragma once

/// @file autodiff.hpp
/// @brief Tape-based reverse-mode differentiation over dense tensors.
///
/// A Tape records every primitive applied to its Vars. Nodes are appended in
/// evaluation order, so parents always have smaller ids than their children
/// and the recorded graph is acyclic by construction. backward() walks the
/// tape once in reverse.
///
/// A tape is confined to one thread. Parameters are owned by models and only
/// referenced by the tape; gradients are accumulated into Parameter::grad.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aml/tensor.hpp"

namespace aml {

/// Trainable tensor plus its gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

enum class OpTag {
    Constant,
    Leaf,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Conv1d,
    MaxPool,
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Log1p,
    Concat,
    Mean,
    Sum,
    L2Norm,
    Reshape,
    Select,
    Slice,
    GatherRows,
    Scale,
};

const char* op_name(OpTag tag) noexcept;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    Tensor grad() const;
    const Shape& shape() const { return value().shape(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Input that never receives a gradient.
    Var constant(Tensor value);
    /// Differentiable input not tied to a Parameter; its gradient is readable
    /// through Var::grad() after backward().
    Var leaf(Tensor value);
    /// Reference to a model parameter. backward() adds into p.grad.
    Var param(Parameter& p);

    /// Propagates d(root)/d(node) to every node. Root must hold exactly one
    /// element. Parameter gradients accumulate; zero them beforehand.
    void backward(Var root);

    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    Tensor grad(std::size_t id) const;
    OpTag op(std::size_t id) const { return nodes_[id].op; }
    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, allocated on first use.
    Tensor& grad_buffer(std::size_t id);

    /// Appends the result of a primitive. Used by the primitive implementations.
    Var push(Tensor value, OpTag op, std::vector<std::size_t> parents, BackwardFn backward);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        OpTag op = OpTag::Constant;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
};

namespace ad {

// Binary elementwise ops broadcast numpy-style (shapes aligned from the right,
// each dimension equal or 1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);

/// x [B,Cin,L] convolved with w [Cout,Cin,K], stride 1, zero "same" padding
/// -> [B,Cout,L]. Kernel is flipped (true convolution).
Var conv1d(Var x, Var w);

/// Max over non-overlapping windows of width 2 along the last axis; a trailing
/// odd element forms its own window, so the output length is ceil(L/2).
Var maxpool2(Var x);

Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
/// log(1 + a), accurate for small a.
Var log1p(Var a);
Var scale(Var a, double factor);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);

/// Reductions remove the reduced axis.
Var mean(Var a, std::size_t axis);
Var sum(Var a, std::size_t axis);
Var sum(Var a);
Var l2norm(Var a, std::size_t axis);

Var reshape(Var a, Shape shape);
/// Index `index` along `axis`, removing that axis.
Var select(Var a, std::size_t axis, std::size_t index);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
/// Rows of a (first axis) in the given order; repeats allowed.
Var gather_rows(Var a, std::span<const std::size_t> rows);

}  // namespace ad
}  // namespace aml
