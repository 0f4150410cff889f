#pragma once

#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "foresee/array.hpp"

namespace fse {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

/// Differentiable operation with an opaque forward/backward pair. Structured
/// ops that do not decompose well into the primitive set (the convolution
/// stack of the odometry encoder) plug in through this interface.
class CustomOp {
public:
    virtual ~CustomOp() = default;
    virtual std::string name() const = 0;
    virtual Array forward(const std::vector<const Array*>& inputs) const = 0;
    /// Accumulate into grad_inputs[i] (already zero-initialized, same shape
    /// as inputs[i]) the gradient of the loss w.r.t. each input.
    virtual void backward(const std::vector<const Array*>& inputs, const Array& output,
                          const Array& grad_out, const std::vector<Array*>& grad_inputs) const = 0;
};

enum class Op {
    Input,
    Matmul,
    Add,
    Sub,
    Hadamard,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Relu,
    ConcatCols,
    SliceCols,
    ReduceSum,
    Scale,
    Custom,
};

const char* op_name(Op op);

/// Define-by-run reverse-mode computation record. Nodes are appended in
/// execution order, so reverse id order is a topological order for backward.
class Tape {
public:
    struct Node {
        Op op = Op::Input;
        std::vector<int> inputs;
        Array value;
        Array grad;            // allocated by backward(), same shape as value
        double factor = 0.0;   // Scale
        int begin = 0, len = 0; // SliceCols
        std::shared_ptr<const CustomOp> custom;
        std::string name; // inputs only, for gradient-check reporting
    };

    /// Leaf holding a value. Gradients flow into every leaf; callers read
    /// them only where they care.
    Var input(Array value, std::string name = "");

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var relu(Var a);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, int begin, int len);
    Var reduce_sum(Var a);
    Var scale(Var a, double factor);
    Var custom(std::shared_ptr<const CustomOp> op, std::vector<Var> inputs);

    const Array& value(Var v) const { return node(v).value; }
    /// Gradient of the last backward() root w.r.t. v. Empty before backward.
    const Array& grad(Var v) const { return node(v).grad; }

    /// Reverse sweep from a {1,1} root with seed gradient 1. Overwrites all
    /// gradients; call once per forward pass (or recompute() first).
    void backward(Var root);
    void zero_grad();

    /// Replace an input leaf's value (shape must match), without touching
    /// downstream nodes. Call recompute() afterwards.
    void set_input(Var v, const Array& value);

    /// Re-run every non-input node in recorded order. Replaying with
    /// identical input values reproduces all outputs bitwise, since forward
    /// and replay share the same kernels in the same order.
    void recompute();

    std::size_t node_count() const { return nodes_.size(); }
    const Node& node(Var v) const;

    /// Elements clamped by exp/log since construction or the last reset.
    /// Diagnostic only; clamping keeps early-training extremes finite.
    long exp_clamp_count() const { return exp_clamps_; }
    long log_clamp_count() const { return log_clamps_; }
    void reset_clamp_counts() { exp_clamps_ = 0; log_clamps_ = 0; }

private:
    Node& mutable_node(Var v);
    Node make(Op op, std::initializer_list<Var> inputs);
    Var emit(Node node);
    Array eval(const Node& node);
    void backprop_node(int id);

    std::vector<Node> nodes_;
    long exp_clamps_ = 0;
    long log_clamps_ = 0;
};

} // namespace fse
