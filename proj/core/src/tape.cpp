#include "foresee/tape.hpp"

#include <cmath>
#include <utility>

namespace fse {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Matmul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Hadamard: return "hadamard";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Relu: return "relu";
        case Op::ConcatCols: return "concat_cols";
        case Op::SliceCols: return "slice_cols";
        case Op::ReduceSum: return "reduce_sum";
        case Op::Scale: return "scale";
        case Op::Custom: return "custom";
    }
    return "?";
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw ContractError("variable does not belong to this tape");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::mutable_node(Var v) {
    return const_cast<Node&>(node(v));
}

Var Tape::emit(Node node) {
    node.value = eval(node);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Array value, std::string name) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tape::Node Tape::make(Op op, std::initializer_list<Var> inputs) {
    Node n;
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (Var v : inputs) {
        node(v); // ownership check: ids are only meaningful on their own tape
        n.inputs.push_back(v.id);
    }
    return n;
}

Var Tape::matmul(Var a, Var b) { return emit(make(Op::Matmul, {a, b})); }
Var Tape::add(Var a, Var b) { return emit(make(Op::Add, {a, b})); }
Var Tape::sub(Var a, Var b) { return emit(make(Op::Sub, {a, b})); }
Var Tape::hadamard(Var a, Var b) { return emit(make(Op::Hadamard, {a, b})); }
Var Tape::sigmoid(Var a) { return emit(make(Op::Sigmoid, {a})); }
Var Tape::tanh(Var a) { return emit(make(Op::Tanh, {a})); }
Var Tape::exp(Var a) { return emit(make(Op::Exp, {a})); }
Var Tape::log(Var a) { return emit(make(Op::Log, {a})); }
Var Tape::relu(Var a) { return emit(make(Op::Relu, {a})); }
Var Tape::concat_cols(Var a, Var b) { return emit(make(Op::ConcatCols, {a, b})); }

Var Tape::slice_cols(Var a, int begin, int len) {
    Node n = make(Op::SliceCols, {a});
    n.begin = begin;
    n.len = len;
    return emit(std::move(n));
}

Var Tape::reduce_sum(Var a) { return emit(make(Op::ReduceSum, {a})); }

Var Tape::scale(Var a, double factor) {
    Node n = make(Op::Scale, {a});
    n.factor = factor;
    return emit(std::move(n));
}

Var Tape::custom(std::shared_ptr<const CustomOp> op, std::vector<Var> inputs) {
    if (!op) throw ContractError("custom op must be non-null");
    Node n;
    n.op = Op::Custom;
    n.custom = std::move(op);
    n.inputs.reserve(inputs.size());
    for (Var v : inputs) {
        node(v); // ownership check
        n.inputs.push_back(v.id);
    }
    return emit(std::move(n));
}

Array Tape::eval(const Node& n) {
    auto in = [&](std::size_t i) -> const Array& {
        return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
    };
    switch (n.op) {
        case Op::Input: return n.value;
        case Op::Matmul: return fse::matmul(in(0), in(1));
        case Op::Add: return fse::add(in(0), in(1));
        case Op::Sub: return fse::sub(in(0), in(1));
        case Op::Hadamard: return fse::hadamard(in(0), in(1));
        case Op::Sigmoid: return fse::sigmoid(in(0));
        case Op::Tanh: return fse::tanh_(in(0));
        case Op::Exp: return fse::exp_(in(0), &exp_clamps_);
        case Op::Log: return fse::log_(in(0), &log_clamps_);
        case Op::Relu: return fse::relu(in(0));
        case Op::ConcatCols: return fse::concat_cols(in(0), in(1));
        case Op::SliceCols: return fse::slice_cols(in(0), n.begin, n.len);
        case Op::ReduceSum: return fse::reduce_sum(in(0));
        case Op::Scale: return fse::scale(in(0), n.factor);
        case Op::Custom: {
            std::vector<const Array*> ptrs;
            ptrs.reserve(n.inputs.size());
            for (int id : n.inputs) ptrs.push_back(&nodes_[static_cast<std::size_t>(id)].value);
            return n.custom->forward(ptrs);
        }
    }
    throw ContractError("unknown op");
}

void Tape::set_input(Var v, const Array& value) {
    Node& n = mutable_node(v);
    if (n.op != Op::Input) throw ContractError("set_input target is not an input node");
    if (!n.value.same_shape(value)) {
        throw DimensionError("set_input shape mismatch: " + n.value.shape_string() + " vs " + value.shape_string());
    }
    n.value = value;
}

void Tape::recompute() {
    for (Node& n : nodes_) {
        if (n.op != Op::Input) n.value = eval(n);
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) n.grad = Array();
}

void Tape::backward(Var root) {
    const Node& r = node(root);
    if (r.value.size() != 1) {
        throw ContractError("backward root must be scalar, got shape " + r.value.shape_string());
    }
    for (Node& n : nodes_) n.grad = Array(n.value.shape());
    mutable_node(root).grad[0] = 1.0;
    for (int id = root.id; id >= 0; --id) backprop_node(id);
}

void Tape::backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::Input) return;
    const Array& g = n.grad;
    auto input_node = [&](std::size_t i) -> Node& {
        return nodes_[static_cast<std::size_t>(n.inputs[i])];
    };
    switch (n.op) {
        case Op::Input:
            return;
        case Op::Matmul: {
            Node& a = input_node(0);
            Node& b = input_node(1);
            const int m = a.value.rows(), k = a.value.cols(), c = b.value.cols();
            // dA += g . B^T
            for (int i = 0; i < m; ++i) {
                for (int l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (int j = 0; j < c; ++j) {
                        s += g[static_cast<std::size_t>(i) * c + j] * b.value[static_cast<std::size_t>(l) * c + j];
                    }
                    a.grad[static_cast<std::size_t>(i) * k + l] += s;
                }
            }
            // dB += A^T . g
            for (int i = 0; i < m; ++i) {
                for (int l = 0; l < k; ++l) {
                    const double av = a.value[static_cast<std::size_t>(i) * k + l];
                    if (av == 0.0) continue;
                    for (int j = 0; j < c; ++j) {
                        b.grad[static_cast<std::size_t>(l) * c + j] += av * g[static_cast<std::size_t>(i) * c + j];
                    }
                }
            }
            return;
        }
        case Op::Add: {
            Node& a = input_node(0);
            Node& b = input_node(1);
            for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
            if (b.value.same_shape(n.value)) {
                for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i];
            } else {
                // bias row: reduce over rows
                const int rows = n.value.rows(), cols = n.value.cols();
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < cols; ++j) b.grad[j] += g[static_cast<std::size_t>(i) * cols + j];
                }
            }
            return;
        }
        case Op::Sub: {
            Node& a = input_node(0);
            Node& b = input_node(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                a.grad[i] += g[i];
                b.grad[i] -= g[i];
            }
            return;
        }
        case Op::Hadamard: {
            Node& a = input_node(0);
            Node& b = input_node(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                a.grad[i] += g[i] * b.value[i];
                b.grad[i] += g[i] * a.value[i];
            }
            return;
        }
        case Op::Sigmoid: {
            Node& a = input_node(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = n.value[i];
                a.grad[i] += g[i] * y * (1.0 - y);
            }
            return;
        }
        case Op::Tanh: {
            Node& a = input_node(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = n.value[i];
                a.grad[i] += g[i] * (1.0 - y * y);
            }
            return;
        }
        case Op::Exp: {
            Node& a = input_node(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a.value[i] > kExpInputMax) continue; // clamped: flat
                a.grad[i] += g[i] * n.value[i];
            }
            return;
        }
        case Op::Log: {
            Node& a = input_node(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a.value[i] < kLogInputMin) continue; // clamped: flat
                a.grad[i] += g[i] / a.value[i];
            }
            return;
        }
        case Op::Relu: {
            Node& a = input_node(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a.value[i] > 0.0) a.grad[i] += g[i];
            }
            return;
        }
        case Op::ConcatCols: {
            Node& a = input_node(0);
            Node& b = input_node(1);
            const int rows = n.value.rows(), ca = a.value.cols(), cb = b.value.cols();
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < ca; ++j) {
                    a.grad[static_cast<std::size_t>(i) * ca + j] += g[static_cast<std::size_t>(i) * (ca + cb) + j];
                }
                for (int j = 0; j < cb; ++j) {
                    b.grad[static_cast<std::size_t>(i) * cb + j] += g[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
                }
            }
            return;
        }
        case Op::SliceCols: {
            Node& a = input_node(0);
            const int rows = n.value.rows(), cols = a.value.cols();
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < n.len; ++j) {
                    a.grad[static_cast<std::size_t>(i) * cols + n.begin + j] += g[static_cast<std::size_t>(i) * n.len + j];
                }
            }
            return;
        }
        case Op::ReduceSum: {
            Node& a = input_node(0);
            const double gv = g[0];
            for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += gv;
            return;
        }
        case Op::Scale: {
            Node& a = input_node(0);
            for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += n.factor * g[i];
            return;
        }
        case Op::Custom: {
            std::vector<const Array*> in_ptrs;
            std::vector<Array*> grad_ptrs;
            in_ptrs.reserve(n.inputs.size());
            grad_ptrs.reserve(n.inputs.size());
            for (int iid : n.inputs) {
                Node& m = nodes_[static_cast<std::size_t>(iid)];
                in_ptrs.push_back(&m.value);
                grad_ptrs.push_back(&m.grad);
            }
            n.custom->backward(in_ptrs, n.value, g, grad_ptrs);
            return;
        }
    }
}

} // namespace fse
