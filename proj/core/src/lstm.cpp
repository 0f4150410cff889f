#include "foresee/lstm.hpp"

#include <cmath>

namespace fse {

Array dense_init(int in, int out, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(in));
    Array w({in, out});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
    return w;
}

LstmWeights lstm_init(int input_dim, int hidden_dim, Rng& rng) {
    LstmWeights w;
    w.w = dense_init(input_dim + hidden_dim, 4 * hidden_dim, rng);
    w.bias = Array({1, 4 * hidden_dim});
    for (int j = hidden_dim; j < 2 * hidden_dim; ++j) w.bias[j] = 1.0; // forget gate opens first
    return w;
}

Array sample_mask(Rng& rng, int rows, int dim, double keep_prob) {
    if (keep_prob <= 0.0 || keep_prob > 1.0) {
        throw ContractError("keep_prob must be in (0,1], got " + std::to_string(keep_prob));
    }
    Array z({rows, dim});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.bernoulli(keep_prob) ? 1.0 : 0.0;
    return z;
}

LstmState lstm_step(const LstmWeights& w, const Array& x, const LstmState& prev,
                    const Array* z_x, const Array* z_h) {
    const int hid = w.hidden_dim();
    const Array xin = z_x ? hadamard(x, *z_x) : x;
    const Array hin = z_h ? hadamard(prev.h, *z_h) : prev.h;
    const Array gates = add(matmul(concat_cols(xin, hin), w.w), w.bias);
    const Array i = sigmoid(slice_cols(gates, 0, hid));
    const Array f = sigmoid(slice_cols(gates, hid, hid));
    const Array o = sigmoid(slice_cols(gates, 2 * hid, hid));
    const Array chat = tanh_(slice_cols(gates, 3 * hid, hid));
    LstmState next;
    next.c = add(hadamard(f, prev.c), hadamard(i, chat));
    next.h = hadamard(o, tanh_(next.c));
    return next;
}

Array embed(const Array& x, const Array& w, const Array* z) {
    Array e = relu(matmul(x, w));
    return z ? hadamard(e, *z) : e;
}

LstmStateVars lstm_step(Tape& t, const LstmVars& w, Var x, LstmStateVars prev) {
    const int hid = t.value(w.w).cols() / 4;
    const Var gates = t.add(t.matmul(t.concat_cols(x, prev.h), w.w), w.bias);
    const Var i = t.sigmoid(t.slice_cols(gates, 0, hid));
    const Var f = t.sigmoid(t.slice_cols(gates, hid, hid));
    const Var o = t.sigmoid(t.slice_cols(gates, 2 * hid, hid));
    const Var chat = t.tanh(t.slice_cols(gates, 3 * hid, hid));
    LstmStateVars next;
    next.c = t.add(t.hadamard(f, prev.c), t.hadamard(i, chat));
    next.h = t.hadamard(o, t.tanh(next.c));
    return next;
}

LstmStateVars lstm_step(Tape& t, const LstmVars& w, Var x, LstmStateVars prev, Var z_x, Var z_h) {
    LstmStateVars masked{t.hadamard(prev.h, z_h), prev.c};
    return lstm_step(t, w, t.hadamard(x, z_x), masked);
}

Var embed(Tape& t, Var x, Var w) { return t.relu(t.matmul(x, w)); }

Var embed(Tape& t, Var x, Var w, Var z) { return t.hadamard(embed(t, x, w), z); }

} // namespace fse
