#pragma once

#include "foresee/array.hpp"
#include "foresee/rng.hpp"
#include "foresee/tape.hpp"

namespace fse {

/// Gate weights stored as one concatenated matrix over [x, h] with column
/// blocks ordered i, f, o, c-hat. Shapes: w {input_dim + hidden_dim,
/// 4*hidden_dim}, bias {1, 4*hidden_dim}.
struct LstmWeights {
    Array w;
    Array bias;

    int input_dim() const { return w.rows() - hidden_dim(); }
    int hidden_dim() const { return w.cols() / 4; }
};

struct LstmState {
    Array h;
    Array c;
};

/// Gate matrix uniform in +-1/sqrt(fan_in), forget-gate bias 1, rest 0.
LstmWeights lstm_init(int input_dim, int hidden_dim, Rng& rng);

/// Dense matrix {in, out}, uniform in +-1/sqrt(in).
Array dense_init(int in, int out, Rng& rng);

/// Bernoulli(keep_prob) mask in {0,1}, one row per sequence in the batch.
/// No 1/keep_prob rescaling: the same masks are active at prediction time.
Array sample_mask(Rng& rng, int rows, int dim, double keep_prob);

/// One recurrent step: gates = [x.zx, h.zh] W + b, c' = f.c + i.chat,
/// h' = o.tanh(c'). Masks are optional; when given they multiply the step
/// inputs (the variational tying reuses one mask across all steps).
LstmState lstm_step(const LstmWeights& w, const Array& x, const LstmState& prev,
                    const Array* z_x = nullptr, const Array* z_h = nullptr);

/// ReLU embedding without bias: relu(x W), optionally masked on the output.
Array embed(const Array& x, const Array& w, const Array* z = nullptr);

// Tape counterparts used when gradients are needed.

struct LstmVars {
    Var w;
    Var bias;
};

struct LstmStateVars {
    Var h;
    Var c;
};

LstmStateVars lstm_step(Tape& tape, const LstmVars& w, Var x, LstmStateVars prev);
LstmStateVars lstm_step(Tape& tape, const LstmVars& w, Var x, LstmStateVars prev, Var z_x, Var z_h);
Var embed(Tape& tape, Var x, Var w);
Var embed(Tape& tape, Var x, Var w, Var z);

} // namespace fse
