#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dfinger/nn/tape.hpp"

namespace dfinger::nn {

// y = x W + b over the trailing dimension. x: [..., I], W: [I, O], b: [O].
Var Linear(Tape& tape, Var x, Var w, std::optional<Var> b = std::nullopt);

// x: [B, T, C_in], kernel: [K, C_in, C_out], optional bias [C_out].
// y[t] = sum_j x[t - (K - 1) + j] kernel[j] with zeros left of t = 0, so
// kernel[K - 1] is the tap on the current frame.
Var CausalConv1d(Tape& tape, Var x, Var kernel, std::optional<Var> bias = std::nullopt);

Var Relu(Tape& tape, Var x);
Var Sigmoid(Tape& tape, Var x);
Var Tanh(Tape& tape, Var x);
Var Add(Tape& tape, Var a, Var b);
Var Mul(Tape& tape, Var a, Var b);
Var Scale(Tape& tape, Var x, double s);

// x: [B, T, D] plus v: [B, D] broadcast over T.
Var AddOverTime(Tape& tape, Var x, Var v);
// x: [B, T, D] -> [B, D]; throws kEmptyFingerprint when T == 0.
Var MeanOverTime(Tape& tape, Var x);
// Concatenates along the trailing dimension; leading dims must agree.
Var ConcatLast(Tape& tape, const std::vector<Var>& parts);

// sum(x * weights) for a constant weight tensor of the same shape.
Var WeightedSum(Tape& tape, Var x, const Tensor& weights);

// Softmax over the trailing dimension.
Var SoftmaxLast(Tape& tape, Var x);
// a: [N, M, K], b: [N, P, K] -> [N, M, P] = a b^T per batch entry.
Var BatchedMatMulNT(Tape& tape, Var a, Var b);
// a: [N, M, P], b: [N, P, K] -> [N, M, K].
Var BatchedMatMul(Tape& tape, Var a, Var b);
// [B, T, H*d] <-> [B*H, T, d].
Var SplitHeads(Tape& tape, Var x, std::size_t heads);
Var MergeHeads(Tape& tape, Var x, std::size_t heads);

struct GruParams {
  Var wx;  // [I, 3H], gate order r, z, n
  Var wh;  // [H, 3H]
  Var bx;  // [3H]
  Var bh;  // [3H]
};

// One GRU update: r = s(x Wxr + bxr + h Whr + bhr), z likewise,
// n = tanh(x Wxn + bxn + r * (h Whn + bhn)), h' = (1 - z) n + z h.
// x_t: [B, I], h_prev: [B, H].
Var GruStep(Tape& tape, Var x_t, Var h_prev, const GruParams& p);

// The same recurrence unrolled over x: [B, T, I] from h0 ([B, H]) or zeros,
// as one node with hand-written backpropagation through time. Returns
// [B, T, H]. A non-finite state raises kNumeric naming the step.
Var GruSequence(Tape& tape, Var x, const GruParams& p, std::optional<Var> h0 = std::nullopt);

struct AttentionParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;  // [D, D] and [D]
};

// Scaled dot-product attention with `heads` heads; queries [B, Tq, D] attend
// over keys/values [B, Tk, D], heads are concatenated and projected by wo.
// If `weights` is non-null it receives the [B*heads, Tq, Tk] softmax rows.
Var MultiheadAttention(Tape& tape, Var q, Var k, Var v, std::size_t heads,
                       const AttentionParams& p, Tensor* weights = nullptr);

}  // namespace dfinger::nn
