#include "dfinger/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>

#include "dfinger/error.hpp"

namespace dfinger::nn {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;
using CVecMap = Eigen::Map<const Eigen::RowVectorXd>;

MapR Mat(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MapR(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

CMapR Mat(const Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return CMapR(t.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// dst[j] += sum_i src(i, j) in row order. Eigen's colwise().sum() may
// reassociate depending on buffer alignment, which breaks run-to-run
// reproducibility of bias gradients.
template <typename M>
void AddColumnSums(double* dst, const M& src) {
  for (Eigen::Index i = 0; i < src.rows(); ++i)
    for (Eigen::Index j = 0; j < src.cols(); ++j) dst[j] += src(i, j);
}

void Require(bool ok, const std::string& what) {
  if (!ok) Fail(ErrorKind::kInvalidShape, what);
}

double SigmoidScalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F, typename D>
Var Elementwise(Tape& tape, const std::string& name, Var x, F forward, D derivative) {
  const Tensor& xv = tape.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = forward(xv[i]);
  return tape.Record(name, std::move(y), {x}, [x, derivative](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& yv = t.value_of(self);
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
  });
}

}  // namespace

Var Linear(Tape& tape, Var x, Var w, std::optional<Var> b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  Require(wv.rank() == 2 && xv.rank() >= 1 && xv.last_dim() == wv.dim(0),
          "linear: input " + ShapeString(xv.shape()) + " vs weight " + ShapeString(wv.shape()));
  const std::size_t n = xv.leading(), in = wv.dim(0), out = wv.dim(1);
  if (b) {
    Require(tape.value(*b).shape() == Shape{out}, "linear: bias shape " +
                                                       ShapeString(tape.value(*b).shape()));
  }
  Shape ys = xv.shape();
  ys.back() = out;
  Tensor y(ys);
  Mat(y, n, out).noalias() = Mat(xv, n, in) * Mat(wv, in, out);
  if (b) Mat(y, n, out).rowwise() += CVecMap(tape.value(*b).data(), static_cast<Eigen::Index>(out));

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return tape.Record("linear", std::move(y), inputs, [x, w, b, n, in, out](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.requires_grad(x)) {
      Mat(t.grad(x), n, in).noalias() += Mat(g, n, out) * Mat(t.value(w), in, out).transpose();
    }
    if (t.requires_grad(w)) {
      Mat(t.grad(w), in, out).noalias() += Mat(t.value(x), n, in).transpose() * Mat(g, n, out);
    }
    if (b && t.requires_grad(*b)) {
      AddColumnSums(t.grad(*b).data(), Mat(g, n, out));
    }
  });
}

Var CausalConv1d(Tape& tape, Var x, Var kernel, std::optional<Var> bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernel);
  Require(xv.rank() == 3 && kv.rank() == 3 && kv.dim(0) >= 1 && kv.dim(1) == xv.dim(2),
          "causal_conv1d: input " + ShapeString(xv.shape()) + " vs kernel " +
              ShapeString(kv.shape()));
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), cin = xv.dim(2);
  const std::size_t taps = kv.dim(0), cout = kv.dim(2);
  if (bias) {
    Require(tape.value(*bias).shape() == Shape{cout}, "causal_conv1d: bias shape");
  }
  Tensor y({batch, steps, cout});
  for (std::size_t b = 0; b < batch; ++b) {
    auto yb = Mat(y, steps, cout, b * steps * cout);
    for (std::size_t j = 0; j < taps; ++j) {
      const std::size_t shift = taps - 1 - j;
      if (shift >= steps) continue;
      const std::size_t rows = steps - shift;
      yb.bottomRows(static_cast<Eigen::Index>(rows)).noalias() +=
          Mat(xv, steps, cin, b * steps * cin).topRows(static_cast<Eigen::Index>(rows)) *
          Mat(kv, cin, cout, j * cin * cout);
    }
    if (bias) yb.rowwise() += CVecMap(tape.value(*bias).data(), static_cast<Eigen::Index>(cout));
  }
  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return tape.Record(
      "causal_conv1d", std::move(y), inputs,
      [x, kernel, bias, batch, steps, cin, cout, taps](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const bool gx = t.requires_grad(x), gk = t.requires_grad(kernel);
        for (std::size_t b = 0; b < batch; ++b) {
          auto gb = Mat(g, steps, cout, b * steps * cout);
          for (std::size_t j = 0; j < taps; ++j) {
            const std::size_t shift = taps - 1 - j;
            if (shift >= steps) continue;
            const auto rows = static_cast<Eigen::Index>(steps - shift);
            if (gx) {
              Mat(t.grad(x), steps, cin, b * steps * cin).topRows(rows).noalias() +=
                  gb.bottomRows(rows) * Mat(t.value(kernel), cin, cout, j * cin * cout).transpose();
            }
            if (gk) {
              Mat(t.grad(kernel), cin, cout, j * cin * cout).noalias() +=
                  Mat(t.value(x), steps, cin, b * steps * cin).topRows(rows).transpose() *
                  gb.bottomRows(rows);
            }
          }
        }
        if (bias && t.requires_grad(*bias)) {
          AddColumnSums(t.grad(*bias).data(), Mat(g, batch * steps, cout));
        }
      });
}

Var Relu(Tape& tape, Var x) {
  return Elementwise(
      tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var Sigmoid(Tape& tape, Var x) {
  return Elementwise(
      tape, "sigmoid", x, SigmoidScalar, [](double, double y) { return y * (1.0 - y); });
}

Var Tanh(Tape& tape, Var x) {
  return Elementwise(
      tape, "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var Add(Tape& tape, Var a, Var b) {
  RequireSameShape(tape.value(a).shape(), tape.value(b).shape(), "add");
  Tensor y = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.Record("add", std::move(y), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      Tensor& gi = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var Mul(Tape& tape, Var a, Var b) {
  RequireSameShape(tape.value(a).shape(), tape.value(b).shape(), "mul");
  Tensor y = tape.value(a);
  const Tensor& bv = tape.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return tape.Record("mul", std::move(y), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var Scale(Tape& tape, Var x, double s) {
  Tensor y = tape.value(x);
  for (double& v : y.values()) v *= s;
  return tape.Record("scale", std::move(y), {x}, [x, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

Var AddOverTime(Tape& tape, Var x, Var v) {
  const Tensor& xv = tape.value(x);
  const Tensor& vv = tape.value(v);
  Require(xv.rank() == 3 && vv.rank() == 2 && vv.dim(0) == xv.dim(0) && vv.dim(1) == xv.dim(2),
          "add_over_time: " + ShapeString(xv.shape()) + " + " + ShapeString(vv.shape()));
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), d = xv.dim(2);
  Tensor y = xv;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < steps; ++s) {
      double* row = y.data() + (b * steps + s) * d;
      for (std::size_t i = 0; i < d; ++i) row[i] += vv[b * d + i];
    }
  }
  return tape.Record("add_over_time", std::move(y), {x, v},
                     [x, v, batch, steps, d](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad_of(self);
                       if (t.requires_grad(x)) {
                         Tensor& gx = t.grad(x);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (t.requires_grad(v)) {
                         Tensor& gv = t.grad(v);
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t s = 0; s < steps; ++s)
                             for (std::size_t i = 0; i < d; ++i)
                               gv[b * d + i] += g[(b * steps + s) * d + i];
                       }
                     });
}

Var MeanOverTime(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Require(xv.rank() == 3, "mean_over_time: expected [B, T, D], got " + ShapeString(xv.shape()));
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), d = xv.dim(2);
  if (steps == 0) Fail(ErrorKind::kEmptyFingerprint, "mean over zero frames");
  Tensor y({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < steps; ++s)
      for (std::size_t i = 0; i < d; ++i) y[b * d + i] += xv[(b * steps + s) * d + i];
    for (std::size_t i = 0; i < d; ++i) y[b * d + i] /= static_cast<double>(steps);
  }
  return tape.Record("mean_over_time", std::move(y), {x},
                     [x, batch, steps, d](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad_of(self);
                       Tensor& gx = t.grad(x);
                       const double inv = 1.0 / static_cast<double>(steps);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t s = 0; s < steps; ++s)
                           for (std::size_t i = 0; i < d; ++i)
                             gx[(b * steps + s) * d + i] += g[b * d + i] * inv;
                     });
}

Var ConcatLast(Tape& tape, const std::vector<Var>& parts) {
  Require(!parts.empty(), "concat: no inputs");
  const Tensor& first = tape.value(parts[0]);
  const std::size_t rows = first.leading();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    Shape lead(v.shape().begin(), v.shape().end() - 1);
    Shape lead0(first.shape().begin(), first.shape().end() - 1);
    Require(lead == lead0, "concat: leading dims differ");
    widths.push_back(v.last_dim());
    total += v.last_dim();
  }
  Shape ys = first.shape();
  ys.back() = total;
  Tensor y(ys);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = tape.value(parts[k]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], y.data() + r * total + col);
    col += widths[k];
  }
  return tape.Record("concat", std::move(y), parts,
                     [parts, widths, rows, total](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad_of(self);
                       std::size_t col = 0;
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         if (t.requires_grad(parts[k])) {
                           Tensor& gp = t.grad(parts[k]);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t i = 0; i < widths[k]; ++i)
                               gp[r * widths[k] + i] += g[r * total + col + i];
                         }
                         col += widths[k];
                       }
                     });
}

Var WeightedSum(Tape& tape, Var x, const Tensor& weights) {
  RequireSameShape(tape.value(x).shape(), weights.shape(), "weighted_sum");
  const Tensor& xv = tape.value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * weights[i];
  return tape.Record("weighted_sum", Tensor({1}, {acc}), {x},
                     [x, weights](Tape& t, std::size_t self) {
                       const double g = t.grad_of(self)[0];
                       Tensor& gx = t.grad(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
                     });
}

Var SoftmaxLast(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const std::size_t rows = xv.leading(), cols = xv.last_dim();
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* out = y.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double sum = 0.0;
    for (std::size_t i = 0; i < cols; ++i) sum += (out[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < cols; ++i) out[i] /= sum;
  }
  return tape.Record("softmax", std::move(y), {x}, [x, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& yv = t.value_of(self);
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < cols; ++i) dot += g[r * cols + i] * yv[r * cols + i];
      for (std::size_t i = 0; i < cols; ++i)
        gx[r * cols + i] += yv[r * cols + i] * (g[r * cols + i] - dot);
    }
  });
}

Var BatchedMatMulNT(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2),
          "bmm_nt: " + ShapeString(av.shape()) + " x " + ShapeString(bv.shape()));
  const std::size_t n = av.dim(0), m = av.dim(1), p = bv.dim(1), k = av.dim(2);
  Tensor y({n, m, p});
  for (std::size_t i = 0; i < n; ++i) {
    Mat(y, m, p, i * m * p).noalias() = Mat(av, m, k, i * m * k) * Mat(bv, p, k, i * p * k).transpose();
  }
  return tape.Record("bmm_nt", std::move(y), {a, b}, [a, b, n, m, p, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < n; ++i) {
      if (t.requires_grad(a))
        Mat(t.grad(a), m, k, i * m * k).noalias() += Mat(g, m, p, i * m * p) * Mat(t.value(b), p, k, i * p * k);
      if (t.requires_grad(b))
        Mat(t.grad(b), p, k, i * p * k).noalias() +=
            Mat(g, m, p, i * m * p).transpose() * Mat(t.value(a), m, k, i * m * k);
    }
  });
}

Var BatchedMatMul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1),
          "bmm: " + ShapeString(av.shape()) + " x " + ShapeString(bv.shape()));
  const std::size_t n = av.dim(0), m = av.dim(1), p = av.dim(2), k = bv.dim(2);
  Tensor y({n, m, k});
  for (std::size_t i = 0; i < n; ++i) {
    Mat(y, m, k, i * m * k).noalias() = Mat(av, m, p, i * m * p) * Mat(bv, p, k, i * p * k);
  }
  return tape.Record("bmm", std::move(y), {a, b}, [a, b, n, m, p, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    for (std::size_t i = 0; i < n; ++i) {
      if (t.requires_grad(a))
        Mat(t.grad(a), m, p, i * m * p).noalias() +=
            Mat(g, m, k, i * m * k) * Mat(t.value(b), p, k, i * p * k).transpose();
      if (t.requires_grad(b))
        Mat(t.grad(b), p, k, i * p * k).noalias() +=
            Mat(t.value(a), m, p, i * m * p).transpose() * Mat(g, m, k, i * m * k);
    }
  });
}

namespace {

// Index map between [B, T, H*d] and [B*H, T, d].
struct HeadLayout {
  std::size_t batch, steps, heads, d;
  std::size_t merged(std::size_t b, std::size_t s, std::size_t h, std::size_t i) const {
    return (b * steps + s) * heads * d + h * d + i;
  }
  std::size_t split(std::size_t b, std::size_t s, std::size_t h, std::size_t i) const {
    return ((b * heads + h) * steps + s) * d + i;
  }
};

template <typename F>
void ForEachHeadIndex(const HeadLayout& l, F f) {
  for (std::size_t b = 0; b < l.batch; ++b)
    for (std::size_t h = 0; h < l.heads; ++h)
      for (std::size_t s = 0; s < l.steps; ++s)
        for (std::size_t i = 0; i < l.d; ++i) f(l.merged(b, s, h, i), l.split(b, s, h, i));
}

}  // namespace

Var SplitHeads(Tape& tape, Var x, std::size_t heads) {
  const Tensor& xv = tape.value(x);
  if (heads == 0 || xv.rank() != 3 || xv.dim(2) % heads != 0) {
    Fail(ErrorKind::kInvalidConfig, "split_heads: width " +
                                        (xv.rank() == 3 ? std::to_string(xv.dim(2)) : ShapeString(xv.shape())) +
                                        " not divisible by " + std::to_string(heads) + " heads");
  }
  HeadLayout l{xv.dim(0), xv.dim(1), heads, xv.dim(2) / heads};
  Tensor y({l.batch * heads, l.steps, l.d});
  ForEachHeadIndex(l, [&](std::size_t m, std::size_t s) { y[s] = xv[m]; });
  return tape.Record("split_heads", std::move(y), {x}, [x, l](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad(x);
    ForEachHeadIndex(l, [&](std::size_t m, std::size_t s) { gx[m] += g[s]; });
  });
}

Var MergeHeads(Tape& tape, Var x, std::size_t heads) {
  const Tensor& xv = tape.value(x);
  Require(heads > 0 && xv.rank() == 3 && xv.dim(0) % heads == 0, "merge_heads: bad shape");
  HeadLayout l{xv.dim(0) / heads, xv.dim(1), heads, xv.dim(2)};
  Tensor y({l.batch, l.steps, heads * l.d});
  ForEachHeadIndex(l, [&](std::size_t m, std::size_t s) { y[m] = xv[s]; });
  return tape.Record("merge_heads", std::move(y), {x}, [x, l](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad(x);
    ForEachHeadIndex(l, [&](std::size_t m, std::size_t s) { gx[s] += g[m]; });
  });
}

namespace {

// Saved activations of an unrolled GRU, all [B, T, H] except where noted.
struct GruCache {
  std::size_t batch = 0, steps = 0, in = 0, hidden = 0;
  Tensor r, z, n, ghn;
  Tensor h_prev;
};

void CheckGruShapes(const Tape& tape, std::size_t in, const GruParams& p, std::size_t* hidden) {
  const Tensor& wh = tape.value(p.wh);
  Require(wh.rank() == 2 && wh.dim(1) == 3 * wh.dim(0), "gru: wh must be [H, 3H], got " +
                                                            ShapeString(wh.shape()));
  const std::size_t h = wh.dim(0);
  Require(tape.value(p.wx).shape() == Shape{in, 3 * h}, "gru: wx must be [I, 3H], got " +
                                                            ShapeString(tape.value(p.wx).shape()));
  Require(tape.value(p.bx).shape() == Shape{3 * h} && tape.value(p.bh).shape() == Shape{3 * h},
          "gru: biases must be [3H]");
  *hidden = h;
}

// x: [B, T, I]; h0 may be empty (zeros). Returns outputs [B, T, H].
Tensor GruForward(const Tensor& x, const Tensor* h0, const Tensor& wx, const Tensor& wh,
                  const Tensor& bx, const Tensor& bh, GruCache& c) {
  const std::size_t batch = c.batch, steps = c.steps, in = c.in, hid = c.hidden;
  const std::size_t g3 = 3 * hid;
  // Input projections for every step in one product: [B*T, 3H].
  MatR gx = Mat(x, batch * steps, in) * Mat(wx, in, g3);
  gx.rowwise() += CVecMap(bx.data(), static_cast<Eigen::Index>(g3));
  c.r = Tensor({batch, steps, hid});
  c.z = Tensor({batch, steps, hid});
  c.n = Tensor({batch, steps, hid});
  c.ghn = Tensor({batch, steps, hid});
  c.h_prev = Tensor({batch, steps, hid});
  Tensor out({batch, steps, hid});

  MatR h = h0 ? MatR(Mat(*h0, batch, hid)) : MatR::Zero(static_cast<Eigen::Index>(batch),
                                                        static_cast<Eigen::Index>(hid));
  MatR gh(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(g3));
  for (std::size_t s = 0; s < steps; ++s) {
    gh.noalias() = h * Mat(wh, hid, g3);
    gh.rowwise() += CVecMap(bh.data(), static_cast<Eigen::Index>(g3));
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * steps + s) * hid;
      const double* gxr = gx.data() + (b * steps + s) * g3;
      const double* ghr = gh.data() + b * g3;
      for (std::size_t i = 0; i < hid; ++i) {
        const double hp = h(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i));
        const double r = SigmoidScalar(gxr[i] + ghr[i]);
        const double z = SigmoidScalar(gxr[hid + i] + ghr[hid + i]);
        const double ghn = ghr[2 * hid + i];
        const double n = std::tanh(gxr[2 * hid + i] + r * ghn);
        const double hn = (1.0 - z) * n + z * hp;
        if (!std::isfinite(hn)) {
          Fail(ErrorKind::kNumeric, "gru: non-finite state at step " + std::to_string(s));
        }
        c.r[base + i] = r;
        c.z[base + i] = z;
        c.n[base + i] = n;
        c.ghn[base + i] = ghn;
        c.h_prev[base + i] = hp;
        out[base + i] = hn;
      }
    }
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < hid; ++i)
        h(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) = out[(b * steps + s) * hid + i];
  }
  return out;
}

// Backpropagation through time. grad_out: [B, T, H].
void GruBackward(Tape& t, const GruCache& c, const Tensor& grad_out, Var x, const GruParams& p,
                 std::optional<Var> h0) {
  const std::size_t batch = c.batch, steps = c.steps, in = c.in, hid = c.hidden;
  const std::size_t g3 = 3 * hid;
  const Tensor& wh = t.value(p.wh);
  MatR dgx(static_cast<Eigen::Index>(batch * steps), static_cast<Eigen::Index>(g3));
  MatR dgh(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(g3));
  MatR dh = MatR::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(hid));
  MatR hprev(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(hid));
  MatR dwh = MatR::Zero(static_cast<Eigen::Index>(hid), static_cast<Eigen::Index>(g3));
  Eigen::RowVectorXd dbh = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(g3));

  for (std::size_t s = steps; s-- > 0;) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * steps + s) * hid;
      double* dgxr = dgx.data() + (b * steps + s) * g3;
      double* dghr = dgh.data() + b * g3;
      for (std::size_t i = 0; i < hid; ++i) {
        const auto bi = static_cast<Eigen::Index>(b), ii = static_cast<Eigen::Index>(i);
        const double d = dh(bi, ii) + grad_out[base + i];
        const double r = c.r[base + i], z = c.z[base + i], n = c.n[base + i];
        const double hp = c.h_prev[base + i];
        const double dn = d * (1.0 - z);
        const double dz = d * (hp - n);
        const double dan = dn * (1.0 - n * n);
        const double dar = dan * c.ghn[base + i] * r * (1.0 - r);
        const double daz = dz * z * (1.0 - z);
        dgxr[i] = dar;
        dgxr[hid + i] = daz;
        dgxr[2 * hid + i] = dan;
        dghr[i] = dar;
        dghr[hid + i] = daz;
        dghr[2 * hid + i] = dan * r;
        dh(bi, ii) = d * z;
        hprev(bi, ii) = hp;
      }
    }
    dwh.noalias() += hprev.transpose() * dgh;
    AddColumnSums(dbh.data(), dgh);
    dh.noalias() += dgh * Mat(wh, hid, g3).transpose();
  }

  if (t.requires_grad(p.wh)) Mat(t.grad(p.wh), hid, g3) += dwh;
  if (t.requires_grad(p.bh)) VecMap(t.grad(p.bh).data(), static_cast<Eigen::Index>(g3)) += dbh;
  if (t.requires_grad(p.bx))
    AddColumnSums(t.grad(p.bx).data(), dgx);
  if (t.requires_grad(p.wx))
    Mat(t.grad(p.wx), in, g3).noalias() += Mat(t.value(x), batch * steps, in).transpose() * dgx;
  if (t.requires_grad(x))
    Mat(t.grad(x), batch * steps, in).noalias() += dgx * Mat(t.value(p.wx), in, g3).transpose();
  if (h0 && t.requires_grad(*h0)) Mat(t.grad(*h0), batch, hid) += dh;
}

}  // namespace

Var GruSequence(Tape& tape, Var x, const GruParams& p, std::optional<Var> h0) {
  const Tensor& xv = tape.value(x);
  Require(xv.rank() == 3, "gru: input must be [B, T, I], got " + ShapeString(xv.shape()));
  auto cache = std::make_shared<GruCache>();
  cache->batch = xv.dim(0);
  cache->steps = xv.dim(1);
  cache->in = xv.dim(2);
  CheckGruShapes(tape, cache->in, p, &cache->hidden);
  if (h0) {
    Require(tape.value(*h0).shape() == Shape{cache->batch, cache->hidden}, "gru: h0 shape");
  }
  Tensor out = GruForward(xv, h0 ? &tape.value(*h0) : nullptr, tape.value(p.wx), tape.value(p.wh),
                          tape.value(p.bx), tape.value(p.bh), *cache);
  std::vector<Var> inputs{x, p.wx, p.wh, p.bx, p.bh};
  if (h0) inputs.push_back(*h0);
  return tape.Record("gru_sequence", std::move(out), inputs,
                     [cache, x, p, h0](Tape& t, std::size_t self) {
                       GruBackward(t, *cache, t.grad_of(self), x, p, h0);
                     });
}

Var GruStep(Tape& tape, Var x_t, Var h_prev, const GruParams& p) {
  const Tensor& xv = tape.value(x_t);
  const Tensor& hv = tape.value(h_prev);
  Require(xv.rank() == 2 && hv.rank() == 2 && xv.dim(0) == hv.dim(0),
          "gru_step: x " + ShapeString(xv.shape()) + ", h " + ShapeString(hv.shape()));
  auto cache = std::make_shared<GruCache>();
  cache->batch = xv.dim(0);
  cache->steps = 1;
  cache->in = xv.dim(1);
  CheckGruShapes(tape, cache->in, p, &cache->hidden);
  Require(hv.dim(1) == cache->hidden, "gru_step: hidden width mismatch");
  const Tensor x3 = xv.Reshaped({cache->batch, 1, cache->in});
  Tensor out = GruForward(x3, &hv, tape.value(p.wx), tape.value(p.wh), tape.value(p.bx),
                          tape.value(p.bh), *cache);
  out = out.Reshaped({cache->batch, cache->hidden});
  return tape.Record("gru_step", std::move(out), {x_t, h_prev, p.wx, p.wh, p.bx, p.bh},
                     [cache, x_t, h_prev, p](Tape& t, std::size_t self) {
                       // Shapes [B, H] and [B, I] are [B, 1, H] / [B, 1, I] in memory.
                       GruBackward(t, *cache, t.grad_of(self), x_t, p, h_prev);
                     });
}

Var MultiheadAttention(Tape& tape, Var q, Var k, Var v, std::size_t heads,
                       const AttentionParams& p, Tensor* weights) {
  const Tensor& qv = tape.value(q);
  if (heads == 0 || qv.rank() != 3 || qv.dim(2) % heads != 0) {
    Fail(ErrorKind::kInvalidConfig, "attention: model width must be divisible by heads (" +
                                        ShapeString(qv.shape()) + ", " + std::to_string(heads) +
                                        " heads)");
  }
  const std::size_t d = qv.dim(2) / heads;
  Var qh = SplitHeads(tape, Linear(tape, q, p.wq, p.bq), heads);
  Var kh = SplitHeads(tape, Linear(tape, k, p.wk, p.bk), heads);
  Var vh = SplitHeads(tape, Linear(tape, v, p.wv, p.bv), heads);
  Var scores = Scale(tape, BatchedMatMulNT(tape, qh, kh), 1.0 / std::sqrt(static_cast<double>(d)));
  Var attn = SoftmaxLast(tape, scores);
  if (weights) *weights = tape.value(attn);
  Var mixed = MergeHeads(tape, BatchedMatMul(tape, attn, vh), heads);
  return Linear(tape, mixed, p.wo, p.bo);
}

}  // namespace dfinger::nn
