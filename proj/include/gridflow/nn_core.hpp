#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gridflow/errors.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

/// Dense tensor of doubles. Only rank-1 and rank-2 shapes are used here, but
/// the shape is kept general for checkpoint round-tripping.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw ShapeError("tensor data does not match shape");
    assert_finite();
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }
  static Tensor vec(std::vector<double> d) {
    std::vector<std::size_t> s{d.size()};
    return Tensor(std::move(s), std::move(d));
  }

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void assert_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) throw NumericError("tensor holds a non-finite value");
  }

  bool operator==(const Tensor&) const = default;
};

namespace detail {

/// Stabilized log(sum(exp(z))). Shared by the tape ops and the sampling path
/// so that recorded log-probs reproduce bit for bit under the tape.
inline double logsumexp(const Tensor& z) {
  double mx = z[0];
  for (double v : z.data) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z.data) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Handle to a node on a Tape.
struct Var {
  std::size_t i = static_cast<std::size_t>(-1);
};

/// Reverse-mode gradient tape over whole tensors. Every operation appends a
/// node holding its result and a closure that scatters incoming gradient to
/// its parents. One tape per loss evaluation; never shared across threads.
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }

  /// Leaf holding a copy of `t`; gradient is readable after backward().
  Var leaf(const Tensor& t) { return push(t, {}); }

  const Tensor& value(Var v) const { return nodes_[v.i].val; }
  const Tensor& grad(Var v) const { return nodes_[v.i].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// y = W x + b with W [out, in], x [in], b [out].
  Var affine(Var w, Var b, Var x) {
    const Tensor& W = val(w);
    const Tensor& B = val(b);
    const Tensor& X = val(x);
    if (W.shape.size() != 2 || X.shape.size() != 1 || B.shape.size() != 1)
      throw ShapeError("affine: want W rank 2, b and x rank 1");
    const std::size_t out = W.shape[0], in = W.shape[1];
    if (X.size() != in || B.size() != out)
      throw ShapeError("affine: dimension chain broken (" + std::to_string(out) + "x" +
                       std::to_string(in) + " vs x " + std::to_string(X.size()) + ", b " +
                       std::to_string(B.size()) + ")");
    Tensor y({out});
    for (std::size_t r = 0; r < out; ++r) {
      double acc = B[r];
      const double* wr = &W.data[r * in];
      for (std::size_t k = 0; k < in; ++k) acc += wr[k] * X[k];
      y[r] = acc;
    }
    return push(std::move(y), [w, b, x, out, in](Tape& t, const Node& n) {
      Tensor& gw = t.nodes_[w.i].grad;
      Tensor& gb = t.nodes_[b.i].grad;
      Tensor& gx = t.nodes_[x.i].grad;
      const Tensor& W = t.val(w);
      const Tensor& X = t.val(x);
      for (std::size_t r = 0; r < out; ++r) {
        const double g = n.grad[r];
        if (g == 0.0) continue;
        gb[r] += g;
        double* gwr = &gw.data[r * in];
        const double* wr = &W.data[r * in];
        for (std::size_t k = 0; k < in; ++k) {
          gwr[k] += g * X[k];
          gx[k] += g * wr[k];
        }
      }
    });
  }

  Var relu(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(y), [x](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      const Tensor& X = t.val(x);
      for (std::size_t i = 0; i < X.size(); ++i)
        if (X[i] > 0.0) gx[i] += n.grad[i];
    });
  }

  Var tanh_(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = std::tanh(v);
    return push(std::move(y), [x](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      for (std::size_t i = 0; i < n.val.size(); ++i)
        gx[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    same_shape(A, B, "add");
    Tensor y = A;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += B[i];
    return push(std::move(y), [a, b](Tape& t, const Node& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        t.nodes_[a.i].grad[i] += n.grad[i];
        t.nodes_[b.i].grad[i] += n.grad[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    same_shape(A, B, "mul");
    Tensor y = A;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= B[i];
    return push(std::move(y), [a, b](Tape& t, const Node& n) {
      const Tensor& A = t.val(a);
      const Tensor& B = t.val(b);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        t.nodes_[a.i].grad[i] += n.grad[i] * B[i];
        t.nodes_[b.i].grad[i] += n.grad[i] * A[i];
      }
    });
  }

  /// k * x + m, elementwise with scalar constants.
  Var affine_const(Var x, double k, double m) {
    Tensor y = val(x);
    for (auto& v : y.data) v = k * v + m;
    return push(std::move(y), [x, k](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += k * n.grad[i];
    });
  }

  Var exp_(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = std::exp(v);
    return push(std::move(y), [x](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      for (std::size_t i = 0; i < n.val.size(); ++i) gx[i] += n.grad[i] * n.val[i];
    });
  }

  Var square(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = v * v;
    return push(std::move(y), [x](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      const Tensor& X = t.val(x);
      for (std::size_t i = 0; i < X.size(); ++i) gx[i] += 2.0 * X[i] * n.grad[i];
    });
  }

  /// Elementwise clamp; gradient is masked where the bound binds.
  Var clamp(Var x, double lo, double hi) {
    Tensor y = val(x);
    for (auto& v : y.data) v = v < lo ? lo : (v > hi ? hi : v);
    return push(std::move(y), [x, lo, hi](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      const Tensor& X = t.val(x);
      for (std::size_t i = 0; i < X.size(); ++i)
        if (X[i] > lo && X[i] < hi) gx[i] += n.grad[i];
    });
  }

  /// Elementwise minimum of two tensors; ties send gradient to `a`.
  Var min2(Var a, Var b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    same_shape(A, B, "min2");
    Tensor y = A;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(A[i], B[i]);
    return push(std::move(y), [a, b](Tape& t, const Node& n) {
      const Tensor& A = t.val(a);
      const Tensor& B = t.val(b);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (A[i] <= B[i])
          t.nodes_[a.i].grad[i] += n.grad[i];
        else
          t.nodes_[b.i].grad[i] += n.grad[i];
      }
    });
  }

  /// Concatenate rank-1 tensors in order.
  Var concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw PreconditionError("concat: empty argument list");
    std::vector<double> out;
    for (Var v : xs) {
      const Tensor& X = val(v);
      if (X.shape.size() != 1) throw ShapeError("concat: rank-1 tensors only");
      out.insert(out.end(), X.data.begin(), X.data.end());
    }
    return push(Tensor::vec(std::move(out)), [xs](Tape& t, const Node& n) {
      std::size_t off = 0;
      for (Var v : xs) {
        Tensor& g = t.nodes_[v.i].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
        off += g.size();
      }
    });
  }

  /// Elementwise minimum over a nonempty set of same-shape rank-1 tensors.
  /// Gradient flows only to the first argmin in list order.
  Var agg_min(const std::vector<Var>& xs) { return agg_extreme(xs, true); }
  Var agg_max(const std::vector<Var>& xs) { return agg_extreme(xs, false); }

  Var agg_mean(const std::vector<Var>& xs) {
    if (xs.empty()) throw PreconditionError("agg_mean: empty argument list");
    Tensor y = val(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const Tensor& X = val(xs[k]);
      same_shape(y, X, "agg_mean");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += X[i];
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (auto& v : y.data) v *= inv;
    return push(std::move(y), [xs, inv](Tape& t, const Node& n) {
      for (Var v : xs) {
        Tensor& g = t.nodes_[v.i].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * n.grad[i];
      }
    });
  }

  /// Elementwise sum over same-shape rank-1 tensors.
  Var agg_sum(const std::vector<Var>& xs) {
    if (xs.empty()) throw PreconditionError("agg_sum: empty argument list");
    Tensor y = val(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const Tensor& X = val(xs[k]);
      same_shape(y, X, "agg_sum");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += X[i];
    }
    return push(std::move(y), [xs](Tape& t, const Node& n) {
      for (Var v : xs) {
        Tensor& g = t.nodes_[v.i].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
    });
  }

  /// Scalar sum of all elements.
  Var sum_elems(Var x) {
    double s = 0.0;
    for (double v : val(x).data) s += v;
    return push(Tensor::vec({s}), [x](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      for (auto& g : gx.data) g += n.grad[0];
    });
  }

  Var mean_elems(Var x) {
    const double inv = 1.0 / static_cast<double>(val(x).size());
    double s = 0.0;
    for (double v : val(x).data) s += v;
    return push(Tensor::vec({s * inv}), [x, inv](Tape& t, const Node& n) {
      Tensor& gx = t.nodes_[x.i].grad;
      for (auto& g : gx.data) g += inv * n.grad[0];
    });
  }

  /// Scalar element extraction.
  Var pick(Var x, std::size_t k) {
    if (k >= val(x).size()) throw ShapeError("pick: index out of range");
    return push(Tensor::vec({val(x)[k]}), [x, k](Tape& t, const Node& n) {
      t.nodes_[x.i].grad[k] += n.grad[0];
    });
  }

  /// log softmax(logits)[k], numerically stabilized.
  Var log_softmax_pick(Var logits, std::size_t k) {
    const Tensor& Z = val(logits);
    if (Z.shape.size() != 1 || k >= Z.size())
      throw ShapeError("log_softmax_pick: bad logits or index");
    const double lse = detail::logsumexp(Z);
    return push(Tensor::vec({Z[k] - lse}), [logits, k, lse](Tape& t, const Node& n) {
      Tensor& gz = t.nodes_[logits.i].grad;
      const Tensor& Z = t.val(logits);
      const double g = n.grad[0];
      for (std::size_t j = 0; j < Z.size(); ++j) {
        const double pj = std::exp(Z[j] - lse);
        gz[j] += g * ((j == k ? 1.0 : 0.0) - pj);
      }
    });
  }

  /// Shannon entropy of softmax(logits), in nats.
  Var softmax_entropy(Var logits) {
    const Tensor& Z = val(logits);
    if (Z.shape.size() != 1) throw ShapeError("softmax_entropy: rank-1 logits expected");
    const double lse = detail::logsumexp(Z);
    double h = 0.0;
    for (double z : Z.data) {
      const double lp = z - lse;
      h -= std::exp(lp) * lp;
    }
    return push(Tensor::vec({h}), [logits, lse, h](Tape& t, const Node& n) {
      Tensor& gz = t.nodes_[logits.i].grad;
      const Tensor& Z = t.val(logits);
      const double g = n.grad[0];
      for (std::size_t j = 0; j < Z.size(); ++j) {
        const double lp = Z[j] - lse;
        gz[j] += g * (-std::exp(lp) * (lp + h));
      }
    });
  }

  /// Seed d(loss)/d(loss) = 1 and sweep the tape in reverse. The loss must be
  /// a scalar node of this tape.
  void backward(Var loss) {
    if (loss.i >= nodes_.size()) throw GraphError("backward: variable not on this tape");
    if (nodes_[loss.i].val.size() != 1) throw GraphError("backward: loss must be scalar");
    nodes_[loss.i].grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const Node& n = nodes_[i];
      if (n.back) n.back(*this, n);
    }
  }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void(Tape&, const Node&)> back;
  };

  const Tensor& val(Var v) const {
    if (v.i >= nodes_.size()) throw GraphError("variable not on this tape");
    return nodes_[v.i].val;
  }

  static void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) throw ShapeError(std::string(op) + ": shape mismatch");
  }

  Var agg_extreme(const std::vector<Var>& xs, bool take_min) {
    if (xs.empty()) throw PreconditionError("agg_min/agg_max: empty argument list");
    Tensor y = val(xs[0]);
    std::vector<std::size_t> arg(y.size(), 0);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      const Tensor& X = val(xs[k]);
      same_shape(y, X, "agg_min/agg_max");
      for (std::size_t i = 0; i < y.size(); ++i) {
        const bool better = take_min ? X[i] < y[i] : X[i] > y[i];
        if (better) {
          y[i] = X[i];
          arg[i] = k;
        }
      }
    }
    return push(std::move(y), [xs, arg](Tape& t, const Node& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        t.nodes_[xs[arg[i]].i].grad[i] += n.grad[i];
    });
  }

  Var push(Tensor v, std::function<void(Tape&, const Node&)> back) {
    v.assert_finite();
    Node n;
    n.grad = Tensor(v.shape);
    n.val = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// MLP parameters and forward passes
// ---------------------------------------------------------------------------

enum class Act { relu, tanh, identity };

struct MlpParams {
  std::vector<Tensor> w;  // per layer, [out, in]
  std::vector<Tensor> b;  // per layer, [out]
  std::vector<Act> act;   // per layer

  std::size_t layer_count() const { return w.size(); }
  std::size_t in_dim() const { return w.front().shape[1]; }
  std::size_t out_dim() const { return w.back().shape[0]; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& t : w) n += t.size();
    for (const auto& t : b) n += t.size();
    return n;
  }
};

/// Layers sized dims[0] -> dims[1] -> ... -> dims.back(); relu on hidden
/// layers, identity output. Weights and biases drawn from
/// U[-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline MlpParams make_mlp(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw PreconditionError("make_mlp: need at least in and out dims");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l], out = dims[l + 1];
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor W({out, in});
    for (auto& v : W.data) v = rng.uniform(-s, s);
    Tensor B({out});
    for (auto& v : B.data) v = rng.uniform(-s, s);
    p.w.push_back(std::move(W));
    p.b.push_back(std::move(B));
    p.act.push_back(l + 2 < dims.size() ? Act::relu : Act::identity);
  }
  return p;
}

/// Plain forward pass without gradient tracking (rollouts, evaluation).
inline Tensor mlp_forward(const MlpParams& p, const Tensor& x) {
  if (x.shape.size() != 1 || x.size() != p.in_dim())
    throw ShapeError("mlp_forward: input dimension mismatch");
  Tensor h = x;
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    const Tensor& W = p.w[l];
    const std::size_t out = W.shape[0], in = W.shape[1];
    Tensor y({out});
    for (std::size_t r = 0; r < out; ++r) {
      double acc = p.b[l][r];
      const double* wr = &W.data[r * in];
      for (std::size_t k = 0; k < in; ++k) acc += wr[k] * h[k];
      y[r] = acc;
    }
    switch (p.act[l]) {
      case Act::relu:
        for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
        break;
      case Act::tanh:
        for (auto& v : y.data) v = std::tanh(v);
        break;
      case Act::identity: break;
    }
    h = std::move(y);
  }
  h.assert_finite();
  return h;
}

/// Tape-lifted copy of MLP parameters, for one loss evaluation.
struct MlpVars {
  std::vector<Var> w, b;
  const MlpParams* shape = nullptr;
};

inline MlpVars lift_mlp(Tape& tape, const MlpParams& p) {
  MlpVars v;
  v.shape = &p;
  for (const auto& t : p.w) v.w.push_back(tape.leaf(t));
  for (const auto& t : p.b) v.b.push_back(tape.leaf(t));
  return v;
}

inline Var mlp_forward(Tape& tape, const MlpVars& m, Var x) {
  Var h = x;
  for (std::size_t l = 0; l < m.w.size(); ++l) {
    h = tape.affine(m.w[l], m.b[l], h);
    switch (m.shape->act[l]) {
      case Act::relu: h = tape.relu(h); break;
      case Act::tanh: h = tape.tanh_(h); break;
      case Act::identity: break;
    }
  }
  return h;
}

/// Accumulate tape gradients of a lifted MLP into a gradient struct shaped
/// like the parameters.
inline void accumulate_mlp_grads(const Tape& tape, const MlpVars& vars, MlpParams& grads) {
  for (std::size_t l = 0; l < vars.w.size(); ++l) {
    const Tensor& gw = tape.grad(vars.w[l]);
    const Tensor& gb = tape.grad(vars.b[l]);
    for (std::size_t i = 0; i < gw.size(); ++i) grads.w[l][i] += gw[i];
    for (std::size_t i = 0; i < gb.size(); ++i) grads.b[l][i] += gb[i];
  }
}

/// Zero-filled gradient holder with the same geometry as `p`.
inline MlpParams zeros_like(const MlpParams& p) {
  MlpParams z = p;
  for (auto& t : z.w) t.data.assign(t.size(), 0.0);
  for (auto& t : z.b) t.data.assign(t.size(), 0.0);
  return z;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Tensor> m, v;  // aligned with the flat parameter list
};

/// Textbook Adam with bias correction over a flat view of parameter tensors.
/// Moment buffers are created on first use.
inline void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads,
                      AdamState& st) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads length mismatch");
  if (st.m.empty()) {
    for (auto* p : params) {
      st.m.emplace_back(p->shape);
      st.v.emplace_back(p->shape);
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam_step: state does not match params");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    if (g.shape != p.shape) throw ShapeError("adam_step: gradient shape mismatch");
    Tensor& m = st.m[k];
    Tensor& v = st.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= st.lr * mhat / (std::sqrt(vhat) + st.epsilon);
    }
    p.assert_finite();
  }
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central-difference check of analytic gradients on `samples` randomly chosen
/// parameter coordinates. `loss_fn` must recompute the loss from the current
/// parameter values. Two classes of coordinate are skipped because a finite
/// difference carries no signal there: points where the full-step and
/// half-step estimates disagree (the function is locally non-smooth, a relu
/// or min/max argument switches inside the probing interval), and points
/// where both gradients are below `atol` (the difference of two O(1) losses
/// cancels to roundoff, so fd resolution is about 1e-11 per unit of loss).
/// Returns the maximum relative error observed.
inline double finite_diff_check(std::vector<Tensor*> params,
                                const std::vector<const Tensor*>& analytic,
                                const std::function<double()>& loss_fn, int samples, Rng& rng,
                                double h = 1e-5, double atol = 1e-6) {
  if (params.size() != analytic.size())
    throw ShapeError("finite_diff_check: params/grads length mismatch");
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const std::size_t k = rng.uniform_index(params.size());
    Tensor& p = *params[k];
    if (p.size() == 0) continue;
    const std::size_t i = rng.uniform_index(p.size());
    const double keep = p[i];
    auto central = [&](double step) {
      p[i] = keep + step;
      const double up = loss_fn();
      p[i] = keep - step;
      const double dn = loss_fn();
      p[i] = keep;
      return (up - dn) / (2.0 * step);
    };
    const double fd = central(h);
    const double fd_half = central(0.5 * h);
    const double scale = std::max({std::abs(fd), std::abs(fd_half), 1e-8});
    if (std::abs(fd - fd_half) > 1e-3 * scale) continue;  // kink inside interval
    const double an = (*analytic[k])[i];
    const double denom = std::max(std::abs(fd), std::abs(an));
    if (denom < atol) continue;  // below finite-difference resolution
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

}  // namespace gridflow
