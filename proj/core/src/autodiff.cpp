#include "dip/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>
#include <numbers>

namespace dip {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) throw ShapeError("vars belong to different graphs");
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 input, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_scalar(const Tensor& t, const char* op) {
  if (t.size() != 1) throw ShapeError(std::string(op) + ": expected one-element tensor");
}

}  // namespace

const Tensor& Var::value() const {
  if (graph == nullptr) throw ShapeError("unbound Var");
  return graph->value(id);
}

Var Graph::constant(Tensor value) {
  require_finite(value, "constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(const ParamStore& store, const std::string& name, bool trainable) {
  const bool track = trainable && record_;
  if (track) {
    if (bound_store_ != nullptr && bound_store_ != &store) {
      throw ShapeError("graph already bound to a different ParamStore");
    }
    bound_store_ = &store;
  }
  const std::string key = (track ? "t:" : "c:") + name;
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.value = store.value(name);
  require_finite(n.value, name.c_str());
  n.requires_grad = track;
  n.param_index = track ? static_cast<std::ptrdiff_t>(store.index_of(name)) : -1;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(key, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward,
                const char* op) {
  return push(std::move(value), std::vector<Var>(inputs), std::move(backward), op);
}

Var Graph::push(Tensor value, const std::vector<Var>& inputs, BackwardFn backward,
                const char* op) {
  require_finite(value, op);
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.graph != this) throw ShapeError(std::string(op) + ": input from another graph");
    needs = needs || nodes_[in.id].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && needs;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_ref(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

const Tensor& Graph::grad_of(std::size_t id) const { return nodes_.at(id).grad; }

void Graph::backward(Var root) {
  if (nodes_.empty() || root.graph != this || root.id >= nodes_.size()) {
    throw ShapeError("backward requested before a forward pass was recorded");
  }
  if (nodes_[root.id].value.size() != 1) {
    throw ShapeError("backward root must be a one-element tensor, got " +
                     shape_string(nodes_[root.id].value.shape()));
  }
  if (backward_done_) throw ShapeError("backward already ran on this graph");
  backward_done_ = true;
  grad_ref(root.id).fill(1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::accumulate_param_grads(ParamStore& store) const {
  if (bound_store_ == nullptr) return;
  if (bound_store_ != &store) throw ShapeError("accumulate_param_grads: store mismatch");
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || n.grad.size() == 0) continue;
    Tensor& g = store[static_cast<std::size_t>(n.param_index)].grad;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
  }
}

std::vector<std::pair<std::size_t, Tensor>> Graph::param_grads() const {
  std::vector<std::pair<std::size_t, Tensor>> out;
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || n.grad.size() == 0) continue;
    out.emplace_back(static_cast<std::size_t>(n.param_index), n.grad);
  }
  return out;
}

namespace ad {

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimension mismatch " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return a.graph->push(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const auto dy = as_mat(g.grad_of(self));
    if (g.requires_grad(a.id)) as_mat(g.grad_ref(a.id)).noalias() += dy * as_mat(g.value(b.id)).transpose();
    if (g.requires_grad(b.id)) as_mat(g.grad_ref(b.id)).noalias() += as_mat(g.value(a.id)).transpose() * dy;
  }, "matmul");
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  Tensor out({av.cols(), av.rows()});
  as_mat(out) = as_mat(av).transpose();
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    as_mat(g.grad_ref(a.id)) += as_mat(g.grad_of(self)).transpose();
  }, "transpose");
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
  }, "reshape");
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  require_same_graph(x, weight);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank2(xv, "linear");
  require_rank2(wv, "linear");
  if (xv.cols() != wv.rows()) {
    throw ShapeError("linear: input " + shape_string(xv.shape()) + " vs weight " +
                     shape_string(wv.shape()));
  }
  Tensor out({xv.rows(), wv.cols()});
  as_mat(out).noalias() = as_mat(xv) * as_mat(wv);
  std::vector<Var> inputs{x, weight};
  if (bias) {
    require_same_graph(x, *bias);
    const Tensor& bv = bias->value();
    if (bv.size() != wv.cols()) throw ShapeError("linear: bias length mismatch");
    auto o = as_mat(out);
    for (Eigen::Index r = 0; r < o.rows(); ++r)
      for (Eigen::Index c = 0; c < o.cols(); ++c) o(r, c) += bv[static_cast<std::size_t>(c)];
    inputs.push_back(*bias);
  }
  return x.graph->push(std::move(out), inputs, [x, weight, bias](Graph& g, std::size_t self) {
    const auto dy = as_mat(g.grad_of(self));
    if (g.requires_grad(x.id)) as_mat(g.grad_ref(x.id)).noalias() += dy * as_mat(g.value(weight.id)).transpose();
    if (g.requires_grad(weight.id)) as_mat(g.grad_ref(weight.id)).noalias() += as_mat(g.value(x.id)).transpose() * dy;
    if (bias && g.requires_grad(bias->id)) {
      Tensor& gb = g.grad_ref(bias->id);
      for (Eigen::Index r = 0; r < dy.rows(); ++r)
        for (Eigen::Index c = 0; c < dy.cols(); ++c) gb[static_cast<std::size_t>(c)] += dy(r, c);
    }
  }, "linear");
}

namespace {

template <typename Fwd, typename Bwd>
Var elementwise_binary(Var a, Var b, const char* op, Fwd fwd, Bwd bwd) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, op);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  return a.graph->push(std::move(out), {a, b}, [a, b, bwd](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& x = g.value(a.id);
    const Tensor& y = g.value(b.id);
    const bool ga = g.requires_grad(a.id);
    const bool gb = g.requires_grad(b.id);
    Tensor* da = ga ? &g.grad_ref(a.id) : nullptr;
    Tensor* db = gb ? &g.grad_ref(b.id) : nullptr;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      auto [pa, pb] = bwd(x[i], y[i]);
      if (da) (*da)[i] += dy[i] * pa;
      if (db) (*db)[i] += dy[i] * pb;
    }
  }, op);
}

// Unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var elementwise_unary(Var a, const char* op, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return a.graph->push(std::move(out), {a}, [a, deriv](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& x = g.value(a.id);
    const Tensor& y = g.value(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * deriv(x[i], y[i]);
  }, op);
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise_binary(a, b, "add", [](double x, double y) { return x + y; },
                            [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return elementwise_binary(a, b, "sub", [](double x, double y) { return x - y; },
                            [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return elementwise_binary(a, b, "mul", [](double x, double y) { return x * y; },
                            [](double x, double y) { return std::pair{y, x}; });
}

Var scale(Var a, double c) {
  return elementwise_unary(a, "scale", [c](double x) { return c * x; },
                           [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return elementwise_unary(a, "add_scalar", [c](double x) { return x + c; },
                           [](double, double) { return 1.0; });
}

Var scale_by(Var a, Var s) {
  require_same_graph(a, s);
  require_scalar(s.value(), "scale_by");
  const double c = s.value()[0];
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * av[i];
  return a.graph->push(std::move(out), {a, s}, [a, s](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& x = g.value(a.id);
    const double sv = g.value(s.id)[0];
    if (g.requires_grad(a.id)) {
      Tensor& da = g.grad_ref(a.id);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += sv * dy[i];
    }
    if (g.requires_grad(s.id)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * x[i];
      g.grad_ref(s.id)[0] += acc;
    }
  }, "scale_by");
}

Var exp(Var a) {
  return elementwise_unary(a, "exp", [](double x) { return std::exp(x); },
                           [](double, double y) { return y; });
}

Var reciprocal(Var a) {
  for (double v : a.value().values()) {
    if (v == 0.0) throw NumericalError("reciprocal: division by zero");
  }
  return elementwise_unary(a, "reciprocal", [](double x) { return 1.0 / x; },
                           [](double, double y) { return -y * y; });
}

Var relu(Var a) {
  return elementwise_unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return elementwise_unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "softmax_rows");
  Tensor out(av.shape());
  const std::size_t n = av.rows();
  const std::size_t m = av.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) mx = std::max(mx, av.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += (out.at(r, c) = std::exp(av.at(r, c) - mx));
    for (std::size_t c = 0; c < m; ++c) out.at(r, c) /= s;
  }
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& y = g.value(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += dy.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) da.at(r, c) += y.at(r, c) * (dy.at(r, c) - dot);
    }
  }, "softmax_rows");
}

Var log_softmax_rows(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "log_softmax_rows");
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < av.cols(); ++c) mx = std::max(mx, av.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += std::exp(av.at(r, c) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c) - lse;
  }
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& y = g.value(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) s += dy.at(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) da.at(r, c) += dy.at(r, c) - std::exp(y.at(r, c)) * s;
    }
  }, "log_softmax_rows");
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_graph(x, gamma);
  require_same_graph(x, beta);
  const Tensor& xv = x.value();
  require_rank2(xv, "layer_norm");
  const std::size_t n = xv.rows();
  const std::size_t m = xv.cols();
  if (gamma.value().size() != m || beta.value().size() != m) {
    throw ShapeError("layer_norm: affine parameters must have length " + std::to_string(m));
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  // Normalized values and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < m; ++c) mu += xv.at(r, c);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) var += (xv.at(r, c) - mu) * (xv.at(r, c) - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < m; ++c) {
      const double h = (xv.at(r, c) - mu) * is;
      xhat->at(r, c) = h;
      out.at(r, c) = h * gv[c] + bv[c];
    }
  }
  return x.graph->push(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_std](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& gv = g.value(gamma.id);
    const std::size_t n = dy.rows();
    const std::size_t m = dy.cols();
    if (g.requires_grad(gamma.id) || g.requires_grad(beta.id)) {
      Tensor& dg = g.grad_ref(gamma.id);
      Tensor& db = g.grad_ref(beta.id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) {
          dg[c] += dy.at(r, c) * xhat->at(r, c);
          db[c] += dy.at(r, c);
        }
    }
    if (g.requires_grad(x.id)) {
      Tensor& dx = g.grad_ref(x.id);
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t r = 0; r < n; ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
          const double dh = dy.at(r, c) * gv[c];
          s1 += dh;
          s2 += dh * xhat->at(r, c);
        }
        for (std::size_t c = 0; c < m; ++c) {
          const double dh = dy.at(r, c) * gv[c];
          dx.at(r, c) += (*inv_std)[r] * (dh - inv_m * s1 - xhat->at(r, c) * inv_m * s2);
        }
      }
    }
  }, "layer_norm");
}

Var row_normalize(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "row_normalize");
  Tensor out(av.shape());
  auto norms = std::make_shared<std::vector<double>>(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av.at(r, c) * av.at(r, c);
    const double nr = std::sqrt(s);
    if (nr == 0.0) throw NumericalError("row_normalize: zero-norm row " + std::to_string(r));
    (*norms)[r] = nr;
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c) / nr;
  }
  return a.graph->push(std::move(out), {a}, [a, norms](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& y = g.value(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += dy.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c)
        da.at(r, c) += (dy.at(r, c) - y.at(r, c) * dot) / (*norms)[r];
    }
  }, "row_normalize");
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  return a.graph->push(Tensor::scalar(s), {a}, [a](Graph& g, std::size_t self) {
    const double d = g.grad_of(self)[0];
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += d;
  }, "sum");
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "row_sum");
  Tensor out({av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av.at(r, c);
    out[r] = s;
  }
  return a.graph->push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < da.rows(); ++r)
      for (std::size_t c = 0; c < da.cols(); ++c) da.at(r, c) += dy[r];
  }, "row_sum");
}

Var div_rows(Var a, Var d) {
  require_same_graph(a, d);
  const Tensor& av = a.value();
  const Tensor& dv = d.value();
  require_rank2(av, "div_rows");
  if (dv.size() != av.rows()) throw ShapeError("div_rows: divisor length mismatch");
  for (std::size_t r = 0; r < dv.size(); ++r) {
    if (dv[r] == 0.0) throw NumericalError("div_rows: zero divisor in row " + std::to_string(r));
  }
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c) / dv[r];
  return a.graph->push(std::move(out), {a, d}, [a, d](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& y = g.value(self);
    const Tensor& dv = g.value(d.id);
    if (g.requires_grad(a.id)) {
      Tensor& da = g.grad_ref(a.id);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c = 0; c < dy.cols(); ++c) da.at(r, c) += dy.at(r, c) / dv[r];
    }
    if (g.requires_grad(d.id)) {
      Tensor& dd = g.grad_ref(d.id);
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < dy.cols(); ++c) s += dy.at(r, c) * y.at(r, c);
        dd[r] -= s / dv[r];
      }
    }
  }, "div_rows");
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& av = a.value();
  require_rank2(av, "gather_rows");
  const std::size_t m = av.cols();
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  Tensor out({rows.size(), m});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * m), m, &out.at(i, 0));
  }
  return a.graph->push(std::move(out), {a}, [a, rows = std::move(rows)](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& da = g.grad_ref(a.id);
    const std::size_t m = dy.cols();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < m; ++c) da.at(rows[i], c) += dy.at(i, c);
  }, "gather_rows");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t m = parts[0].value().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p);
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != m) throw ShapeError("concat_rows: column mismatch");
    n += p.value().rows();
  }
  Tensor out({n, m});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off * m));
    off += p.value().rows();
  }
  return parts[0].graph->push(std::move(out), parts, [parts](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t len = g.value(p.id).size();
      if (g.requires_grad(p.id)) {
        Tensor& dp = g.grad_ref(p.id);
        for (std::size_t i = 0; i < len; ++i) dp[i] += dy[off + i];
      }
      off += len;
    }
  }, "concat_rows");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p);
    if (p.value().rank() != 2 && p.value().rank() != 1) throw ShapeError("concat_cols: bad rank");
    if (p.value().rows() != n) throw ShapeError("concat_cols: row mismatch");
    m += p.value().cols();
  }
  Tensor out({n, m});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out.at(r, off + c) = pv.at(r, c);
    off += pv.cols();
  }
  return parts[0].graph->push(std::move(out), parts, [parts](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t pc = g.value(p.id).cols();
      if (g.requires_grad(p.id)) {
        Tensor& dp = g.grad_ref(p.id);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) dp[r * pc + c] += dy.at(r, off + c);
      }
      off += pc;
    }
  }, "concat_cols");
}

Var slice(Var a, std::size_t row0, std::size_t col0, std::size_t nrows, std::size_t ncols) {
  const Tensor& av = a.value();
  require_rank2(av, "slice");
  if (nrows == 0 || ncols == 0 || row0 + nrows > av.rows() || col0 + ncols > av.cols()) {
    throw ShapeError("slice: window out of range for " + shape_string(av.shape()));
  }
  Tensor out({nrows, ncols});
  for (std::size_t r = 0; r < nrows; ++r)
    for (std::size_t c = 0; c < ncols; ++c) out.at(r, c) = av.at(row0 + r, col0 + c);
  return a.graph->push(std::move(out), {a}, [a, row0, col0](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) da.at(row0 + r, col0 + c) += dy.at(r, c);
  }, "slice");
}

Var embed(Var a, std::size_t rows, std::size_t cols, std::size_t row0, std::size_t col0) {
  const Tensor& av = a.value();
  require_rank2(av, "embed");
  if (row0 + av.rows() > rows || col0 + av.cols() > cols) throw ShapeError("embed: block exceeds target");
  Tensor out({rows, cols}, 0.0);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(row0 + r, col0 + c) = av.at(r, c);
  return a.graph->push(std::move(out), {a}, [a, row0, col0](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& da = g.grad_ref(a.id);
    for (std::size_t r = 0; r < da.rows(); ++r)
      for (std::size_t c = 0; c < da.cols(); ++c) da.at(r, c) += dy.at(row0 + r, col0 + c);
  }, "embed");
}

Var group_reduce(Var a, const std::vector<std::vector<std::size_t>>& groups, Reduce mode) {
  const Tensor& av = a.value();
  require_rank2(av, "group_reduce");
  const std::size_t m = av.cols();
  if (groups.empty()) throw ShapeError("group_reduce: no groups");
  Tensor out({groups.size(), m});
  // For max, remember which input row won each output element.
  auto argmax = std::make_shared<std::vector<std::size_t>>(mode == Reduce::kMax ? groups.size() * m : 0);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& rows = groups[gi];
    if (rows.empty()) throw ShapeError("group_reduce: empty group");
    for (std::size_t c = 0; c < m; ++c) {
      if (mode == Reduce::kMean) {
        double s = 0.0;
        for (auto r : rows) s += av.at(r, c);
        out.at(gi, c) = s / static_cast<double>(rows.size());
      } else {
        std::size_t best = rows[0];
        for (auto r : rows)
          if (av.at(r, c) > av.at(best, c)) best = r;
        out.at(gi, c) = av.at(best, c);
        (*argmax)[gi * m + c] = best;
      }
    }
  }
  return a.graph->push(std::move(out), {a}, [a, groups, mode, argmax](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& da = g.grad_ref(a.id);
    const std::size_t m = dy.cols();
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      for (std::size_t c = 0; c < m; ++c) {
        if (mode == Reduce::kMean) {
          const double share = dy.at(gi, c) / static_cast<double>(groups[gi].size());
          for (auto r : groups[gi]) da.at(r, c) += share;
        } else {
          da.at((*argmax)[gi * m + c], c) += dy.at(gi, c);
        }
      }
    }
  }, "group_reduce");
}

Var pairwise_sqdist(Var a, std::optional<Var> weights) {
  const Tensor& av = a.value();
  require_rank2(av, "pairwise_sqdist");
  const std::size_t n = av.rows();
  const std::size_t m = av.cols();
  std::vector<Var> inputs{a};
  if (weights) {
    require_same_graph(a, *weights);
    if (weights->value().size() != m) throw ShapeError("pairwise_sqdist: weight length mismatch");
    inputs.push_back(*weights);
  }
  const Tensor* wv = weights ? &weights->value() : nullptr;
  Tensor out({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double d = av.at(i, k) - av.at(j, k);
        s += (wv ? (*wv)[k] : 1.0) * d * d;
      }
      out.at(i, j) = s;
      out.at(j, i) = s;
    }
  }
  return a.graph->push(std::move(out), inputs, [a, weights](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& av = g.value(a.id);
    const Tensor* wv = weights ? &g.value(weights->id) : nullptr;
    const std::size_t n = av.rows();
    const std::size_t m = av.cols();
    Tensor* da = g.requires_grad(a.id) ? &g.grad_ref(a.id) : nullptr;
    Tensor* dw = (weights && g.requires_grad(weights->id)) ? &g.grad_ref(weights->id) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double gij = dy.at(i, j);
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < m; ++k) {
          const double d = av.at(i, k) - av.at(j, k);
          const double w = wv ? (*wv)[k] : 1.0;
          if (da) {
            da->at(i, k) += 2.0 * gij * w * d;
            da->at(j, k) -= 2.0 * gij * w * d;
          }
          if (dw) (*dw)[k] += gij * d * d;
        }
      }
    }
  }, "pairwise_sqdist");
}

Var attention(Var q, Var k, Var v, std::size_t heads, const std::vector<AttentionGroup>& groups,
              std::optional<Var> bias, double scale) {
  require_same_graph(q, k);
  require_same_graph(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_rank2(qv, "attention");
  require_rank2(kv, "attention");
  require_rank2(vv, "attention");
  const std::size_t e = qv.cols();
  if (kv.cols() != e || vv.cols() != e || kv.rows() != vv.rows()) {
    throw ShapeError("attention: Q/K/V shape mismatch");
  }
  if (heads == 0 || e % heads != 0) throw ShapeError("attention: heads must divide the embedding width");
  const std::size_t dh = e / heads;
  std::vector<Var> inputs{q, k, v};
  if (bias) {
    require_same_graph(q, *bias);
    const Tensor& bv = bias->value();
    require_rank2(bv, "attention bias");
    for (const auto& grp : groups) {
      if (bv.rows() != grp.query_rows.size() || bv.cols() != grp.key_rows.size()) {
        throw ShapeError("attention: bias shape " + shape_string(bv.shape()) +
                         " does not match group size");
      }
    }
    inputs.push_back(*bias);
  }

  Tensor out({qv.rows(), e}, 0.0);
  // Attention weights per (group, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<RowMat>>(groups.size() * heads);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& qr = groups[gi].query_rows;
    const auto& kr = groups[gi].key_rows;
    const auto nq = static_cast<Eigen::Index>(qr.size());
    const auto nk = static_cast<Eigen::Index>(kr.size());
    if (nq == 0 || nk == 0) throw ShapeError("attention: empty group");
    for (auto r : qr)
      if (r >= qv.rows()) throw ShapeError("attention: query row out of range");
    for (auto r : kr)
      if (r >= kv.rows()) throw ShapeError("attention: key row out of range");
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      RowMat qh(nq, static_cast<Eigen::Index>(dh)), kh(nk, static_cast<Eigen::Index>(dh)),
          vh(nk, static_cast<Eigen::Index>(dh));
      for (Eigen::Index i = 0; i < nq; ++i)
        for (std::size_t c = 0; c < dh; ++c) qh(i, static_cast<Eigen::Index>(c)) = qv.at(qr[static_cast<std::size_t>(i)], c0 + c);
      for (Eigen::Index i = 0; i < nk; ++i)
        for (std::size_t c = 0; c < dh; ++c) {
          kh(i, static_cast<Eigen::Index>(c)) = kv.at(kr[static_cast<std::size_t>(i)], c0 + c);
          vh(i, static_cast<Eigen::Index>(c)) = vv.at(kr[static_cast<std::size_t>(i)], c0 + c);
        }
      RowMat s = (qh * kh.transpose()) * scale;
      if (bias) s += as_mat(bias->value());
      for (Eigen::Index i = 0; i < nq; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp().matrix();
        s.row(i) /= s.row(i).sum();
      }
      const RowMat o = s * vh;
      for (Eigen::Index i = 0; i < nq; ++i)
        for (std::size_t c = 0; c < dh; ++c) out.at(qr[static_cast<std::size_t>(i)], c0 + c) = o(i, static_cast<Eigen::Index>(c));
      (*probs)[gi * heads + h] = std::move(s);
    }
  }

  return q.graph->push(std::move(out), inputs,
                       [q, k, v, bias, heads, groups, scale, probs, dh](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad_of(self);
    const Tensor& qv = g.value(q.id);
    const Tensor& kv = g.value(k.id);
    const Tensor& vv = g.value(v.id);
    Tensor* dq = g.requires_grad(q.id) ? &g.grad_ref(q.id) : nullptr;
    Tensor* dk = g.requires_grad(k.id) ? &g.grad_ref(k.id) : nullptr;
    Tensor* dv = g.requires_grad(v.id) ? &g.grad_ref(v.id) : nullptr;
    Tensor* db = (bias && g.requires_grad(bias->id)) ? &g.grad_ref(bias->id) : nullptr;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& qr = groups[gi].query_rows;
      const auto& kr = groups[gi].key_rows;
      const auto nq = static_cast<Eigen::Index>(qr.size());
      const auto nk = static_cast<Eigen::Index>(kr.size());
      const auto edh = static_cast<Eigen::Index>(dh);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        RowMat qh(nq, edh), kh(nk, edh), vh(nk, edh), doh(nq, edh);
        for (Eigen::Index i = 0; i < nq; ++i)
          for (Eigen::Index c = 0; c < edh; ++c) {
            qh(i, c) = qv.at(qr[static_cast<std::size_t>(i)], c0 + static_cast<std::size_t>(c));
            doh(i, c) = dy.at(qr[static_cast<std::size_t>(i)], c0 + static_cast<std::size_t>(c));
          }
        for (Eigen::Index i = 0; i < nk; ++i)
          for (Eigen::Index c = 0; c < edh; ++c) {
            kh(i, c) = kv.at(kr[static_cast<std::size_t>(i)], c0 + static_cast<std::size_t>(c));
            vh(i, c) = vv.at(kr[static_cast<std::size_t>(i)], c0 + static_cast<std::size_t>(c));
          }
        const RowMat& a = (*probs)[gi * heads + h];
        const RowMat da = doh * vh.transpose();
        RowMat ds(nq, nk);
        for (Eigen::Index i = 0; i < nq; ++i) {
          const double dot = a.row(i).dot(da.row(i));
          ds.row(i) = (a.row(i).array() * (da.row(i).array() - dot)).matrix();
        }
        if (dv) {
          const RowMat gv = a.transpose() * doh;
          for (Eigen::Index i = 0; i < nk; ++i)
            for (Eigen::Index c = 0; c < edh; ++c)
              dv->at(kr[static_cast<std::size_t>(i)], c0 + static_cast<std::size_t>(c)) += gv(i, c);
        }
        if (dq) {
          const RowMat gq = (ds * kh) * scale;
          for (Eigen::Index i = 0; i < nq; ++i)
            for (Eigen::Index c = 0; c < edh; ++c)
              dq->at(qr[static_cast<std::size_t>(i)], c0 + static_cast<std::size_t>(c)) += gq(i, c);
        }
        if (dk) {
          const RowMat gk = (ds.transpose() * qh) * scale;
          for (Eigen::Index i = 0; i < nk; ++i)
            for (Eigen::Index c = 0; c < edh; ++c)
              dk->at(kr[static_cast<std::size_t>(i)], c0 + static_cast<std::size_t>(c)) += gk(i, c);
        }
        if (db) as_mat(*db) += ds;
      }
    }
  }, "attention");
}

}  // namespace ad
}  // namespace dip
