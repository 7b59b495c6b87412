#include "flipkit/autograd.hpp"

#include <cmath>
#include <stdexcept>

#include "flipkit/error.hpp"

namespace flipkit::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("shape mismatch in ") + what);
}

void accumulate(Graph& g, int id, const Matrix& delta) {
  if (!g.requires_grad(id)) return;
  g.grad(id) += delta;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                             Init init) {
  if (index_.count(name) != 0) throw ValidationError("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  p->fan_in = fan_in > 0 ? fan_in : cols;
  p->init = init;
  if (init == Init::ones) p->value.setOnes();
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter " + name);
  return *params_[it->second];
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterSet::init_uniform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    switch (p->init) {
      case Init::zeros: p->value.setZero(); break;
      case Init::ones: p->value.setOnes(); break;
      case Init::uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(p->fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index j = 0; j < p->value.cols(); ++j)
          for (Eigen::Index i = 0; i < p->value.rows(); ++i) p->value(i, j) = dist(rng);
        break;
      }
    }
  }
}

void ParameterSet::fill(double v) {
  for (auto& p : params_) p->value.setConstant(v);
}

// ---------------------------------------------------------------------------
// Graph

const Matrix& Expr::value() const { return graph_->value(id_); }

Expr Graph::record(Matrix value, std::vector<int> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Expr(this, static_cast<int>(nodes_.size() - 1));
}

Expr Graph::constant(Matrix value) { return record(std::move(value), {}, nullptr); }

Expr Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Expr(this, static_cast<int>(nodes_.size() - 1));
}

void Graph::backward(Expr root) {
  if (root.rows() != 1 || root.cols() != 1) throw ValidationError("backward root must be a scalar");
  const auto last = static_cast<std::size_t>(root.id());
  for (std::size_t i = 0; i <= last; ++i) {
    auto& n = nodes_[i];
    if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  nodes_[last].grad(0, 0) = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.param != nullptr)
      n.param->grad += n.grad;
    else if (n.backward)
      n.backward(*this, static_cast<int>(i));
  }
}

// ---------------------------------------------------------------------------
// Operations

Expr operator+(Expr a, Expr b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Graph& g = a.graph();
  return g.record(a.value() + b.value(), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Graph& g, int self) {
    accumulate(g, ia, g.grad(self));
    accumulate(g, ib, g.grad(self));
  });
}

Expr operator-(Expr a, Expr b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Graph& g = a.graph();
  return g.record(a.value() - b.value(), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Graph& g, int self) {
    accumulate(g, ia, g.grad(self));
    accumulate(g, ib, -g.grad(self));
  });
}

Expr matmul(Expr a, Expr b) {
  require(a.cols() == b.rows(), "matmul");
  Graph& g = a.graph();
  return g.record(a.value() * b.value(), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    if (g.requires_grad(ia)) g.grad(ia).noalias() += d * g.value(ib).transpose();
    if (g.requires_grad(ib)) g.grad(ib).noalias() += g.value(ia).transpose() * d;
  });
}

Expr add_bias(Expr x, Expr b) {
  require(b.cols() == 1 && b.rows() == x.rows(), "add_bias");
  Graph& g = x.graph();
  Matrix v = x.value().colwise() + b.value().col(0);
  return g.record(std::move(v), {x.id(), b.id()}, [ix = x.id(), ib = b.id()](Graph& g, int self) {
    accumulate(g, ix, g.grad(self));
    if (g.requires_grad(ib)) g.grad(ib).col(0) += g.grad(self).rowwise().sum();
  });
}

Expr cmul(Expr a, Expr b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "cmul");
  Graph& g = a.graph();
  return g.record(a.value().cwiseProduct(b.value()), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    if (g.requires_grad(ia)) g.grad(ia) += d.cwiseProduct(g.value(ib));
    if (g.requires_grad(ib)) g.grad(ib) += d.cwiseProduct(g.value(ia));
  });
}

Expr scale(Expr a, double s) { return affine(a, s, 0.0); }

Expr affine(Expr a, double alpha, double beta) {
  Graph& g = a.graph();
  Matrix v = (alpha * a.value().array() + beta).matrix();
  return g.record(std::move(v), {a.id()}, [ia = a.id(), alpha](Graph& g, int self) {
    accumulate(g, ia, alpha * g.grad(self));
  });
}

Expr tanh(Expr a) {
  Graph& g = a.graph();
  Matrix v = a.value().array().tanh().matrix();
  return g.record(std::move(v), {a.id()}, [ia = a.id()](Graph& g, int self) {
    const Matrix& y = g.value(self);
    accumulate(g, ia, g.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Expr sigmoid(Expr a) {
  Graph& g = a.graph();
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return g.record(std::move(v), {a.id()}, [ia = a.id()](Graph& g, int self) {
    const Matrix& y = g.value(self);
    accumulate(g, ia, g.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Expr relu(Expr a) {
  Graph& g = a.graph();
  Matrix v = a.value().cwiseMax(0.0);
  return g.record(std::move(v), {a.id()}, [ia = a.id()](Graph& g, int self) {
    const Matrix& x = g.value(ia);
    accumulate(g, ia, (x.array() > 0.0).select(g.grad(self), 0.0));
  });
}

Expr transpose(Expr a) {
  Graph& g = a.graph();
  return g.record(a.value().transpose(), {a.id()}, [ia = a.id()](Graph& g, int self) {
    accumulate(g, ia, g.grad(self).transpose());
  });
}

Expr concat_rows(std::span<const Expr> parts) {
  if (parts.empty()) throw ValidationError("concat_rows of nothing");
  Graph& g = parts.front().graph();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  for (const Expr& p : parts) {
    require(p.cols() == cols, "concat_rows");
    rows += p.rows();
    ids.push_back(p.id());
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const Expr& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return g.record(std::move(v), ids, [ids](Graph& g, int self) {
    Eigen::Index at = 0;
    for (int id : ids) {
      const Eigen::Index r = g.value(id).rows();
      if (g.requires_grad(id)) g.grad(id) += g.grad(self).middleRows(at, r);
      at += r;
    }
  });
}

Expr concat_rows(std::initializer_list<Expr> parts) { return concat_rows(std::span<const Expr>(parts.begin(), parts.size())); }

Expr concat_cols(std::span<const Expr> parts) {
  if (parts.empty()) throw ValidationError("concat_cols of nothing");
  Graph& g = parts.front().graph();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  for (const Expr& p : parts) {
    require(p.rows() == rows, "concat_cols");
    cols += p.cols();
    ids.push_back(p.id());
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const Expr& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g.record(std::move(v), ids, [ids](Graph& g, int self) {
    Eigen::Index at = 0;
    for (int id : ids) {
      const Eigen::Index c = g.value(id).cols();
      if (g.requires_grad(id)) g.grad(id) += g.grad(self).middleCols(at, c);
      at += c;
    }
  });
}

Expr column(Expr a, Eigen::Index j) { return block_cols(a, j, 1); }

Expr block_rows(Expr a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "block_rows");
  Graph& g = a.graph();
  return g.record(a.value().middleRows(start, count), {a.id()}, [ia = a.id(), start, count](Graph& g, int self) {
    if (g.requires_grad(ia)) g.grad(ia).middleRows(start, count) += g.grad(self);
  });
}

Expr block_cols(Expr a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "block_cols");
  Graph& g = a.graph();
  return g.record(a.value().middleCols(start, count), {a.id()}, [ia = a.id(), start, count](Graph& g, int self) {
    if (g.requires_grad(ia)) g.grad(ia).middleCols(start, count) += g.grad(self);
  });
}

Expr softmax_cols(Expr a, const Matrix* mask) {
  if (mask != nullptr) require(mask->rows() == a.rows() && mask->cols() == a.cols(), "softmax_cols mask");
  Graph& g = a.graph();
  const Matrix& x = a.value();
  Matrix p = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (mask == nullptr || (*mask)(i, j) != 0.0) mx = std::max(mx, x(i, j));
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (mask == nullptr || (*mask)(i, j) != 0.0) {
        p(i, j) = std::exp(x(i, j) - mx);
        z += p(i, j);
      }
    p.col(j) /= z;
  }
  return g.record(std::move(p), {a.id()}, [ia = a.id()](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const Matrix& y = g.value(self);
    const Matrix& d = g.grad(self);
    Eigen::RowVectorXd dots = (y.cwiseProduct(d)).colwise().sum();
    g.grad(ia) += y.cwiseProduct(d - dots.replicate(y.rows(), 1));
  });
}

Expr layer_norm_cols(Expr x, Expr gain, Expr bias, double eps) {
  require(gain.rows() == x.rows() && bias.rows() == x.rows() && gain.cols() == 1 && bias.cols() == 1, "layer_norm");
  Graph& g = x.graph();
  const Matrix& v = x.value();
  const double d = static_cast<double>(v.rows());
  Eigen::RowVectorXd mean = v.colwise().mean();
  Matrix centered = v - mean.replicate(v.rows(), 1);
  Eigen::RowVectorXd inv_std = ((centered.array().square().colwise().sum() / d) + eps).rsqrt().matrix();
  Matrix xhat = centered.cwiseProduct(inv_std.replicate(v.rows(), 1));
  Matrix y = (xhat.array().colwise() * gain.value().col(0).array()).matrix();
  y.colwise() += bias.value().col(0);
  return g.record(std::move(y), {x.id(), gain.id(), bias.id()},
                  [ix = x.id(), ig = gain.id(), ib = bias.id(), xhat = std::move(xhat), inv_std](Graph& g, int self) {
                    const Matrix& dy = g.grad(self);
                    if (g.requires_grad(ig)) g.grad(ig).col(0) += dy.cwiseProduct(xhat).rowwise().sum();
                    if (g.requires_grad(ib)) g.grad(ib).col(0) += dy.rowwise().sum();
                    if (g.requires_grad(ix)) {
                      Matrix dxhat = (dy.array().colwise() * g.value(ig).col(0).array()).matrix();
                      Eigen::RowVectorXd m1 = dxhat.colwise().mean();
                      Eigen::RowVectorXd m2 = dxhat.cwiseProduct(xhat).colwise().mean();
                      Matrix dx = dxhat - m1.replicate(dxhat.rows(), 1) - xhat.cwiseProduct(m2.replicate(dxhat.rows(), 1));
                      g.grad(ix) += dx.cwiseProduct(inv_std.replicate(dxhat.rows(), 1));
                    }
                  });
}

Expr dropout(Expr a, double p) {
  Graph& g = a.graph();
  if (!g.training() || p <= 0.0) return a;
  if (g.rng() == nullptr) throw ValidationError("dropout in training mode needs an rng");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(*g.rng()) ? 1.0 / (1.0 - p) : 0.0;
  Matrix v = a.value().cwiseProduct(mask);
  return g.record(std::move(v), {a.id()}, [ia = a.id(), mask = std::move(mask)](Graph& g, int self) {
    accumulate(g, ia, g.grad(self).cwiseProduct(mask));
  });
}

Expr sum_all(Expr a) {
  Graph& g = a.graph();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return g.record(std::move(v), {a.id()}, [ia = a.id()](Graph& g, int self) {
    if (g.requires_grad(ia)) g.grad(ia).array() += g.grad(self)(0, 0);
  });
}

Expr weighted_nll(Expr logits, std::span<const int> gold, std::span<const double> weights) {
  const Matrix& z = logits.value();
  require(static_cast<Eigen::Index>(gold.size()) == z.cols(), "weighted_nll gold");
  require(static_cast<Eigen::Index>(weights.size()) == z.rows(), "weighted_nll weights");
  Graph& g = logits.graph();
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  std::size_t scored = 0;
  for (Eigen::Index t = 0; t < z.cols(); ++t) {
    const double mx = z.col(t).maxCoeff();
    const double lse = mx + std::log((z.col(t).array() - mx).exp().sum());
    probs.col(t) = (z.col(t).array() - lse).exp().matrix();
    const int y = gold[static_cast<std::size_t>(t)];
    if (y < 0) continue;
    require(y < z.rows(), "weighted_nll label");
    total += -weights[static_cast<std::size_t>(y)] * (z(y, t) - lse);
    ++scored;
  }
  Matrix v(1, 1);
  v(0, 0) = scored == 0 ? 0.0 : total / static_cast<double>(scored);
  std::vector<int> labels(gold.begin(), gold.end());
  std::vector<double> w(weights.begin(), weights.end());
  return g.record(std::move(v), {logits.id()},
                  [iz = logits.id(), probs = std::move(probs), labels = std::move(labels), w = std::move(w),
                   scored](Graph& g, int self) {
                    if (scored == 0 || !g.requires_grad(iz)) return;
                    const double upstream = g.grad(self)(0, 0) / static_cast<double>(scored);
                    Matrix& dz = g.grad(iz);
                    for (Eigen::Index t = 0; t < probs.cols(); ++t) {
                      const int y = labels[static_cast<std::size_t>(t)];
                      if (y < 0) continue;
                      const double wy = w[static_cast<std::size_t>(y)] * upstream;
                      dz.col(t) += wy * probs.col(t);
                      dz(y, t) -= wy;
                    }
                  });
}

}  // namespace flipkit::ad
