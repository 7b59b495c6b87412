#include "flipkit/nn.hpp"

#include <cmath>

#include "flipkit/error.hpp"

namespace flipkit::nn {

Linear::Linear(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out)
    : weight_(&params.add(prefix + ".weight", out, in)), bias_(&params.add(prefix + ".bias", out, 1, in)) {}

GRU::GRU(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index hidden)
    : w_ih_(&params.add(prefix + ".w_ih", 3 * hidden, in, hidden)),
      w_hh_(&params.add(prefix + ".w_hh", 3 * hidden, hidden, hidden)),
      b_ih_(&params.add(prefix + ".b_ih", 3 * hidden, 1, hidden)),
      b_hh_(&params.add(prefix + ".b_hh", 3 * hidden, 1, hidden)) {}

GRU::Bound GRU::bind(Graph& g) const {
  return {g.param(*w_ih_), g.param(*w_hh_), g.param(*b_ih_), g.param(*b_hh_), w_hh_->value.cols()};
}

Expr GRU::Bound::step_projected(Expr gi, Expr h) const {
  const Eigen::Index H = hidden;
  if (gi.rows() != 3 * H || h.rows() != H) throw ValidationError("GRU step dimension mismatch");
  Expr gh = ad::add_bias(ad::matmul(w_hh, h), b_hh);
  Expr r = ad::sigmoid(ad::block_rows(gi, 0, H) + ad::block_rows(gh, 0, H));
  Expr z = ad::sigmoid(ad::block_rows(gi, H, H) + ad::block_rows(gh, H, H));
  Expr n = ad::tanh(ad::block_rows(gi, 2 * H, H) + ad::cmul(r, ad::block_rows(gh, 2 * H, H)));
  return n + ad::cmul(z, h - n);
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& prefix, Eigen::Index dim)
    : gain_(&params.add(prefix + ".gain", dim, 1, 1, ad::Init::ones)),
      bias_(&params.add(prefix + ".bias", dim, 1, 1, ad::Init::zeros)) {}

Expr attend(Expr query, Expr keys, Expr values, const Matrix* mask, Eigen::VectorXd* weights_out) {
  if (query.rows() != keys.rows() || keys.cols() != values.cols())
    throw ValidationError("attention dimension mismatch");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(query.rows()));
  Expr scores = ad::scale(ad::matmul(ad::transpose(keys), query), inv_sqrt);
  Expr weights = ad::softmax_cols(scores, mask);
  if (weights_out != nullptr) *weights_out = weights.value().col(0);
  return ad::matmul(values, weights);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ParameterSet& params, const std::string& prefix, Eigen::Index dim,
                                               int heads)
    : q_(params, prefix + ".query", dim, dim),
      k_(params, prefix + ".key", dim, dim),
      v_(params, prefix + ".value", dim, dim),
      out_(params, prefix + ".out", dim, dim),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) throw ValidationError("model dim must be divisible by the head count");
}

Expr MultiHeadSelfAttention::forward(Graph& g, Expr x, const Matrix* key_mask) const {
  const Eigen::Index dim = x.rows();
  const Eigen::Index head_dim = dim / heads_;
  Expr q = q_.bind(g)(x);
  Expr k = k_.bind(g)(x);
  Expr v = v_.bind(g)(x);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Expr> outputs;
  outputs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Eigen::Index at = h * head_dim;
    Expr qh = ad::block_rows(q, at, head_dim);
    Expr kh = ad::block_rows(k, at, head_dim);
    Expr vh = ad::block_rows(v, at, head_dim);
    Expr scores = ad::scale(ad::matmul(ad::transpose(kh), qh), inv_sqrt);
    outputs.push_back(ad::matmul(vh, ad::softmax_cols(scores, key_mask)));
  }
  Expr merged = heads_ == 1 ? outputs.front() : ad::concat_rows(outputs);
  return out_.bind(g)(merged);
}

TransformerEncoderLayer::TransformerEncoderLayer(ParameterSet& params, const std::string& prefix, Eigen::Index dim,
                                                 int heads, Eigen::Index ff_dim, double dropout)
    : attention_(params, prefix + ".attention", dim, heads),
      ff_in_(params, prefix + ".ff_in", dim, ff_dim),
      ff_out_(params, prefix + ".ff_out", ff_dim, dim),
      norm_attention_(params, prefix + ".norm_attention", dim),
      norm_ff_(params, prefix + ".norm_ff", dim),
      dropout_(dropout) {}

Expr TransformerEncoderLayer::forward(Graph& g, Expr x, const Matrix* key_mask) const {
  Expr h = norm_attention_.bind(g)(x + ad::dropout(attention_.forward(g, x, key_mask), dropout_));
  Expr ff = ff_out_.bind(g)(ad::dropout(ad::relu(ff_in_.bind(g)(h)), dropout_));
  return norm_ff_.bind(g)(h + ad::dropout(ff, dropout_));
}

Matrix sinusoidal_positions(Eigen::Index dim, Eigen::Index length) {
  Matrix pe(dim, length);
  for (Eigen::Index pos = 0; pos < length; ++pos)
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(i, pos) = (i % 2 == 0) ? std::sin(static_cast<double>(pos) / rate) : std::cos(static_cast<double>(pos) / rate);
    }
  return pe;
}

}  // namespace flipkit::nn
