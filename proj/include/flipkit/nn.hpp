#pragma once

// Layers built on the autograd tape. Each layer owns pointers into a
// ParameterSet; `bind` creates the graph nodes for one forward pass.

#include <string>

#include "flipkit/autograd.hpp"

namespace flipkit::nn {

using ad::Expr;
using ad::Graph;
using ad::Matrix;
using ad::ParameterSet;

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index out);

  struct Bound {
    Expr weight, bias;
    Expr operator()(Expr x) const { return ad::add_bias(ad::matmul(weight, x), bias); }
  };
  Bound bind(Graph& g) const { return {g.param(*weight_), g.param(*bias_)}; }

  Eigen::Index in_dim() const { return weight_->value.cols(); }
  Eigen::Index out_dim() const { return weight_->value.rows(); }

 private:
  ad::Parameter* weight_ = nullptr;
  ad::Parameter* bias_ = nullptr;
};

/// Gated recurrent unit with (reset, update, candidate) gate order:
///   r = sig(Wir x + bir + Whr h + bhr), z = sig(Wiz x + biz + Whz h + bhz)
///   n = tanh(Win x + bin + r * (Whn h + bhn)), h' = (1 - z) * n + z * h
class GRU {
 public:
  GRU() = default;
  GRU(ParameterSet& params, const std::string& prefix, Eigen::Index in, Eigen::Index hidden);

  struct Bound {
    Expr w_ih, w_hh, b_ih, b_hh;
    Eigen::Index hidden = 0;
    /// Input projection for one or many columns: W_ih x + b_ih.
    Expr project(Expr x) const { return ad::add_bias(ad::matmul(w_ih, x), b_ih); }
    /// One step given a projected input column.
    Expr step_projected(Expr gi, Expr h) const;
    Expr step(Expr x, Expr h) const { return step_projected(project(x), h); }
    Expr zero_state(Graph& g) const { return g.constant(Matrix::Zero(hidden, 1)); }
  };
  Bound bind(Graph& g) const;

  Eigen::Index in_dim() const { return w_ih_->value.cols(); }
  Eigen::Index hidden_dim() const { return w_hh_->value.cols(); }

 private:
  ad::Parameter* w_ih_ = nullptr;
  ad::Parameter* w_hh_ = nullptr;
  ad::Parameter* b_ih_ = nullptr;
  ad::Parameter* b_hh_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& prefix, Eigen::Index dim);

  struct Bound {
    Expr gain, bias;
    Expr operator()(Expr x) const { return ad::layer_norm_cols(x, gain, bias); }
  };
  Bound bind(Graph& g) const { return {g.param(*gain_), g.param(*bias_)}; }

 private:
  ad::Parameter* gain_ = nullptr;
  ad::Parameter* bias_ = nullptr;
};

/// Scaled dot-product attention of one query column over key columns.
/// `weights_out`, when given, receives the attention distribution.
Expr attend(Expr query, Expr keys, Expr values, const Matrix* mask = nullptr, Eigen::VectorXd* weights_out = nullptr);

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterSet& params, const std::string& prefix, Eigen::Index dim, int heads);

  /// x: dim x n. `key_mask` (n x n, keys by queries) zeroes attention where 0.
  Expr forward(Graph& g, Expr x, const Matrix* key_mask = nullptr) const;

 private:
  Linear q_, k_, v_, out_;
  int heads_ = 1;
};

class TransformerEncoderLayer {
 public:
  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(ParameterSet& params, const std::string& prefix, Eigen::Index dim, int heads,
                          Eigen::Index ff_dim, double dropout);

  /// Post-norm residual block: LN(x + MHA(x)), then LN(h + FFN(h)).
  Expr forward(Graph& g, Expr x, const Matrix* key_mask = nullptr) const;

 private:
  MultiHeadSelfAttention attention_;
  Linear ff_in_, ff_out_;
  LayerNorm norm_attention_, norm_ff_;
  double dropout_ = 0.0;
};

/// Sinusoidal position table, dim x length.
Matrix sinusoidal_positions(Eigen::Index dim, Eigen::Index length);

}  // namespace flipkit::nn
