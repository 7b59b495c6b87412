#pragma once

// Tape-based reverse-mode differentiation over dense Eigen matrices.
// Vectors are column vectors; sequences are matrices with one column per
// position.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flipkit::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Init { uniform, zeros, ones };

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Eigen::Index fan_in = 1;
  Init init = Init::uniform;
};

/// Named, insertion-ordered parameter tensors with stable addresses.
class ParameterSet {
 public:
  /// Zero-initialized. `fan_in` scales init_uniform; defaults to cols.
  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in = 0,
                 Init init = Init::uniform);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grad();
  std::size_t scalar_count() const;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for Init::uniform tensors, drawn
  /// in insertion order; constant tensors are reset to their constant.
  void init_uniform(std::uint64_t seed);
  void fill(double v);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
class Expr {
 public:
  Expr() = default;
  Expr(Graph* g, int id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  explicit Graph(bool training = false, std::mt19937_64* rng = nullptr) : training_(training), rng_(rng) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Expr constant(Matrix value);
  Expr param(Parameter& p);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and accumulates into parameter grads.
  void backward(Expr root);

  bool training() const { return training_; }
  std::mt19937_64* rng() const { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Matrix& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  using BackwardFn = std::function<void(Graph&, int self)>;
  Expr record(Matrix value, std::vector<int> inputs, BackwardFn fn);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool training_;
  std::mt19937_64* rng_;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr matmul(Expr a, Expr b);
/// x (d x n) plus column bias b (d x 1) broadcast over columns.
Expr add_bias(Expr x, Expr b);
Expr cmul(Expr a, Expr b);
Expr scale(Expr a, double s);
/// alpha * a + beta, elementwise.
Expr affine(Expr a, double alpha, double beta);
Expr tanh(Expr a);
Expr sigmoid(Expr a);
Expr relu(Expr a);
Expr transpose(Expr a);
Expr concat_rows(std::span<const Expr> parts);
Expr concat_rows(std::initializer_list<Expr> parts);
Expr concat_cols(std::span<const Expr> parts);
Expr column(Expr a, Eigen::Index j);
Expr block_rows(Expr a, Eigen::Index start, Eigen::Index count);
Expr block_cols(Expr a, Eigen::Index start, Eigen::Index count);
/// Column-wise softmax. Entries where mask == 0 get probability 0; a fully
/// masked column yields zeros.
Expr softmax_cols(Expr a, const Matrix* mask = nullptr);
Expr layer_norm_cols(Expr x, Expr gain, Expr bias, double eps = 1e-5);
/// Inverted dropout; identity when the graph is not training or p == 0.
Expr dropout(Expr a, double p);
Expr sum_all(Expr a);
/// Mean over scored positions of -weight[gold] * log softmax(logits)[gold].
/// Positions with gold < 0 are ignored.
Expr weighted_nll(Expr logits, std::span<const int> gold, std::span<const double> weights);

}  // namespace flipkit::ad
