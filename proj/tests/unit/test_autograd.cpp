#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "flipkit/autograd.hpp"
#include "flipkit/error.hpp"
#include "flipkit/nn.hpp"
#include "testkit.hpp"

using namespace flipkit;
using ad::Expr;
using ad::Graph;
using ad::Matrix;

namespace {

// Checks d/dθ sum(op(θ) ∘ R) for a fixed random projection R.
class OpCheck : public ::testing::Test {
 protected:
  void SetUp() override {
    a_ = &params_.add("a", 3, 4);
    b_ = &params_.add("b", 3, 4);
    c_ = &params_.add("c", 4, 2);
    v_ = &params_.add("v", 3, 1);
    params_.init_uniform(99);
    // Spread values away from zero so relu kinks are not straddled.
    for (auto* p : params_.all())
      p->value = p->value.unaryExpr([](double x) { return x + (x >= 0 ? 0.2 : -0.2); });
  }

  double check(const std::function<Expr(Graph&, Expr a, Expr b, Expr c, Expr v)>& op) {
    std::mt19937_64 rng(5);
    Matrix proj;
    auto loss = [&](bool backward) {
      Graph g;
      Expr out = op(g, g.param(*a_), g.param(*b_), g.param(*c_), g.param(*v_));
      if (proj.size() == 0) {
        std::normal_distribution<double> nd;
        proj = Matrix(out.rows(), out.cols());
        for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = nd(rng);
      }
      Expr l = ad::sum_all(ad::cmul(out, g.constant(proj)));
      if (backward) g.backward(l);
      return l.scalar();
    };
    const auto r = testkit::gradient_check(params_, loss);
    EXPECT_GT(r.max_abs_gradient, 0.0);
    return r.max_relative_error;
  }

  ad::ParameterSet params_;
  ad::Parameter *a_, *b_, *c_, *v_;
};

constexpr double kTol = 1e-5;

}  // namespace

TEST_F(OpCheck, AddSub) { EXPECT_LT(check([](Graph&, Expr a, Expr b, Expr, Expr) { return (a + b) - ad::scale(b, 3.0); }), kTol); }
TEST_F(OpCheck, Matmul) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr c, Expr) { return ad::matmul(a, c); }), kTol); }
TEST_F(OpCheck, AddBias) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr v) { return ad::add_bias(a, v); }), kTol); }
TEST_F(OpCheck, Cmul) { EXPECT_LT(check([](Graph&, Expr a, Expr b, Expr, Expr) { return ad::cmul(a, b); }), kTol); }
TEST_F(OpCheck, Affine) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) { return ad::affine(a, -2.0, 0.5); }), kTol); }
TEST_F(OpCheck, Tanh) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) { return ad::tanh(a); }), kTol); }
TEST_F(OpCheck, Sigmoid) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) { return ad::sigmoid(a); }), kTol); }
TEST_F(OpCheck, Relu) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) { return ad::relu(a); }), kTol); }
TEST_F(OpCheck, Transpose) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) { return ad::transpose(a); }), kTol); }
TEST_F(OpCheck, ConcatRows) {
  EXPECT_LT(check([](Graph&, Expr a, Expr b, Expr, Expr) { return ad::concat_rows({a, ad::tanh(b), a}); }), kTol);
}
TEST_F(OpCheck, ConcatCols) {
  EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr v) {
              std::vector<Expr> parts = {v, a, v};
              return ad::concat_cols(parts);
            }),
            kTol);
}
TEST_F(OpCheck, ColumnAndBlocks) {
  EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) {
              return ad::concat_rows({ad::column(a, 2), ad::block_rows(ad::block_cols(a, 1, 1), 1, 2)});
            }),
            kTol);
}
TEST_F(OpCheck, Softmax) { EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) { return ad::softmax_cols(a); }), kTol); }
TEST_F(OpCheck, MaskedSoftmax) {
  static const Matrix mask = (Matrix(3, 4) << 1, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0).finished();
  EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) { return ad::softmax_cols(a, &mask); }), kTol);
}
TEST_F(OpCheck, LayerNorm) {
  EXPECT_LT(check([](Graph&, Expr a, Expr b, Expr, Expr v) {
              return ad::layer_norm_cols(a, v, ad::column(b, 0));
            }),
            kTol);
}
TEST_F(OpCheck, WeightedNll) {
  EXPECT_LT(check([](Graph&, Expr a, Expr, Expr, Expr) {
              static const std::vector<int> gold = {2, -1, 0, 1};
              static const std::vector<double> w = {0.5, 2.0, 1.0};
              return ad::weighted_nll(a, gold, w);
            }),
            kTol);
}

TEST(Autograd, SoftmaxColumnsSumToOneAndMaskedColumnIsZero) {
  Graph g;
  Matrix x = Matrix::Random(4, 3) * 5.0;
  Matrix mask = Matrix::Ones(4, 3);
  mask.col(1).setZero();
  mask(0, 2) = 0;
  const Matrix p = ad::softmax_cols(g.constant(x), &mask).value();
  EXPECT_NEAR(p.col(0).sum(), 1.0, 1e-12);
  EXPECT_EQ(p.col(1).sum(), 0.0);
  EXPECT_NEAR(p.col(2).sum(), 1.0, 1e-12);
  EXPECT_EQ(p(0, 2), 0.0);
  EXPECT_TRUE((p.array() >= 0).all());
}

TEST(Autograd, WeightedNllUniformWeightsIsCrossEntropy) {
  Graph g;
  const Matrix logits = (Matrix(2, 2) << 1.0, -1.0, 0.0, 2.0).finished();
  const std::vector<int> gold = {0, 1};
  const std::vector<double> w = {1.0, 1.0};
  const double expected = 0.5 * (-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)) -
                                 std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(-1.0))));
  EXPECT_NEAR(ad::weighted_nll(g.constant(logits), gold, w).scalar(), expected, 1e-12);
}

TEST(Autograd, DropoutIdentityOutsideTrainingAndInvertedInside) {
  Graph eval;
  const Matrix x = Matrix::Constant(50, 40, 2.0);
  EXPECT_EQ(ad::dropout(eval.constant(x), 0.5).value(), x);
  std::mt19937_64 rng(1);
  Graph train(true, &rng);
  const Matrix y = ad::dropout(train.constant(x), 0.5).value();
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_TRUE(y.data()[i] == 0.0 || y.data()[i] == 4.0);
  EXPECT_NEAR(y.mean(), 2.0, 0.2);
}

TEST(Autograd, ShapeErrorsAreValidationErrors) {
  Graph g;
  EXPECT_THROW(g.constant(Matrix::Zero(2, 2)) + g.constant(Matrix::Zero(3, 2)), ValidationError);
  EXPECT_THROW(ad::matmul(g.constant(Matrix::Zero(2, 2)), g.constant(Matrix::Zero(3, 2))), ValidationError);
  EXPECT_THROW(g.backward(g.constant(Matrix::Zero(2, 1))), ValidationError);
}

TEST(Autograd, GradientsAccumulateAcrossBackwardCalls) {
  ad::ParameterSet ps;
  auto& p = ps.add("p", 2, 1);
  p.value << 1.0, 2.0;
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(ad::sum_all(ad::scale(g.param(p), 3.0)));
  }
  EXPECT_EQ(p.grad, (Matrix(2, 1) << 6.0, 6.0).finished());
  ps.zero_grad();
  EXPECT_TRUE(p.grad.isZero());
}

TEST(ParameterSetTest, SeededInitIsReproducibleAndBounded) {
  ad::ParameterSet a, b;
  for (auto* ps : {&a, &b}) {
    ps->add("w", 5, 9);
    ps->add("g", 5, 1, 0, ad::Init::ones);
    ps->add("z", 2, 2, 0, ad::Init::zeros);
    ps->init_uniform(42);
  }
  EXPECT_EQ(a.get("w").value, b.get("w").value);
  EXPECT_LE(a.get("w").value.cwiseAbs().maxCoeff(), 1.0 / 3.0);
  EXPECT_EQ(a.get("g").value, Matrix::Ones(5, 1));
  EXPECT_TRUE(a.get("z").value.isZero());
  EXPECT_EQ(a.scalar_count(), 45u + 5u + 4u);
  ad::ParameterSet c;
  c.add("w", 5, 9);
  c.init_uniform(43);
  EXPECT_NE(c.get("w").value, a.get("w").value);
  EXPECT_THROW(a.add("w", 1, 1), ValidationError);
  EXPECT_THROW(a.get("missing"), ValidationError);
}

TEST(NN, GruWithZeroParametersAndInputIsZero) {
  ad::ParameterSet ps;
  nn::GRU gru(ps, "gru", 3, 4);
  Graph g;
  auto b = gru.bind(g);
  const Expr h = b.step(g.constant(Matrix::Zero(3, 1)), b.zero_state(g));
  EXPECT_TRUE(h.value().isZero());
}

TEST(NN, GruMatchesHandWrittenEquations) {
  ad::ParameterSet ps;
  nn::GRU gru(ps, "gru", 2, 3);
  ps.init_uniform(3);
  const Matrix x = (Matrix(2, 1) << 0.3, -0.7).finished();
  const Matrix h = (Matrix(3, 1) << 0.1, 0.2, -0.4).finished();
  const Matrix& wi = ps.get("gru.w_ih").value;
  const Matrix& wh = ps.get("gru.w_hh").value;
  const Matrix& bi = ps.get("gru.b_ih").value;
  const Matrix& bh = ps.get("gru.b_hh").value;
  auto sig = [](const Matrix& m) { return Matrix((1.0 + (-m.array()).exp()).inverse()); };
  const Matrix gi = wi * x + bi, gh = wh * h + bh;
  const Matrix r = sig(gi.topRows(3) + gh.topRows(3));
  const Matrix z = sig(gi.middleRows(3, 3) + gh.middleRows(3, 3));
  const Matrix n = (gi.bottomRows(3).array() + r.array() * gh.bottomRows(3).array()).tanh().matrix();
  const Matrix expected = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
  Graph g;
  const Matrix got = gru.bind(g).step(g.constant(x), g.constant(h)).value();
  EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(NN, AttentionOverOnePositionReturnsItsValue) {
  Graph g;
  const Matrix keys = (Matrix(2, 1) << 3.0, -1.0).finished();
  const Matrix values = (Matrix(2, 1) << 0.25, 0.5).finished();
  Eigen::VectorXd w;
  const Expr out = nn::attend(g.constant(Matrix::Ones(2, 1)), g.constant(keys), g.constant(values), nullptr, &w);
  EXPECT_EQ(out.value(), values);
  EXPECT_EQ(w.size(), 1);
  EXPECT_DOUBLE_EQ(w(0), 1.0);
}

TEST(NN, SinusoidalPositions) {
  const Matrix p = nn::sinusoidal_positions(4, 3);
  EXPECT_EQ(p.rows(), 4);
  EXPECT_EQ(p.cols(), 3);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(p(1, 0), 1.0);
  EXPECT_NEAR(p(0, 1), std::sin(1.0), 1e-15);
  EXPECT_NEAR(p(2, 2), std::sin(2.0 / 100.0), 1e-15);
}

TEST(NN, TransformerLayerGradientCheck) {
  ad::ParameterSet ps;
  nn::TransformerEncoderLayer layer(ps, "enc", 4, 2, 6, 0.0);
  ps.init_uniform(8);
  const Matrix x = Matrix::Random(4, 3);
  const Matrix proj = Matrix::Random(4, 3);
  auto loss = [&](bool backward) {
    Graph g;
    Expr l = ad::sum_all(ad::cmul(layer.forward(g, g.constant(x)), g.constant(proj)));
    if (backward) g.backward(l);
    return l.scalar();
  };
  const auto r = testkit::gradient_check(ps, loss);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}
