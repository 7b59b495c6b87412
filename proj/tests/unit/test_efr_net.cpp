#include <gtest/gtest.h>

#include <random>

#include "flipkit/efr_net.hpp"
#include "flipkit/error.hpp"
#include "flipkit/nn.hpp"
#include "flipkit/ptz.hpp"
#include "testkit.hpp"

using namespace flipkit;
using ad::Expr;
using ad::Graph;
using ad::Matrix;

namespace {

EFRConfig tiny(std::size_t input = 7, std::size_t emotions = 3) {
  EFRConfig c;
  c.input_dim = input;
  c.num_emotions = emotions;
  c.model_dim = 8;
  c.heads = 1;
  c.ff_dim = 12;
  c.history_dim = 3;
  c.window = 3;
  c.dropout = 0.0;
  return c;
}

EFRInputs random_inputs(std::mt19937_64& rng, const EFRConfig& c, Eigen::Index n) {
  std::normal_distribution<double> nd;
  EFRInputs in;
  in.features = Matrix(static_cast<Eigen::Index>(c.input_dim), n);
  for (Eigen::Index i = 0; i < in.features.size(); ++i) in.features.data()[i] = nd(rng);
  in.emotions = Matrix::Zero(static_cast<Eigen::Index>(c.num_emotions), n);
  for (Eigen::Index t = 0; t < n; ++t)
    in.emotions(std::uniform_int_distribution<Eigen::Index>(0, in.emotions.rows() - 1)(rng), t) = 1.0;
  return in;
}

}  // namespace

TEST(EFRConfigTest, DefaultsRoundTripAndValidation) {
  const EFRConfig d;
  EXPECT_EQ(d.input_dim, 768u + 6u + 8u);
  EXPECT_EQ(d.model_dim, 256u);
  EXPECT_EQ(d.layers, 1u);
  EXPECT_EQ(d.heads, 4u);
  EXPECT_EQ(d.ff_dim, 4 * d.model_dim);
  EXPECT_EQ(d.window, 5u);
  EXPECT_EQ(EFRConfig::from_json({{"model_dim", 16}, {"heads", 2}}).ff_dim, 64u);
  EFRConfig c = tiny();
  c.history_scope = HistoryScope::dialogue;
  EXPECT_EQ(EFRConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(EFRConfig::from_json({{"model_dim", 10}, {"heads", 4}}), ValidationError);
  EXPECT_THROW(EFRConfig::from_json({{"history_scope", "episode"}}), ValidationError);
}

TEST(BuildInputs, DimensionsPerTask) {
  const Corpus c = load_corpus(FLIPKIT_FIXTURES "/efr_small.json", 2);
  const SpeakerVocab vocab = build_speaker_vocab(c, 6);
  const auto inst = make_efr_instances(c, 5);
  std::vector<std::string> eight = {"anger", "contempt", "disgust", "fear", "joy", "neutral", "sadness", "surprise"};
  EXPECT_EQ(build_inputs(inst[0], testkit::stub_table(c, 768), vocab, eight).features.rows(), 782);
  std::vector<std::string> seven = {"anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"};
  EXPECT_EQ(build_inputs(inst[0], testkit::stub_table(c, 1024), vocab, seven).features.rows(), 1037);
}

TEST(BuildInputs, ZeroEmbeddingLeavesOnlyOneHots) {
  const Corpus c = load_corpus(FLIPKIT_FIXTURES "/efr_small.json", 2);
  EmbeddingTable zeros = testkit::stub_table(c, 4);
  for (auto& [k, v] : zeros.vectors) std::fill(v.begin(), v.end(), 0.0f);
  const SpeakerVocab vocab = build_speaker_vocab(c, 6);
  const EFRInstance inst = make_efr_instances(c, 5)[1];
  const EFRInputs in = build_inputs(inst, zeros, vocab, c.label_set);
  ASSERT_EQ(in.features.cols(), 5);
  for (Eigen::Index t = 0; t < 5; ++t) {
    const Utterance& u = inst.window[static_cast<std::size_t>(t)];
    Eigen::VectorXd expected(4 + 6 + static_cast<Eigen::Index>(c.label_set.size()));
    expected << Eigen::VectorXd::Zero(4), speaker_one_hot(u.speaker, vocab), emotion_one_hot(*u.emotion, c.label_set);
    EXPECT_EQ(in.features.col(t), expected);
    EXPECT_EQ(in.emotions.col(t), emotion_one_hot(*u.emotion, c.label_set));
  }
}

TEST(BuildInputs, MissingEmbeddingNamesUtterance) {
  const Corpus c = load_corpus(FLIPKIT_FIXTURES "/efr_small.json", 2);
  EmbeddingTable t = testkit::stub_table(c, 4);
  t.vectors.erase("utterance_0#1:3");
  try {
    build_inputs(make_efr_instances(c, 5)[1], t, build_speaker_vocab(c, 6), c.label_set);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("utterance_0#1:3"), std::string::npos);
  }
}

TEST(BuildInputs, DialogueScopeHistoryCoversWholePrefix) {
  std::mt19937_64 rng(1);
  const Corpus c = testkit::random_efr_corpus(rng, 10, {});
  const auto table = testkit::stub_table(c, 4);
  const SpeakerVocab vocab = build_speaker_vocab(c, 6);
  const auto instances = make_efr_instances(c, 2);
  for (std::size_t i = 0; i < c.dialogues.size(); ++i) {
    const EFRInputs in = build_inputs(instances[i], table, vocab, c.label_set, HistoryScope::dialogue, &c.dialogues[i]);
    EXPECT_EQ(in.emotions.cols(), static_cast<Eigen::Index>(c.dialogues[i].size()));
    EXPECT_EQ(in.features.cols(), static_cast<Eigen::Index>(instances[i].window.size()));
  }
}

TEST(EFRNetTest, ContextualizeShapeAndSinglePosition) {
  const EFRConfig cfg = tiny();
  EFRNet net(cfg);
  net.init(2);
  std::mt19937_64 rng(2);
  for (Eigen::Index n = 1; n <= 3; ++n) {
    Graph g;
    const Expr x = net.contextualize(g, random_inputs(rng, cfg, n).features);
    EXPECT_EQ(x.rows(), 8);
    EXPECT_EQ(x.cols(), n);
    EXPECT_TRUE(x.value().allFinite());
  }
  Graph g;
  EXPECT_THROW(net.contextualize(g, Matrix::Zero(6, 2)), ValidationError);
}

TEST(EFRNetTest, SwappingNonTargetPositionsChangesTheirVectors) {
  EFRConfig cfg = tiny();
  cfg.window = 4;
  EFRNet net(cfg);
  net.init(3);
  std::mt19937_64 rng(3);
  const EFRInputs in = random_inputs(rng, cfg, 4);
  Matrix swapped = in.features;
  swapped.col(0).swap(swapped.col(1));
  Graph g;
  const Matrix a = net.contextualize(g, in.features).value();
  const Matrix b = net.contextualize(g, swapped).value();
  // Without positions, self-attention is permutation-equivariant and these would match.
  EXPECT_GT((a.col(0) - b.col(1)).norm(), 1e-6);
  EXPECT_GT((a.col(1) - b.col(0)).norm(), 1e-6);
}

TEST(EFRNetTest, EmotionHistory) {
  const EFRConfig cfg = tiny();
  EFRNet net(cfg);
  net.init(4);
  Graph g;
  const Matrix e = (Matrix(3, 1) << 0, 1, 0).finished();
  const Matrix h = net.emotion_history(g, e).value();
  EXPECT_EQ(h.rows(), 3);
  // One step from the zero state.
  nn::GRU::Bound gru;
  auto& ps = net.params();
  gru.w_ih = g.param(ps.get("efr.emotion_gru.w_ih"));
  gru.w_hh = g.param(ps.get("efr.emotion_gru.w_hh"));
  gru.b_ih = g.param(ps.get("efr.emotion_gru.b_ih"));
  gru.b_hh = g.param(ps.get("efr.emotion_gru.b_hh"));
  gru.hidden = 3;
  EXPECT_EQ(h, gru.step(g.constant(e), gru.zero_state(g)).value());
  const Matrix seq = (Matrix(3, 3) << 1, 0, 0, 0, 1, 1, 0, 0, 0).finished();
  EXPECT_EQ(net.emotion_history(g, seq).value(), net.emotion_history(g, seq).value());
}

TEST(EFRNetTest, ZeroParametersGiveEvenOdds) {
  const EFRConfig cfg = tiny();
  EFRNet net(cfg);  // parameters stay zero-initialized
  std::mt19937_64 rng(5);
  const TriggerPrediction p = net.predict(random_inputs(rng, cfg, 3));
  for (Eigen::Index t = 0; t < 3; ++t) {
    EXPECT_DOUBLE_EQ(p.probabilities(0, t), 0.5);
    EXPECT_DOUBLE_EQ(p.probabilities(1, t), 0.5);
  }
  EXPECT_EQ(p.decisions, (std::vector<int>{0, 0, 0}));
}

TEST(EFRNetTest, ProbabilitiesSumToOne) {
  const EFRConfig cfg = tiny();
  EFRNet net(cfg);
  net.init(6);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = std::uniform_int_distribution<Eigen::Index>(1, 3)(rng);
    const TriggerPrediction p = net.predict(random_inputs(rng, cfg, n));
    ASSERT_EQ(p.decisions.size(), static_cast<std::size_t>(n));
    for (Eigen::Index t = 0; t < n; ++t) {
      EXPECT_NEAR(p.probabilities.col(t).sum(), 1.0, 1e-6);
      EXPECT_EQ(p.decisions[static_cast<std::size_t>(t)], p.probabilities(1, t) > p.probabilities(0, t) ? 1 : 0);
    }
  }
}

TEST(EFRNetTest, TargetVectorIsSharedByEveryPosition) {
  const EFRConfig cfg = tiny();
  EFRNet net(cfg);
  net.init(7);
  std::mt19937_64 rng(7);
  const EFRInputs in = random_inputs(rng, cfg, 3);
  Graph g;
  const Expr ctx = net.contextualize(g, in.features);
  const Expr hist = net.emotion_history(g, in.emotions);
  const Matrix f = net.candidate_features(ctx, hist).value();
  ASSERT_EQ(f.rows(), 8 + 8 + 3);
  for (Eigen::Index t = 0; t < 3; ++t) {
    EXPECT_EQ(f.col(t).head(8), ctx.value().col(t));
    EXPECT_EQ(f.col(t).segment(8, 8), f.col(2).head(8));
    EXPECT_EQ(f.col(t).tail(3), hist.value().col(0));
  }
}

TEST(EFRNetTest, MaskedDecisionsAreSubsetAndInsideWindow) {
  std::mt19937_64 rng(8);
  const Corpus c = testkit::random_efr_corpus(rng, 40, {});
  const auto table = testkit::stub_table(c, 4);
  const SpeakerVocab vocab = build_speaker_vocab(c, 6);
  EFRConfig cfg = tiny(4 + 6 + c.label_set.size(), c.label_set.size());
  cfg.window = 5;
  EFRNet net(cfg);
  net.init(8);
  // Bias toward positives so masking has something to do.
  net.params().get("efr.classifier.bias").value(1, 0) = 2.0;
  std::size_t masked = 0;
  for (const auto& inst : make_efr_instances(c, 5)) {
    const EFRInputs in = build_inputs(inst, table, vocab, c.label_set);
    const auto off = efr_forward(net, inst, in, false);
    const auto on = efr_forward(net, inst, in, true);
    for (std::size_t i = 0; i < off.decisions.size(); ++i) {
      EXPECT_LE(on.decisions[i], off.decisions[i]);
      EXPECT_EQ(on.masked[i], on.decisions[i] != off.decisions[i]);
      masked += on.masked[i];
    }
    const auto full = expand_to_dialogue(inst, on.decisions);
    ASSERT_EQ(full.size(), inst.dialogue_length);
    for (std::size_t j = 0; j < inst.window_offset; ++j) EXPECT_EQ(full[j], 0);
  }
  EXPECT_GT(masked, 0u);
}

TEST(EFRNetTest, MaskIsIdentityWithoutOutOfZonePositives) {
  const EFRConfig cfg = tiny();
  EFRNet net(cfg);  // all-zero parameters: every decision is 0
  std::mt19937_64 rng(9);
  const Corpus c = testkit::random_efr_corpus(rng, 5, {});
  EFRInstance inst = make_efr_instances(c, 3)[0];
  EFRInputs in = random_inputs(rng, cfg, static_cast<Eigen::Index>(inst.window.size()));
  EXPECT_EQ(efr_forward(net, inst, in, true).decisions, efr_forward(net, inst, in, false).decisions);
}

TEST(EFRNetTest, GradientCheckTinyConfig) {
  const EFRConfig cfg = tiny();
  EFRNet net(cfg);
  net.init(10);
  std::mt19937_64 rng(10);
  const EFRInputs in = random_inputs(rng, cfg, 3);
  const std::vector<int> gold = {1, 0, 1};
  const std::vector<double> w = {0.4, 1.6};
  auto loss = [&](bool backward) {
    Graph g;
    Expr l = ad::weighted_nll(net.forward(g, in), gold, w);
    if (backward) g.backward(l);
    return l.scalar();
  };
  const auto r = testkit::gradient_check(net.params(), loss);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
  EXPECT_EQ(r.checked, net.params().scalar_count());
}
