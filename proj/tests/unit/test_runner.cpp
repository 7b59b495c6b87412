#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "flipkit/error.hpp"
#include "flipkit/runner.hpp"
#include "testkit.hpp"

using namespace flipkit;
using ad::Matrix;

namespace {

// Plain cross-entropy written out by hand, no weights.
double plain_ce(const Matrix& logits, const std::vector<int>& gold) {
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    if (gold[static_cast<std::size_t>(t)] < 0) continue;
    const double mx = logits.col(t).maxCoeff();
    double z = 0.0;
    for (Eigen::Index k = 0; k < logits.rows(); ++k) z += std::exp(logits(k, t) - mx);
    sum += -(logits(gold[static_cast<std::size_t>(t)], t) - mx - std::log(z));
    ++n;
  }
  return sum / static_cast<double>(n);
}

ERCConfig tiny_erc(std::size_t input, std::size_t classes) {
  ERCConfig c;
  c.input_dim = input;
  c.hidden_dim = 6;
  c.hops = 1;
  c.num_classes = classes;
  c.dropout = 0.0;
  return c;
}

struct ErcFixture {
  Corpus corpus;
  EmbeddingTable table;
  SpeakerVocab vocab;
};

ErcFixture erc_fixture(std::uint64_t seed, std::size_t dialogues = 6) {
  std::mt19937_64 rng(seed);
  testkit::RandomDialogueSpec spec;
  spec.min_len = 2;
  spec.max_len = 6;
  spec.labels = {"joy", "neutral", "sadness"};
  ErcFixture f;
  f.corpus = testkit::random_erc_corpus(rng, dialogues, spec);
  f.table = testkit::stub_table(f.corpus, 4);
  f.vocab = build_speaker_vocab(f.corpus, 3);
  return f;
}

TrainConfig quick(int task, std::size_t epochs) {
  TrainConfig c = TrainConfig::defaults(task);
  c.learning_rate = 1e-2;
  c.batch_size = 3;
  c.epochs = epochs;
  return c;
}

}  // namespace

TEST(TrainConfigTest, TaskDefaults) {
  const auto t1 = TrainConfig::defaults(1);
  EXPECT_DOUBLE_EQ(t1.learning_rate, 1e-4);
  EXPECT_EQ(t1.batch_size, 64u);
  EXPECT_EQ(t1.epochs, 100u);
  EXPECT_EQ(t1.weight_mode, WeightMode::inverse_sqrt);
  EXPECT_DOUBLE_EQ(t1.weight_decay, 1e-5);
  EXPECT_EQ(t1.selection_metric(), "weighted_f1");

  const auto t2 = TrainConfig::defaults(2);
  EXPECT_DOUBLE_EQ(t2.learning_rate, 5e-7);
  EXPECT_EQ(t2.batch_size, 2000u);
  EXPECT_EQ(t2.epochs, 1000u);
  EXPECT_EQ(t2.weight_mode, WeightMode::inverse);

  const auto t3 = TrainConfig::defaults(3);
  EXPECT_DOUBLE_EQ(t3.learning_rate, 5e-7);
  EXPECT_EQ(t3.batch_size, 1000u);
  EXPECT_EQ(t3.epochs, 1000u);
  EXPECT_EQ(t3.selection_metric(), "trigger_f1");

  EXPECT_THROW(TrainConfig::defaults(4), ValidationError);
}

TEST(TrainConfigTest, ValidationAndMerge) {
  TrainConfig c = TrainConfig::defaults(1);
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig::defaults(1);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ValidationError);

  c = TrainConfig::defaults(2);
  c.merge({{"learning_rate", 0.5}, {"weight_mode", "inverse_sqrt"}});
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.5);
  EXPECT_EQ(c.weight_mode, WeightMode::inverse_sqrt);
  EXPECT_EQ(c.batch_size, 2000u);
  EXPECT_THROW(c.merge({{"epochs", "many"}}), ValidationError);
  EXPECT_THROW(c.merge(nlohmann::json::array()), ValidationError);

  TrainConfig back = TrainConfig::defaults(1);
  back.merge(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(WeightedCE, UniformWeightsEqualPlainCrossEntropy) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix logits(4, 7);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = nd(rng);
    std::vector<int> gold(7);
    for (auto& g : gold) g = std::uniform_int_distribution<int>(-1, 3)(rng);
    gold[0] = 2;
    const std::vector<double> ones(4, 1.0);
    EXPECT_NEAR(weighted_ce_loss(logits, gold, ones), plain_ce(logits, gold), 1e-9);
  }
}

TEST(WeightedCE, HandComputedTwoPositions) {
  // Position 0: logits (0, ln 3), gold 1 -> -log(3/4). Position 1: logits
  // (0, 0), gold 0 -> -log(1/2). Weights [1, 3].
  Matrix logits(2, 2);
  logits << 0.0, 0.0, std::log(3.0), 0.0;
  const std::vector<int> gold = {1, 0};
  const std::vector<double> w = {1.0, 3.0};
  const double expected = (3.0 * -std::log(0.75) + 1.0 * -std::log(0.5)) / 2.0;
  EXPECT_NEAR(weighted_ce_loss(logits, gold, w), expected, 1e-12);
}

TEST(WeightedCE, ConfidentCorrectLogitsGiveZeroLoss) {
  Matrix logits = Matrix::Zero(3, 2);
  logits(1, 0) = 200.0;
  logits(2, 1) = 200.0;
  const std::vector<int> gold = {1, 2};
  const std::vector<double> ones(3, 1.0);
  EXPECT_NEAR(weighted_ce_loss(logits, gold, ones), 0.0, 1e-12);
}

TEST(WeightedCE, NaNLogitsRaise) {
  Matrix logits = Matrix::Zero(2, 1);
  logits(0, 0) = std::nan("");
  const std::vector<int> gold = {0};
  const std::vector<double> ones(2, 1.0);
  EXPECT_THROW(weighted_ce_loss(logits, gold, ones), RuntimeFailure);
}

TEST(AdamTest, ZeroLearningRateLeavesParametersBitwiseUnchanged) {
  ad::ParameterSet ps;
  ps.add("a", 3, 2);
  ps.add("b", 4, 1);
  ps.init_uniform(5);
  std::vector<Matrix> before;
  for (const auto* p : std::as_const(ps).all()) before.push_back(p->value);
  for (auto* p : ps.all()) p->grad = Matrix::Constant(p->value.rows(), p->value.cols(), 0.7);
  Adam adam(ps, 0.0, 1e-5);
  adam.step();
  adam.step();
  const auto after = std::as_const(ps).all();
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(std::memcmp(before[i].data(), after[i]->value.data(), sizeof(double) * static_cast<std::size_t>(before[i].size())), 0);
}

TEST(AdamTest, MatchesHandOracle) {
  ad::ParameterSet ps;
  auto& p = ps.add("w", 1, 1);
  p.value(0, 0) = 0.5;
  const double lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Adam adam(ps, lr, wd, b1, b2, eps);
  double x = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -0.2, 0.05};
  for (int t = 1; t <= 3; ++t) {
    p.grad = Matrix::Constant(1, 1, grads[t - 1]);
    adam.step();
    const double g = grads[t - 1] + wd * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(p.value(0, 0), x, 1e-14);
  }
  EXPECT_EQ(adam.steps(), 3u);
}

TEST(ClipGradNorm, RescalesOnlyAboveThreshold) {
  ad::ParameterSet ps;
  ps.add("a", 1, 2);
  ps.add("b", 1, 1);
  ps.get("a").grad = (Matrix(1, 2) << 3.0, 0.0).finished();
  ps.get("b").grad = Matrix::Constant(1, 1, 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(ps.get("b").grad(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(ps.get("a").grad(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(ps.get("b").grad(0, 0), 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(ps, 1.0), 1.0, 1e-15);
}

TEST(SplitEpisodes, DeterministicDisjointAndComplete) {
  std::mt19937_64 rng(9);
  const Corpus c = testkit::random_erc_corpus(rng, 40, {});
  const auto [train, val] = split_episodes(c, 0.1, 77);
  EXPECT_EQ(val.size(), 4u);
  EXPECT_EQ(train.size(), 36u);
  std::set<std::string> all(train.begin(), train.end());
  for (const auto& v : val) EXPECT_TRUE(all.insert(v).second) << v;
  EXPECT_EQ(all.size(), 40u);
  EXPECT_EQ(split_episodes(c, 0.1, 77), split_episodes(c, 0.1, 77));
  EXPECT_NE(split_episodes(c, 0.1, 77).second, split_episodes(c, 0.1, 78).second);
  EXPECT_TRUE(split_episodes(c, 0.0, 77).second.empty());
}

TEST(SplitEpisodes, PrefixEntriesOfOneEpisodeStayTogether) {
  std::mt19937_64 rng(4);
  const Corpus c = testkit::random_efr_corpus(rng, 30, {});
  const auto [train, val] = split_episodes(c, 0.2, 1);
  const std::set<std::string> v(val.begin(), val.end());
  for (const auto& t : train) EXPECT_EQ(v.count(t), 0u);
  EXPECT_EQ(train.size() + val.size(), 30u);
}

TEST(Checkpoint, RoundTripReproducesPredictions) {
  const auto f = erc_fixture(2);
  ERCNet net(tiny_erc(f.table.dim + f.vocab.k, f.corpus.label_set.size()));
  net.init(11);
  ModelMeta meta;
  meta.kind = "erc";
  meta.task_id = 1;
  meta.model_config = net.config().to_json();
  meta.train_config = TrainConfig::defaults(1).to_json();
  meta.label_set = f.corpus.label_set;
  meta.vocab = f.vocab;
  meta.embedding_dim = f.table.dim;
  meta.best_epoch = 7;
  meta.best_metric = 0.25;

  testkit::TempDir dir;
  save_checkpoint(dir / "m.ckpt", meta, net.params());
  EXPECT_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
  EXPECT_EQ(testkit::read_file(dir / "m.ckpt").substr(0, 8), "FKCKPT01");

  const ModelMeta header = read_checkpoint_meta(dir / "m.ckpt");
  EXPECT_EQ(header.kind, "erc");
  EXPECT_EQ(header.vocab.top, f.vocab.top);
  EXPECT_EQ(header.best_epoch, 7u);

  ERCNet other(ERCConfig::from_json(header.model_config));
  other.init(999);
  load_checkpoint(dir / "m.ckpt", other.params());
  for (const auto& d : f.corpus.dialogues) {
    const Matrix in = erc_inputs(d, f.table, f.vocab);
    const Matrix a = net.logits(in, speakers_of(d));
    const Matrix b = other.logits(in, speakers_of(d));
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0);
  }
}

TEST(Checkpoint, CorruptOrMismatchedFilesAreRejected) {
  testkit::TempDir dir;
  testkit::write_file(dir / "bad.ckpt", "NOTACKPT....");
  ERCNet net(tiny_erc(7, 3));
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt", net.params()), ParseError);
  EXPECT_THROW(read_checkpoint_meta(dir / "missing.ckpt"), RuntimeFailure);

  ModelMeta meta;
  meta.kind = "erc";
  save_checkpoint(dir / "m.ckpt", meta, net.params());
  ERCNet wider(tiny_erc(9, 3));
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", wider.params()), ValidationError);

  const std::string full = testkit::read_file(dir / "m.ckpt");
  testkit::write_file(dir / "short.ckpt", full.substr(0, full.size() - 5));
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt", net.params()), ParseError);
}

TEST(TrainErc, MissingCacheAbortsBeforeTraining) {
  auto f = erc_fixture(3);
  f.table.vectors.erase(f.table.vectors.begin());
  ERCNet net(tiny_erc(f.table.dim + f.vocab.k, f.corpus.label_set.size()));
  net.init(1);
  const auto before = net.params().get(net.params().all().front()->name).value;
  std::ostringstream log;
  TrainIO io;
  io.log_jsonl = &log;
  EXPECT_THROW(train_erc(net, f.corpus, f.table, f.vocab, quick(1, 2), io), RuntimeFailure);
  EXPECT_EQ(log.str(), "");
  EXPECT_EQ(net.params().all().front()->value, before);
}

TEST(TrainErc, DimensionMismatchIsAValidationError) {
  const auto f = erc_fixture(3);
  ERCNet net(tiny_erc(f.table.dim + f.vocab.k + 1, f.corpus.label_set.size()));
  EXPECT_THROW(train_erc(net, f.corpus, f.table, f.vocab, quick(1, 1)), ValidationError);
}

TEST(TrainErc, SelectionKeepsTheBestLoggedEpoch) {
  const auto f = erc_fixture(4, 12);
  ERCNet net(tiny_erc(f.table.dim + f.vocab.k, f.corpus.label_set.size()));
  net.init(2);
  TrainConfig cfg = quick(1, 8);
  cfg.validation_fraction = 0.25;
  std::ostringstream log;
  TrainIO io;
  io.log_jsonl = &log;
  const TrainResult r = train_erc(net, f.corpus, f.table, f.vocab, cfg, io);
  ASSERT_EQ(r.log.size(), 8u);
  for (const auto& e : r.log) EXPECT_GE(r.best_metric, e.val_metric);
  EXPECT_DOUBLE_EQ(r.log[r.best_epoch - 1].val_metric, r.best_metric);
  EXPECT_EQ(r.validation_episodes.size(), 3u);

  // The restored parameters score exactly the retained metric.
  std::vector<int> gold, pred;
  const std::set<std::string> val(r.validation_episodes.begin(), r.validation_episodes.end());
  for (const auto& d : f.corpus.dialogues) {
    if (val.count(d.episode) == 0) continue;
    const auto p = predict_emotions(net, d, f.table, f.vocab, f.corpus.label_set);
    for (std::size_t t = 0; t < d.size(); ++t) {
      gold.push_back(static_cast<int>(label_index(*d.utterances[t].emotion, f.corpus.label_set)));
      pred.push_back(static_cast<int>(label_index(p[t], f.corpus.label_set)));
    }
  }
  EXPECT_NEAR(testkit::reference::weighted_f1(gold, pred, static_cast<int>(f.corpus.label_set.size())), r.best_metric,
              1e-12);

  // Log: a split line, then one record per epoch.
  std::istringstream lines(log.str());
  std::string line;
  std::getline(lines, line);
  const auto split = nlohmann::json::parse(line).at("split");
  EXPECT_EQ(split.at("validation").get<std::vector<std::string>>(), r.validation_episodes);
  std::size_t epoch = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<std::size_t>(), ++epoch);
    EXPECT_EQ(j.at("numeric_mode"), "single-threaded");
    EXPECT_TRUE(j.contains("train_loss") && j.contains("val_metric") && j.contains("wall_seconds"));
  }
  EXPECT_EQ(epoch, 8u);
}

TEST(TrainErc, SameSeedGivesBitwiseIdenticalParameters) {
  const auto f = erc_fixture(5);
  auto run = [&] {
    ERCNet net(tiny_erc(f.table.dim + f.vocab.k, f.corpus.label_set.size()));
    net.init(3);
    TrainConfig cfg = quick(1, 3);
    train_erc(net, f.corpus, f.table, f.vocab, cfg);
    std::vector<Matrix> out;
    for (const auto* p : std::as_const(net.params()).all()) out.push_back(p->value);
    return out;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(std::memcmp(a[i].data(), b[i].data(), sizeof(double) * static_cast<std::size_t>(a[i].size())), 0);
}

TEST(TrainErc, OverfitsASmallCorpus) {
  const auto r = testkit::overfit_erc(1, 20, 200);
  EXPECT_GE(r.accuracy, 0.95);
  // Smoothed training loss falls from the start to the end of the run.
  const auto& log = r.train.log;
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += log[i].train_loss;
    return s / static_cast<double>(to - from);
  };
  EXPECT_LT(mean(log.size() - 10, log.size()), mean(0, 10));
}

TEST(TrainEfr, OverfitsFiftyInstances) {
  const auto r = testkit::overfit_efr(1, 50, 300);
  EXPECT_GE(r.accuracy, 0.95);
}

TEST(TrainEfr, NonFiniteLossAbortsWithContext) {
  std::mt19937_64 rng(8);
  const Corpus c = testkit::random_efr_corpus(rng, 5, {});
  const auto table = testkit::stub_table(c, 4);
  const auto vocab = build_speaker_vocab(c, 3);
  EFRConfig mc;
  mc.input_dim = table.dim + vocab.k + c.label_set.size();
  mc.num_emotions = c.label_set.size();
  mc.model_dim = 4;
  mc.heads = 1;
  mc.ff_dim = 4;
  mc.history_dim = 2;
  mc.dropout = 0.0;
  EFRNet net(mc);
  net.params().fill(std::nan(""));
  try {
    train_efr(net, c, table, vocab, quick(2, 1));
    FAIL() << "expected RuntimeFailure";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}
