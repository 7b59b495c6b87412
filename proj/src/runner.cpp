#include "flipkit/runner.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "flipkit/error.hpp"
#include "flipkit/eval.hpp"
#include "flipkit/ptz.hpp"

namespace flipkit {

using ad::Matrix;

// ---------------------------------------------------------------------------
// TrainConfig

TrainConfig TrainConfig::defaults(int task_id) {
  TrainConfig c;
  c.task_id = task_id;
  switch (task_id) {
    case 1:
      c.learning_rate = 1e-4;
      c.batch_size = 64;
      c.epochs = 100;
      c.weight_mode = WeightMode::inverse_sqrt;
      break;
    case 2:
      c.learning_rate = 5e-7;
      c.batch_size = 2000;
      c.epochs = 1000;
      c.weight_mode = WeightMode::inverse;
      break;
    case 3:
      c.learning_rate = 5e-7;
      c.batch_size = 1000;
      c.epochs = 1000;
      c.weight_mode = WeightMode::inverse;
      break;
    default:
      throw ValidationError("task id must be 1, 2 or 3");
  }
  return c;
}

void TrainConfig::validate() const {
  if (task_id < 1 || task_id > 3) throw ValidationError("task id must be 1, 2 or 3");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be finite and > 0");
  if (epochs == 0) throw ValidationError("epochs must be at least 1");
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  if (window == 0 || speaker_k == 0) throw ValidationError("window and speaker_k must be positive");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0)
    throw ValidationError("validation fraction must lie in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"task_id", task_id},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"weight_mode", to_string(weight_mode)},
          {"weight_decay", weight_decay},
          {"seed", seed},
          {"clip_norm", clip_norm},
          {"validation_fraction", validation_fraction},
          {"checkpoint_every", checkpoint_every},
          {"window", window},
          {"speaker_k", speaker_k},
          {"ptz_mask", ptz_mask},
          {"restrict_to_ptz", restrict_to_ptz},
          {"selection_metric", selection_metric()}};
}

void TrainConfig::merge(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("training config must be a JSON object");
  try {
    task_id = j.value("task_id", task_id);
    learning_rate = j.value("learning_rate", learning_rate);
    batch_size = j.value("batch_size", batch_size);
    epochs = j.value("epochs", epochs);
    if (j.contains("weight_mode")) weight_mode = parse_weight_mode(j["weight_mode"].get<std::string>());
    weight_decay = j.value("weight_decay", weight_decay);
    seed = j.value("seed", seed);
    clip_norm = j.value("clip_norm", clip_norm);
    validation_fraction = j.value("validation_fraction", validation_fraction);
    checkpoint_every = j.value("checkpoint_every", checkpoint_every);
    window = j.value("window", window);
    speaker_k = j.value("speaker_k", speaker_k);
    ptz_mask = j.value("ptz_mask", ptz_mask);
    restrict_to_ptz = j.value("restrict_to_ptz", restrict_to_ptz);
  } catch (const nlohmann::json::type_error& e) {
    throw ValidationError(std::string("bad training config field: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Loss and optimization

double weighted_ce_loss(const Matrix& logits, std::span<const int> gold, std::span<const double> weights) {
  if (logits.hasNaN()) throw RuntimeFailure("NaN in logits");
  ad::Graph g;
  return ad::weighted_nll(g.constant(logits), gold, weights).scalar();
}

double clip_grad_norm(ad::ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : std::as_const(params).all()) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params.all()) p->grad *= s;
  }
  return norm;
}

Adam::Adam(ad::ParameterSet& params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : std::as_const(params).all()) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto ps = params_.all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = *ps[i];
    Matrix g = p.grad;
    if (weight_decay_ != 0.0) g += weight_decay_ * p.value;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    if (lr_ == 0.0) continue;
    const double step = lr_ / bc1;
    p.value.array() -= step * m_[i].array() / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'K', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ParseError("truncated checkpoint tensor data");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

nlohmann::json meta_to_json(const ModelMeta& m) {
  return {{"kind", m.kind},
          {"task_id", m.task_id},
          {"model_config", m.model_config},
          {"train_config", m.train_config},
          {"label_set", m.label_set},
          {"speakers", m.vocab.top},
          {"speaker_k", m.vocab.k},
          {"embedding_dim", m.embedding_dim},
          {"best_epoch", m.best_epoch},
          {"best_metric", m.best_metric}};
}

ModelMeta meta_from_json(const nlohmann::json& j) {
  ModelMeta m;
  m.kind = j.at("kind").get<std::string>();
  m.task_id = j.at("task_id").get<int>();
  m.model_config = j.at("model_config");
  m.train_config = j.at("train_config");
  m.label_set = j.at("label_set").get<std::vector<std::string>>();
  m.vocab.top = j.at("speakers").get<std::vector<std::string>>();
  m.vocab.k = j.at("speaker_k").get<std::size_t>();
  m.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  m.best_epoch = j.value("best_epoch", std::size_t{0});
  m.best_metric = j.value("best_metric", 0.0);
  return m;
}

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError(path.string() + ": not a checkpoint");
  unsigned char lb[4];
  if (!in.read(reinterpret_cast<char*>(lb), 4)) throw ParseError(path.string() + ": truncated header");
  const std::uint32_t len = lb[0] | lb[1] << 8 | lb[2] << 16 | static_cast<std::uint32_t>(lb[3]) << 24;
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw ParseError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (!with_tensors) return raw;
  for (const auto& t : raw.header.at("tensors")) {
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = std::bit_cast<double>(read_u64(in));
    raw.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return raw;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelMeta& meta, const ad::ParameterSet& params) {
  nlohmann::json header = {{"format", "flipkit-checkpoint"}, {"version", 1}, {"meta", meta_to_json(meta)}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : params.all()) tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 8);
    write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params.all())
      for (Eigen::Index j = 0; j < p->value.cols(); ++j)
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) write_u64(out, std::bit_cast<std::uint64_t>(p->value(i, j)));
    if (!out) throw RuntimeFailure("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelMeta read_checkpoint_meta(const std::filesystem::path& path) {
  return meta_from_json(read_raw(path, false).header.at("meta"));
}

ModelMeta load_checkpoint(const std::filesystem::path& path, ad::ParameterSet& params) {
  RawCheckpoint raw = read_raw(path, true);
  if (raw.tensors.size() != params.all().size())
    throw ValidationError("checkpoint holds " + std::to_string(raw.tensors.size()) + " tensors, model has " +
                          std::to_string(params.all().size()));
  for (auto& [name, m] : raw.tensors) {
    auto& p = params.get(name);
    if (p.value.rows() != m.rows() || p.value.cols() != m.cols())
      throw ValidationError("checkpoint tensor " + name + " has the wrong shape");
    p.value = std::move(m);
  }
  return meta_from_json(raw.header.at("meta"));
}

// ---------------------------------------------------------------------------
// Training

std::pair<std::vector<std::string>, std::vector<std::string>> split_episodes(const Corpus& corpus, double fraction,
                                                                              std::uint64_t seed) {
  std::vector<std::string> episodes;
  std::unordered_set<std::string> seen;
  for (const auto& d : corpus.dialogues)
    if (seen.insert(d.episode).second) episodes.push_back(d.episode);
  std::mt19937_64 rng(seed ^ 0x5EED5EEDULL);
  std::shuffle(episodes.begin(), episodes.end(), rng);
  auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(episodes.size())));
  if (fraction > 0.0 && n_val == 0 && episodes.size() >= 2) n_val = 1;
  std::vector<std::string> val(episodes.begin(), episodes.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::string> train(episodes.begin() + static_cast<std::ptrdiff_t>(n_val), episodes.end());
  return {train, val};
}

namespace {

using Clock = std::chrono::steady_clock;

struct Snapshot {
  std::vector<Matrix> values;
  static Snapshot take(const ad::ParameterSet& ps) {
    Snapshot s;
    for (const auto* p : ps.all()) s.values.push_back(p->value);
    return s;
  }
  void restore(ad::ParameterSet& ps) const {
    auto all = ps.all();
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = values[i];
  }
};

Corpus subset(const Corpus& corpus, const std::vector<std::string>& episodes) {
  std::unordered_set<std::string> keep(episodes.begin(), episodes.end());
  Corpus out;
  out.task_id = corpus.task_id;
  out.label_set = corpus.label_set;
  for (const auto& d : corpus.dialogues)
    if (keep.count(d.episode) != 0) out.dialogues.push_back(d);
  return out;
}

void require_cached(const Corpus& corpus, const EmbeddingTable& table) {
  const auto missing = missing_keys(corpus, table);
  if (missing.empty()) return;
  std::ostringstream os;
  os << missing.size() << " utterances have no cached embedding (first: " << missing.front()
     << "); run `flipkit embed` first";
  throw RuntimeFailure(os.str());
}

void write_epoch(const TrainIO& io, const EpochRecord& r) {
  if (io.log_jsonl != nullptr) {
    nlohmann::json j = {{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"val_metric", r.val_metric},
                        {"wall_seconds", r.wall_seconds},
                        {"numeric_mode", "single-threaded"}};
    *io.log_jsonl << j.dump() << '\n';
    io.log_jsonl->flush();
  }
  if (io.progress != nullptr)
    *io.progress << "epoch " << r.epoch << "  loss " << r.train_loss << "  val " << r.val_metric << '\n';
}

/// First log line: which episodes were held out, so a run can be reproduced.
void write_split(const TrainIO& io, const TrainConfig& cfg, const std::vector<std::string>& train,
                 const std::vector<std::string>& val) {
  if (io.log_jsonl == nullptr) return;
  nlohmann::json j = {{"split", {{"seed", cfg.seed},
                                 {"validation_fraction", cfg.validation_fraction},
                                 {"train", train},
                                 {"validation", val}}}};
  *io.log_jsonl << j.dump() << '\n';
}

/// Shared epoch loop: `run_example(i, rng)` does forward+backward for example
/// i of the shuffled order and returns its loss; `validate()` scores.
template <typename RunExample, typename Validate>
TrainResult run_training(ad::ParameterSet& params, std::size_t n_examples, const TrainConfig& cfg, TrainIO io,
                         RunExample&& run_example, Validate&& validate) {
  if (n_examples == 0) throw ValidationError("no training examples");
  std::mt19937_64 rng(cfg.seed);
  Adam adam(params, cfg.learning_rate, cfg.weight_decay);
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  Snapshot best = Snapshot::take(params);
  const auto start = Clock::now();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t b = 0; b < n_examples; b += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n_examples, b + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - b);
      params.zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const double loss = run_example(order[i], scale, rng);
        if (!std::isfinite(loss)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", step " << step;
          throw RuntimeFailure(os.str());
        }
        loss_sum += loss;
      }
      clip_grad_norm(params, cfg.clip_norm);
      adam.step();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_examples);
    rec.val_metric = validate();
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    result.log.push_back(rec);
    write_epoch(io, rec);
    if (rec.val_metric > result.best_metric) {
      result.best_metric = rec.val_metric;
      result.best_epoch = epoch;
      best = Snapshot::take(params);
    }
    if (cfg.checkpoint_every != 0 && epoch % cfg.checkpoint_every == 0 && !io.checkpoint_path.empty() &&
        io.meta != nullptr) {
      Snapshot current = Snapshot::take(params);
      best.restore(params);
      io.meta->best_epoch = result.best_epoch;
      io.meta->best_metric = result.best_metric;
      save_checkpoint(io.checkpoint_path, *io.meta, params);
      current.restore(params);
    }
  }
  best.restore(params);
  return result;
}

}  // namespace

TrainResult train_erc(ERCNet& net, const Corpus& corpus, const EmbeddingTable& table, const SpeakerVocab& vocab,
                      const TrainConfig& cfg, TrainIO io) {
  cfg.validate();
  require_cached(corpus, table);
  if (table.dim + vocab.k != net.config().input_dim)
    throw ValidationError("embedding dim + speaker k does not match the ERC input dim");
  auto [train_eps, val_eps] = split_episodes(corpus, cfg.validation_fraction, cfg.seed);
  write_split(io, cfg, train_eps, val_eps);
  const Corpus train = subset(corpus, train_eps);
  const Corpus val = val_eps.empty() ? train : subset(corpus, val_eps);
  const auto weights = class_weights(train, cfg.weight_mode);
  if (weights.size() != net.config().num_classes) throw ValidationError("label set size differs from num_classes");

  struct Example {
    Matrix inputs;
    std::vector<std::string> speakers;
    std::vector<int> gold;
  };
  std::vector<Example> examples;
  // Chunks re-base utterance indices, so features are looked up on the whole
  // dialogue and sliced.
  const std::size_t seq_len = net.config().seq_len;
  for (const auto& d : train.dialogues) {
    const Matrix full = erc_inputs(d, table, vocab);
    std::size_t start = 0;
    for (const auto& chunk : split_sequences(d, seq_len)) {
      examples.push_back({full.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(chunk.size())),
                          speakers_of(chunk), emotion_targets(chunk, corpus.label_set)});
      start += chunk.size();
    }
  }

  std::vector<Example> val_examples;
  for (const auto& d : val.dialogues)
    val_examples.push_back({erc_inputs(d, table, vocab), speakers_of(d), emotion_targets(d, corpus.label_set)});

  auto run_example = [&](std::size_t i, double scale, std::mt19937_64& rng) {
    const Example& ex = examples[i];
    ad::Graph g(true, &rng);
    ad::Expr logits = net.forward(g, ex.inputs, ex.speakers);
    ad::Expr loss = ad::weighted_nll(logits, ex.gold, weights);
    const double value = loss.scalar();
    if (!std::isfinite(value)) return value;
    g.backward(ad::scale(loss, scale));
    return value;
  };
  auto validate = [&] {
    std::vector<int> gold, pred;
    for (const auto& ex : val_examples) {
      const Matrix logits = net.logits(ex.inputs, ex.speakers);
      for (Eigen::Index t = 0; t < logits.cols(); ++t) {
        if (ex.gold[static_cast<std::size_t>(t)] < 0) continue;
        Eigen::Index arg = 0;
        logits.col(t).maxCoeff(&arg);
        gold.push_back(ex.gold[static_cast<std::size_t>(t)]);
        pred.push_back(static_cast<int>(arg));
      }
    }
    return classification_report(gold, pred, corpus.label_set).weighted_f1;
  };
  TrainResult r = run_training(net.params(), examples.size(), cfg, io, run_example, validate);
  r.train_episodes = std::move(train_eps);
  r.validation_episodes = std::move(val_eps);
  return r;
}

TrainResult train_efr(EFRNet& net, const Corpus& corpus, const EmbeddingTable& table, const SpeakerVocab& vocab,
                      const TrainConfig& cfg, TrainIO io) {
  cfg.validate();
  require_cached(corpus, table);
  const EFRConfig& mc = net.config();
  if (table.dim + vocab.k + corpus.label_set.size() != mc.input_dim)
    throw ValidationError("embedding dim + speaker k + emotions does not match the EFR input dim");
  auto [train_eps, val_eps] = split_episodes(corpus, cfg.validation_fraction, cfg.seed);
  write_split(io, cfg, train_eps, val_eps);
  const Corpus train = subset(corpus, train_eps);
  const Corpus val = val_eps.empty() ? train : subset(corpus, val_eps);

  struct Example {
    EFRInputs inputs;
    std::vector<int> gold;
  };
  std::vector<EFRInstance> instances;
  std::vector<Example> examples;
  for (const auto& d : train.dialogues) {
    EFRInstance inst = make_efr_instance(d, mc.window);
    if (cfg.restrict_to_ptz) inst = restrict_to_ptz(inst);
    examples.push_back({build_inputs(inst, table, vocab, corpus.label_set, mc.history_scope, &d), inst.trigger_labels});
    instances.push_back(std::move(inst));
  }
  const auto weights = trigger_class_weights(instances, cfg.weight_mode);

  auto run_example = [&](std::size_t i, double scale, std::mt19937_64& rng) {
    const Example& ex = examples[i];
    ad::Graph g(true, &rng);
    ad::Expr loss = ad::weighted_nll(net.forward(g, ex.inputs), ex.gold, weights);
    const double value = loss.scalar();
    if (!std::isfinite(value)) return value;
    g.backward(ad::scale(loss, scale));
    return value;
  };
  auto validate = [&] {
    const auto preds = predict_corpus_triggers(net, val, table, vocab, corpus.label_set, cfg.ptz_mask, cfg.restrict_to_ptz);
    return score_triggers(val, preds).positive_f1;
  };
  TrainResult r = run_training(net.params(), examples.size(), cfg, io, run_example, validate);
  r.train_episodes = std::move(train_eps);
  r.validation_episodes = std::move(val_eps);
  return r;
}

std::vector<std::string> predict_emotions(const ERCNet& net, const Dialogue& dialogue, const EmbeddingTable& table,
                                          const SpeakerVocab& vocab, const std::vector<std::string>& label_set) {
  std::vector<std::string> out;
  if (dialogue.size() == 0) return out;
  const Matrix logits = net.logits(erc_inputs(dialogue, table, vocab), speakers_of(dialogue));
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    Eigen::Index arg = 0;
    logits.col(t).maxCoeff(&arg);
    out.push_back(label_set[static_cast<std::size_t>(arg)]);
  }
  return out;
}

}  // namespace flipkit
