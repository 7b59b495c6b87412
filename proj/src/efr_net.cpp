#include "flipkit/efr_net.hpp"

#include <cmath>

#include "flipkit/error.hpp"

namespace flipkit {

using ad::Expr;
using ad::Matrix;

void EFRConfig::validate() const {
  if (input_dim == 0 || num_emotions == 0 || model_dim == 0 || layers == 0 || heads == 0 || ff_dim == 0 ||
      history_dim == 0 || window == 0)
    throw ValidationError("EFR dimensions must be positive");
  if (model_dim % heads != 0) throw ValidationError("EFR model_dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout must lie in [0, 1)");
}

nlohmann::json EFRConfig::to_json() const {
  return {{"input_dim", input_dim},     {"num_emotions", num_emotions},
          {"model_dim", model_dim},     {"layers", layers},
          {"heads", heads},             {"ff_dim", ff_dim},
          {"history_dim", history_dim}, {"window", window},
          {"dropout", dropout},         {"history_scope", history_scope == HistoryScope::window ? "window" : "dialogue"}};
}

EFRConfig EFRConfig::from_json(const nlohmann::json& j) {
  EFRConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.num_emotions = j.value("num_emotions", c.num_emotions);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", 4 * c.model_dim);
  c.history_dim = j.value("history_dim", c.history_dim);
  c.window = j.value("window", c.window);
  c.dropout = j.value("dropout", c.dropout);
  const std::string scope = j.value("history_scope", std::string("window"));
  if (scope != "window" && scope != "dialogue") throw ValidationError("unknown history_scope " + scope);
  c.history_scope = scope == "dialogue" ? HistoryScope::dialogue : HistoryScope::window;
  c.validate();
  return c;
}

EFRNet::EFRNet(EFRConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto d = static_cast<Eigen::Index>(cfg_.model_dim);
  input_projection_ = nn::Linear(params_, "efr.input_projection", static_cast<Eigen::Index>(cfg_.input_dim), d);
  for (std::size_t l = 0; l < cfg_.layers; ++l)
    encoder_.emplace_back(params_, "efr.encoder." + std::to_string(l), d, static_cast<int>(cfg_.heads),
                          static_cast<Eigen::Index>(cfg_.ff_dim), cfg_.dropout);
  history_gru_ = nn::GRU(params_, "efr.emotion_gru", static_cast<Eigen::Index>(cfg_.num_emotions),
                         static_cast<Eigen::Index>(cfg_.history_dim));
  classifier_ = nn::Linear(params_, "efr.classifier", 2 * d + static_cast<Eigen::Index>(cfg_.history_dim), 2);
}

Expr EFRNet::contextualize(ad::Graph& g, const Matrix& features) const {
  if (features.rows() != static_cast<Eigen::Index>(cfg_.input_dim))
    throw ValidationError("EFR input has dimension " + std::to_string(features.rows()) + ", expected " +
                          std::to_string(cfg_.input_dim));
  if (features.cols() == 0) throw ValidationError("EFR window is empty");
  const auto d = static_cast<Eigen::Index>(cfg_.model_dim);
  Expr x = input_projection_.bind(g)(g.constant(features));
  x = x + g.constant(nn::sinusoidal_positions(d, features.cols()));
  x = ad::dropout(x, cfg_.dropout);
  for (const auto& layer : encoder_) x = layer.forward(g, x);
  return x;
}

Expr EFRNet::emotion_history(ad::Graph& g, const Matrix& emotions) const {
  if (emotions.rows() != static_cast<Eigen::Index>(cfg_.num_emotions) || emotions.cols() == 0)
    throw ValidationError("emotion history input has the wrong shape");
  auto gru = history_gru_.bind(g);
  Expr projected = gru.project(g.constant(emotions));
  Expr h = gru.zero_state(g);
  for (Eigen::Index t = 0; t < emotions.cols(); ++t) h = gru.step_projected(ad::column(projected, t), h);
  return h;
}

Expr EFRNet::candidate_features(Expr contextual, Expr history) const {
  const Eigen::Index n = contextual.cols();
  Expr target = ad::column(contextual, n - 1);
  std::vector<Expr> targets(static_cast<std::size_t>(n), target);
  std::vector<Expr> histories(static_cast<std::size_t>(n), history);
  return ad::concat_rows({contextual, ad::concat_cols(targets), ad::concat_cols(histories)});
}

Expr EFRNet::trigger_logits(ad::Graph& g, Expr contextual, Expr history) const {
  return classifier_.bind(g)(ad::dropout(candidate_features(contextual, history), cfg_.dropout));
}

Expr EFRNet::forward(ad::Graph& g, const EFRInputs& inputs) const {
  Expr ctx = contextualize(g, inputs.features);
  Expr hist = emotion_history(g, inputs.emotions);
  return trigger_logits(g, ctx, hist);
}

TriggerPrediction predict_triggers_probabilities(const Matrix& logits) {
  TriggerPrediction p;
  p.probabilities.resize(2, logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    const double mx = logits.col(t).maxCoeff();
    Eigen::Vector2d e = (logits.col(t).array() - mx).exp().matrix();
    p.probabilities.col(t) = e / e.sum();
    p.decisions.push_back(logits(1, t) > logits(0, t) ? 1 : 0);
  }
  p.masked.assign(static_cast<std::size_t>(logits.cols()), false);
  return p;
}

TriggerPrediction EFRNet::predict(const EFRInputs& inputs) const {
  ad::Graph g(false);
  return predict_triggers_probabilities(forward(g, inputs).value());
}

EFRInputs build_inputs(const EFRInstance& instance, const EmbeddingTable& table, const SpeakerVocab& vocab,
                       const std::vector<std::string>& label_set, HistoryScope scope, const Dialogue* dialogue) {
  const auto dim = static_cast<Eigen::Index>(table.dim);
  const auto k = static_cast<Eigen::Index>(vocab.k);
  const auto e = static_cast<Eigen::Index>(label_set.size());
  const auto n = static_cast<Eigen::Index>(instance.window.size());
  EFRInputs in;
  in.features.resize(dim + k + e, n);
  in.emotions.resize(e, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const Utterance& u = instance.window[static_cast<std::size_t>(t)];
    if (!u.emotion) throw ValidationError("utterance " + utterance_key(instance.dialogue_id, u.index) + " has no emotion");
    const Eigen::VectorXd one_hot = emotion_one_hot(*u.emotion, label_set);
    in.features.col(t).head(dim) = table.vector(utterance_key(instance.dialogue_id, u.index));
    in.features.col(t).segment(dim, k) = speaker_one_hot(u.speaker, vocab);
    in.features.col(t).tail(e) = one_hot;
    in.emotions.col(t) = one_hot;
  }
  if (scope == HistoryScope::dialogue) {
    if (dialogue == nullptr) throw ValidationError("dialogue-scope emotion history needs the dialogue");
    const auto last = static_cast<Eigen::Index>(instance.window_offset + instance.target_index) + 1;
    in.emotions.resize(e, last);
    for (Eigen::Index t = 0; t < last; ++t) {
      const Utterance& u = dialogue->utterances[static_cast<std::size_t>(t)];
      if (!u.emotion) throw ValidationError("utterance " + utterance_key(dialogue->id, u.index) + " has no emotion");
      in.emotions.col(t) = emotion_one_hot(*u.emotion, label_set);
    }
  }
  return in;
}

TriggerPrediction efr_forward(const EFRNet& net, const EFRInstance& instance, const EFRInputs& inputs, bool ptz_mask) {
  TriggerPrediction p = net.predict(inputs);
  if (ptz_mask) {
    const auto masked = apply_ptz_mask(p.decisions, compute_ptz(instance), instance.window_offset);
    for (std::size_t i = 0; i < masked.size(); ++i) {
      p.masked[i] = masked[i] != p.decisions[i];
      p.decisions[i] = masked[i];
    }
  }
  return p;
}

std::vector<int> expand_to_dialogue(const EFRInstance& instance, const std::vector<int>& window_decisions) {
  std::vector<int> out(instance.dialogue_length, 0);
  for (std::size_t i = 0; i < window_decisions.size(); ++i) out[instance.window_offset + i] = window_decisions[i];
  return out;
}

}  // namespace flipkit
