#pragma once

// Trigger classifier for emotion flips. Each window position carries
// utterance embedding ++ speaker one-hot ++ gold emotion one-hot; a learned
// projection plus sinusoidal positions feeds a transformer encoder. A GRU over
// the emotion one-hots gives a history vector. Every position is classified
// from (its contextual vector, the target's contextual vector, history).

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipkit/autograd.hpp"
#include "flipkit/corpus.hpp"
#include "flipkit/embed.hpp"
#include "flipkit/nn.hpp"
#include "flipkit/ptz.hpp"

namespace flipkit {

enum class HistoryScope { window, dialogue };

struct EFRConfig {
  std::size_t input_dim = 782;
  std::size_t num_emotions = 8;
  std::size_t model_dim = 256;
  std::size_t layers = 1;
  std::size_t heads = 4;
  std::size_t ff_dim = 1024;
  std::size_t history_dim = 64;
  std::size_t window = 5;
  double dropout = 0.1;
  HistoryScope history_scope = HistoryScope::window;

  void validate() const;
  nlohmann::json to_json() const;
  static EFRConfig from_json(const nlohmann::json& j);
};

struct EFRInputs {
  ad::Matrix features;   // input_dim x L
  ad::Matrix emotions;   // num_emotions x H (H = L for window history)
};

struct TriggerPrediction {
  ad::Matrix probabilities;          // 2 x L; row 1 is P(trigger)
  std::vector<int> decisions;        // argmax per position
  std::vector<bool> masked;          // decision forced to 0 by the zone mask
};

class EFRNet {
 public:
  explicit EFRNet(EFRConfig cfg);
  EFRNet(const EFRNet&) = delete;
  EFRNet& operator=(const EFRNet&) = delete;

  void init(std::uint64_t seed) { params_.init_uniform(seed); }
  const EFRConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  ad::Expr contextualize(ad::Graph& g, const ad::Matrix& features) const;
  ad::Expr emotion_history(ad::Graph& g, const ad::Matrix& emotions) const;
  /// Rows: position vector, target vector, history vector; one column per position.
  ad::Expr candidate_features(ad::Expr contextual, ad::Expr history) const;
  ad::Expr trigger_logits(ad::Graph& g, ad::Expr contextual, ad::Expr history) const;
  /// 2 x L logits.
  ad::Expr forward(ad::Graph& g, const EFRInputs& inputs) const;

  TriggerPrediction predict(const EFRInputs& inputs) const;

 private:
  EFRConfig cfg_;
  ad::ParameterSet params_;
  nn::Linear input_projection_;
  std::vector<nn::TransformerEncoderLayer> encoder_;
  nn::GRU history_gru_;
  nn::Linear classifier_;
};

/// Per window position: embedding ++ speaker one-hot ++ emotion one-hot.
/// With HistoryScope::dialogue, `dialogue` supplies the full emotion prefix.
EFRInputs build_inputs(const EFRInstance& instance, const EmbeddingTable& table, const SpeakerVocab& vocab,
                       const std::vector<std::string>& label_set, HistoryScope scope = HistoryScope::window,
                       const Dialogue* dialogue = nullptr);

TriggerPrediction predict_triggers_probabilities(const ad::Matrix& logits);

/// Full prediction for one instance, optionally zeroing decisions outside the zone.
TriggerPrediction efr_forward(const EFRNet& net, const EFRInstance& instance, const EFRInputs& inputs, bool ptz_mask);

/// Expands window decisions to a full-dialogue vector (zeros outside the window).
std::vector<int> expand_to_dialogue(const EFRInstance& instance, const std::vector<int>& window_decisions);

}  // namespace flipkit
