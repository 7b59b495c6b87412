#pragma once

// Masked memory network for per-utterance emotion classification.
//
// Per utterance t of a dialogue:
//   do_t  = dGRU(u_t ++ s_t)                     dialogue level
//   o_t   = gGRU(do_t ++ so_{t-1})               global level
//   c_t   = attention(q = do_t, k = o_{1:t-1}, v = o_{1:t-1})
//   so_t  = sGRU(c_t + do_t; h = speaker slot)   speaker level, slot rewritten
//   m_t   = multi-hop masked memory read over mGRU(o_{1:t}) with query so_t
//   co_t  = cGRU(m_t ++ so_t)                    conversation level
//   y_t   = W co_t + b

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipkit/autograd.hpp"
#include "flipkit/corpus.hpp"
#include "flipkit/embed.hpp"
#include "flipkit/nn.hpp"

namespace flipkit {

/// Values of the past-context attention: the past global outputs, or the
/// query itself (the formula taken literally, which makes the context equal
/// do_t whenever a past exists).
enum class AttentionValues { past_outputs, query };
/// so_{t-1} fed to the global GRU: previous time step, or the current
/// speaker's own previous output.
enum class SpeakerFeed { previous_step, same_speaker };

struct ERCConfig {
  std::size_t input_dim = 774;
  std::size_t hidden_dim = 300;
  std::size_t hops = 3;
  std::size_t num_classes = 8;
  double dropout = 0.1;
  std::size_t seq_len = 15;
  AttentionValues attention_values = AttentionValues::past_outputs;
  SpeakerFeed speaker_feed = SpeakerFeed::previous_step;

  void validate() const;
  nlohmann::json to_json() const;
  static ERCConfig from_json(const nlohmann::json& j);
};

struct ERCTrace {
  std::vector<Eigen::VectorXd> past_attention_weights;           // empty at t = 0
  std::vector<std::vector<Eigen::VectorXd>> memory_weights;      // [t][hop]
  std::vector<int> speaker_state_source;                         // step that wrote the slot read at t, -1 if none
  std::vector<std::size_t> past_attention_calls;                 // per step
  std::vector<std::size_t> memory_calls;                         // per step
};

class ERCNet;

/// One forward pass over one dialogue. Holds the per-dialogue state: the
/// speaker dictionary starts empty and never outlives the pass.
class ERCPass {
 public:
  ERCPass(const ERCNet& net, ad::Graph& g, ERCTrace* trace = nullptr);

  ad::Expr dialogue_step(ad::Expr input);
  ad::Expr global_step(ad::Expr dialogue_out, ad::Expr speaker_prev);
  ad::Expr past_attention(ad::Expr dialogue_out);
  ad::Expr speaker_step(ad::Expr context, ad::Expr dialogue_out, const std::string& speaker);
  ad::Expr masked_memory(ad::Expr speaker_out);
  ad::Expr conversation_step(ad::Expr memory_read, ad::Expr speaker_out);
  ad::Expr classify(ad::Expr conversation_out);

  /// Runs all steps for the next utterance; returns its logits column.
  ad::Expr step(ad::Expr input, const std::string& speaker);

  std::size_t position() const { return global_outputs_.size(); }
  bool has_speaker_state(const std::string& speaker) const { return speaker_states_.count(speaker) != 0; }
  const ad::Matrix& speaker_state(const std::string& speaker) const;
  ad::Expr zero() const;

 private:
  const ERCNet& net_;
  ad::Graph& g_;
  ERCTrace* trace_;
  nn::GRU::Bound dgru_, ggru_, sgru_, mgru_, cgru_;
  nn::Linear::Bound out_;
  ad::Expr dialogue_h_, global_h_, conversation_h_, memory_h_, last_speaker_out_;
  std::map<std::string, ad::Expr> speaker_states_;
  std::map<std::string, int> speaker_writer_;
  std::vector<ad::Expr> global_outputs_;   // o_{1:t}
  std::vector<ad::Expr> memories_;         // mGRU(o_{1:t})
  int writer_pending_ = -1;
};

class ERCNet {
 public:
  explicit ERCNet(ERCConfig cfg);
  ERCNet(const ERCNet&) = delete;
  ERCNet& operator=(const ERCNet&) = delete;

  void init(std::uint64_t seed) { params_.init_uniform(seed); }
  const ERCConfig& config() const { return cfg_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  /// inputs: input_dim x n, one column per utterance. Returns num_classes x n logits.
  ad::Expr forward(ad::Graph& g, const ad::Matrix& inputs, std::span<const std::string> speakers,
                   ERCTrace* trace = nullptr) const;
  ad::Matrix logits(const ad::Matrix& inputs, std::span<const std::string> speakers) const;

 private:
  friend class ERCPass;
  ERCConfig cfg_;
  ad::ParameterSet params_;
  nn::GRU dgru_, ggru_, sgru_, mgru_, cgru_;
  nn::Linear out_;
};

/// Columns of u_t ++ s_t for every utterance of `dialogue`.
ad::Matrix erc_inputs(const Dialogue& dialogue, const EmbeddingTable& table, const SpeakerVocab& vocab);
std::vector<std::string> speakers_of(const Dialogue& dialogue);
/// Label indices; -1 where the utterance is unlabeled.
std::vector<int> emotion_targets(const Dialogue& dialogue, const std::vector<std::string>& label_set);

}  // namespace flipkit
