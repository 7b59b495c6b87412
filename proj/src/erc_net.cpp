#include "flipkit/erc_net.hpp"

#include "flipkit/error.hpp"

namespace flipkit {

using ad::Expr;
using ad::Matrix;

void ERCConfig::validate() const {
  if (input_dim == 0 || hidden_dim == 0 || num_classes == 0 || seq_len == 0)
    throw ValidationError("ERC dimensions must be positive");
  if (hops == 0) throw ValidationError("ERC needs at least one memory hop");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout must lie in [0, 1)");
}

nlohmann::json ERCConfig::to_json() const {
  return {{"input_dim", input_dim},
          {"hidden_dim", hidden_dim},
          {"hops", hops},
          {"num_classes", num_classes},
          {"dropout", dropout},
          {"seq_len", seq_len},
          {"attention_values", attention_values == AttentionValues::past_outputs ? "past_outputs" : "query"},
          {"speaker_feed", speaker_feed == SpeakerFeed::previous_step ? "previous_step" : "same_speaker"}};
}

ERCConfig ERCConfig::from_json(const nlohmann::json& j) {
  ERCConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.hops = j.value("hops", c.hops);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.dropout = j.value("dropout", c.dropout);
  c.seq_len = j.value("seq_len", c.seq_len);
  const std::string values = j.value("attention_values", std::string("past_outputs"));
  if (values != "past_outputs" && values != "query") throw ValidationError("unknown attention_values " + values);
  c.attention_values = values == "query" ? AttentionValues::query : AttentionValues::past_outputs;
  const std::string feed = j.value("speaker_feed", std::string("previous_step"));
  if (feed != "previous_step" && feed != "same_speaker") throw ValidationError("unknown speaker_feed " + feed);
  c.speaker_feed = feed == "same_speaker" ? SpeakerFeed::same_speaker : SpeakerFeed::previous_step;
  c.validate();
  return c;
}

ERCNet::ERCNet(ERCConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto in = static_cast<Eigen::Index>(cfg_.input_dim);
  const auto h = static_cast<Eigen::Index>(cfg_.hidden_dim);
  dgru_ = nn::GRU(params_, "erc.dialogue_gru", in, h);
  ggru_ = nn::GRU(params_, "erc.global_gru", 2 * h, h);
  sgru_ = nn::GRU(params_, "erc.speaker_gru", h, h);
  mgru_ = nn::GRU(params_, "erc.memory_gru", h, h);
  cgru_ = nn::GRU(params_, "erc.conversation_gru", 2 * h, h);
  out_ = nn::Linear(params_, "erc.classifier", h, static_cast<Eigen::Index>(cfg_.num_classes));
}

ERCPass::ERCPass(const ERCNet& net, ad::Graph& g, ERCTrace* trace)
    : net_(net),
      g_(g),
      trace_(trace),
      dgru_(net.dgru_.bind(g)),
      ggru_(net.ggru_.bind(g)),
      sgru_(net.sgru_.bind(g)),
      mgru_(net.mgru_.bind(g)),
      cgru_(net.cgru_.bind(g)),
      out_(net.out_.bind(g)) {
  dialogue_h_ = zero();
  global_h_ = zero();
  conversation_h_ = zero();
  memory_h_ = zero();
  last_speaker_out_ = zero();
}

Expr ERCPass::zero() const {
  return g_.constant(Matrix::Zero(static_cast<Eigen::Index>(net_.cfg_.hidden_dim), 1));
}

const Matrix& ERCPass::speaker_state(const std::string& speaker) const {
  auto it = speaker_states_.find(speaker);
  if (it == speaker_states_.end()) throw ValidationError("no state for speaker " + speaker);
  return it->second.value();
}

Expr ERCPass::dialogue_step(Expr input) {
  if (input.rows() != static_cast<Eigen::Index>(net_.cfg_.input_dim) || input.cols() != 1)
    throw ValidationError("ERC input has dimension " + std::to_string(input.rows()) + ", expected " +
                          std::to_string(net_.cfg_.input_dim));
  dialogue_h_ = dgru_.step(input, dialogue_h_);
  if (trace_ != nullptr) {
    trace_->past_attention_calls.push_back(0);
    trace_->memory_calls.push_back(0);
  }
  return dialogue_h_;
}

Expr ERCPass::global_step(Expr dialogue_out, Expr speaker_prev) {
  global_h_ = ggru_.step(ad::concat_rows({dialogue_out, speaker_prev}), global_h_);
  global_outputs_.push_back(global_h_);
  return global_h_;
}

Expr ERCPass::past_attention(Expr dialogue_out) {
  if (trace_ != nullptr && !trace_->past_attention_calls.empty()) ++trace_->past_attention_calls.back();
  // o_{1:t-1}: everything but the current step's output.
  const std::size_t past = global_outputs_.empty() ? 0 : global_outputs_.size() - 1;
  if (past == 0) {
    if (trace_ != nullptr) trace_->past_attention_weights.emplace_back();
    return zero();
  }
  Expr keys = ad::concat_cols(std::span<const Expr>(global_outputs_.data(), past));
  Expr values = keys;
  if (net_.cfg_.attention_values == AttentionValues::query) {
    std::vector<Expr> repeated(past, dialogue_out);
    values = ad::concat_cols(repeated);
  }
  Eigen::VectorXd weights;
  Expr context = nn::attend(dialogue_out, keys, values, nullptr, &weights);
  if (trace_ != nullptr) trace_->past_attention_weights.push_back(std::move(weights));
  return context;
}

Expr ERCPass::speaker_step(Expr context, Expr dialogue_out, const std::string& speaker) {
  auto it = speaker_states_.find(speaker);
  Expr h = it == speaker_states_.end() ? zero() : it->second;
  if (trace_ != nullptr) {
    auto w = speaker_writer_.find(speaker);
    trace_->speaker_state_source.push_back(w == speaker_writer_.end() ? -1 : w->second);
  }
  Expr out = sgru_.step(context + dialogue_out, h);
  speaker_states_[speaker] = out;
  speaker_writer_[speaker] = static_cast<int>(global_outputs_.empty() ? 0 : global_outputs_.size() - 1);
  last_speaker_out_ = out;
  return out;
}

Expr ERCPass::masked_memory(Expr speaker_out) {
  if (trace_ != nullptr && !trace_->memory_calls.empty()) ++trace_->memory_calls.back();
  // Extend mGRU(o_{1:t}) with any outputs not yet folded in.
  while (memories_.size() < global_outputs_.size()) {
    memory_h_ = mgru_.step(global_outputs_[memories_.size()], memory_h_);
    memories_.push_back(memory_h_);
  }
  if (memories_.empty()) throw ValidationError("masked memory read before any global step");
  // Positions beyond t are never part of the memory matrix.
  Expr memory = ad::concat_cols(memories_);
  std::vector<Eigen::VectorXd> hop_weights;
  Expr read;
  for (std::size_t hop = 1; hop <= net_.cfg_.hops; ++hop) {
    Eigen::VectorXd w;
    read = nn::attend(speaker_out, memory, memory, nullptr, &w);
    hop_weights.push_back(std::move(w));
    if (hop == net_.cfg_.hops) break;
    Expr projected = mgru_.project(ad::add_bias(memory, read));
    Expr h = zero();
    std::vector<Expr> updated;
    updated.reserve(memories_.size());
    for (Eigen::Index j = 0; j < projected.cols(); ++j) {
      h = mgru_.step_projected(ad::column(projected, j), h);
      updated.push_back(h);
    }
    memory = ad::concat_cols(updated);
  }
  if (trace_ != nullptr) trace_->memory_weights.push_back(std::move(hop_weights));
  return read;
}

Expr ERCPass::conversation_step(Expr memory_read, Expr speaker_out) {
  conversation_h_ = cgru_.step(ad::concat_rows({memory_read, speaker_out}), conversation_h_);
  return conversation_h_;
}

Expr ERCPass::classify(Expr conversation_out) { return out_(conversation_out); }

Expr ERCPass::step(Expr input, const std::string& speaker) {
  const double p = net_.cfg_.dropout;
  Expr speaker_prev = last_speaker_out_;
  if (net_.cfg_.speaker_feed == SpeakerFeed::same_speaker) {
    auto it = speaker_states_.find(speaker);
    speaker_prev = it == speaker_states_.end() ? zero() : it->second;
  }
  Expr d = ad::dropout(dialogue_step(input), p);
  global_step(d, speaker_prev);
  Expr context = past_attention(d);
  Expr s = speaker_step(context, d, speaker);
  Expr s_drop = ad::dropout(s, p);
  Expr memory_read = masked_memory(s_drop);
  Expr c = conversation_step(memory_read, s_drop);
  return classify(ad::dropout(c, p));
}

Expr ERCNet::forward(ad::Graph& g, const Matrix& inputs, std::span<const std::string> speakers, ERCTrace* trace) const {
  if (inputs.cols() != static_cast<Eigen::Index>(speakers.size()))
    throw ValidationError("ERC inputs and speakers differ in length");
  if (inputs.cols() == 0) throw ValidationError("ERC forward on an empty dialogue");
  if (inputs.rows() != static_cast<Eigen::Index>(cfg_.input_dim))
    throw ValidationError("ERC input has dimension " + std::to_string(inputs.rows()) + ", expected " +
                          std::to_string(cfg_.input_dim));
  ERCPass pass(*this, g, trace);
  Expr all_inputs = g.constant(inputs);
  std::vector<Expr> logits;
  logits.reserve(speakers.size());
  for (Eigen::Index t = 0; t < inputs.cols(); ++t)
    logits.push_back(pass.step(ad::column(all_inputs, t), speakers[static_cast<std::size_t>(t)]));
  return ad::concat_cols(logits);
}

Matrix ERCNet::logits(const Matrix& inputs, std::span<const std::string> speakers) const {
  ad::Graph g(false);
  return forward(g, inputs, speakers).value();
}

Matrix erc_inputs(const Dialogue& dialogue, const EmbeddingTable& table, const SpeakerVocab& vocab) {
  const auto dim = static_cast<Eigen::Index>(table.dim);
  const auto k = static_cast<Eigen::Index>(vocab.k);
  Matrix m(dim + k, static_cast<Eigen::Index>(dialogue.size()));
  for (const auto& u : dialogue.utterances) {
    const auto t = static_cast<Eigen::Index>(u.index);
    m.col(t).head(dim) = table.vector(utterance_key(dialogue.id, u.index));
    m.col(t).tail(k) = speaker_one_hot(u.speaker, vocab);
  }
  return m;
}

std::vector<std::string> speakers_of(const Dialogue& dialogue) {
  std::vector<std::string> out;
  out.reserve(dialogue.size());
  for (const auto& u : dialogue.utterances) out.push_back(u.speaker);
  return out;
}

std::vector<int> emotion_targets(const Dialogue& dialogue, const std::vector<std::string>& label_set) {
  std::vector<int> out;
  out.reserve(dialogue.size());
  for (const auto& u : dialogue.utterances)
    out.push_back(u.emotion ? static_cast<int>(label_index(*u.emotion, label_set)) : -1);
  return out;
}

}  // namespace flipkit
