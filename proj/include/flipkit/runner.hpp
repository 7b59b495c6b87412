#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipkit/autograd.hpp"
#include "flipkit/corpus.hpp"
#include "flipkit/efr_net.hpp"
#include "flipkit/embed.hpp"
#include "flipkit/erc_net.hpp"

namespace flipkit {

struct TrainConfig {
  int task_id = 1;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  WeightMode weight_mode = WeightMode::inverse_sqrt;
  double weight_decay = 1e-5;
  std::uint64_t seed = 1234;
  double clip_norm = 1.0;
  double validation_fraction = 0.1;
  /// Write the current-best checkpoint every N epochs (0: only at the end).
  std::size_t checkpoint_every = 0;
  /// Window size for EFR instances.
  std::size_t window = 5;
  std::size_t speaker_k = 6;
  /// EFR: apply the zone mask when scoring validation predictions.
  bool ptz_mask = true;
  /// EFR: train and predict on window positions inside the zone only.
  bool restrict_to_ptz = false;

  /// Per-task defaults (learning rate, batch size, epochs, loss weights).
  static TrainConfig defaults(int task_id);
  void validate() const;
  nlohmann::json to_json() const;
  /// Overrides fields present in `j`, keeping the rest.
  void merge(const nlohmann::json& j);
  std::string selection_metric() const { return task_id == 1 ? "weighted_f1" : "trigger_f1"; }
};

/// Mean over labeled positions of -w[gold] * log softmax(logits)[gold].
/// Logits are classes x positions. Throws RuntimeFailure on NaN.
double weighted_ce_loss(const ad::Matrix& logits, std::span<const int> gold, std::span<const double> weights);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ad::ParameterSet& params, double max_norm);

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(ad::ParameterSet& params, double lr, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  std::size_t steps() const { return t_; }

 private:
  ad::ParameterSet& params_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::size_t best_epoch = 0;
  double best_metric = -1.0;
  std::vector<EpochRecord> log;
  std::vector<std::string> train_episodes;
  std::vector<std::string> validation_episodes;
};

/// Everything needed to rebuild and run a trained model.
struct ModelMeta {
  std::string kind;  // "erc" | "efr"
  int task_id = 1;
  nlohmann::json model_config;
  nlohmann::json train_config;
  std::vector<std::string> label_set;
  SpeakerVocab vocab;
  std::size_t embedding_dim = 0;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
};

/// Binary checkpoint: magic "FKCKPT01", u32 header length, JSON header
/// (meta plus tensor names and shapes), then each tensor as little-endian
/// float64 in column-major order. Contains no timestamps.
void save_checkpoint(const std::filesystem::path& path, const ModelMeta& meta, const ad::ParameterSet& params);
ModelMeta read_checkpoint_meta(const std::filesystem::path& path);
/// Reads meta and copies tensors into `params` (names and shapes must match).
ModelMeta load_checkpoint(const std::filesystem::path& path, ad::ParameterSet& params);

/// Train/validation split of episode names by seeded shuffle.
std::pair<std::vector<std::string>, std::vector<std::string>> split_episodes(const Corpus& corpus, double fraction,
                                                                              std::uint64_t seed);

struct TrainIO {
  std::ostream* log_jsonl = nullptr;  // one record per epoch
  std::ostream* progress = nullptr;
  std::filesystem::path checkpoint_path;  // periodic best-so-far writes when set
  ModelMeta* meta = nullptr;
};

/// ERC training: chunks of seq_len utterances, weighted cross-entropy,
/// Adam, clipping; leaves the best-validation parameters in `net`.
TrainResult train_erc(ERCNet& net, const Corpus& corpus, const EmbeddingTable& table, const SpeakerVocab& vocab,
                      const TrainConfig& cfg, TrainIO io = {});

TrainResult train_efr(EFRNet& net, const Corpus& corpus, const EmbeddingTable& table, const SpeakerVocab& vocab,
                      const TrainConfig& cfg, TrainIO io = {});

/// Per-utterance argmax labels for one dialogue.
std::vector<std::string> predict_emotions(const ERCNet& net, const Dialogue& dialogue, const EmbeddingTable& table,
                                          const SpeakerVocab& vocab, const std::vector<std::string>& label_set);

}  // namespace flipkit
