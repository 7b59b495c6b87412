#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace flipkit {

struct Utterance {
  std::size_t index = 0;
  std::string speaker;
  std::string text;
  std::optional<std::string> emotion;

  bool operator==(const Utterance&) const = default;
};

/// One episode object of an EDiReF file. For EFR files every entry is a
/// prefix of a conversation ending at the flip target, so several dialogues
/// may share one `episode` name; `id` is unique within a corpus.
struct Dialogue {
  std::string id;
  std::string episode;
  std::vector<Utterance> utterances;
  std::optional<std::vector<int>> triggers;

  std::size_t size() const { return utterances.size(); }
  bool operator==(const Dialogue&) const = default;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  std::vector<std::string> label_set;
  int task_id = 1;

  bool operator==(const Corpus&) const = default;
};

struct EFRInstance {
  std::string dialogue_id;
  std::vector<Utterance> window;
  std::size_t target_index = 0;     // position in window (always the last)
  std::size_t window_offset = 0;    // dialogue index of window[0]
  std::size_t dialogue_length = 0;
  /// Dialogue index of the target speaker's previous utterance (0 if none).
  std::size_t ptz_start = 0;
  std::vector<int> trigger_labels;
};

enum class WeightMode { inverse, inverse_sqrt };

struct DatasetStats {
  std::size_t episodes = 0;
  std::size_t entries = 0;
  std::size_t utterances = 0;
  std::size_t triggers = 0;
  std::map<std::string, std::size_t> label_histogram;
};

Corpus parse_corpus(const nlohmann::json& doc, int task_id);
Corpus load_corpus(const std::filesystem::path& path, int task_id);
nlohmann::json corpus_to_json(const Corpus& corpus);

std::vector<std::string> compute_label_set(const std::vector<Dialogue>& dialogues);

std::vector<Dialogue> split_sequences(const Dialogue& dialogue, std::size_t seq_len);
std::vector<Dialogue> split_corpus(const std::vector<Dialogue>& dialogues, std::size_t seq_len);

EFRInstance make_efr_instance(const Dialogue& dialogue, std::size_t w);
std::vector<EFRInstance> make_efr_instances(const Corpus& corpus, std::size_t w);

/// Normalized so the weights sum to the number of classes.
std::vector<double> class_weights(const std::vector<std::size_t>& supports, WeightMode mode);
std::vector<double> class_weights(const Corpus& corpus, WeightMode mode);
/// Binary {0, 1} weights from trigger labels inside last-w windows.
std::vector<double> trigger_class_weights(const std::vector<EFRInstance>& instances, WeightMode mode);

/// One dialogue per distinct episode name: the longest entry, which for EFR
/// files is the fullest prefix of the conversation. First-appearance order.
std::vector<const Dialogue*> episode_representatives(const Corpus& corpus);

DatasetStats dataset_stats(const Corpus& corpus);

std::map<std::size_t, std::size_t> trigger_distance_histogram(const Corpus& corpus);

WeightMode parse_weight_mode(const std::string& s);
std::string to_string(WeightMode mode);

}  // namespace flipkit
