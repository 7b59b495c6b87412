#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipkit/corpus.hpp"
#include "flipkit/efr_net.hpp"
#include "flipkit/embed.hpp"

namespace flipkit {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct BinaryCounts {
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
};

/// Scores are fractions in [0, 1]; rounding happens only in format_table.
struct MetricsReport {
  std::vector<std::string> labels;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::size_t scored = 0;
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double macro_f1 = 0.0;
  /// Present for trigger scoring: positive class counts and scores.
  std::optional<BinaryCounts> binary;
  double positive_precision = 0.0;
  double positive_recall = 0.0;
  double positive_f1 = 0.0;
};

/// Labels are indices into `labels`; F1 is 0 wherever precision + recall is 0.
MetricsReport classification_report(std::span<const int> gold, std::span<const int> predicted,
                                    const std::vector<std::string>& labels);

double weighted_f1(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                   const std::vector<std::string>& label_set);

/// Positive-class scores and (TN, FP, FN, TP) over aligned binary decisions.
MetricsReport trigger_f1(std::span<const int> gold, std::span<const int> predicted);

/// Scores full-dialogue decision vectors (one per dialogue) against the
/// corpus trigger labels over every (dialogue, utterance) pair.
MetricsReport score_triggers(const Corpus& corpus, const std::vector<std::vector<int>>& predictions);

MetricsReport neutral_baseline(const Corpus& corpus);
/// Predicts exactly the utterance before the target as the trigger.
std::vector<std::vector<int>> rule_based_predictions(const Corpus& corpus);
MetricsReport rule_based_baseline(const Corpus& corpus);

struct AblationReport {
  MetricsReport mask_off;
  MetricsReport mask_on;
  std::size_t positives_off = 0;
  std::size_t positives_on = 0;
  std::size_t mask_count = 0;
  double f1_change = 0.0;
};

/// Full-dialogue decisions for every dialogue of an EFR corpus.
std::vector<std::vector<int>> predict_corpus_triggers(const EFRNet& net, const Corpus& corpus,
                                                      const EmbeddingTable& table, const SpeakerVocab& vocab,
                                                      const std::vector<std::string>& label_set, bool ptz_mask,
                                                      bool restrict_zone = false);

AblationReport ablate_ptz(const EFRNet& net, const Corpus& corpus, const EmbeddingTable& table,
                          const SpeakerVocab& vocab, const std::vector<std::string>& label_set);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const AblationReport& r);
std::string format_table(const MetricsReport& r);

}  // namespace flipkit
