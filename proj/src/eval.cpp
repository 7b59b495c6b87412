#include "flipkit/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "flipkit/error.hpp"

namespace flipkit {

namespace {

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

MetricsReport classification_report(std::span<const int> gold, std::span<const int> predicted,
                                    const std::vector<std::string>& labels) {
  if (gold.size() != predicted.size())
    throw ValidationError("gold and predicted label sequences differ in length (" + std::to_string(gold.size()) +
                          " vs " + std::to_string(predicted.size()) + ")");
  const std::size_t c = labels.size();
  MetricsReport r;
  r.labels = labels;
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || static_cast<std::size_t>(gold[i]) >= c || predicted[i] < 0 ||
        static_cast<std::size_t>(predicted[i]) >= c)
      throw ValidationError("label index outside the label set at position " + std::to_string(i));
    ++r.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predicted[i])];
  }
  r.scored = gold.size();
  r.per_class.resize(c);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = r.confusion[k][k], col = 0, row = 0;
    for (std::size_t j = 0; j < c; ++j) {
      col += r.confusion[j][k];
      row += r.confusion[k][j];
    }
    correct += tp;
    ClassMetrics& m = r.per_class[k];
    m.support = row;
    m.precision = safe_div(static_cast<double>(tp), static_cast<double>(col));
    m.recall = safe_div(static_cast<double>(tp), static_cast<double>(row));
    m.f1 = f1_of(m.precision, m.recall);
  }
  const double n = static_cast<double>(r.scored);
  r.accuracy = safe_div(static_cast<double>(correct), n);
  for (const auto& m : r.per_class) {
    const double w = safe_div(static_cast<double>(m.support), n);
    r.weighted_precision += w * m.precision;
    r.weighted_recall += w * m.recall;
    r.weighted_f1 += w * m.f1;
    r.macro_f1 += m.f1;
  }
  r.macro_f1 = c == 0 ? 0.0 : r.macro_f1 / static_cast<double>(c);
  return r;
}

double weighted_f1(const std::vector<std::string>& gold, const std::vector<std::string>& predicted,
                   const std::vector<std::string>& label_set) {
  std::vector<int> g, p;
  g.reserve(gold.size());
  p.reserve(predicted.size());
  for (const auto& s : gold) g.push_back(static_cast<int>(label_index(s, label_set)));
  for (const auto& s : predicted) p.push_back(static_cast<int>(label_index(s, label_set)));
  return classification_report(g, p, label_set).weighted_f1;
}

MetricsReport trigger_f1(std::span<const int> gold, std::span<const int> predicted) {
  MetricsReport r = classification_report(gold, predicted, {"0", "1"});
  BinaryCounts b;
  b.tn = r.confusion[0][0];
  b.fp = r.confusion[0][1];
  b.fn = r.confusion[1][0];
  b.tp = r.confusion[1][1];
  r.binary = b;
  r.positive_precision = r.per_class[1].precision;
  r.positive_recall = r.per_class[1].recall;
  r.positive_f1 = r.per_class[1].f1;
  return r;
}

MetricsReport score_triggers(const Corpus& corpus, const std::vector<std::vector<int>>& predictions) {
  if (predictions.size() != corpus.dialogues.size())
    throw ValidationError("predictions cover " + std::to_string(predictions.size()) + " episodes, gold has " +
                          std::to_string(corpus.dialogues.size()));
  std::vector<int> gold, pred;
  for (std::size_t i = 0; i < corpus.dialogues.size(); ++i) {
    const Dialogue& d = corpus.dialogues[i];
    if (!d.triggers) throw ValidationError("dialogue " + d.id + " has no trigger labels");
    if (predictions[i].size() != d.size())
      throw ValidationError("episode " + d.id + ": " + std::to_string(predictions[i].size()) +
                            " predicted triggers for " + std::to_string(d.size()) + " utterances");
    gold.insert(gold.end(), d.triggers->begin(), d.triggers->end());
    for (int y : predictions[i]) {
      if (y != 0 && y != 1) throw ValidationError("episode " + d.id + ": trigger predictions must be 0 or 1");
      pred.push_back(y);
    }
  }
  return trigger_f1(gold, pred);
}

MetricsReport neutral_baseline(const Corpus& corpus) {
  const auto it = std::find(corpus.label_set.begin(), corpus.label_set.end(), "neutral");
  if (it == corpus.label_set.end()) throw ValidationError("label set has no \"neutral\" class");
  const int neutral = static_cast<int>(it - corpus.label_set.begin());
  std::vector<int> gold, pred;
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) {
      if (!u.emotion) continue;
      gold.push_back(static_cast<int>(label_index(*u.emotion, corpus.label_set)));
      pred.push_back(neutral);
    }
  return classification_report(gold, pred, corpus.label_set);
}

std::vector<std::vector<int>> rule_based_predictions(const Corpus& corpus) {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.dialogues.size());
  for (const auto& d : corpus.dialogues) {
    std::vector<int> p(d.size(), 0);
    if (d.size() >= 2) p[d.size() - 2] = 1;
    out.push_back(std::move(p));
  }
  return out;
}

MetricsReport rule_based_baseline(const Corpus& corpus) { return score_triggers(corpus, rule_based_predictions(corpus)); }

std::vector<std::vector<int>> predict_corpus_triggers(const EFRNet& net, const Corpus& corpus,
                                                      const EmbeddingTable& table, const SpeakerVocab& vocab,
                                                      const std::vector<std::string>& label_set, bool ptz_mask,
                                                      bool restrict_zone) {
  const EFRConfig& cfg = net.config();
  std::vector<std::vector<int>> out;
  out.reserve(corpus.dialogues.size());
  for (const auto& d : corpus.dialogues) {
    EFRInstance inst = make_efr_instance(d, cfg.window);
    if (restrict_zone) inst = restrict_to_ptz(inst);
    const EFRInputs inputs = build_inputs(inst, table, vocab, label_set, cfg.history_scope, &d);
    const TriggerPrediction p = efr_forward(net, inst, inputs, ptz_mask);
    out.push_back(expand_to_dialogue(inst, p.decisions));
  }
  return out;
}

AblationReport ablate_ptz(const EFRNet& net, const Corpus& corpus, const EmbeddingTable& table,
                          const SpeakerVocab& vocab, const std::vector<std::string>& label_set) {
  AblationReport r;
  const auto off = predict_corpus_triggers(net, corpus, table, vocab, label_set, false);
  const auto on = predict_corpus_triggers(net, corpus, table, vocab, label_set, true);
  for (const auto& v : off) r.positives_off += static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
  for (const auto& v : on) r.positives_on += static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
  // Masking only ever clears decisions, so the difference counts the masks.
  r.mask_count = r.positives_off - r.positives_on;
  r.mask_off = score_triggers(corpus, off);
  r.mask_on = score_triggers(corpus, on);
  r.f1_change = r.mask_on.positive_f1 - r.mask_off.positive_f1;
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t k = 0; k < r.labels.size(); ++k)
    per_class.push_back({{"label", r.labels[k]},
                         {"precision", r.per_class[k].precision},
                         {"recall", r.per_class[k].recall},
                         {"f1", r.per_class[k].f1},
                         {"support", r.per_class[k].support}});
  nlohmann::json j = {{"scored", r.scored},
                      {"accuracy", r.accuracy},
                      {"weighted_precision", r.weighted_precision},
                      {"weighted_recall", r.weighted_recall},
                      {"weighted_f1", r.weighted_f1},
                      {"macro_f1", r.macro_f1},
                      {"per_class", per_class},
                      {"labels", r.labels},
                      {"confusion", r.confusion}};
  if (r.binary) {
    j["positive_precision"] = r.positive_precision;
    j["positive_recall"] = r.positive_recall;
    j["f1"] = r.positive_f1;
    j["confusion_binary"] = {{"tn", r.binary->tn}, {"fp", r.binary->fp}, {"fn", r.binary->fn}, {"tp", r.binary->tp}};
  }
  return j;
}

nlohmann::json to_json(const AblationReport& r) {
  return {{"mask_off", to_json(r.mask_off)},   {"mask_on", to_json(r.mask_on)},
          {"f1_off", r.mask_off.positive_f1},  {"f1_on", r.mask_on.positive_f1},
          {"f1_change", r.f1_change},          {"mask_count", r.mask_count},
          {"positives_off", r.positives_off},  {"positives_on", r.positives_on}};
}

std::string format_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(14) << "label" << std::right << std::setw(10) << "precision" << std::setw(10)
     << "recall" << std::setw(10) << "f1" << std::setw(10) << "support" << '\n';
  for (std::size_t k = 0; k < r.labels.size(); ++k)
    os << std::left << std::setw(14) << r.labels[k] << std::right << std::setw(10) << 100.0 * r.per_class[k].precision
       << std::setw(10) << 100.0 * r.per_class[k].recall << std::setw(10) << 100.0 * r.per_class[k].f1
       << std::setw(10) << r.per_class[k].support << '\n';
  os << std::left << std::setw(14) << "weighted" << std::right << std::setw(10) << 100.0 * r.weighted_precision
     << std::setw(10) << 100.0 * r.weighted_recall << std::setw(10) << 100.0 * r.weighted_f1 << std::setw(10)
     << r.scored << '\n';
  if (r.binary)
    os << "trigger F1 " << 100.0 * r.positive_f1 << "  TN " << r.binary->tn << "  FP " << r.binary->fp << "  FN "
       << r.binary->fn << "  TP " << r.binary->tp << '\n';
  return os.str();
}

}  // namespace flipkit
