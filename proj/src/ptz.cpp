#include "flipkit/ptz.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "flipkit/error.hpp"

namespace flipkit {

PTZRange compute_ptz(const std::vector<std::string>& speakers, std::size_t target_index) {
  if (target_index >= speakers.size()) throw ValidationError("PTZ target index out of range");
  PTZRange r{0, target_index};
  for (std::size_t p = target_index; p-- > 0;)
    if (speakers[p] == speakers[target_index]) {
      r.start = p;
      break;
    }
  return r;
}

PTZRange compute_ptz(const Dialogue& dialogue, std::size_t target_index) {
  std::vector<std::string> speakers;
  speakers.reserve(dialogue.size());
  for (const auto& u : dialogue.utterances) speakers.push_back(u.speaker);
  return compute_ptz(speakers, target_index);
}

PTZRange compute_ptz(const EFRInstance& instance) {
  return {instance.ptz_start, instance.window_offset + instance.target_index};
}

std::vector<int> apply_ptz_mask(const std::vector<int>& predictions, const PTZRange& ptz, std::size_t window_offset) {
  std::vector<int> out(predictions);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!ptz.contains(window_offset + i)) out[i] = 0;
  return out;
}

EFRInstance restrict_to_ptz(const EFRInstance& instance) {
  const PTZRange zone = compute_ptz(instance);
  EFRInstance out = instance;
  out.window.clear();
  out.trigger_labels.clear();
  for (std::size_t i = 0; i < instance.window.size(); ++i)
    if (zone.contains(instance.window_offset + i)) {
      if (out.window.empty()) out.window_offset = instance.window_offset + i;
      out.window.push_back(instance.window[i]);
      out.trigger_labels.push_back(instance.trigger_labels[i]);
    }
  out.target_index = out.window.size() - 1;
  return out;
}

double LabelCounts::raw_ratio() const {
  return ones == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(ones);
}

double LabelCounts::ratio() const { return std::round(raw_ratio() * 10.0) / 10.0; }

SkewReport skew_report(const Corpus& corpus, std::size_t w) {
  if (w == 0) throw ValidationError("window size must be positive");
  SkewReport r;
  r.window = w;
  auto bump = [](LabelCounts& c, int y) { ++(y == 1 ? c.ones : c.zeros); };
  for (const auto& d : corpus.dialogues) {
    if (!d.triggers) throw ValidationError("dialogue " + d.id + " has no trigger labels");
    const std::size_t n = d.size();
    if (n == 0) continue;
    const std::size_t target = n - 1;
    const std::size_t window_start = n - std::min(w, n);
    const PTZRange zone = compute_ptz(d, target);
    for (std::size_t i = 0; i < n; ++i) {
      const int y = (*d.triggers)[i];
      bump(r.original, y);
      if (i < window_start) continue;
      bump(r.window_only, y);
      if (zone.contains(i)) bump(r.window_and_ptz, y);
    }
  }
  return r;
}

nlohmann::json to_json(const SkewReport& r) {
  auto row = [](const char* name, const LabelCounts& c) {
    return nlohmann::json{{"dataset", name}, {"count_0", c.zeros}, {"count_1", c.ones}, {"ratio", c.ratio()},
                          {"raw_ratio", c.raw_ratio()}};
  };
  return {{"window", r.window},
          {"convention", SkewReport::kConvention},
          {"rows", {row("Original", r.original), row("Setting 1", r.window_only), row("Setting 2", r.window_and_ptz)}}};
}

std::string format_table(const SkewReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Dataset" << std::right << std::setw(10) << "0" << std::setw(10) << "1"
     << std::setw(8) << "Ratio" << '\n';
  auto row = [&os](const char* name, const LabelCounts& c) {
    os << std::left << std::setw(12) << name << std::right << std::setw(10) << c.zeros << std::setw(10) << c.ones
       << std::setw(8) << std::fixed << std::setprecision(1) << c.ratio() << '\n';
  };
  row("Original", r.original);
  row("Setting 1", r.window_only);
  row("Setting 2", r.window_and_ptz);
  return os.str();
}

}  // namespace flipkit
