#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipkit/corpus.hpp"

namespace flipkit {

/// Probable Trigger Zone [start, end] in dialogue indices, inclusive; `end`
/// is the target. `start` is the target speaker's previous utterance, or 0
/// when the speaker has not spoken before.
struct PTZRange {
  std::size_t start = 0;
  std::size_t end = 0;

  bool contains(std::size_t i) const { return i >= start && i <= end; }
  bool operator==(const PTZRange&) const = default;
};

PTZRange compute_ptz(const std::vector<std::string>& speakers, std::size_t target_index);
PTZRange compute_ptz(const Dialogue& dialogue, std::size_t target_index);
PTZRange compute_ptz(const EFRInstance& instance);

/// Zeroes every window position whose dialogue index (window_offset + i)
/// lies outside the zone.
std::vector<int> apply_ptz_mask(const std::vector<int>& predictions, const PTZRange& ptz, std::size_t window_offset);

/// Drops window positions outside the zone (the training-restricted variant).
EFRInstance restrict_to_ptz(const EFRInstance& instance);

struct LabelCounts {
  std::size_t zeros = 0;
  std::size_t ones = 0;
  /// zeros / ones rounded to one decimal (0 when there are no ones).
  double ratio() const;
  double raw_ratio() const;
};

struct SkewReport {
  std::size_t window = 5;
  LabelCounts original;
  LabelCounts window_only;      // "Setting 1"
  LabelCounts window_and_ptz;   // "Setting 2"
  static constexpr const char* kConvention =
      "candidates: every utterance of every entry, target included; "
      "PTZ intersected with the window in dialogue-global indices";
};

SkewReport skew_report(const Corpus& corpus, std::size_t w);
nlohmann::json to_json(const SkewReport& r);
std::string format_table(const SkewReport& r);

}  // namespace flipkit
