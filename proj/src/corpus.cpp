#include "flipkit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "flipkit/error.hpp"

namespace flipkit {

namespace {

using nlohmann::json;

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string where(std::size_t i, const std::string& episode) {
  std::ostringstream os;
  os << "episode #" << i;
  if (!episode.empty()) os << " (" << episode << ")";
  return os.str();
}

const json& required_array(const json& obj, const char* key, std::size_t i, const std::string& ep) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(where(i, ep) + ": missing \"" + key + "\" array");
  if (!it->is_array()) throw ValidationError(where(i, ep) + ": \"" + key + "\" is not an array");
  return *it;
}

int parse_trigger(const json& v, std::size_t i, const std::string& ep, std::size_t pos) {
  if (v.is_null()) return 0;
  if (v.is_number()) {
    double x = v.get<double>();
    if (x == 0.0) return 0;
    if (x == 1.0) return 1;
  }
  std::ostringstream os;
  os << where(i, ep) << ": trigger at position " << pos << " is not 0, 1 or null";
  throw ValidationError(os.str());
}

Dialogue parse_episode(const json& obj, std::size_t i) {
  if (!obj.is_object()) throw ValidationError(where(i, "") + ": expected an object");
  Dialogue d;
  if (auto it = obj.find("episode"); it != obj.end()) {
    if (it->is_string())
      d.episode = it->get<std::string>();
    else if (it->is_number_integer())
      d.episode = std::to_string(it->get<long long>());
    else
      throw ValidationError(where(i, "") + ": \"episode\" must be a string");
  } else {
    d.episode = "episode_" + std::to_string(i);
  }

  const json& speakers = required_array(obj, "speakers", i, d.episode);
  const json& utterances = required_array(obj, "utterances", i, d.episode);
  const std::size_t n = utterances.size();
  if (speakers.size() != n) {
    std::ostringstream os;
    os << where(i, d.episode) << ": " << speakers.size() << " speakers for " << n << " utterances";
    throw ValidationError(os.str());
  }

  const json* emotions = nullptr;
  if (auto it = obj.find("emotions"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) throw ValidationError(where(i, d.episode) + ": \"emotions\" is not an array");
    if (it->size() != n) {
      std::ostringstream os;
      os << where(i, d.episode) << ": " << it->size() << " emotions for " << n << " utterances";
      throw ValidationError(os.str());
    }
    emotions = &*it;
  }

  d.utterances.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Utterance u;
    u.index = t;
    if (!speakers[t].is_string() || !utterances[t].is_string())
      throw ValidationError(where(i, d.episode) + ": speakers/utterances must be strings");
    u.speaker = speakers[t].get<std::string>();
    u.text = utterances[t].get<std::string>();
    if (is_blank(u.text)) {
      std::ostringstream os;
      os << where(i, d.episode) << ": utterance " << t << " is empty";
      throw ValidationError(os.str());
    }
    if (emotions != nullptr && !(*emotions)[t].is_null()) {
      if (!(*emotions)[t].is_string())
        throw ValidationError(where(i, d.episode) + ": emotion labels must be strings");
      u.emotion = (*emotions)[t].get<std::string>();
    }
    d.utterances.push_back(std::move(u));
  }

  if (auto it = obj.find("triggers"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) throw ValidationError(where(i, d.episode) + ": \"triggers\" is not an array");
    if (it->size() != n) {
      std::ostringstream os;
      os << where(i, d.episode) << ": " << it->size() << " triggers for " << n << " utterances";
      throw ValidationError(os.str());
    }
    std::vector<int> trig(n);
    for (std::size_t t = 0; t < n; ++t) trig[t] = parse_trigger((*it)[t], i, d.episode, t);
    d.triggers = std::move(trig);
  }
  return d;
}

}  // namespace

std::vector<std::string> compute_label_set(const std::vector<Dialogue>& dialogues) {
  std::set<std::string> labels;
  for (const auto& d : dialogues)
    for (const auto& u : d.utterances)
      if (u.emotion) labels.insert(*u.emotion);
  return {labels.begin(), labels.end()};
}

Corpus parse_corpus(const json& doc, int task_id) {
  if (task_id < 1 || task_id > 3) throw ValidationError("task id must be 1, 2 or 3");
  if (!doc.is_array()) throw ValidationError("corpus root must be a JSON array of episodes");
  Corpus c;
  c.task_id = task_id;
  c.dialogues.reserve(doc.size());
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    Dialogue d = parse_episode(doc[i], i);
    std::size_t& count = seen[d.episode];
    d.id = count == 0 ? d.episode : d.episode + "#" + std::to_string(count);
    ++count;
    c.dialogues.push_back(std::move(d));
  }
  c.label_set = compute_label_set(c.dialogues);
  return c;
}

namespace {

// Index of the top-level array element containing byte `pos`, or -1 when the
// position precedes the first element.
long episode_at(const std::string& text, std::size_t pos) {
  long index = -1;
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = 0; i < text.size() && i < pos; ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{' || c == '[') {
      if (depth == 1) ++index;
      ++depth;
    } else if (c == '}' || c == ']') {
      --depth;
    }
  }
  return index;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, int task_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ": malformed JSON";
    const long ep = episode_at(text, e.byte == 0 ? 0 : e.byte - 1);
    if (ep >= 0) os << " in episode #" << ep;
    os << " at byte " << e.byte << ": " << e.what();
    throw ParseError(os.str());
  }
  return parse_corpus(doc, task_id);
}

json corpus_to_json(const Corpus& corpus) {
  json out = json::array();
  for (const auto& d : corpus.dialogues) {
    json ep;
    ep["episode"] = d.episode;
    json speakers = json::array(), texts = json::array(), emotions = json::array();
    for (const auto& u : d.utterances) {
      speakers.push_back(u.speaker);
      texts.push_back(u.text);
      emotions.push_back(u.emotion ? json(*u.emotion) : json(nullptr));
    }
    ep["speakers"] = std::move(speakers);
    ep["utterances"] = std::move(texts);
    ep["emotions"] = std::move(emotions);
    if (d.triggers) {
      json trig = json::array();
      for (int t : *d.triggers) trig.push_back(static_cast<double>(t));
      ep["triggers"] = std::move(trig);
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<Dialogue> split_sequences(const Dialogue& dialogue, std::size_t seq_len) {
  if (seq_len == 0) throw ValidationError("seq_len must be positive");
  std::vector<Dialogue> chunks;
  const std::size_t n = dialogue.size();
  for (std::size_t start = 0, part = 0; start < n; start += seq_len, ++part) {
    const std::size_t end = std::min(n, start + seq_len);
    Dialogue c;
    c.id = dialogue.id + "/" + std::to_string(part);
    c.episode = dialogue.episode;
    for (std::size_t t = start; t < end; ++t) {
      Utterance u = dialogue.utterances[t];
      u.index = t - start;
      c.utterances.push_back(std::move(u));
    }
    if (dialogue.triggers)
      c.triggers = std::vector<int>(dialogue.triggers->begin() + static_cast<std::ptrdiff_t>(start),
                                    dialogue.triggers->begin() + static_cast<std::ptrdiff_t>(end));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

std::vector<Dialogue> split_corpus(const std::vector<Dialogue>& dialogues, std::size_t seq_len) {
  std::vector<Dialogue> out;
  for (const auto& d : dialogues) {
    auto chunks = split_sequences(d, seq_len);
    std::move(chunks.begin(), chunks.end(), std::back_inserter(out));
  }
  return out;
}

EFRInstance make_efr_instance(const Dialogue& dialogue, std::size_t w) {
  if (w == 0) throw ValidationError("window size must be positive");
  if (!dialogue.triggers) throw ValidationError("dialogue " + dialogue.id + " has no trigger labels");
  if (dialogue.size() == 0) throw ValidationError("dialogue " + dialogue.id + " is empty");
  const std::size_t n = dialogue.size();
  const std::size_t len = std::min(w, n);
  EFRInstance inst;
  inst.dialogue_id = dialogue.id;
  inst.window_offset = n - len;
  inst.dialogue_length = n;
  inst.window.assign(dialogue.utterances.end() - static_cast<std::ptrdiff_t>(len), dialogue.utterances.end());
  inst.trigger_labels.assign(dialogue.triggers->end() - static_cast<std::ptrdiff_t>(len), dialogue.triggers->end());
  inst.target_index = len - 1;
  const std::string& speaker = dialogue.utterances[n - 1].speaker;
  for (std::size_t p = n - 1; p-- > 0;)
    if (dialogue.utterances[p].speaker == speaker) {
      inst.ptz_start = p;
      break;
    }
  return inst;
}

std::vector<EFRInstance> make_efr_instances(const Corpus& corpus, std::size_t w) {
  std::vector<EFRInstance> out;
  out.reserve(corpus.dialogues.size());
  for (const auto& d : corpus.dialogues) out.push_back(make_efr_instance(d, w));
  return out;
}

std::vector<double> class_weights(const std::vector<std::size_t>& supports, WeightMode mode) {
  std::vector<double> w(supports.size());
  for (std::size_t c = 0; c < supports.size(); ++c) {
    if (supports[c] == 0) throw ValidationError("class " + std::to_string(c) + " has zero support");
    const double s = static_cast<double>(supports[c]);
    w[c] = mode == WeightMode::inverse ? 1.0 / s : 1.0 / std::sqrt(s);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x *= static_cast<double>(w.size()) / total;
  return w;
}

std::vector<double> class_weights(const Corpus& corpus, WeightMode mode) {
  std::vector<std::size_t> supports(corpus.label_set.size(), 0);
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) {
      if (!u.emotion) throw ValidationError("utterance in " + d.id + " has no emotion label");
      auto it = std::lower_bound(corpus.label_set.begin(), corpus.label_set.end(), *u.emotion);
      if (it == corpus.label_set.end() || *it != *u.emotion)
        throw ValidationError("label " + *u.emotion + " not in label set");
      ++supports[static_cast<std::size_t>(it - corpus.label_set.begin())];
    }
  return class_weights(supports, mode);
}

std::vector<double> trigger_class_weights(const std::vector<EFRInstance>& instances, WeightMode mode) {
  std::vector<std::size_t> supports(2, 0);
  for (const auto& inst : instances)
    for (int y : inst.trigger_labels) ++supports[y == 1 ? 1 : 0];
  return class_weights(supports, mode);
}

std::vector<const Dialogue*> episode_representatives(const Corpus& corpus) {
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<const Dialogue*> out;
  for (const auto& d : corpus.dialogues) {
    auto [it, inserted] = slot.try_emplace(d.episode, out.size());
    if (inserted)
      out.push_back(&d);
    else if (d.size() > out[it->second]->size())
      out[it->second] = &d;
  }
  return out;
}

DatasetStats dataset_stats(const Corpus& corpus) {
  DatasetStats s;
  s.entries = corpus.dialogues.size();
  for (const auto& d : corpus.dialogues)
    if (d.triggers) s.triggers += static_cast<std::size_t>(std::count(d.triggers->begin(), d.triggers->end(), 1));
  const auto episodes = episode_representatives(corpus);
  s.episodes = episodes.size();
  for (const Dialogue* d : episodes) {
    s.utterances += d->size();
    for (const auto& u : d->utterances)
      if (u.emotion) ++s.label_histogram[*u.emotion];
  }
  return s;
}

std::map<std::size_t, std::size_t> trigger_distance_histogram(const Corpus& corpus) {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& d : corpus.dialogues) {
    if (!d.triggers || d.size() == 0) continue;
    const std::size_t target = d.size() - 1;
    for (std::size_t i = 0; i < d.size(); ++i)
      if ((*d.triggers)[i] == 1) ++hist[target - i];
  }
  return hist;
}

WeightMode parse_weight_mode(const std::string& s) {
  if (s == "inverse" || s == "inv") return WeightMode::inverse;
  if (s == "inverse_sqrt" || s == "inv_sqrt") return WeightMode::inverse_sqrt;
  throw ValidationError("unknown weight mode: " + s);
}

std::string to_string(WeightMode mode) { return mode == WeightMode::inverse ? "inverse" : "inverse_sqrt"; }

}  // namespace flipkit
