#include "flipkit/embed.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "flipkit/error.hpp"

namespace flipkit {

namespace {

using nlohmann::json;

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void hashed_vector(std::string_view s, std::uint64_t seed, std::vector<double>& acc) {
  std::uint64_t state = fnv1a(s, seed);
  for (double& x : acc) x += static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
      static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  return true;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

bool get_string(std::istream& is, std::string& s) {
  std::uint32_t n = 0;
  if (!get_u32(is, n)) return false;
  s.resize(n);
  return static_cast<bool>(is.read(s.data(), n));
}

void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

constexpr char kMagic[8] = {'F', 'K', 'E', 'M', 'B', 'E', 'D', '\0'};

std::pair<std::string, std::string> split_url(const std::string& url) {
  // scheme://host[:port][/base]
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string base = url.substr(path_start);
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {url.substr(0, path_start), base};
}

json post_json(const std::string& endpoint, const std::string& path, const json& body,
               const httplib::Headers& headers) {
  if (endpoint.empty()) throw RuntimeFailure("encoder endpoint is not configured");
  auto [host, base] = split_url(endpoint);
  httplib::Client client(host);
  client.set_read_timeout(120, 0);
  auto res = client.Post(base + path, headers, body.dump(), "application/json");
  if (!res) throw RuntimeFailure("encoder unreachable at " + endpoint + ": " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw RuntimeFailure("encoder at " + endpoint + " answered HTTP " + std::to_string(res->status));
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw RuntimeFailure(std::string("encoder returned malformed JSON: ") + e.what());
  }
}

}  // namespace

std::string utterance_key(const std::string& dialogue_id, std::size_t index) {
  return dialogue_id + ":" + std::to_string(index);
}

const std::vector<float>& EmbeddingTable::at(const std::string& key) const {
  auto it = vectors.find(key);
  if (it == vectors.end()) throw ValidationError("no embedding for utterance " + key);
  return it->second;
}

Eigen::VectorXd EmbeddingTable::vector(const std::string& key) const {
  const auto& v = at(key);
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

SpeakerVocab build_speaker_vocab(const Corpus& corpus, std::size_t k) {
  if (k == 0) throw ValidationError("speaker vocabulary size must be positive");
  std::map<std::string, std::size_t> counts;
  for (const Dialogue* d : episode_representatives(corpus))
    for (const auto& u : d->utterances) ++counts[u.speaker];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  SpeakerVocab vocab;
  vocab.k = k;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) vocab.top.push_back(ranked[i].first);
  return vocab;
}

Eigen::VectorXd speaker_one_hot(const std::string& speaker, const SpeakerVocab& vocab) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.k));
  auto it = std::find(vocab.top.begin(), vocab.top.end(), speaker);
  if (it != vocab.top.end()) v(it - vocab.top.begin()) = 1.0;
  return v;
}

double speaker_coverage(const Corpus& corpus, const SpeakerVocab& vocab) {
  std::size_t total = 0, covered = 0;
  for (const Dialogue* d : episode_representatives(corpus))
    for (const auto& u : d->utterances) {
      ++total;
      if (std::find(vocab.top.begin(), vocab.top.end(), u.speaker) != vocab.top.end()) ++covered;
    }
  return total == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(total);
}

std::size_t label_index(const std::string& label, const std::vector<std::string>& label_set) {
  auto it = std::find(label_set.begin(), label_set.end(), label);
  if (it == label_set.end()) throw ValidationError("unknown emotion label \"" + label + "\"");
  return static_cast<std::size_t>(it - label_set.begin());
}

Eigen::VectorXd emotion_one_hot(const std::string& label, const std::vector<std::string>& label_set) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(label_set.size()));
  v(static_cast<Eigen::Index>(label_index(label, label_set))) = 1.0;
  return v;
}

EncoderConfig default_encoder_config(int task_id) {
  EncoderConfig cfg;
  if (task_id == 3) {
    cfg.provider = "document-service";
    cfg.model = "voyage-lite-02-instruct";
    cfg.pooling = Pooling::provider_native;
    cfg.query_type = "document";
    cfg.dim = 1024;
    cfg.endpoint = "https://api.voyageai.com";
  } else {
    cfg.provider = "token-server";
    cfg.model = "l3cube-pune/hing-bert";
    cfg.pooling = Pooling::mean_tokens;
    cfg.dim = 768;
    cfg.endpoint = "http://127.0.0.1:8765";
  }
  return cfg;
}

std::vector<std::vector<float>> StubEncoder::encode(const std::vector<std::string>& texts) const {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<double> acc(dim_, 0.0);
    if (pooling_ == Pooling::mean_tokens) {
      auto tokens = whitespace_tokens(text);
      for (const auto& tok : tokens) hashed_vector(tok, seed_, acc);
      if (!tokens.empty())
        for (double& x : acc) x /= static_cast<double>(tokens.size());
    } else {
      hashed_vector(text, seed_, acc);
    }
    out.emplace_back(acc.begin(), acc.end());
  }
  return out;
}

std::vector<std::vector<float>> TokenServerEncoder::encode(const std::vector<std::string>& texts) const {
  json body = {{"model", cfg_.model}, {"inputs", texts}};
  json res = post_json(cfg_.endpoint, "/embed", body, {});
  const json& per_text = res.at("token_embeddings");
  if (per_text.size() != texts.size()) throw RuntimeFailure("token server returned a wrong number of texts");
  std::vector<std::vector<float>> out;
  for (const auto& tokens : per_text) {
    // Drop the begin/end special tokens; fall back to all tokens if only specials exist.
    const std::size_t n = tokens.size();
    const std::size_t first = n > 2 ? 1 : 0;
    const std::size_t last = n > 2 ? n - 1 : n;
    std::vector<double> acc(cfg_.dim, 0.0);
    for (std::size_t t = first; t < last; ++t) {
      if (tokens[t].size() != cfg_.dim) throw RuntimeFailure("token server returned a vector of the wrong size");
      for (std::size_t i = 0; i < cfg_.dim; ++i) acc[i] += tokens[t][i].get<double>();
    }
    if (last > first)
      for (double& x : acc) x /= static_cast<double>(last - first);
    out.emplace_back(acc.begin(), acc.end());
  }
  return out;
}

std::vector<std::vector<float>> DocumentServiceEncoder::encode(const std::vector<std::string>& texts) const {
  const char* key = std::getenv("FLIPKIT_EMBED_API_KEY");
  if (key == nullptr) key = std::getenv("VOYAGE_API_KEY");
  httplib::Headers headers;
  if (key != nullptr) headers.emplace("Authorization", std::string("Bearer ") + key);
  json body = {{"input", texts}, {"model", cfg_.model}, {"input_type", cfg_.query_type}};
  json res = post_json(cfg_.endpoint, "/v1/embeddings", body, headers);
  const json& data = res.at("data");
  if (data.size() != texts.size()) throw RuntimeFailure("embedding service returned a wrong number of vectors");
  std::vector<std::vector<float>> out(texts.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t slot = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
    if (slot >= out.size()) throw RuntimeFailure("embedding service returned an out-of-range index");
    out[slot] = data[i].at("embedding").get<std::vector<float>>();
    if (out[slot].size() != cfg_.dim) throw RuntimeFailure("embedding service returned a vector of the wrong size");
  }
  return out;
}

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg) {
  if (cfg.provider == "stub") return std::make_unique<StubEncoder>(cfg.dim, cfg.seed, cfg.pooling);
  if (cfg.provider == "token-server") return std::make_unique<TokenServerEncoder>(cfg);
  if (cfg.provider == "document-service") return std::make_unique<DocumentServiceEncoder>(cfg);
  if (cfg.provider == "none") return nullptr;
  throw ValidationError("unknown encoder provider " + cfg.provider);
}

EmbeddingTable read_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open embedding cache " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError(path.string() + ": not an embedding cache");
  std::uint32_t version = 0, dim = 0;
  EmbeddingTable table;
  if (!get_u32(in, version) || !get_u32(in, dim) || !get_string(in, table.provider) || !get_string(in, table.model))
    throw ParseError(path.string() + ": truncated cache header");
  if (version != kCacheFormatVersion)
    throw ParseError(path.string() + ": unsupported cache version " + std::to_string(version));
  table.dim = dim;
  std::string key;
  while (in.peek() != std::char_traits<char>::eof()) {
    if (!get_string(in, key)) throw ParseError(path.string() + ": truncated record");
    std::vector<float> v(dim);
    for (auto& x : v) {
      std::uint32_t bits = 0;
      if (!get_u32(in, bits)) throw ParseError(path.string() + ": truncated vector for " + key);
      x = std::bit_cast<float>(bits);
    }
    table.vectors[key] = std::move(v);
  }
  return table;
}

void write_cache(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::vector<const std::string*> keys;
  keys.reserve(table.vectors.size());
  for (const auto& [k, v] : table.vectors) {
    if (v.size() != table.dim) throw ValidationError("vector for " + k + " has the wrong dimension");
    for (float x : v)
      if (!std::isfinite(x)) throw ValidationError("non-finite component in vector for " + k);
    keys.push_back(&k);
  }
  std::sort(keys.begin(), keys.end(), [](const auto* a, const auto* b) { return *a < *b; });

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write embedding cache " + tmp.string());
    out.write(kMagic, 8);
    put_u32(out, kCacheFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(table.dim));
    put_string(out, table.provider);
    put_string(out, table.model);
    for (const auto* k : keys) {
      put_string(out, *k);
      for (float x : table.vectors.at(*k)) put_f32(out, x);
    }
    out.flush();
    if (!out) throw RuntimeFailure("failed writing embedding cache " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> missing_keys(const Corpus& corpus, const EmbeddingTable& table) {
  std::vector<std::string> out;
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) {
      auto key = utterance_key(d.id, u.index);
      if (!table.contains(key)) out.push_back(std::move(key));
    }
  return out;
}

EmbeddingTable encode_corpus(const Corpus& corpus, const EncoderConfig& cfg, const std::filesystem::path& cache_path,
                             const Encoder* encoder, EncodeStats* stats) {
  EmbeddingTable table;
  if (std::filesystem::exists(cache_path)) {
    table = read_cache(cache_path);
    if (table.dim != cfg.dim) {
      std::ostringstream os;
      os << "cache " << cache_path.string() << " holds " << table.dim << "-d vectors but the encoder is " << cfg.dim
         << "-d";
      throw ValidationError(os.str());
    }
  } else {
    table.dim = cfg.dim;
    table.provider = cfg.provider;
    table.model = cfg.model;
  }
  if (encoder != nullptr && encoder->dim() != cfg.dim) throw ValidationError("encoder dimension differs from config");

  struct Job {
    std::string key;
    const std::string* text;
  };
  std::vector<Job> jobs;
  std::size_t cached = 0;
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) {
      auto key = utterance_key(d.id, u.index);
      if (table.contains(key))
        ++cached;
      else
        jobs.push_back({std::move(key), &u.text});
    }

  auto describe_missing = [&jobs](const std::string& reason) {
    std::ostringstream os;
    os << reason << "; " << jobs.size() << " utterances missing from cache:";
    for (std::size_t i = 0; i < std::min<std::size_t>(jobs.size(), 20); ++i) os << ' ' << jobs[i].key;
    if (jobs.size() > 20) os << " ...";
    return os.str();
  };

  EncodeStats local;
  local.cached = cached;
  if (!jobs.empty()) {
    if (encoder == nullptr) throw RuntimeFailure(describe_missing("no encoder available"));
    const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
    const std::size_t n_batches = (jobs.size() + batch - 1) / batch;
    std::vector<std::vector<std::vector<float>>> results(n_batches);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> calls{0};
    std::mutex error_mutex;
    std::string first_error;
    auto worker = [&] {
      for (std::size_t b; (b = next.fetch_add(1)) < n_batches;) {
        std::vector<std::string> texts;
        for (std::size_t i = b * batch; i < std::min(jobs.size(), (b + 1) * batch); ++i) texts.push_back(*jobs[i].text);
        try {
          results[b] = encoder->encode(texts);
          ++calls;
          if (results[b].size() != texts.size()) throw RuntimeFailure("encoder returned a wrong number of vectors");
        } catch (const std::exception& e) {
          std::lock_guard lock(error_mutex);
          if (first_error.empty()) first_error = e.what();
          next = n_batches;
        }
      }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(cfg.parallelism, 1, n_batches);
    std::vector<std::thread> threads;
    for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    if (!first_error.empty()) throw RuntimeFailure(describe_missing(first_error));

    for (std::size_t b = 0; b < n_batches; ++b)
      for (std::size_t i = 0; i < results[b].size(); ++i) {
        auto& v = results[b][i];
        const auto& key = jobs[b * batch + i].key;
        if (v.size() != table.dim) throw ValidationError("encoder returned a wrong-size vector for " + key);
        table.vectors[key] = std::move(v);
      }
    write_cache(cache_path, table);
    local.encoded = jobs.size();
    local.encoder_calls = calls.load();
  }
  if (stats != nullptr) *stats = local;
  return table;
}

}  // namespace flipkit
