#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "flipkit/corpus.hpp"

namespace flipkit {

/// Cache key of an utterance: "<dialogue id>:<index>".
std::string utterance_key(const std::string& dialogue_id, std::size_t index);

struct EmbeddingTable {
  std::size_t dim = 0;
  std::string provider;
  std::string model;
  std::unordered_map<std::string, std::vector<float>> vectors;

  bool contains(const std::string& key) const { return vectors.count(key) != 0; }
  /// Throws ValidationError naming the key when absent.
  const std::vector<float>& at(const std::string& key) const;
  Eigen::VectorXd vector(const std::string& key) const;
};

struct SpeakerVocab {
  std::vector<std::string> top;
  std::size_t k = 6;
};

/// Top-k speakers by utterance count, ties broken lexicographically.
SpeakerVocab build_speaker_vocab(const Corpus& corpus, std::size_t k = 6);
Eigen::VectorXd speaker_one_hot(const std::string& speaker, const SpeakerVocab& vocab);
/// Fraction of (episode-level) utterances whose speaker is in the vocabulary.
double speaker_coverage(const Corpus& corpus, const SpeakerVocab& vocab);

Eigen::VectorXd emotion_one_hot(const std::string& label, const std::vector<std::string>& label_set);
std::size_t label_index(const std::string& label, const std::vector<std::string>& label_set);

enum class Pooling { mean_tokens, provider_native };

struct EncoderConfig {
  std::string provider = "stub";   // stub | token-server | document-service
  std::string model = "stub";
  Pooling pooling = Pooling::mean_tokens;
  std::string query_type = "document";
  std::size_t dim = 768;
  std::string endpoint;            // base URL for HTTP providers
  std::uint64_t seed = 0;          // stub only
  std::size_t parallelism = 4;
  std::size_t batch_size = 32;
};

/// Default encoder settings per task: mean-pooled 768-d vectors for the
/// code-mixed tasks, 1024-d document embeddings for task 3.
EncoderConfig default_encoder_config(int task_id);

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::size_t dim() const = 0;
  /// Must be safe to call concurrently.
  virtual std::vector<std::vector<float>> encode(const std::vector<std::string>& texts) const = 0;
};

/// Deterministic seeded hash-to-vector encoder. With mean_tokens pooling each
/// whitespace token is hashed to a vector and the utterance vector is their
/// mean; with provider_native the whole text is hashed.
class StubEncoder : public Encoder {
 public:
  StubEncoder(std::size_t dim, std::uint64_t seed, Pooling pooling = Pooling::mean_tokens)
      : dim_(dim), seed_(seed), pooling_(pooling) {}
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<float>> encode(const std::vector<std::string>& texts) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  Pooling pooling_;
};

/// Client for a token-embedding server (e.g. a code-mixed BERT behind HTTP).
/// POST {endpoint}/embed with {"model", "inputs": [text]} answered by
/// {"token_embeddings": [[[f]]]} including begin/end special tokens, which
/// are excluded before mean pooling.
class TokenServerEncoder : public Encoder {
 public:
  explicit TokenServerEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {}
  std::size_t dim() const override { return cfg_.dim; }
  std::vector<std::vector<float>> encode(const std::vector<std::string>& texts) const override;

 private:
  EncoderConfig cfg_;
};

/// Client for a document-embedding service with the common
/// POST {endpoint}/v1/embeddings {"input", "model", "input_type"} shape.
/// The API key is read from FLIPKIT_EMBED_API_KEY (or VOYAGE_API_KEY).
class DocumentServiceEncoder : public Encoder {
 public:
  explicit DocumentServiceEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {}
  std::size_t dim() const override { return cfg_.dim; }
  std::vector<std::vector<float>> encode(const std::vector<std::string>& texts) const override;

 private:
  EncoderConfig cfg_;
};

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg);

// Cache file layout (all integers little-endian):
//   magic "FKEMBED\0" | u32 format_version | u32 dim | u32 len + provider | u32 len + model
//   then records: u32 key_len | key bytes | dim x f32
inline constexpr std::uint32_t kCacheFormatVersion = 1;

EmbeddingTable read_cache(const std::filesystem::path& path);
/// Writes atomically (temporary file + rename). Rejects non-finite values.
void write_cache(const std::filesystem::path& path, const EmbeddingTable& table);

struct EncodeStats {
  std::size_t cached = 0;
  std::size_t encoded = 0;
  std::size_t encoder_calls = 0;
};

/// Fills every utterance of `corpus` from the cache, encoding only missing
/// keys. `encoder` may be null for cache-only use.
EmbeddingTable encode_corpus(const Corpus& corpus, const EncoderConfig& cfg, const std::filesystem::path& cache_path,
                             const Encoder* encoder, EncodeStats* stats = nullptr);

/// Keys of `corpus` absent from `table`.
std::vector<std::string> missing_keys(const Corpus& corpus, const EmbeddingTable& table);

}  // namespace flipkit
