#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/matrix.hpp"
#include "vtc/rng.hpp"

namespace vtc {

/// Reserved sequence markers. The tokenizer strips brackets, so raw text can never
/// produce them.
struct SpecialTokens {
  static constexpr std::string_view cls = "[CLS]";
  static constexpr std::string_view sep = "[SEP]";
};

/// Lowercases and splits on whitespace and ASCII punctuation, preserving order.
std::vector<std::string> tokenize(std::string_view raw);

struct TextItem {
  std::string text_id;
  std::string raw;
  std::vector<std::string> tokens;
  std::string video_id;
};

TextItem make_text_item(std::string text_id, std::string raw, std::string video_id);

struct VideoItem {
  std::string video_id;
  Matrix frames;  // T' x o
};

/// Texts with id lookup. Ids are unique.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<TextItem> items);

  const std::vector<TextItem>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  const TextItem& operator[](std::size_t i) const { return items_[i]; }
  /// Throws LookupError for unknown ids.
  const TextItem& at(const std::string& text_id) const;
  std::size_t index_of(const std::string& text_id) const;
  bool contains(const std::string& text_id) const { return index_.count(text_id) != 0; }

 private:
  std::vector<TextItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EncoderConfig {
  std::size_t vocab_buckets = 4096;
  std::size_t embed_dim = 32;       // o
  std::size_t encoder_hidden = 64;  // hidden width of the bag-of-words projection
  std::size_t sweeper_dim = 16;     // d
  std::size_t heads = 2;
  std::size_t layers = 1;           // L
  double dropout_rate = 0.1;
  double token_dropout = 0.0;      // rate at which hashed tokens are dropped from the bag
  double token_init_scale = 0.1;  // standard deviation of token-row weights
  Seed seed = 7;

  void validate() const;
};

std::size_t hash_bucket(std::string_view token, std::size_t buckets, Seed seed);

/// Sorted (bucket, count) pairs for a token list.
std::vector<std::pair<std::size_t, double>> bucket_counts(const std::vector<std::string>& tokens,
                                                          std::size_t buckets, Seed seed);

/// Feature-hashing bag-of-words encoder: tanh(counts * W1 / sqrt(n) + b1), optional
/// dropout on the hidden layer, then a linear map to the o-dimensional output. Used for
/// the retrieval text encoder and the clusterer encoder, each with its own weights.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const std::string& prefix, const EncoderConfig& config, Seed init_seed);

  /// 1 x o embedding. A dropout seed enables dropout with the configured rate.
  Var encode(Tape& tape, const TextItem& item, std::optional<Seed> dropout_seed = std::nullopt);
  /// Inference-mode embedding (no dropout) as a plain vector.
  Matrix embed(const TextItem& item);

  std::size_t output_dim() const { return w2.value.cols(); }
  void collect(ParameterList& out);

  Parameter w1;
  Parameter b1;
  Parameter w2;
  Parameter b2;

 private:
  std::size_t buckets_ = 0;
  Seed hash_seed_ = 0;
  double dropout_rate_ = 0.0;
  double token_dropout_ = 0.0;
};

/// Evenly spaced frame indices: floor(i * T / T') for T' < T, otherwise all T
/// indices followed by repeats of the last one.
std::vector<std::size_t> sample_frames(std::size_t total, std::size_t target);

/// Applies sample_frames to a video's frame matrix.
VideoItem resample_video(const VideoItem& video, std::size_t target);

}  // namespace vtc
