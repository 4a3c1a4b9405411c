#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "vtc/rng.hpp"
#include "vtc/text.hpp"

namespace vtc {

struct SyntheticConfig {
  std::size_t topics = 64;
  std::size_t texts_per_topic = 4;
  std::size_t frames = 8;  // T'
  double noise = 0.1;      // probability that a token comes from another topic's pool
  Seed seed = 7;
  std::size_t embed_dim = 32;   // o
  std::size_t pool_size = 16;   // tokens owned by each topic
  std::size_t text_length = 6;  // tokens per text
  double zipf_exponent = 1.0;
  double frame_jitter = 0.5;
  std::size_t holdout_per_topic = 1;  // trailing texts of each topic held out from training

  void validate() const;
};

enum class Split { train, holdout };

struct TopicRecord {
  std::string text_id;
  std::string video_id;
  std::size_t topic = 0;
  Split split = Split::train;
};

struct SyntheticCorpus {
  std::vector<TextItem> texts;
  std::vector<VideoItem> videos;  // videos[i] pairs with texts[i]
  std::vector<TopicRecord> topics;
};

/// Deterministic word for token `index` of topic `topic`; distinct across all pairs.
std::string synthetic_word(std::size_t topic, std::size_t index);

SyntheticCorpus gen_synthetic(const SyntheticConfig& config);

/// Writes corpus.jsonl, topics.jsonl and videos/<video_id>.vtcf under `dir`.
void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

std::vector<TopicRecord> read_topics(const std::filesystem::path& path);
void write_topics(const std::filesystem::path& path, const std::vector<TopicRecord>& records);

}  // namespace vtc
