#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "vtc/ann_index.hpp"
#include "vtc/clusterer.hpp"
#include "vtc/rng.hpp"
#include "vtc/sweeper.hpp"
#include "vtc/text.hpp"

namespace vtc {

enum class FusionQuery { raw, cleaned };

/// Ablation switches for the retrieval model.
enum class Ablation {
  none,
  random_h,         // Sweeper features replaced by fixed random matrices
  random_clusters,  // neighbors sampled uniformly instead of by nearest neighbor search
  mean_cluster,     // cluster embedding = mean of neighborhood rows instead of attention
};

/// Every tunable of a run. Serialized as `key = value` lines; unknown keys are errors.
struct RunConfig {
  std::size_t k = 5;
  std::size_t segments = 5;
  double margin = 0.5;
  double label_smoothing = 0.1;
  double dropout_rate = 0.1;
  double token_init_scale = 0.03;
  double token_dropout = 0.3;
  double clusterer_token_dropout = 0.5;
  std::size_t embed_dim = 32;
  std::size_t sweeper_dim = 16;
  std::size_t encoder_hidden = 64;
  std::size_t ffn_hidden = 32;
  std::size_t heads = 2;
  std::size_t layers = 1;
  std::size_t frames = 8;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  Seed seed = 7;
  std::size_t shortlist = 0;
  FusionQuery fusion_query = FusionQuery::raw;
  std::size_t vocab_buckets = 4096;
  std::size_t clusterer_epochs = 30;
  std::size_t clusterer_dim = 128;
  std::size_t clusterer_hidden = 256;
  double clusterer_learning_rate = 0.2;
  std::size_t clusterer_batch_size = 16;
  IndexMode index_mode = IndexMode::exact;
  std::size_t lsh_tables = 8;
  std::size_t lsh_hyperplanes = 8;
  std::size_t lsh_probe_radius = 2;
  std::size_t max_sequence_length = 512;
  bool sweeper_positions = true;
  Ablation ablation = Ablation::none;
  double temperature_init = 14.0;
  double grad_clip = 1.0;
  bool symmetric_infonce = false;
  std::size_t sweeper_warmup_epochs = 0;
  double layer_norm_eps = 1e-5;
  bool class_weight_smoothing = true;

  /// Throws ConfigError when a documented range is violated.
  void validate() const;

  EncoderConfig encoder_config() const;
  EncoderConfig clusterer_encoder_config() const;
  ClustererConfig clusterer_config() const;
  SweeperConfig sweeper_config() const;
  LshParams lsh_params() const;

  /// Canonical text form; parse(serialize()) reproduces the config exactly.
  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Applies a single `key`, `value` pair. Throws ConfigError for unknown keys or
  /// unparsable values.
  void set(const std::string& key, const std::string& value);
};

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

}  // namespace vtc
