#include "vtc/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "vtc/errors.hpp"
#include "vtc/nn.hpp"
#include "vtc/ops.hpp"

namespace vtc {

std::vector<std::string> tokenize(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

TextItem make_text_item(std::string text_id, std::string raw, std::string video_id) {
  TextItem item{std::move(text_id), std::move(raw), {}, std::move(video_id)};
  item.tokens = tokenize(item.raw);
  return item;
}

Corpus::Corpus(std::vector<TextItem> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!index_.emplace(items_[i].text_id, i).second) {
      throw ConfigError("duplicate text id: " + items_[i].text_id);
    }
  }
}

const TextItem& Corpus::at(const std::string& text_id) const { return items_[index_of(text_id)]; }

std::size_t Corpus::index_of(const std::string& text_id) const {
  auto it = index_.find(text_id);
  if (it == index_.end()) throw LookupError("unknown text id: " + text_id);
  return it->second;
}

void EncoderConfig::validate() const {
  if (vocab_buckets == 0) throw ConfigError("vocab_buckets must be positive");
  if (!(token_dropout >= 0.0 && token_dropout < 1.0)) throw ConfigError("token_dropout must be in [0,1)");
  if (!(token_init_scale > 0.0)) throw ConfigError("token_init_scale must be > 0");
  if (heads == 0) throw ConfigError("heads must be positive");
  if (embed_dim == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be divisible by heads " +
                      std::to_string(heads));
  }
  if (sweeper_dim == 0 || sweeper_dim % heads != 0) {
    throw ConfigError("sweeper_dim " + std::to_string(sweeper_dim) +
                      " must be divisible by heads " + std::to_string(heads));
  }
  if (encoder_hidden == 0) throw ConfigError("encoder_hidden must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0,1)");
}

std::size_t hash_bucket(std::string_view token, std::size_t buckets, Seed seed) {
  return static_cast<std::size_t>(fnv1a64(token, seed) % buckets);
}

std::vector<std::pair<std::size_t, double>> bucket_counts(const std::vector<std::string>& tokens,
                                                          std::size_t buckets, Seed seed) {
  std::map<std::size_t, double> counts;
  for (const auto& tok : tokens) counts[hash_bucket(tok, buckets, seed)] += 1.0;
  return {counts.begin(), counts.end()};
}

TextEncoder::TextEncoder(const std::string& prefix, const EncoderConfig& config, Seed init_seed)
    : buckets_(config.vocab_buckets), hash_seed_(config.seed), dropout_rate_(config.dropout_rate), token_dropout_(config.token_dropout) {
  Rng rng(init_seed);
  w1 = Parameter(prefix + ".w1",
                 init_weight(config.vocab_buckets, config.encoder_hidden, rng,
                             config.token_init_scale * std::sqrt(static_cast<double>(config.vocab_buckets))));
  b1 = Parameter(prefix + ".b1", Matrix(1, config.encoder_hidden));
  w2 = Parameter(prefix + ".w2", init_weight(config.encoder_hidden, config.embed_dim, rng));
  b2 = Parameter(prefix + ".b2", Matrix(1, config.embed_dim));
}

Var TextEncoder::encode(Tape& tape, const TextItem& item, std::optional<Seed> dropout_seed) {
  if (item.tokens.empty()) {
    throw DegenerateInputError("cannot encode text '" + item.text_id + "' with no tokens");
  }
  auto bag = bucket_counts(item.tokens, buckets_, hash_seed_);
  const double norm = 1.0 / std::sqrt(static_cast<double>(item.tokens.size()));
  for (auto& entry : bag) entry.second *= norm;
  if (dropout_seed && token_dropout_ > 0.0) {
    const Matrix mask = ops::dropout_mask(1, bag.size(), token_dropout_, mix_seed(*dropout_seed, 0x70));
    auto kept = bag;
    for (std::size_t i = 0; i < kept.size(); ++i) kept[i].second *= mask(0, i);
    if (std::any_of(kept.begin(), kept.end(), [](const auto& e) { return e.second != 0.0; })) bag = std::move(kept);
  }
  Var hidden = ops::tanh(ops::add(ops::embedding_bag(tape.leaf(w1), bag), tape.leaf(b1)));
  if (dropout_seed) hidden = ops::dropout(hidden, dropout_rate_, *dropout_seed);
  return ops::add(ops::matmul(hidden, tape.leaf(w2)), tape.leaf(b2));
}

Matrix TextEncoder::embed(const TextItem& item) {
  Tape tape;
  return encode(tape, item).value();
}

void TextEncoder::collect(ParameterList& out) {
  out.push_back(&w1);
  out.push_back(&b1);
  out.push_back(&w2);
  out.push_back(&b2);
}

std::vector<std::size_t> sample_frames(std::size_t total, std::size_t target) {
  std::vector<std::size_t> idx;
  if (total == 0 || target == 0) return idx;
  idx.reserve(target);
  if (target < total) {
    for (std::size_t i = 0; i < target; ++i) idx.push_back(i * total / target);
  } else {
    for (std::size_t i = 0; i < total; ++i) idx.push_back(i);
    while (idx.size() < target) idx.push_back(total - 1);
  }
  return idx;
}

VideoItem resample_video(const VideoItem& video, std::size_t target) {
  const auto idx = sample_frames(video.frames.rows(), target);
  Matrix frames(idx.size(), video.frames.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = video.frames.row(idx[i]);
    std::copy(src.begin(), src.end(), frames.row(i).begin());
  }
  return {video.video_id, std::move(frames)};
}

}  // namespace vtc
