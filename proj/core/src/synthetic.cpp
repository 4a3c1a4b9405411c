#include "vtc/synthetic.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vtc/errors.hpp"
#include "vtc/io.hpp"

namespace vtc {
namespace {

using json = nlohmann::json;

constexpr std::array<char, 16> kConsonants = {'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n',
                                              'p', 'r', 's', 't', 'v', 'z', 'h', 'j'};
constexpr std::array<char, 5> kVowels = {'a', 'e', 'i', 'o', 'u'};

std::string pad3(std::size_t v) {
  std::string s = std::to_string(v);
  while (s.size() < 3) s.insert(s.begin(), '0');
  return s;
}

// Inverse-CDF draw from a discrete distribution given by cumulative weights.
std::size_t draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    if (u < cdf[i]) return i;
  }
  return cdf.size() - 1;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (topics < 2) throw ParameterError("gen_synthetic needs topics >= 2");
  if (texts_per_topic == 0 || frames == 0 || embed_dim == 0) {
    throw ParameterError("gen_synthetic needs texts_per_topic, frames and embed_dim >= 1");
  }
  if (pool_size == 0 || text_length == 0) throw ParameterError("pool_size and text_length must be >= 1");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ParameterError("noise must be in [0,1]");
  if (holdout_per_topic >= texts_per_topic && holdout_per_topic != 0) {
    throw ParameterError("holdout_per_topic must leave at least one training text per topic");
  }
}

std::string synthetic_word(std::size_t topic, std::size_t index) {
  // Three consonant-vowel syllables from the low digits, then the topic number.
  // The trailing topic digits keep pools disjoint for any pool size.
  constexpr std::size_t syllables = kConsonants.size() * kVowels.size();
  std::string word;
  std::size_t n = index * 7919 + topic * 104729;
  for (int s = 0; s < 3; ++s) {
    const std::size_t syl = n % syllables;
    n /= syllables;
    word += kConsonants[syl / kVowels.size()];
    word += kVowels[syl % kVowels.size()];
  }
  return word + std::to_string(topic) + "x" + std::to_string(index);
}

SyntheticCorpus gen_synthetic(const SyntheticConfig& config) {
  config.validate();
  Rng rng(config.seed);

  std::vector<double> cdf(config.pool_size);
  double acc = 0.0;
  for (std::size_t r = 0; r < config.pool_size; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r + 1), config.zipf_exponent);
    cdf[r] = acc;
  }

  std::vector<Matrix> prototypes;
  prototypes.reserve(config.topics);
  for (std::size_t t = 0; t < config.topics; ++t) {
    Matrix p(1, config.embed_dim);
    for (std::size_t c = 0; c < config.embed_dim; ++c) p(0, c) = rng.normal();
    prototypes.push_back(std::move(p));
  }

  SyntheticCorpus out;
  for (std::size_t t = 0; t < config.topics; ++t) {
    for (std::size_t j = 0; j < config.texts_per_topic; ++j) {
      const std::string suffix = pad3(t) + "_" + std::to_string(j);
      std::string raw;
      for (std::size_t w = 0; w < config.text_length; ++w) {
        std::size_t topic = t;
        if (config.noise > 0.0 && rng.uniform() < config.noise) {
          topic = (t + 1 + rng.below(config.topics - 1)) % config.topics;
        }
        if (!raw.empty()) raw += ' ';
        raw += synthetic_word(topic, draw(cdf, rng));
      }
      TextItem text = make_text_item("t" + suffix, raw, "v" + suffix);

      VideoItem video{"v" + suffix, Matrix(config.frames, config.embed_dim)};
      for (std::size_t f = 0; f < config.frames; ++f) {
        for (std::size_t c = 0; c < config.embed_dim; ++c) {
          video.frames(f, c) = prototypes[t](0, c) + config.frame_jitter * rng.normal();
        }
      }
      const bool held = j + config.holdout_per_topic >= config.texts_per_topic && config.holdout_per_topic > 0;
      out.topics.push_back({text.text_id, video.video_id, t, held ? Split::holdout : Split::train});
      out.texts.push_back(std::move(text));
      out.videos.push_back(std::move(video));
    }
  }
  return out;
}

void write_topics(const std::filesystem::path& path, const std::vector<TopicRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing", 0);
  for (const auto& r : records) {
    json j = {{"text_id", r.text_id},
              {"video_id", r.video_id},
              {"topic", r.topic},
              {"split", r.split == Split::train ? "train" : "holdout"}};
    out << j.dump() << '\n';
  }
}

std::vector<TopicRecord> read_topics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::vector<TopicRecord> records;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t here = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      TopicRecord r;
      r.text_id = j.at("text_id").get<std::string>();
      r.video_id = j.at("video_id").get<std::string>();
      r.topic = j.at("topic").get<std::size_t>();
      const auto split = j.at("split").get<std::string>();
      if (split != "train" && split != "holdout") throw FormatError("bad split '" + split + "'", here);
      r.split = split == "train" ? Split::train : Split::holdout;
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what(), here);
    }
  }
  return records;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir / "videos");
  write_manifest(dir / "corpus.jsonl", corpus.texts);
  write_topics(dir / "topics.jsonl", corpus.topics);
  for (const auto& v : corpus.videos) write_vtcf(dir / "videos" / (v.video_id + ".vtcf"), v);
}

}  // namespace vtc
