#include "vtc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "vtc/errors.hpp"

namespace vtc {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("expected a real number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

std::string real_string(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::random_h: return "random_h";
    case Ablation::random_clusters: return "random_clusters";
    case Ablation::mean_cluster: return "mean_cluster";
  }
  return "none";
}

Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::none;
  if (s == "random_h") return Ablation::random_h;
  if (s == "random_clusters") return Ablation::random_clusters;
  if (s == "mean_cluster") return Ablation::mean_cluster;
  throw ConfigError("unknown ablation '" + s + "'");
}

void RunConfig::set(const std::string& key, const std::string& v) {
  using Setter = std::function<void(RunConfig&, const std::string&)>;
  auto count = [](std::size_t RunConfig::*m) -> Setter {
    return [m](RunConfig& c, const std::string& v) { c.*m = parse_count(v); };
  };
  auto real = [](double RunConfig::*m) -> Setter {
    return [m](RunConfig& c, const std::string& v) { c.*m = parse_real(v); };
  };
  auto flag = [](bool RunConfig::*m) -> Setter {
    return [m](RunConfig& c, const std::string& v) { c.*m = parse_bool(v); };
  };
  static const std::map<std::string, Setter> setters = {
      {"k", count(&RunConfig::k)},
      {"segments", count(&RunConfig::segments)},
      {"margin", real(&RunConfig::margin)},
      {"label_smoothing", real(&RunConfig::label_smoothing)},
      {"dropout_rate", real(&RunConfig::dropout_rate)},
      {"token_init_scale", real(&RunConfig::token_init_scale)},
      {"token_dropout", real(&RunConfig::token_dropout)},
      {"clusterer_token_dropout", real(&RunConfig::clusterer_token_dropout)},
      {"embed_dim", count(&RunConfig::embed_dim)},
      {"sweeper_dim", count(&RunConfig::sweeper_dim)},
      {"encoder_hidden", count(&RunConfig::encoder_hidden)},
      {"ffn_hidden", count(&RunConfig::ffn_hidden)},
      {"heads", count(&RunConfig::heads)},
      {"layers", count(&RunConfig::layers)},
      {"frames", count(&RunConfig::frames)},
      {"batch_size", count(&RunConfig::batch_size)},
      {"epochs", count(&RunConfig::epochs)},
      {"learning_rate", real(&RunConfig::learning_rate)},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
      {"shortlist", count(&RunConfig::shortlist)},
      {"fusion_query",
       [](RunConfig& c, const std::string& v) {
         if (v == "raw") {
           c.fusion_query = FusionQuery::raw;
         } else if (v == "cleaned") {
           c.fusion_query = FusionQuery::cleaned;
         } else {
           throw ConfigError("fusion_query must be raw or cleaned, got '" + v + "'");
         }
       }},
      {"vocab_buckets", count(&RunConfig::vocab_buckets)},
      {"clusterer_epochs", count(&RunConfig::clusterer_epochs)},
      {"clusterer_dim", count(&RunConfig::clusterer_dim)},
      {"clusterer_hidden", count(&RunConfig::clusterer_hidden)},
      {"clusterer_learning_rate", real(&RunConfig::clusterer_learning_rate)},
      {"clusterer_batch_size", count(&RunConfig::clusterer_batch_size)},
      {"index_mode",
       [](RunConfig& c, const std::string& v) {
         if (v == "exact") {
           c.index_mode = IndexMode::exact;
         } else if (v == "lsh") {
           c.index_mode = IndexMode::lsh;
         } else {
           throw ConfigError("index_mode must be exact or lsh, got '" + v + "'");
         }
       }},
      {"lsh_tables", count(&RunConfig::lsh_tables)},
      {"lsh_hyperplanes", count(&RunConfig::lsh_hyperplanes)},
      {"lsh_probe_radius", count(&RunConfig::lsh_probe_radius)},
      {"max_sequence_length", count(&RunConfig::max_sequence_length)},
      {"sweeper_positions", flag(&RunConfig::sweeper_positions)},
      {"ablation", [](RunConfig& c, const std::string& v) { c.ablation = parse_ablation(v); }},
      {"temperature_init", real(&RunConfig::temperature_init)},
      {"grad_clip", real(&RunConfig::grad_clip)},
      {"symmetric_infonce", flag(&RunConfig::symmetric_infonce)},
      {"sweeper_warmup_epochs", count(&RunConfig::sweeper_warmup_epochs)},
      {"layer_norm_eps", real(&RunConfig::layer_norm_eps)},
      {"class_weight_smoothing", flag(&RunConfig::class_weight_smoothing)},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second(*this, v);
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void RunConfig::validate() const {
  encoder_config().validate();
  clusterer_encoder_config().validate();
  clusterer_config().validate();
  if (segments < 2) throw ConfigError("segments (g) must be >= 2");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0,1)");
  if (embed_dim % heads != 0 || sweeper_dim % heads != 0) throw ConfigError("dims must be divisible by heads");
  if (ffn_hidden == 0) throw ConfigError("ffn_hidden must be positive");
  if (frames == 0) throw ConfigError("frames (T') must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size (S) must be >= 2");
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (!(temperature_init > 0.0)) throw ConfigError("temperature_init must be > 0");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0 (0 disables clipping)");
  if (max_sequence_length < 3) throw ConfigError("max_sequence_length must be >= 3");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be > 0");
  if (lsh_tables == 0 || lsh_hyperplanes > 63) throw ConfigError("lsh_tables >= 1 and lsh_hyperplanes <= 63 required");
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig e;
  e.vocab_buckets = vocab_buckets;
  e.embed_dim = embed_dim;
  e.encoder_hidden = encoder_hidden;
  e.sweeper_dim = sweeper_dim;
  e.heads = heads;
  e.layers = layers;
  e.dropout_rate = dropout_rate;
  e.token_init_scale = token_init_scale;
  e.token_dropout = token_dropout;
  e.seed = seed;
  return e;
}

EncoderConfig RunConfig::clusterer_encoder_config() const {
  EncoderConfig e = encoder_config();
  e.embed_dim = clusterer_dim;
  e.encoder_hidden = clusterer_hidden;
  e.token_dropout = clusterer_token_dropout;
  return e;
}

ClustererConfig RunConfig::clusterer_config() const {
  ClustererConfig c;
  c.margin = margin;
  c.epochs = clusterer_epochs;
  c.batch_size = clusterer_batch_size;
  c.learning_rate = clusterer_learning_rate;
  c.dropout_rate = dropout_rate;
  c.seed = seed;
  return c;
}

SweeperConfig RunConfig::sweeper_config() const {
  SweeperConfig s;
  s.vocab_buckets = vocab_buckets;
  s.dim = sweeper_dim;
  s.heads = heads;
  s.layers = layers;
  s.ffn_hidden = ffn_hidden;
  s.segments = segments;
  s.positions = sweeper_positions;
  s.layer_norm_eps = layer_norm_eps;
  s.hash_seed = seed;
  return s;
}

LshParams RunConfig::lsh_params() const {
  return LshParams{lsh_tables, lsh_hyperplanes, lsh_probe_radius, mix_seed(seed, 0x15A)};
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  auto line = [&os](const char* key, const std::string& v) { os << key << " = " << v << '\n'; };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  line("k", std::to_string(k));
  line("segments", std::to_string(segments));
  line("margin", real_string(margin));
  line("label_smoothing", real_string(label_smoothing));
  line("dropout_rate", real_string(dropout_rate));
  line("token_init_scale", real_string(token_init_scale));
  line("token_dropout", real_string(token_dropout));
  line("clusterer_token_dropout", real_string(clusterer_token_dropout));
  line("embed_dim", std::to_string(embed_dim));
  line("sweeper_dim", std::to_string(sweeper_dim));
  line("encoder_hidden", std::to_string(encoder_hidden));
  line("ffn_hidden", std::to_string(ffn_hidden));
  line("heads", std::to_string(heads));
  line("layers", std::to_string(layers));
  line("frames", std::to_string(frames));
  line("batch_size", std::to_string(batch_size));
  line("epochs", std::to_string(epochs));
  line("learning_rate", real_string(learning_rate));
  line("seed", std::to_string(seed));
  line("shortlist", std::to_string(shortlist));
  line("fusion_query", fusion_query == FusionQuery::raw ? "raw" : "cleaned");
  line("vocab_buckets", std::to_string(vocab_buckets));
  line("clusterer_epochs", std::to_string(clusterer_epochs));
  line("clusterer_dim", std::to_string(clusterer_dim));
  line("clusterer_hidden", std::to_string(clusterer_hidden));
  line("clusterer_learning_rate", real_string(clusterer_learning_rate));
  line("clusterer_batch_size", std::to_string(clusterer_batch_size));
  line("index_mode", index_mode == IndexMode::exact ? "exact" : "lsh");
  line("lsh_tables", std::to_string(lsh_tables));
  line("lsh_hyperplanes", std::to_string(lsh_hyperplanes));
  line("lsh_probe_radius", std::to_string(lsh_probe_radius));
  line("max_sequence_length", std::to_string(max_sequence_length));
  line("sweeper_positions", b(sweeper_positions));
  line("ablation", to_string(ablation));
  line("temperature_init", real_string(temperature_init));
  line("grad_clip", real_string(grad_clip));
  line("symmetric_infonce", b(symmetric_infonce));
  line("sweeper_warmup_epochs", std::to_string(sweeper_warmup_epochs));
  line("layer_norm_eps", real_string(layer_norm_eps));
  line("class_weight_smoothing", b(class_weight_smoothing));
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace vtc
