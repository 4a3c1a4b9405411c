#include "vtc/model.hpp"

#include <cmath>

namespace vtc {
namespace {

VtcAttentionWeights make_attention(const RunConfig& c) {
  Rng rng(mix_seed(c.seed, 0xA77));
  VtcAttentionWeights w(c.embed_dim, c.sweeper_dim, c.heads, rng);
  w.layer_norm_eps = c.layer_norm_eps;
  return w;
}

}  // namespace

VtcModel::VtcModel(const RunConfig& c)
    : config(c),
      clusterer_encoder("clusterer", c.clusterer_encoder_config(), mix_seed(c.seed, 0xC1)),
      text_encoder("encoder", c.encoder_config(), mix_seed(c.seed, 0xE1)),
      sweeper(c.sweeper_config(), mix_seed(c.seed, 0x5E)),
      attention(make_attention(c)),
      log_temperature("temperature.log", Matrix(1, 1, std::log(c.temperature_init))) {
  config.validate();
}

ParameterList VtcModel::trainable() {
  ParameterList out;
  text_encoder.collect(out);
  sweeper.collect(out);
  attention.collect(out);
  out.push_back(&log_temperature);
  return out;
}

ParameterList VtcModel::all() {
  ParameterList out;
  clusterer_encoder.collect(out);
  auto rest = trainable();
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

double VtcModel::temperature() const { return std::exp(log_temperature.value(0, 0)); }

Checkpoint VtcModel::checkpoint() { return Checkpoint::from_parameters(all(), config.serialize()); }

VtcModel VtcModel::from_checkpoint(const Checkpoint& ckpt) {
  VtcModel model(RunConfig::parse(ckpt.config));
  ckpt.restore(model.all());
  return model;
}

}  // namespace vtc
