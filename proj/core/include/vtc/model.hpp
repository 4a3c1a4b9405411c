#pragma once

#include "vtc/autograd.hpp"
#include "vtc/config.hpp"
#include "vtc/io.hpp"
#include "vtc/sweeper.hpp"
#include "vtc/text.hpp"
#include "vtc/vtc_attention.hpp"

namespace vtc {

/// All learned state of a run.
struct VtcModel {
  RunConfig config;
  TextEncoder clusterer_encoder;  // retrieval-independent encoder used only for neighbor search
  TextEncoder text_encoder;       // produces anchor and neighborhood embeddings
  Sweeper sweeper;
  VtcAttentionWeights attention;
  Parameter log_temperature;  // lambda = exp(log_temperature)

  explicit VtcModel(const RunConfig& config);

  /// Parameters updated by joint training (everything except the clusterer encoder).
  ParameterList trainable();
  ParameterList all();
  double temperature() const;

  Checkpoint checkpoint();
  static VtcModel from_checkpoint(const Checkpoint& ckpt);
};

}  // namespace vtc
