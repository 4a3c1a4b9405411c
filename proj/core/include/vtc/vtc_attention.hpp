#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vtc/autograd.hpp"
#include "vtc/nn.hpp"

namespace vtc {

/// Weights of the three-stage video-text-cluster attention and of the
/// text-conditioned frame fusion.
struct VtcAttentionWeights {
  AttentionWeights query_block;  // frames attend over Sweeper features
  LayerNormWeights query_norm;
  AttentionWeights key_block;  // neighborhood rows attend over Sweeper features
  LayerNormWeights key_norm;
  AttentionWeights final_block;  // frame queries attend over neighborhood keys
  LayerNormWeights output_norm;
  AttentionWeights fusion_block;  // text query attends over frames
  LayerNormWeights fusion_norm;
  double layer_norm_eps = 1e-5;

  VtcAttentionWeights() = default;
  /// embed_dim = o, sweeper_dim = d; all blocks share attention width o.
  VtcAttentionWeights(std::size_t embed_dim, std::size_t sweeper_dim, std::size_t heads, Rng& rng);

  void collect(ParameterList& out);
  void collect_fusion(ParameterList& out);
};

/// Stages of vtc_att that depend only on the text side: (N, h).
struct TextSide {
  Var h_keys;        // h W_K
  Var h_values;      // h W_V
  Var final_keys;    // LayerNorm(MultiHead(N W'_Q, h W'_K, h W'_V)) W''_K
  Var final_values;  // N W''_V
};

/// Stages that depend only on the video: F.
struct VideoSide {
  Var frame_queries;  // F W_Q
  Var fusion_keys;    // F W*_K
  Var fusion_values;  // F W*_V
};

TextSide prepare_text(Var neighborhood, Var h, VtcAttentionWeights& w);
VideoSide prepare_video(Var frames, VtcAttentionWeights& w);

/// LayerNorm(MultiHead(Q W''_Q, K W''_K, N W''_V)) mean-pooled over frame rows.
/// `scores`, if given, receives the head-averaged T' x (K+1) final attention.
Var cluster_embedding(const TextSide& text, const VideoSide& video, VtcAttentionWeights& w,
                      Matrix* scores = nullptr);

/// Full vtc_att: F is T' x o, N is (K+1) x o, h is (K+1) x d. Returns 1 x o.
Var vtc_att(Var frames, Var neighborhood, Var h, VtcAttentionWeights& w, Matrix* scores = nullptr);

/// Head-averaged final attention probabilities, T' x (K+1).
Matrix attention_scores(const Matrix& frames, const Matrix& neighborhood, const Matrix& h,
                        VtcAttentionWeights& w);

/// Projected fusion query t W*_Q for a 1 x o text embedding.
Var fusion_query(Var text, VtcAttentionWeights& w);
/// LayerNorm(MultiHead(t W*_Q, F W*_K, F W*_V)) from pre-projected pieces.
Var fuse_projected(Var query, const VideoSide& video, VtcAttentionWeights& w);
/// v = Psi_fusion(t, F). Throws DegenerateInputError for an empty frame matrix.
Var fuse(Var text, Var frames, VtcAttentionWeights& w);

}  // namespace vtc
