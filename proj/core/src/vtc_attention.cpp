#include "vtc/vtc_attention.hpp"

#include "vtc/errors.hpp"
#include "vtc/ops.hpp"

namespace vtc {

VtcAttentionWeights::VtcAttentionWeights(std::size_t o, std::size_t d, std::size_t heads, Rng& rng)
    : query_block("vtc.query", o, d, d, o, o, heads, rng),
      query_norm("vtc.query_norm", o),
      key_block("vtc.key", o, d, d, o, o, heads, rng),
      key_norm("vtc.key_norm", o),
      final_block("vtc.final", o, o, o, o, o, heads, rng),
      output_norm("vtc.output_norm", o),
      fusion_block("fusion", o, o, o, o, o, heads, rng),
      fusion_norm("fusion.norm", o) {}

void VtcAttentionWeights::collect(ParameterList& out) {
  query_block.collect(out);
  query_norm.collect(out);
  key_block.collect(out);
  key_norm.collect(out);
  final_block.collect(out);
  output_norm.collect(out);
  collect_fusion(out);
}

void VtcAttentionWeights::collect_fusion(ParameterList& out) {
  fusion_block.collect(out);
  fusion_norm.collect(out);
}

namespace {

void check_text_shapes(Var neighborhood, Var h, const VtcAttentionWeights& w) {
  if (neighborhood.rows() == 0) throw DegenerateInputError("vtc_att: empty neighborhood matrix");
  if (neighborhood.rows() != h.rows()) {
    throw DimensionError("vtc_att key stage: neighborhood " + neighborhood.value().shape_string() +
                         " and Sweeper features " + h.value().shape_string() + " differ in rows");
  }
  if (neighborhood.cols() != w.key_block.wq.value.rows()) {
    throw DimensionError("vtc_att key stage: neighborhood width " + std::to_string(neighborhood.cols()) +
                         " vs expected " + std::to_string(w.key_block.wq.value.rows()));
  }
  if (h.cols() != w.key_block.wk.value.rows()) {
    throw DimensionError("vtc_att key stage: Sweeper feature width " + std::to_string(h.cols()) +
                         " vs expected " + std::to_string(w.key_block.wk.value.rows()));
  }
}

void check_frames(Var frames, const VtcAttentionWeights& w) {
  if (frames.rows() == 0) throw DegenerateInputError("empty frame matrix");
  if (frames.cols() != w.query_block.wq.value.rows()) {
    throw DimensionError("vtc_att query stage: frame width " + std::to_string(frames.cols()) +
                         " vs expected " + std::to_string(w.query_block.wq.value.rows()));
  }
}

}  // namespace

TextSide prepare_text(Var neighborhood, Var h, VtcAttentionWeights& w) {
  check_text_shapes(neighborhood, h, w);
  TextSide side;
  side.h_keys = project_key(h, w.query_block);
  side.h_values = project_value(h, w.query_block);
  Var keys = w.key_norm.apply(multi_head_attention(neighborhood, h, h, w.key_block), w.layer_norm_eps);
  side.final_keys = project_key(keys, w.final_block);
  side.final_values = project_value(neighborhood, w.final_block);
  return side;
}

VideoSide prepare_video(Var frames, VtcAttentionWeights& w) {
  check_frames(frames, w);
  VideoSide side;
  side.frame_queries = project_query(frames, w.query_block);
  side.fusion_keys = project_key(frames, w.fusion_block);
  side.fusion_values = project_value(frames, w.fusion_block);
  return side;
}

Var cluster_embedding(const TextSide& text, const VideoSide& video, VtcAttentionWeights& w,
                      Matrix* scores) {
  const double eps = w.layer_norm_eps;
  Var queries = w.query_norm.apply(
      attend_projected(video.frame_queries, text.h_keys, text.h_values, w.query_block), eps);
  std::vector<Matrix> probs;
  Var out = attend_projected(project_query(queries, w.final_block), text.final_keys,
                             text.final_values, w.final_block, scores ? &probs : nullptr);
  if (scores) *scores = average_heads(probs);
  return ops::mean_rows(w.output_norm.apply(out, eps));
}

Var vtc_att(Var frames, Var neighborhood, Var h, VtcAttentionWeights& w, Matrix* scores) {
  TextSide text = prepare_text(neighborhood, h, w);
  VideoSide video = prepare_video(frames, w);
  return cluster_embedding(text, video, w, scores);
}

Matrix attention_scores(const Matrix& frames, const Matrix& neighborhood, const Matrix& h,
                        VtcAttentionWeights& w) {
  Tape tape;
  Matrix scores;
  vtc_att(tape.constant(frames), tape.constant(neighborhood), tape.constant(h), w, &scores);
  return scores;
}

Var fusion_query(Var text, VtcAttentionWeights& w) {
  if (text.rows() != 1) {
    throw DimensionError("fusion query must be a single 1xo row, got " + text.value().shape_string());
  }
  return project_query(text, w.fusion_block);
}

Var fuse_projected(Var query, const VideoSide& video, VtcAttentionWeights& w) {
  return w.fusion_norm.apply(
      attend_projected(query, video.fusion_keys, video.fusion_values, w.fusion_block), w.layer_norm_eps);
}

Var fuse(Var text, Var frames, VtcAttentionWeights& w) {
  if (frames.rows() == 0) throw DegenerateInputError("fuse: empty frame matrix");
  if (frames.cols() != w.fusion_block.wk.value.rows()) {
    throw DimensionError("fuse: frame width " + std::to_string(frames.cols()) + " vs expected " +
                         std::to_string(w.fusion_block.wk.value.rows()));
  }
  VideoSide video;
  video.fusion_keys = project_key(frames, w.fusion_block);
  video.fusion_values = project_value(frames, w.fusion_block);
  return fuse_projected(fusion_query(text, w), video, w);
}

}  // namespace vtc
