#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vtc/ann_index.hpp"
#include "vtc/metrics.hpp"
#include "vtc/model.hpp"
#include "vtc/synthetic.hpp"

namespace vtc {

/// Paired texts and videos; videos[i] belongs to corpus[i].
struct Dataset {
  Corpus corpus;
  std::vector<VideoItem> videos;
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;

  const VideoItem& video_for(std::size_t text_index) const { return videos[text_index]; }
};

/// Pairs texts with videos by video id and resamples every clip to `frames` rows.
/// `splits` may be empty, in which case every pair is used for training.
Dataset make_dataset(std::vector<TextItem> texts, const std::vector<VideoItem>& videos,
                     const std::vector<TopicRecord>& splits, std::size_t frames);

Dataset make_dataset(const SyntheticCorpus& synthetic, std::size_t frames);

/// Reads corpus.jsonl, videos/<id>.vtcf and (when present) topics.jsonl from `dir`.
Dataset load_dataset(const std::filesystem::path& dir, std::size_t frames, std::size_t embed_dim);

/// Neighbor search state for one model. Only training texts are indexed.
struct ClusterContext {
  std::optional<VectorIndex> index;
  std::vector<ClusterAssignment> clusters;      // per corpus index
  std::vector<AugmentedSequence> sequences;     // per corpus index
  std::vector<SweepLabels> labels;              // per corpus index
  std::vector<double> class_weights;            // from training texts
};

ClustererResult fit_clusterer(VtcModel& model, const Dataset& data);

/// Builds the index over training texts and the cluster of every corpus text. Training
/// texts never retrieve themselves.
ClusterContext build_cluster_context(VtcModel& model, const Dataset& data);

/// Cluster and sequence for a text that is not part of the corpus.
struct QueryCluster {
  ClusterAssignment cluster;
  AugmentedSequence sequence;
};
QueryCluster cluster_query(VtcModel& model, const ClusterContext& ctx, const Corpus& corpus, const TextItem& query);

struct EpochStats {
  double total = 0.0;
  double sweep = 0.0;
  double ret = 0.0;
  double temperature = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double initial_loss = 0.0;  // total loss of the first batch before any update
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

/// Joint training over shuffled batches of the training split.
TrainReport train(VtcModel& model, const Dataset& data, const ClusterContext& ctx,
                  const EpochCallback& on_epoch = {});

/// Trains the clusterer, builds clusters and runs joint training.
TrainReport fit(VtcModel& model, const Dataset& data, ClusterContext* ctx_out = nullptr,
                const EpochCallback& on_epoch = {});

/// Pair scores of one query (given by cluster sequence) against every video.
std::vector<double> score_videos(VtcModel& model, const Corpus& corpus, const TextItem& query,
                                 const AugmentedSequence& sequence, const std::vector<const VideoItem*>& videos);

/// Coarse score cos(t, fuse(t, F)) used to build a shortlist.
std::vector<double> coarse_scores(VtcModel& model, const TextItem& query, const std::vector<const VideoItem*>& videos);

/// Ranked video ids, best first. shortlist 0 or >= videos.size() scores every video;
/// otherwise the top `shortlist` by coarse score are reranked and the rest follow in
/// coarse order.
std::vector<std::string> retrieve(VtcModel& model, const Corpus& corpus, const TextItem& query,
                                  const AugmentedSequence& sequence, const std::vector<const VideoItem*>& videos,
                                  std::size_t shortlist);

struct RetrievalRun {
  std::vector<std::string> query_ids;
  std::vector<std::string> video_ids;
  Matrix similarity;  // queries x videos; exhaustive pair scores
  std::vector<std::size_t> ranks;
  Metrics metrics;

  std::string ranks_csv() const;
};

/// Ranks each held-out text's video among all held-out videos.
RetrievalRun evaluate(VtcModel& model, const Dataset& data, const ClusterContext& ctx);

/// Attention scores for one (text, video) pair as CSV: one row per frame, one column
/// for the anchor and each neighbor.
std::string attention_csv(VtcModel& model, const Dataset& data, const ClusterContext& ctx, std::size_t text_index,
                          const VideoItem& video);

/// One JSON line per anchor with its neighbors, Jaccard labels and Sweeper probabilities.
std::string sweeper_jsonl(VtcModel& model, const Dataset& data, const ClusterContext& ctx);

}  // namespace vtc
