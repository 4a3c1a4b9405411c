#include "vtc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "vtc/clusterer.hpp"
#include "vtc/errors.hpp"
#include "vtc/io.hpp"
#include "vtc/ops.hpp"
#include "vtc/optim.hpp"

namespace vtc {
namespace {

bool uses_sweeper(const RunConfig& c) {
  return c.ablation == Ablation::none || c.ablation == Ablation::random_clusters;
}

Matrix random_features(const std::string& anchor_id, std::size_t rows, std::size_t cols, Seed seed) {
  Rng rng(fnv1a64(anchor_id, mix_seed(seed, 0x4A)));
  Matrix h(rows, cols);
  for (double& v : h.data()) v = rng.normal();
  return h;
}

struct TextState {
  Var anchor;
  Var neighborhood;
  std::optional<TextSide> side;
  Var raw_query;
  std::optional<SweeperTrace> trace;
};

// Builds text, video and pair nodes for one tape, caching text encodings by id.
class Scorer {
 public:
  Scorer(Tape& tape, VtcModel& model, std::optional<Seed> dropout_seed)
      : tape_(tape), model_(model), dropout_seed_(dropout_seed) {}

  Var encode(const TextItem& item) {
    auto it = cache_.find(item.text_id);
    if (it != cache_.end()) return it->second;
    std::optional<Seed> mask;
    if (dropout_seed_) mask = fnv1a64(item.text_id, *dropout_seed_);
    Var v = model_.text_encoder.encode(tape_, item, mask);
    cache_.emplace(item.text_id, v);
    return v;
  }

  TextState text(const TextItem& anchor, const AugmentedSequence& seq, const Corpus& corpus) {
    const RunConfig& c = model_.config;
    TextState s;
    s.anchor = encode(anchor);
    std::vector<Var> rows{s.anchor};
    for (const auto& id : seq.neighbor_ids) rows.push_back(encode(corpus.at(id)));
    s.neighborhood = ops::concat_rows(rows);
    if (c.ablation != Ablation::mean_cluster) {
      Var h;
      if (c.ablation == Ablation::random_h) {
        h = tape_.constant(random_features(anchor.text_id, seq.spans.size(), c.sweeper_dim, c.seed));
      } else {
        s.trace = model_.sweeper.forward(tape_, seq);
        h = s.trace->h;
      }
      s.side = prepare_text(s.neighborhood, h, model_.attention);
    }
    s.raw_query = fusion_query(s.anchor, model_.attention);
    return s;
  }

  VideoSide video(const VideoItem& v) { return prepare_video(tape_.constant(v.frames), model_.attention); }

  Var score(const TextState& s, const VideoSide& v) {
    VtcAttentionWeights& w = model_.attention;
    Var cleaned = s.side ? cluster_embedding(*s.side, v, w) : ops::mean_rows(s.neighborhood);
    Var query = model_.config.fusion_query == FusionQuery::cleaned ? fusion_query(cleaned, w) : s.raw_query;
    return ops::cosine_similarity(cleaned, fuse_projected(query, v, w));
  }

 private:
  Tape& tape_;
  VtcModel& model_;
  std::optional<Seed> dropout_seed_;
  std::unordered_map<std::string, Var> cache_;
};

ClusterAssignment nearest(VtcModel& model, const VectorIndex& index, const TextItem& item, bool self_indexed) {
  const Matrix q = model.clusterer_encoder.embed(item);
  std::vector<std::size_t> exclude;
  if (self_indexed) exclude.push_back(index.position(item.text_id));
  const auto rows = index.knn(q.row(0), model.config.k, exclude);
  return index.assignment(item.text_id, rows);
}

SweepLabels labels_for(const Corpus& corpus, const TextItem& anchor, const AugmentedSequence& seq, std::size_t g) {
  std::vector<std::vector<std::string>> neighbor_tokens;
  neighbor_tokens.reserve(seq.neighbor_ids.size());
  for (const auto& id : seq.neighbor_ids) neighbor_tokens.push_back(corpus.at(id).tokens);
  return make_sweep_labels(anchor.tokens, neighbor_tokens, g);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t s) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += s) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + s)));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    auto tail = batches.back();
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

std::string batch_ids(const Dataset& data, const std::vector<std::size_t>& batch) {
  std::string out;
  for (auto i : batch) out += (out.empty() ? "" : ",") + data.corpus[i].text_id;
  return out;
}

}  // namespace

Dataset make_dataset(std::vector<TextItem> texts, const std::vector<VideoItem>& videos,
                     const std::vector<TopicRecord>& splits, std::size_t frames) {
  std::unordered_map<std::string, const VideoItem*> by_id;
  for (const auto& v : videos) by_id.emplace(v.video_id, &v);
  std::unordered_map<std::string, Split> split_of;
  for (const auto& r : splits) split_of.emplace(r.text_id, r.split);

  Dataset data;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto it = by_id.find(texts[i].video_id);
    if (it == by_id.end()) {
      throw LookupError("text '" + texts[i].text_id + "' references unknown video '" + texts[i].video_id + "'");
    }
    data.videos.push_back(resample_video(*it->second, frames));
    const auto s = split_of.find(texts[i].text_id);
    if (s != split_of.end() && s->second == Split::holdout) {
      data.holdout.push_back(i);
    } else {
      data.train.push_back(i);
    }
  }
  data.corpus = Corpus(std::move(texts));
  return data;
}

Dataset make_dataset(const SyntheticCorpus& synthetic, std::size_t frames) {
  return make_dataset(synthetic.texts, synthetic.videos, synthetic.topics, frames);
}

Dataset load_dataset(const std::filesystem::path& dir, std::size_t frames, std::size_t embed_dim) {
  auto texts = read_manifest(dir / "corpus.jsonl");
  std::vector<VideoItem> videos;
  std::set<std::string> seen;
  for (const auto& t : texts) {
    if (!seen.insert(t.video_id).second) continue;
    videos.push_back(load_frame_embeddings(dir / "videos" / (t.video_id + ".vtcf"), embed_dim));
  }
  std::vector<TopicRecord> splits;
  if (std::filesystem::exists(dir / "topics.jsonl")) splits = read_topics(dir / "topics.jsonl");
  return make_dataset(std::move(texts), videos, splits, frames);
}

ClustererResult fit_clusterer(VtcModel& model, const Dataset& data) {
  std::vector<TextItem> items;
  for (auto i : data.train) items.push_back(data.corpus[i]);
  const Corpus train_corpus(std::move(items));
  ClustererResult result = train_clusterer(train_corpus, model.config.clusterer_encoder_config(), model.config.clusterer_config());
  model.clusterer_encoder = result.encoder;
  return result;
}

ClusterContext build_cluster_context(VtcModel& model, const Dataset& data) {
  const RunConfig& c = model.config;
  if (data.train.empty()) throw DegenerateInputError("no training texts to index");
  std::vector<std::string> ids;
  Matrix vectors(data.train.size(), c.clusterer_dim);
  for (std::size_t r = 0; r < data.train.size(); ++r) {
    const TextItem& item = data.corpus[data.train[r]];
    ids.push_back(item.text_id);
    const Matrix e = model.clusterer_encoder.embed(item);
    std::copy(e.data().begin(), e.data().end(), vectors.row(r).begin());
  }
  ClusterContext ctx;
  ctx.index.emplace(std::move(ids), std::move(vectors), c.index_mode, c.lsh_params());

  std::vector<bool> is_train(data.corpus.size(), false);
  for (auto i : data.train) is_train[i] = true;
  std::vector<std::size_t> train_segments;
  for (std::size_t i = 0; i < data.corpus.size(); ++i) {
    const TextItem& item = data.corpus[i];
    ClusterAssignment cluster{item.text_id, {}};
    if (c.k > 0 && c.ablation == Ablation::random_clusters) {
      std::vector<std::size_t> pool;
      for (auto j : data.train) {
        if (j != i) pool.push_back(j);
      }
      if (pool.size() < c.k) throw CapacityError("random clusters need more than K training texts");
      Rng rng(fnv1a64(item.text_id, mix_seed(c.seed, 0x7C)));
      rng.shuffle(pool);
      for (std::size_t n = 0; n < c.k; ++n) cluster.neighbor_ids.push_back(data.corpus[pool[n]].text_id);
    } else if (c.k > 0) {
      cluster = nearest(model, *ctx.index, item, is_train[i]);
    }
    AugmentedSequence seq = build_augmented_sequence(item, cluster, data.corpus, c.max_sequence_length);
    SweepLabels labels = labels_for(data.corpus, item, seq, c.segments);
    if (is_train[i]) train_segments.insert(train_segments.end(), labels.segment.begin(), labels.segment.end());
    ctx.clusters.push_back(std::move(cluster));
    ctx.sequences.push_back(std::move(seq));
    ctx.labels.push_back(std::move(labels));
  }
  ctx.class_weights = class_weights(train_segments, c.segments, c.class_weight_smoothing);
  return ctx;
}

QueryCluster cluster_query(VtcModel& model, const ClusterContext& ctx, const Corpus& corpus, const TextItem& query) {
  QueryCluster out;
  out.cluster = ClusterAssignment{query.text_id, {}};
  if (model.config.k > 0) out.cluster = nearest(model, *ctx.index, query, false);
  out.sequence = build_augmented_sequence(query, out.cluster, corpus, model.config.max_sequence_length);
  return out;
}

TrainReport train(VtcModel& model, const Dataset& data, const ClusterContext& ctx, const EpochCallback& on_epoch) {
  const RunConfig& c = model.config;
  if (data.train.size() < 2) throw DegenerateInputError("training needs at least two pairs");
  if (c.batch_size > data.train.size()) {
    throw ConfigError("batch_size " + std::to_string(c.batch_size) + " exceeds the " +
                      std::to_string(data.train.size()) + " training pairs");
  }
  SweepLossConfig sweep_cfg;
  sweep_cfg.segments = c.segments;
  sweep_cfg.smoothing = c.label_smoothing;
  sweep_cfg.weights = ctx.class_weights;

  const ParameterList params = model.trainable();
  Adam adam(c.learning_rate);
  Rng rng(mix_seed(c.seed, 0x7A1));
  TrainReport report;
  bool first = true;

  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    std::vector<std::size_t> order = data.train;
    rng.shuffle(order);
    const auto batches = make_batches(order, c.batch_size);
    const bool warmup = epoch < c.sweeper_warmup_epochs && uses_sweeper(c);
    EpochStats stats;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      std::set<std::string> videos;
      for (auto i : batch) {
        if (!videos.insert(data.corpus[i].video_id).second) {
          throw DegenerateInputError("batch contains video '" + data.corpus[i].video_id + "' twice");
        }
      }
      zero_grads(params);
      Tape tape;
      Scorer scorer(tape, model, mix_seed(mix_seed(c.seed, epoch), b));
      std::vector<TextState> states;
      std::vector<Var> log_probs;
      std::vector<const Matrix*> one_hots;
      for (auto i : batch) {
        states.push_back(scorer.text(data.corpus[i], ctx.sequences[i], data.corpus));
        if (states.back().trace && states.back().trace->log_probs.rows() > 0) {
          log_probs.push_back(states.back().trace->log_probs);
          one_hots.push_back(&ctx.labels[i].one_hot);
        }
      }

      Var sweep = tape.constant(Matrix(1, 1, 0.0));
      if (!log_probs.empty()) {
        std::size_t rows = 0;
        for (auto* m : one_hots) rows += m->rows();
        Matrix targets(rows, c.segments);
        std::size_t r = 0;
        for (auto* m : one_hots) {
          for (std::size_t k = 0; k < m->rows(); ++k, ++r) {
            for (std::size_t j = 0; j < c.segments; ++j) targets(r, j) = (*m)(k, j);
          }
        }
        sweep = sweep_loss(ops::concat_rows(log_probs), targets, sweep_cfg);
      }

      Var ret = tape.constant(Matrix(1, 1, 0.0));
      if (!warmup) {
        std::vector<VideoSide> sides;
        for (auto i : batch) sides.push_back(scorer.video(data.video_for(i)));
        std::vector<Var> scores;
        scores.reserve(batch.size() * batch.size());
        for (auto& s : states) {
          for (auto& v : sides) scores.push_back(scorer.score(s, v));
        }
        Var sim = ops::stack_scalars(scores, batch.size(), batch.size());
        ret = infonce_from_similarity(sim, tape.leaf(model.log_temperature), c.symmetric_infonce);
      }
      Var total = total_loss(sweep, ret);
      if (!std::isfinite(total.scalar())) {
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(b) + " [" + batch_ids(data, batch) +
                                 "]: sweep=" + std::to_string(sweep.scalar()) + " ret=" + std::to_string(ret.scalar()));
      }
      if (first) {
        report.initial_loss = total.scalar();
        first = false;
      }
      stats.total += total.scalar();
      stats.sweep += sweep.scalar();
      stats.ret += ret.scalar();
      if (tape.requires_grad(total)) {
        tape.backward(total);
        clip_grad_norm(params, c.grad_clip);
        adam.step(params);
      }
    }
    const double n = static_cast<double>(batches.size());
    stats.total /= n;
    stats.sweep /= n;
    stats.ret /= n;
    stats.temperature = model.temperature();
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  return report;
}

TrainReport fit(VtcModel& model, const Dataset& data, ClusterContext* ctx_out, const EpochCallback& on_epoch) {
  if (model.config.clusterer_epochs > 0) fit_clusterer(model, data);
  ClusterContext ctx = build_cluster_context(model, data);
  TrainReport report = train(model, data, ctx, on_epoch);
  if (ctx_out) *ctx_out = std::move(ctx);
  return report;
}

std::vector<double> score_videos(VtcModel& model, const Corpus& corpus, const TextItem& query,
                                 const AugmentedSequence& sequence, const std::vector<const VideoItem*>& videos) {
  if (videos.empty()) throw DegenerateInputError("no videos to score");
  Tape tape;
  Scorer scorer(tape, model, std::nullopt);
  const TextState state = scorer.text(query, sequence, corpus);
  std::vector<double> out;
  out.reserve(videos.size());
  for (const VideoItem* v : videos) out.push_back(scorer.score(state, scorer.video(*v)).scalar());
  return out;
}

std::vector<double> coarse_scores(VtcModel& model, const TextItem& query, const std::vector<const VideoItem*>& videos) {
  if (videos.empty()) throw DegenerateInputError("no videos to score");
  Tape tape;
  Var t = model.text_encoder.encode(tape, query);
  std::vector<double> out;
  out.reserve(videos.size());
  for (const VideoItem* v : videos) {
    out.push_back(ops::cosine_similarity(t, fuse(t, tape.constant(v->frames), model.attention)).scalar());
  }
  return out;
}

std::vector<std::string> retrieve(VtcModel& model, const Corpus& corpus, const TextItem& query,
                                  const AugmentedSequence& sequence, const std::vector<const VideoItem*>& videos,
                                  std::size_t shortlist) {
  if (videos.empty()) throw DegenerateInputError("retrieve needs at least one video");
  std::vector<std::string> ids;
  for (const VideoItem* v : videos) ids.push_back(v->video_id);
  std::vector<std::string> out;
  if (shortlist == 0 || shortlist >= videos.size()) {
    for (auto i : ranking(score_videos(model, corpus, query, sequence, videos), ids)) out.push_back(ids[i]);
    return out;
  }
  const auto coarse = ranking(coarse_scores(model, query, videos), ids);
  std::vector<const VideoItem*> head;
  std::vector<std::string> head_ids;
  for (std::size_t r = 0; r < shortlist; ++r) {
    head.push_back(videos[coarse[r]]);
    head_ids.push_back(ids[coarse[r]]);
  }
  for (auto i : ranking(score_videos(model, corpus, query, sequence, head), head_ids)) out.push_back(head_ids[i]);
  for (std::size_t r = shortlist; r < coarse.size(); ++r) out.push_back(ids[coarse[r]]);
  return out;
}

std::string RetrievalRun::ranks_csv() const {
  std::ostringstream os;
  os << "query_id,video_id,rank\n";
  for (std::size_t q = 0; q < query_ids.size(); ++q) os << query_ids[q] << ',' << video_ids[q] << ',' << ranks[q] << '\n';
  return os.str();
}

RetrievalRun evaluate(VtcModel& model, const Dataset& data, const ClusterContext& ctx) {
  if (data.holdout.empty()) throw DegenerateInputError("no held-out texts to evaluate");
  std::vector<const VideoItem*> gallery;
  std::vector<std::string> gallery_ids;
  for (auto i : data.holdout) {
    gallery.push_back(&data.video_for(i));
    gallery_ids.push_back(data.video_for(i).video_id);
  }
  RetrievalRun run;
  run.similarity = Matrix(data.holdout.size(), gallery.size());
  const std::size_t shortlist = model.config.shortlist;
  for (std::size_t q = 0; q < data.holdout.size(); ++q) {
    const std::size_t i = data.holdout[q];
    const TextItem& item = data.corpus[i];
    const auto scores = score_videos(model, data.corpus, item, ctx.sequences[i], gallery);
    std::copy(scores.begin(), scores.end(), run.similarity.row(q).begin());
    std::size_t rank = 0;
    if (shortlist == 0 || shortlist >= gallery.size()) {
      rank = rank_of(scores, gallery_ids, q);
    } else {
      const auto order = retrieve(model, data.corpus, item, ctx.sequences[i], gallery, shortlist);
      rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), item.video_id) - order.begin()) + 1;
    }
    run.query_ids.push_back(item.text_id);
    run.video_ids.push_back(item.video_id);
    run.ranks.push_back(rank);
  }
  run.metrics = compute_metrics(run.ranks);
  return run;
}

std::string attention_csv(VtcModel& model, const Dataset& data, const ClusterContext& ctx, std::size_t text_index,
                          const VideoItem& video) {
  const TextItem& item = data.corpus[text_index];
  const AugmentedSequence& seq = ctx.sequences.at(text_index);
  const RunConfig& c = model.config;
  Matrix neighborhood(seq.neighbor_ids.size() + 1, c.embed_dim);
  auto put = [&](std::size_t r, const TextItem& t) {
    const Matrix e = model.text_encoder.embed(t);
    std::copy(e.data().begin(), e.data().end(), neighborhood.row(r).begin());
  };
  put(0, item);
  for (std::size_t n = 0; n < seq.neighbor_ids.size(); ++n) put(n + 1, data.corpus.at(seq.neighbor_ids[n]));
  const Matrix h = c.ablation == Ablation::random_h ? random_features(item.text_id, seq.spans.size(), c.sweeper_dim, c.seed)
                                                    : model.sweeper.infer(seq).h;
  const Matrix scores = attention_scores(video.frames, neighborhood, h, model.attention);
  std::ostringstream os;
  os << "frame," << item.text_id;
  for (const auto& id : seq.neighbor_ids) os << ',' << id;
  os << '\n';
  os.precision(9);
  for (std::size_t f = 0; f < scores.rows(); ++f) {
    os << f;
    for (std::size_t n = 0; n < scores.cols(); ++n) os << ',' << scores(f, n);
    os << '\n';
  }
  return os.str();
}

std::string sweeper_jsonl(VtcModel& model, const Dataset& data, const ClusterContext& ctx) {
  std::ostringstream os;
  for (std::size_t i = 0; i < data.corpus.size(); ++i) {
    const AugmentedSequence& seq = ctx.sequences[i];
    if (seq.neighbor_ids.empty()) continue;
    const SweeperOutput out = model.sweeper.infer(seq);
    std::vector<std::vector<double>> probs;
    for (std::size_t n = 0; n < seq.neighbor_ids.size(); ++n) probs.emplace_back(out.s.row(n).begin(), out.s.row(n).end());
    nlohmann::ordered_json j = {{"anchor", seq.anchor_id},
                                {"neighbors", seq.neighbor_ids},
                                {"jaccard", ctx.labels[i].jaccard},
                                {"label", ctx.labels[i].segment},
                                {"probs", probs}};
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace vtc
