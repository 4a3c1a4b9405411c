#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vtc/config.hpp"
#include "vtc/errors.hpp"
#include "vtc/io.hpp"
#include "vtc/model.hpp"
#include "vtc/pipeline.hpp"
#include "vtc/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
};

vtc::RunConfig load_config(const Globals& g) {
  vtc::RunConfig config = g.config_path.empty() ? vtc::RunConfig{} : vtc::RunConfig::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw vtc::ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) config.seed = *g.seed;
  config.validate();
  return config;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw vtc::Error("cannot write " + path.string());
  out << text;
}

// A checkpointed model together with the cluster state it implies for a dataset.
struct Loaded {
  vtc::VtcModel model;
  vtc::Dataset data;
  vtc::ClusterContext ctx;
};

Loaded load_model(const std::string& model_path, const std::string& data_dir, const Globals& g) {
  vtc::VtcModel model = vtc::VtcModel::from_checkpoint(vtc::read_checkpoint(model_path));
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw vtc::ConfigError("--set expects key=value, got '" + kv + "'");
    model.config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  model.config.validate();
  vtc::Dataset data = vtc::load_dataset(data_dir, model.config.frames, model.config.embed_dim);
  vtc::ClusterContext ctx = vtc::build_cluster_context(model, data);
  return {std::move(model), std::move(data), std::move(ctx)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster-augmented text-to-video retrieval"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the configured seed");
  app.add_option("--out-dir", g.out_dir, "directory for outputs");
  app.add_option("--set", g.overrides, "override a config key (key=value), repeatable");

  vtc::SyntheticConfig syn;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic topic corpus");
  gen->add_option("--topics", syn.topics);
  gen->add_option("--texts-per-topic", syn.texts_per_topic);
  gen->add_option("--frames", syn.frames);
  gen->add_option("--noise", syn.noise);
  gen->add_option("--dim", syn.embed_dim);
  gen->add_option("--pool-size", syn.pool_size);
  gen->add_option("--text-length", syn.text_length);
  gen->add_option("--zipf", syn.zipf_exponent);
  gen->add_option("--jitter", syn.frame_jitter);
  gen->add_option("--holdout", syn.holdout_per_topic, "held-out texts per topic");

  std::string data_dir;
  std::string model_path;
  auto* tclust = app.add_subcommand("train-clusterer", "train the clusterer and write text embeddings");
  tclust->add_option("--data", data_dir)->required();

  std::string embeddings_path;
  auto* bindex = app.add_subcommand("build-index", "K nearest neighbor clusters over an embeddings file");
  bindex->add_option("--embeddings", embeddings_path, "JSONL from train-clusterer")->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "train the full model");
  train->add_option("--data", data_dir)->required();

  auto* eval = app.add_subcommand("evaluate", "rank held-out videos for held-out texts");
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--model", model_path)->required();

  std::string query;
  std::size_t top = 10;
  auto* retr = app.add_subcommand("retrieve", "rank videos for a free-text query");
  retr->add_option("--data", data_dir)->required();
  retr->add_option("--model", model_path)->required();
  retr->add_option("--query", query)->required();
  retr->add_option("--top", top);

  std::string text_id;
  auto* dattn = app.add_subcommand("dump-attention", "VTC-Att frame-to-neighbor weights as CSV");
  dattn->add_option("--data", data_dir)->required();
  dattn->add_option("--model", model_path)->required();
  dattn->add_option("--text-id", text_id)->required();
  std::string video_id;
  dattn->add_option("--video-id", video_id, "defaults to the text's paired video");

  auto* dsweep = app.add_subcommand("dump-sweeper", "Sweeper predictions and labels as JSON lines");
  dsweep->add_option("--data", data_dir)->required();
  dsweep->add_option("--model", model_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (g.seed) syn.seed = *g.seed;
      const auto corpus = vtc::gen_synthetic(syn);
      vtc::write_synthetic(g.out_dir, corpus);
      std::cerr << "wrote " << corpus.texts.size() << " texts to " << g.out_dir << '\n';
    } else if (*tclust) {
      const auto config = load_config(g);
      vtc::VtcModel model(config);
      const auto data = vtc::load_dataset(data_dir, config.frames, config.embed_dim);
      const auto result = vtc::fit_clusterer(model, data);
      for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        std::cerr << "clusterer epoch " << e + 1 << " loss " << result.epoch_losses[e] << '\n';
      }
      std::vector<vtc::EmbeddingRecord> records;
      for (std::size_t i = 0; i < data.corpus.size(); ++i) {
        records.push_back({data.corpus[i].text_id, model.clusterer_encoder.embed(data.corpus[i])});
      }
      vtc::write_embeddings_jsonl(out_path(g, "clusterer_embeddings.jsonl"), records);
      vtc::write_checkpoint(out_path(g, "clusterer.vtcp"), model.checkpoint());
    } else if (*bindex) {
      const auto config = load_config(g);
      const auto records = vtc::read_embeddings_jsonl(embeddings_path);
      if (records.empty()) throw vtc::DegenerateInputError("no embeddings in " + embeddings_path);
      std::vector<std::string> ids;
      vtc::Matrix vectors(records.size(), records.front().vectors.cols());
      for (std::size_t r = 0; r < records.size(); ++r) {
        const vtc::Matrix& v = records[r].vectors;
        if (v.cols() != vectors.cols()) throw vtc::DimensionError("embedding '" + records[r].id + "' has width " +
                                                                  std::to_string(v.cols()));
        // multi-vector records are averaged
        for (std::size_t i = 0; i < v.rows(); ++i) {
          for (std::size_t c = 0; c < v.cols(); ++c) vectors(r, c) += v(i, c) / static_cast<double>(v.rows());
        }
        ids.push_back(records[r].id);
      }
      const vtc::VectorIndex index(std::move(ids), std::move(vectors), config.index_mode, config.lsh_params());
      std::ofstream out(out_path(g, "clusters.jsonl"), std::ios::binary);
      for (const auto& c : vtc::build_clusters(index, config.k)) {
        out << nlohmann::ordered_json{{"anchor", c.anchor_id}, {"neighbors", c.neighbor_ids}}.dump() << '\n';
      }
    } else if (*train) {
      vtc::VtcModel model(load_config(g));
      const auto data = vtc::load_dataset(data_dir, model.config.frames, model.config.embed_dim);
      const auto start = std::chrono::steady_clock::now();
      std::ofstream log(out_path(g, "train_log.jsonl"), std::ios::binary);
      vtc::fit(model, data, nullptr, [&](std::size_t epoch, const vtc::EpochStats& s) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << "epoch " << epoch + 1 << " total " << s.total << " sweep " << s.sweep << " ret " << s.ret
                  << " lambda " << s.temperature << " (" << secs << " s)\n";
        log << "{\"epoch\":" << epoch + 1 << ",\"total\":" << s.total << ",\"sweep\":" << s.sweep
            << ",\"ret\":" << s.ret << ",\"lambda\":" << s.temperature << "}\n";
      });
      vtc::write_checkpoint(out_path(g, "model.vtcp"), model.checkpoint());
    } else if (*eval) {
      auto l = load_model(model_path, data_dir, g);
      const auto run = vtc::evaluate(l.model, l.data, l.ctx);
      write_text(out_path(g, "ranks.csv"), run.ranks_csv());
      std::cout << run.metrics.to_json() << '\n';
    } else if (*retr) {
      auto l = load_model(model_path, data_dir, g);
      const vtc::TextItem item = vtc::make_text_item("query", query, "");
      const auto qc = vtc::cluster_query(l.model, l.ctx, l.data.corpus, item);
      std::vector<const vtc::VideoItem*> videos;
      std::set<std::string> seen;
      for (const auto& v : l.data.videos) {
        if (seen.insert(v.video_id).second) videos.push_back(&v);
      }
      const auto ranked = vtc::retrieve(l.model, l.data.corpus, item, qc.sequence, videos, l.model.config.shortlist);
      for (std::size_t r = 0; r < std::min(top, ranked.size()); ++r) std::cout << r + 1 << '\t' << ranked[r] << '\n';
    } else if (*dattn) {
      auto l = load_model(model_path, data_dir, g);
      const std::size_t ti = l.data.corpus.index_of(text_id);
      const vtc::VideoItem* video = &l.data.video_for(ti);
      if (!video_id.empty()) {
        const auto it = std::find_if(l.data.videos.begin(), l.data.videos.end(),
                                     [&](const vtc::VideoItem& v) { return v.video_id == video_id; });
        if (it == l.data.videos.end()) throw vtc::Error("unknown video id '" + video_id + "'");
        video = &*it;
      }
      std::cout << vtc::attention_csv(l.model, l.data, l.ctx, ti, *video);
    } else if (*dsweep) {
      auto l = load_model(model_path, data_dir, g);
      write_text(out_path(g, "sweeper.jsonl"), vtc::sweeper_jsonl(l.model, l.data, l.ctx));
    }
  } catch (const vtc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
