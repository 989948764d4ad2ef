#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbseq/artifacts.hpp"
#include "cbseq/common.hpp"
#include "cbseq/detector.hpp"
#include "cbseq/embedding.hpp"
#include "cbseq/eval.hpp"
#include "cbseq/ingest.hpp"
#include "cbseq/msformer.hpp"
#include "cbseq/toml.hpp"

namespace cbseq {

/// Every stage parameter in one document. Defaults reproduce the
/// documented reference configuration (24 h windows, eps 1, minPts 1,
/// 4 h slices, dim 100, 6 blocks, 8 heads, lr 1e-5, batch 8, 20 epochs).
struct PipelineConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "artifacts";
  std::string pcap;   // exactly one of pcap/jsonl
  std::string jsonl;
  double idle_timeout = 120.0;
  double window = kDayWindowSeconds;
  double eps = kDefaultEps;
  int minpts = kDefaultMinPts;
  double slice = kDefaultSliceSeconds;
  CbowConfig embedding;
  MsfConfig model;
  EvalConfig eval;
};

namespace pipeline_detail {

inline void reject_unknown(const toml::Table& t,
                           const std::set<std::string>& known,
                           const std::string& where) {
  for (const auto& [key, v] : t.values)
    if (!known.count(key))
      throw Error("config", "unknown key '" + key + "' in " + where);
}

inline CbowConfig embedding_from_toml(const toml::Table& t,
                                      std::uint64_t seed) {
  reject_unknown(t, {"dim", "window", "negatives", "epochs", "lr",
                     "min_count", "seed"},
                 "[embedding]");
  CbowConfig cfg;
  cfg.dim = static_cast<int>(t.get_int("dim", 100));
  cfg.window = static_cast<int>(t.get_int("window", 5));
  cfg.negatives = static_cast<int>(t.get_int("negatives", 5));
  cfg.epochs = static_cast<int>(t.get_int("epochs", 5));
  cfg.lr = t.get_double("lr", 0.025);
  cfg.min_count = static_cast<int>(t.get_int("min_count", 1));
  cfg.seed = static_cast<std::uint64_t>(
      t.get_int("seed", static_cast<std::int64_t>(seed)));
  return cfg;
}

inline MsfConfig model_from_toml(const toml::Table& t, int emb_dim,
                                 std::uint64_t seed) {
  reject_unknown(t, {"d_model", "blocks", "heads", "d_ff", "max_len",
                     "posenc", "lr", "batch", "epochs", "seed"},
                 "[model]");
  MsfConfig cfg;
  cfg.emb_dim = emb_dim;
  cfg.d_model = static_cast<int>(t.get_int("d_model", 128));
  cfg.blocks = static_cast<int>(t.get_int("blocks", 6));
  cfg.heads = static_cast<int>(t.get_int("heads", 8));
  cfg.d_ff = static_cast<int>(t.get_int("d_ff", 4 * cfg.d_model));
  cfg.max_len = static_cast<int>(t.get_int("max_len", 16));
  cfg.posenc = t.get_bool("posenc", true);
  cfg.lr = t.get_double("lr", 1e-5);
  cfg.batch = static_cast<int>(t.get_int("batch", 8));
  cfg.epochs = static_cast<int>(t.get_int("epochs", 20));
  cfg.seed = static_cast<std::uint64_t>(
      t.get_int("seed", static_cast<std::int64_t>(seed)));
  cfg.validate();
  return cfg;
}

inline std::uint64_t seed_with_env(std::uint64_t from_config) {
  if (const char* env = std::getenv("CBSEQ_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Error("config", "CBSEQ_SEED is not an integer");
    }
  }
  return from_config;
}

}  // namespace pipeline_detail

inline PipelineConfig pipeline_config_from_toml(const toml::Table& root) {
  using namespace pipeline_detail;
  reject_unknown(root, {"seed", "out_dir"}, "top level");
  for (const auto& [name, t] : root.tables)
    if (name != "ingest" && name != "channels" && name != "cluster" &&
        name != "embedding" && name != "model" && name != "eval")
      throw Error("config", "unknown table [" + name + "]");
  if (!root.table_arrays.empty())
    throw Error("config", "unexpected table array in pipeline config");

  PipelineConfig cfg;
  cfg.seed = seed_with_env(static_cast<std::uint64_t>(
      root.get_int("seed", 42)));
  cfg.out_dir = root.get_string("out_dir", "artifacts");

  if (auto it = root.tables.find("ingest"); it != root.tables.end()) {
    reject_unknown(it->second, {"pcap", "jsonl", "idle_timeout"}, "[ingest]");
    cfg.pcap = it->second.get_string("pcap", "");
    cfg.jsonl = it->second.get_string("jsonl", "");
    cfg.idle_timeout = it->second.get_double("idle_timeout", 120.0);
  }
  if (auto it = root.tables.find("channels"); it != root.tables.end()) {
    reject_unknown(it->second, {"window"}, "[channels]");
    cfg.window = it->second.get_double("window", kDayWindowSeconds);
  }
  if (auto it = root.tables.find("cluster"); it != root.tables.end()) {
    reject_unknown(it->second, {"eps", "minpts", "slice"}, "[cluster]");
    cfg.eps = it->second.get_double("eps", kDefaultEps);
    cfg.minpts = static_cast<int>(it->second.get_int("minpts",
                                                     kDefaultMinPts));
    cfg.slice = it->second.get_double("slice", kDefaultSliceSeconds);
  }
  {
    toml::Table empty;
    const toml::Table* et = &empty;
    if (auto it = root.tables.find("embedding"); it != root.tables.end())
      et = &it->second;
    cfg.embedding = embedding_from_toml(*et, cfg.seed);
    const toml::Table* mt = &empty;
    if (auto it = root.tables.find("model"); it != root.tables.end())
      mt = &it->second;
    cfg.model = model_from_toml(*mt, cfg.embedding.dim, cfg.seed);
  }
  if (auto it = root.tables.find("eval"); it != root.tables.end()) {
    reject_unknown(it->second, {"folds", "repeats", "threshold"}, "[eval]");
    cfg.eval.folds = static_cast<int>(it->second.get_int("folds", 5));
    cfg.eval.repeats = static_cast<int>(it->second.get_int("repeats", 10));
    cfg.eval.threshold = it->second.get_double("threshold", 0.5);
  }
  cfg.eval.seed = cfg.seed;
  cfg.eval.embedding = cfg.embedding;
  cfg.eval.model = cfg.model;
  return cfg;
}

inline PipelineConfig pipeline_config_from_file(const std::string& path) {
  return pipeline_config_from_toml(toml::parse_file(path));
}

struct PipelineArtifacts {
  std::string flows, channels, clusters, behseq;
  std::array<std::string, 4> vecs;
  std::string model, metrics, roc, manifest;
};

/// Runs ingest, channels, cluster, sequences, embed-train, train and
/// eval back to back, persisting every intermediate and a manifest with
/// content hashes. Any stage failure aborts with the stage name; files
/// written before the failure stay on disk.
inline PipelineArtifacts run_pipeline(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  auto out = [&](const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
  };
  PipelineArtifacts art;
  art.flows = out("flows.jsonl");
  art.channels = out("channels.jsonl");
  art.clusters = out("clusters.jsonl");
  art.behseq = out("behseq.jsonl");
  art.vecs = {out("pn.vec"), out("iat.vec"), out("sp.vec"), out("dp.vec")};
  art.model = out("model.msf");
  art.metrics = out("metrics.csv");
  art.roc = out("roc.csv");
  art.manifest = out("manifest.json");

  // ingest
  std::vector<FlowRecord> flows;
  if (!cfg.pcap.empty() && !cfg.jsonl.empty())
    throw Error("ingest", "configure either pcap or jsonl input, not both");
  if (!cfg.pcap.empty()) {
    IngestStats st;
    auto packets = read_pcap(cfg.pcap, &st);
    flows = assemble_flows(packets, cfg.idle_timeout, &st);
  } else if (!cfg.jsonl.empty()) {
    flows = read_flow_jsonl(cfg.jsonl);
  } else {
    throw Error("ingest", "no input configured ([ingest] pcap or jsonl)");
  }
  write_flow_jsonl(flows, art.flows);

  // channels
  auto channels = build_channel_artifacts(flows, cfg.window);
  write_channel_jsonl(channels, art.channels);

  // cluster
  auto clusters =
      build_cluster_artifacts(channels, cfg.eps, cfg.minpts, cfg.slice);
  write_cluster_jsonl(clusters, art.clusters);

  // sequences
  auto behseq = build_behseq_artifacts(clusters);
  write_behseq_jsonl(behseq, art.behseq);

  // embed-train (per sequence type, on the whole corpus)
  std::array<EmbeddingModel, 4> embeddings;
  for (int s = 0; s < 4; ++s) {
    std::vector<std::vector<std::uint32_t>> corpus;
    corpus.reserve(behseq.size());
    for (const auto& bs : behseq)
      corpus.push_back(tokens_of(bs.tokens, static_cast<SeqType>(s)));
    CbowConfig ecfg = cfg.embedding;
    ecfg.seed = Rng(cfg.seed).substream(0xE000 + static_cast<std::uint64_t>(s))
                    .next_u64();
    embeddings[static_cast<std::size_t>(s)] =
        train_cbow(corpus, static_cast<SeqType>(s), ecfg);
    save_embedding(embeddings[static_cast<std::size_t>(s)],
                   art.vecs[static_cast<std::size_t>(s)]);
  }
  std::array<const EmbeddingModel*, 4> models{&embeddings[0], &embeddings[1],
                                              &embeddings[2], &embeddings[3]};

  // train on the full labeled corpus
  MsfConfig mcfg = cfg.model;
  mcfg.emb_dim = cfg.embedding.dim;
  auto msf = msformer_init<float>(mcfg);
  auto dataset = make_dataset(models, behseq, mcfg.max_len);
  msformer_train(msf, dataset);
  save_msformer(msf, art.model);

  // eval (undersampled k-fold, repeated)
  EvalConfig ecfg = cfg.eval;
  ecfg.model.emb_dim = ecfg.embedding.dim;
  auto report = repeat_eval(
      ecfg.repeats, cfg.seed,
      [&](int run, std::uint64_t seed, std::vector<double>& ps,
          std::vector<int>& pl) {
        return kfold_eval(behseq, ecfg, seed, run, &ps, &pl);
      });
  write_metrics_csv(report, art.metrics);
  write_roc_csv(roc_curve(report.pooled_scores, report.pooled_labels),
                art.roc);

  // manifest
  nlohmann::ordered_json manifest;
  manifest["tool"] = "cbseq";
  manifest["version"] = std::string(kVersion);
  manifest["seed"] = cfg.seed;
  manifest["stages"] = {
      {"ingest", {{"idle_timeout", cfg.idle_timeout}}},
      {"channels", {{"window", cfg.window}}},
      {"cluster",
       {{"eps", cfg.eps}, {"minpts", cfg.minpts}, {"slice", cfg.slice}}},
      {"embedding", {{"dim", cfg.embedding.dim}}},
      {"model",
       {{"d_model", cfg.model.d_model},
        {"blocks", cfg.model.blocks},
        {"heads", cfg.model.heads},
        {"epochs", cfg.model.epochs}}},
      {"eval", {{"folds", cfg.eval.folds}, {"repeats", cfg.eval.repeats}}}};
  auto file_entry = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return nlohmann::ordered_json{{"path", path},
                                  {"fnv1a64", to_hex(fnv1a64(ss.str()))}};
  };
  manifest["artifacts"] = nlohmann::ordered_json::array();
  for (const std::string& p :
       {art.flows, art.channels, art.clusters, art.behseq, art.vecs[0],
        art.vecs[1], art.vecs[2], art.vecs[3], art.model, art.metrics,
        art.roc})
    manifest["artifacts"].push_back(file_entry(p));
  std::ofstream mf(art.manifest, std::ios::binary);
  if (!mf) throw Error("pipeline", "cannot write " + art.manifest);
  mf << manifest.dump(2) << '\n';
  return art;
}

// --- evaluation configs (cbseq eval) ----------------------------------------

struct EvalFileConfig {
  std::string mode = "known";  // known | unknown
  EvalConfig eval;
  std::uint64_t seed = 42;
  // known mode
  std::string behseq;
  // unknown mode
  std::string benign;
  std::vector<std::string> train_malware;
  std::vector<std::string> train_families;
  std::string test_malware;
  std::string test_family;
};

inline EvalFileConfig eval_config_from_file(const std::string& path) {
  using namespace pipeline_detail;
  toml::Table root = toml::parse_file(path);
  reject_unknown(root, {"mode", "seed", "folds", "repeats", "threshold"},
                 "top level");
  EvalFileConfig cfg;
  cfg.mode = root.get_string("mode", "known");
  if (cfg.mode != "known" && cfg.mode != "unknown")
    throw Error("eval", "mode must be known or unknown");
  cfg.seed = seed_with_env(
      static_cast<std::uint64_t>(root.get_int("seed", 42)));
  cfg.eval.folds = static_cast<int>(root.get_int("folds", 5));
  cfg.eval.repeats = static_cast<int>(root.get_int("repeats", 10));
  cfg.eval.threshold = root.get_double("threshold", 0.5);
  cfg.eval.seed = cfg.seed;

  toml::Table empty;
  const toml::Table* et = &empty;
  if (auto it = root.tables.find("embedding"); it != root.tables.end())
    et = &it->second;
  cfg.eval.embedding = embedding_from_toml(*et, cfg.seed);
  const toml::Table* mt = &empty;
  if (auto it = root.tables.find("model"); it != root.tables.end())
    mt = &it->second;
  cfg.eval.model = model_from_toml(*mt, cfg.eval.embedding.dim, cfg.seed);

  auto data_it = root.tables.find("data");
  if (data_it == root.tables.end())
    throw Error("eval", "eval config needs a [data] table");
  const toml::Table& data = data_it->second;
  reject_unknown(data,
                 {"behseq", "benign", "train_malware", "train_families",
                  "test_malware", "test_family"},
                 "[data]");
  for (const auto& [name, t] : root.tables)
    if (name != "data" && name != "embedding" && name != "model")
      throw Error("eval", "unknown table [" + name + "]");

  if (cfg.mode == "known") {
    cfg.behseq = data.get_string("behseq", "");
    if (cfg.behseq.empty())
      throw Error("eval", "known mode needs [data] behseq");
  } else {
    cfg.benign = data.get_string("benign", "");
    cfg.test_malware = data.get_string("test_malware", "");
    cfg.test_family = data.get_string("test_family", "");
    if (data.has("train_malware"))
      for (const auto& v : data.at("train_malware").as_array())
        cfg.train_malware.push_back(v.as_string());
    if (data.has("train_families"))
      for (const auto& v : data.at("train_families").as_array())
        cfg.train_families.push_back(v.as_string());
    if (cfg.benign.empty() || cfg.test_malware.empty() ||
        cfg.train_malware.empty())
      throw Error("eval",
                  "unknown mode needs [data] benign, train_malware and "
                  "test_malware");
    if (cfg.train_families.size() != cfg.train_malware.size())
      throw Error("eval",
                  "train_families must parallel train_malware entries");
    if (cfg.test_family.empty())
      throw Error("eval", "unknown mode needs [data] test_family");
  }
  return cfg;
}

/// Runs the configured evaluation protocol and writes metrics.csv and
/// roc.csv (the ROC pools all held-out scores across runs).
inline EvalReport run_eval(const EvalFileConfig& cfg,
                           const std::string& metrics_path,
                           const std::string& roc_path) {
  EvalReport report;
  if (cfg.mode == "known") {
    auto seqs = read_behseq_jsonl(cfg.behseq);
    report = repeat_eval(cfg.eval.repeats, cfg.seed,
                         [&](int run, std::uint64_t seed,
                             std::vector<double>& ps, std::vector<int>& pl) {
                           return kfold_eval(seqs, cfg.eval, seed, run, &ps,
                                             &pl);
                         });
  } else {
    std::vector<BehaviorSeqArtifact> train_mal;
    std::set<std::string> families(cfg.train_families.begin(),
                                   cfg.train_families.end());
    for (std::size_t i = 0; i < cfg.train_malware.size(); ++i) {
      auto part = read_behseq_jsonl(cfg.train_malware[i]);
      for (auto& bs : part) {
        if (bs.family.empty()) bs.family = cfg.train_families[i];
        train_mal.push_back(std::move(bs));
      }
    }
    auto benign = read_behseq_jsonl(cfg.benign);
    auto test_mal = read_behseq_jsonl(cfg.test_malware);
    for (auto& bs : test_mal)
      if (bs.family.empty()) bs.family = cfg.test_family;
    report = repeat_eval(
        cfg.eval.repeats, cfg.seed,
        [&](int run, std::uint64_t seed, std::vector<double>& ps,
            std::vector<int>& pl) {
          return std::vector<RunMetrics>{
              unknown_protocol(train_mal, benign, test_mal, families,
                               cfg.test_family, cfg.eval, seed, run, &ps,
                               &pl)};
        });
  }
  write_metrics_csv(report, metrics_path);
  write_roc_csv(roc_curve(report.pooled_scores, report.pooled_labels),
                roc_path);
  return report;
}

}  // namespace cbseq
