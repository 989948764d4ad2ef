// cbseq: channel-level behavior-sequence traffic classification pipeline.
// Each subcommand runs one stage; `pipeline` chains them all. Stages
// communicate only through files, so any stage can be re-run alone.

#include <CLI11.hpp>
#include <array>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbseq/artifacts.hpp"
#include "cbseq/detector.hpp"
#include "cbseq/embedding.hpp"
#include "cbseq/eval.hpp"
#include "cbseq/ingest.hpp"
#include "cbseq/msformer.hpp"
#include "cbseq/pipeline.hpp"
#include "cbseq/synthgen.hpp"

namespace {

using namespace cbseq;

std::uint64_t env_seed(std::uint64_t fallback) {
  if (const char* env = std::getenv("CBSEQ_SEED")) return std::stoull(env);
  return fallback;
}

std::array<EmbeddingModel, 4> load_embeddings(const std::string& spec) {
  std::vector<std::string> paths;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    paths.push_back(spec.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (paths.size() != 4)
    throw Error("detect",
                "--emb needs four files: pn.vec,iat.vec,sp.vec,dp.vec");
  return {load_embedding(paths[0], SeqType::PN),
          load_embedding(paths[1], SeqType::IAT),
          load_embedding(paths[2], SeqType::SP),
          load_embedding(paths[3], SeqType::DP)};
}

int run(int argc, char** argv) {
  CLI::App app{"channel-level behavior sequence malware traffic detection"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "read pcap or flow JSONL and "
                                              "assemble bidirectional flows");
  std::string in_pcap, in_jsonl, ingest_out;
  double idle_timeout = 120.0;
  auto* pcap_opt = ingest->add_option("--pcap", in_pcap, "pcap capture file");
  auto* jsonl_opt =
      ingest->add_option("--jsonl", in_jsonl, "canonical flow JSONL file");
  ingest->add_option("--out", ingest_out, "output flows.jsonl")->required();
  ingest->add_option("--idle-timeout", idle_timeout,
                     "flow idle timeout in seconds");
  pcap_opt->excludes(jsonl_opt);

  // channels
  auto* channels = app.add_subcommand(
      "channels", "window flows and aggregate per-IP-pair channels");
  std::string ch_flows, ch_out;
  double window = kDayWindowSeconds;
  channels->add_option("--flows", ch_flows, "flows.jsonl")->required();
  channels->add_option("--out", ch_out, "output channels.jsonl")->required();
  channels->add_option("--window", window, "window length in seconds");

  // cluster
  auto* cluster = app.add_subcommand(
      "cluster", "group similar channels with DBSCAN per time slice");
  std::string cl_channels, cl_out;
  double eps = kDefaultEps, slice = kDefaultSliceSeconds;
  int minpts = kDefaultMinPts;
  cluster->add_option("--channels", cl_channels, "channels.jsonl")->required();
  cluster->add_option("--eps", eps, "DBSCAN eps in scaled feature space");
  cluster->add_option("--minpts", minpts, "DBSCAN minPts");
  cluster->add_option("--slice", slice, "time slice in seconds");
  cluster->add_option("--out", cl_out, "output clusters.jsonl")->required();

  // sequences
  auto* sequences = app.add_subcommand(
      "sequences", "fuse member channel sequences into behavior sequences");
  std::string sq_clusters, sq_out;
  sequences->add_option("--clusters", sq_clusters, "clusters.jsonl")
      ->required();
  sequences->add_option("--out", sq_out, "output behseq.jsonl")->required();

  // embed-train
  auto* embed = app.add_subcommand(
      "embed-train", "train a CBOW token embedding for one sequence type");
  std::string em_behseq, em_type, em_out;
  CbowConfig em_cfg;
  embed->add_option("--behseq", em_behseq, "behseq.jsonl")->required();
  embed->add_option("--type", em_type, "pn|iat|sp|dp")->required();
  embed->add_option("--dim", em_cfg.dim, "embedding dimension");
  embed->add_option("--window", em_cfg.window, "context window");
  embed->add_option("--negatives", em_cfg.negatives, "negative samples");
  embed->add_option("--epochs", em_cfg.epochs, "training epochs");
  embed->add_option("--lr", em_cfg.lr, "initial learning rate");
  embed->add_option("--min-count", em_cfg.min_count, "minimum token count");
  embed->add_option("--seed", em_cfg.seed, "training seed");
  embed->add_option("--out", em_out, "output .vec file")->required();

  // train
  auto* train = app.add_subcommand("train",
                                   "train the four-encoder classifier");
  std::string tr_behseq, tr_emb, tr_out;
  MsfConfig tr_cfg;
  bool no_posenc = false;
  bool dff_set = false;
  train->add_option("--behseq", tr_behseq, "labeled behseq.jsonl")->required();
  train->add_option("--emb", tr_emb, "pn.vec,iat.vec,sp.vec,dp.vec")
      ->required();
  train->add_option("--out", tr_out, "output model.msf")->required();
  train->add_option("--d-model", tr_cfg.d_model, "model width");
  train->add_option("--blocks", tr_cfg.blocks, "encoder blocks");
  train->add_option("--heads", tr_cfg.heads, "attention heads");
  train->add_option("--d-ff", tr_cfg.d_ff, "feed-forward width")
      ->each([&](const std::string&) { dff_set = true; });
  train->add_option("--max-len", tr_cfg.max_len, "maximum sequence length");
  train->add_option("--lr", tr_cfg.lr, "learning rate");
  train->add_option("--batch", tr_cfg.batch, "batch size");
  train->add_option("--epochs", tr_cfg.epochs, "training epochs");
  train->add_option("--seed", tr_cfg.seed, "training seed");
  train->add_flag("--no-posenc", no_posenc,
                  "disable sinusoidal positional encoding");

  // detect
  auto* detect_cmd = app.add_subcommand(
      "detect", "score behavior sequences with a trained model");
  std::string dt_model, dt_behseq, dt_emb, dt_out;
  double dt_threshold = 0.5;
  detect_cmd->add_option("--model", dt_model, "model.msf")->required();
  detect_cmd->add_option("--behseq", dt_behseq, "behseq.jsonl")->required();
  detect_cmd->add_option("--emb", dt_emb, "pn.vec,iat.vec,sp.vec,dp.vec")
      ->required();
  detect_cmd->add_option("--out", dt_out, "output results.csv")->required();
  detect_cmd->add_option("--threshold", dt_threshold, "malware threshold");

  // eval
  auto* eval_cmd = app.add_subcommand(
      "eval", "run the known/unknown detection experiment protocols");
  std::string ev_mode, ev_config, ev_out, ev_roc;
  eval_cmd->add_option("--mode", ev_mode, "known|unknown");
  eval_cmd->add_option("--config", ev_config, "eval TOML config")->required();
  eval_cmd->add_option("--out", ev_out, "output metrics.csv")->required();
  eval_cmd->add_option("--roc", ev_roc, "output roc.csv")->required();

  // synth
  auto* synth_cmd = app.add_subcommand(
      "synth", "generate deterministic synthetic labeled traffic");
  std::string sy_scenario, sy_out, sy_pcap, sy_meta;
  synth_cmd->add_option("--scenario", sy_scenario, "scenario TOML spec")
      ->required();
  synth_cmd->add_option("--out", sy_out, "output flows.jsonl")->required();
  synth_cmd->add_option("--pcap", sy_pcap, "also write a pcap capture");
  synth_cmd->add_option("--meta", sy_meta, "ground-truth metadata JSON");

  // pipeline
  auto* pipe_cmd = app.add_subcommand(
      "pipeline", "run every stage end to end from one config");
  std::string pl_config;
  pipe_cmd->add_option("--config", pl_config, "pipeline TOML config")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) {
      nlohmann::ordered_json err{{"error", e.what()}, {"stage", "cli"}};
      std::cerr << err.dump() << '\n';
    }
    return app.exit(e);
  }

  if (ingest->parsed()) {
    IngestStats st;
    std::vector<FlowRecord> flows;
    if (!in_pcap.empty()) {
      auto packets = read_pcap(in_pcap, &st);
      flows = assemble_flows(packets, idle_timeout, &st);
    } else if (!in_jsonl.empty()) {
      flows = read_flow_jsonl(in_jsonl);
    } else {
      throw Error("ingest", "one of --pcap or --jsonl is required");
    }
    write_flow_jsonl(flows, ingest_out);
    std::cout << "flows=" << flows.size()
              << " skipped_frames=" << st.skipped_frames
              << " rejected_out_of_order=" << st.rejected_out_of_order
              << (st.truncated ? " truncated=1" : "") << '\n';
  } else if (channels->parsed()) {
    auto flows = read_flow_jsonl(ch_flows);
    auto arts = build_channel_artifacts(flows, window);
    write_channel_jsonl(arts, ch_out);
    std::cout << "channels=" << arts.size() << '\n';
  } else if (cluster->parsed()) {
    auto arts = read_channel_jsonl(cl_channels);
    auto clusters = build_cluster_artifacts(arts, eps, minpts, slice);
    write_cluster_jsonl(clusters, cl_out);
    std::cout << "clusters=" << clusters.size() << '\n';
  } else if (sequences->parsed()) {
    auto clusters = read_cluster_jsonl(sq_clusters);
    auto seqs = build_behseq_artifacts(clusters);
    write_behseq_jsonl(seqs, sq_out);
    std::cout << "sequences=" << seqs.size() << '\n';
  } else if (embed->parsed()) {
    em_cfg.seed = env_seed(em_cfg.seed);
    auto seqs = read_behseq_jsonl(em_behseq);
    SeqType type = parse_seq_type(em_type);
    std::vector<std::vector<std::uint32_t>> corpus;
    corpus.reserve(seqs.size());
    for (const auto& bs : seqs) corpus.push_back(tokens_of(bs.tokens, type));
    auto model = train_cbow(corpus, type, em_cfg);
    save_embedding(model, em_out);
    std::cout << "vocab=" << model.vocab_size() << " dim=" << model.dim
              << " final_loss=" << format_double(model.epoch_loss.back())
              << '\n';
  } else if (train->parsed()) {
    tr_cfg.seed = env_seed(tr_cfg.seed);
    tr_cfg.posenc = !no_posenc;
    auto seqs = read_behseq_jsonl(tr_behseq);
    auto embeddings = load_embeddings(tr_emb);
    std::array<const EmbeddingModel*, 4> models{
        &embeddings[0], &embeddings[1], &embeddings[2], &embeddings[3]};
    tr_cfg.emb_dim = embeddings[0].dim;
    if (!dff_set) tr_cfg.d_ff = 4 * tr_cfg.d_model;
    auto model = msformer_init<float>(tr_cfg);
    auto dataset = make_dataset(models, seqs, tr_cfg.max_len);
    auto losses = msformer_train(model, dataset);
    save_msformer(model, tr_out);
    std::cout << "examples=" << dataset.size()
              << " final_loss=" << format_double(losses.back()) << '\n';
  } else if (detect_cmd->parsed()) {
    auto model = load_msformer(dt_model);
    auto embeddings = load_embeddings(dt_emb);
    std::array<const EmbeddingModel*, 4> models{
        &embeddings[0], &embeddings[1], &embeddings[2], &embeddings[3]};
    auto seqs = read_behseq_jsonl(dt_behseq);
    auto results = detect(model, models, seqs, dt_threshold);
    write_detections_csv(results, dt_out);
    std::size_t malware = 0;
    for (const auto& r : results) malware += r.predicted_malware ? 1 : 0;
    std::cout << "sequences=" << results.size() << " malware=" << malware
              << '\n';
  } else if (eval_cmd->parsed()) {
    auto cfg = eval_config_from_file(ev_config);
    if (!ev_mode.empty()) {
      if (ev_mode != "known" && ev_mode != "unknown")
        throw Error("eval", "--mode must be known or unknown");
      cfg.mode = ev_mode;
    }
    auto report = run_eval(cfg, ev_out, ev_roc);
    std::cout << "mode=" << cfg.mode << " runs=" << cfg.eval.repeats
              << " mean_tpr=" << format_double(report.mean_tpr)
              << " mean_fpr=" << format_double(report.mean_fpr)
              << " mean_auc=" << format_double(report.mean_auc) << '\n';
  } else if (synth_cmd->parsed()) {
    auto specs = synth::scenarios_from_toml_file(sy_scenario);
    synth::SynthResult result;
    if (!sy_pcap.empty()) {
      if (specs.size() != 1)
        throw Error("synth", "--pcap supports a single scenario spec");
      result = synth::generate_pcap(specs[0], sy_pcap);
    } else {
      result = synth::generate_corpus(specs);
    }
    write_flow_jsonl(result.flows, sy_out);
    if (!sy_meta.empty()) synth::write_truth_json(result.truth, sy_meta);
    std::cout << "flows=" << result.flows.size()
              << " channels=" << result.truth.channels.size() << '\n';
  } else if (pipe_cmd->parsed()) {
    auto cfg = pipeline_config_from_file(pl_config);
    auto art = run_pipeline(cfg);
    std::cout << "manifest=" << art.manifest << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cbseq::Error& e) {
    nlohmann::ordered_json err{{"error", e.what()},
                               {"stage", e.stage().empty() ? "cbseq"
                                                           : e.stage()}};
    std::cerr << err.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json err{{"error", e.what()}, {"stage", "cbseq"}};
    std::cerr << err.dump() << '\n';
    return 1;
  }
}
