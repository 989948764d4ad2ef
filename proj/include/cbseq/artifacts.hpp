#pragma once

// Stage interchange records. Each pipeline stage communicates with the
// next only through these JSONL files, so every stage can be re-run and
// inspected on its own. Channel lines carry the abstract features and
// the four token lists alongside the flow-index list, which keeps the
// cluster and sequence stages self-contained.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbseq/channeling.hpp"
#include "cbseq/clustering.hpp"
#include "cbseq/core.hpp"
#include "cbseq/sequences.hpp"

namespace cbseq {

struct ChannelArtifact {
  std::int64_t window = 0;
  std::string ip_a;
  std::string ip_b;
  double start_time = 0.0;
  Label label = Label::Unlabeled;
  ChannelAbstractFeatures features;
  std::vector<std::size_t> flow_idx;  // line indices into the flow file
  ChannelSequence seq;
};

struct ClusterMemberArtifact {
  std::size_t channel_idx = 0;  // line index into the channel file
  double start_time = 0.0;
  Label label = Label::Unlabeled;
  ChannelSequence seq;
};

struct ClusterArtifact {
  int cluster_id = 0;
  std::int64_t time_slice = 0;
  Label label = Label::Unlabeled;
  FeatureScaler scaler;  // the slice's persisted scaling parameters
  std::vector<ClusterMemberArtifact> members;
};

struct BehaviorSeqArtifact {
  int cluster_id = 0;
  std::vector<std::size_t> channel_ids;
  Label label = Label::Unlabeled;
  ChannelSequence tokens;
  std::string family;  // optional workload tag, set by evaluation configs
};

namespace artifact_detail {

inline nlohmann::ordered_json tokens_to_json(const ChannelSequence& seq) {
  nlohmann::ordered_json j;
  j["pn"] = seq.pn;
  j["iat"] = seq.iat;
  j["sp"] = seq.sp;
  j["dp"] = seq.dp;
  return j;
}

inline ChannelSequence tokens_from_json(const nlohmann::json& j) {
  ChannelSequence seq;
  seq.pn = j.at("pn").get<std::vector<std::uint32_t>>();
  seq.iat = j.at("iat").get<std::vector<std::uint32_t>>();
  seq.sp = j.at("sp").get<std::vector<std::uint32_t>>();
  seq.dp = j.at("dp").get<std::vector<std::uint32_t>>();
  if (seq.iat.size() != seq.pn.size() || seq.sp.size() != seq.pn.size() ||
      seq.dp.size() != seq.pn.size())
    throw Error("token lists are not equal length");
  return seq;
}

template <typename Record>
std::vector<Record> read_jsonl(const std::string& path, const char* stage,
                               Record (*from_json)(const nlohmann::json&)) {
  std::ifstream in(path);
  if (!in) throw Error(stage, "cannot open " + path);
  std::vector<Record> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(stage, path + " line " + std::to_string(line_no) + ": " +
                             e.what());
    }
  }
  return out;
}

}  // namespace artifact_detail

// --- channels.jsonl ---------------------------------------------------------

inline nlohmann::ordered_json channel_to_json(const ChannelArtifact& c) {
  nlohmann::ordered_json j;
  j["window"] = c.window;
  j["ip_a"] = c.ip_a;
  j["ip_b"] = c.ip_b;
  j["start_time"] = c.start_time;
  j["label"] = label_name(c.label);
  nlohmann::ordered_json f;
  f["duration"] = c.features.duration;
  f["flow_count"] = c.features.flow_count;
  f["total_bytes"] = c.features.total_bytes;
  f["uplink_bytes"] = c.features.uplink_bytes;
  f["downlink_bytes"] = c.features.downlink_bytes;
  j["features"] = f;
  j["flow_idx"] = c.flow_idx;
  j["tokens"] = artifact_detail::tokens_to_json(c.seq);
  return j;
}

inline ChannelArtifact channel_from_json(const nlohmann::json& j) {
  ChannelArtifact c;
  c.window = j.at("window").get<std::int64_t>();
  c.ip_a = j.at("ip_a").get<std::string>();
  c.ip_b = j.at("ip_b").get<std::string>();
  c.start_time = j.at("start_time").get<double>();
  c.label = parse_label(j.at("label").get<std::string>());
  const auto& f = j.at("features");
  c.features.duration = f.at("duration").get<double>();
  c.features.flow_count = f.at("flow_count").get<std::uint64_t>();
  c.features.total_bytes = f.at("total_bytes").get<std::uint64_t>();
  c.features.uplink_bytes = f.at("uplink_bytes").get<std::uint64_t>();
  c.features.downlink_bytes = f.at("downlink_bytes").get<std::uint64_t>();
  c.flow_idx = j.at("flow_idx").get<std::vector<std::size_t>>();
  c.seq = artifact_detail::tokens_from_json(j.at("tokens"));
  return c;
}

inline void write_channel_jsonl(const std::vector<ChannelArtifact>& channels,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("channels", "cannot write " + path);
  for (const auto& c : channels) out << channel_to_json(c).dump() << '\n';
}

inline std::vector<ChannelArtifact> read_channel_jsonl(
    const std::string& path) {
  return artifact_detail::read_jsonl<ChannelArtifact>(path, "channels",
                                                      &channel_from_json);
}

// --- clusters.jsonl ---------------------------------------------------------

inline nlohmann::ordered_json cluster_to_json(const ClusterArtifact& c) {
  nlohmann::ordered_json j;
  j["cluster_id"] = c.cluster_id;
  j["slice"] = c.time_slice;
  j["label"] = label_name(c.label);
  j["scaler"] = {{"mean", c.scaler.mean}, {"stddev", c.scaler.stddev}};
  nlohmann::ordered_json members = nlohmann::ordered_json::array();
  for (const auto& m : c.members) {
    nlohmann::ordered_json mj;
    mj["channel_idx"] = m.channel_idx;
    mj["start_time"] = m.start_time;
    mj["label"] = label_name(m.label);
    mj["tokens"] = artifact_detail::tokens_to_json(m.seq);
    members.push_back(mj);
  }
  j["members"] = members;
  return j;
}

inline ClusterArtifact cluster_from_json(const nlohmann::json& j) {
  ClusterArtifact c;
  c.cluster_id = j.at("cluster_id").get<int>();
  c.time_slice = j.at("slice").get<std::int64_t>();
  c.label = parse_label(j.at("label").get<std::string>());
  const auto& s = j.at("scaler");
  auto mean = s.at("mean").get<std::vector<double>>();
  auto stddev = s.at("stddev").get<std::vector<double>>();
  if (mean.size() != 5 || stddev.size() != 5)
    throw Error("scaler must have 5 dimensions");
  std::copy(mean.begin(), mean.end(), c.scaler.mean.begin());
  std::copy(stddev.begin(), stddev.end(), c.scaler.stddev.begin());
  for (const auto& mj : j.at("members")) {
    ClusterMemberArtifact m;
    m.channel_idx = mj.at("channel_idx").get<std::size_t>();
    m.start_time = mj.at("start_time").get<double>();
    m.label = parse_label(mj.at("label").get<std::string>());
    m.seq = artifact_detail::tokens_from_json(mj.at("tokens"));
    c.members.push_back(std::move(m));
  }
  return c;
}

inline void write_cluster_jsonl(const std::vector<ClusterArtifact>& clusters,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cluster", "cannot write " + path);
  for (const auto& c : clusters) out << cluster_to_json(c).dump() << '\n';
}

inline std::vector<ClusterArtifact> read_cluster_jsonl(
    const std::string& path) {
  return artifact_detail::read_jsonl<ClusterArtifact>(path, "cluster",
                                                      &cluster_from_json);
}

// --- behseq.jsonl -----------------------------------------------------------

inline nlohmann::ordered_json behseq_to_json(const BehaviorSeqArtifact& b) {
  nlohmann::ordered_json j;
  j["cluster_id"] = b.cluster_id;
  j["channels"] = b.channel_ids;
  j["label"] = label_name(b.label);
  j["pn"] = b.tokens.pn;
  j["iat"] = b.tokens.iat;
  j["sp"] = b.tokens.sp;
  j["dp"] = b.tokens.dp;
  if (!b.family.empty()) j["family"] = b.family;
  return j;
}

inline BehaviorSeqArtifact behseq_from_json(const nlohmann::json& j) {
  BehaviorSeqArtifact b;
  b.cluster_id = j.at("cluster_id").get<int>();
  b.channel_ids = j.at("channels").get<std::vector<std::size_t>>();
  b.label = parse_label(j.at("label").get<std::string>());
  b.tokens = artifact_detail::tokens_from_json(j);
  if (j.contains("family")) b.family = j.at("family").get<std::string>();
  return b;
}

inline void write_behseq_jsonl(const std::vector<BehaviorSeqArtifact>& seqs,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("sequences", "cannot write " + path);
  for (const auto& b : seqs) out << behseq_to_json(b).dump() << '\n';
}

inline std::vector<BehaviorSeqArtifact> read_behseq_jsonl(
    const std::string& path) {
  return artifact_detail::read_jsonl<BehaviorSeqArtifact>(path, "sequences",
                                                          &behseq_from_json);
}

// --- stage transitions ------------------------------------------------------

/// flows -> windowed channels with features, flow indices and tokens.
inline std::vector<ChannelArtifact> build_channel_artifacts(
    const std::vector<FlowRecord>& flows, double window = kDayWindowSeconds) {
  // Windowing and grouping run over flow indices so each artifact can
  // refer back to its lines in the flow file.
  std::vector<ChannelArtifact> out;
  std::map<std::int64_t, std::vector<std::size_t>> idx_by_window;
  for (std::size_t i = 0; i < flows.size(); ++i) {
    auto w = static_cast<std::int64_t>(
        std::floor(flows[i].start_time / window));
    idx_by_window[w].push_back(i);
  }
  for (const auto& [w, idxs] : idx_by_window) {
    // Group per canonical IP pair, preserving flow indices.
    std::map<ChannelKey, std::vector<std::size_t>> groups;
    for (std::size_t i : idxs) groups[channel_key(flows[i].tuple)].push_back(i);
    for (const auto& [key, members] : groups) {
      Channel ch;
      ch.key = key;
      std::vector<std::size_t> sorted = members;
      std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        if (flows[a].start_time != flows[b].start_time)
          return flows[a].start_time < flows[b].start_time;
        return a < b;
      });
      bool any_malware = false, all_benign = true;
      for (std::size_t i : sorted) {
        ch.flows.push_back(flows[i]);
        Label l = flow_label(flows[i]);
        if (l == Label::Malware) any_malware = true;
        if (l != Label::Benign) all_benign = false;
      }
      ch.start_time = ch.flows.front().start_time;
      ch.label = any_malware  ? Label::Malware
                 : all_benign ? Label::Benign
                              : Label::Unlabeled;
      ChannelArtifact art;
      art.window = w;
      art.ip_a = key.ip_a.str();
      art.ip_b = key.ip_b.str();
      art.start_time = ch.start_time;
      art.label = ch.label;
      art.features = abstract_features(ch);
      art.flow_idx = sorted;
      art.seq = channel_sequence(ch);
      out.push_back(std::move(art));
    }
  }
  return out;
}

/// channel artifacts -> clusters (per-slice scaling and DBSCAN).
inline std::vector<ClusterArtifact> build_cluster_artifacts(
    const std::vector<ChannelArtifact>& channels, double eps = kDefaultEps,
    int min_pts = kDefaultMinPts, double slice = kDefaultSliceSeconds) {
  std::map<std::int64_t, std::vector<std::size_t>> by_slice;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    auto s = static_cast<std::int64_t>(
        std::floor(channels[i].start_time / slice));
    by_slice[s].push_back(i);
  }
  std::vector<ClusterArtifact> out;
  int next_id = 0;
  for (const auto& [slice_idx, idxs] : by_slice) {
    std::vector<std::array<double, 5>> pts;
    pts.reserve(idxs.size());
    for (std::size_t i : idxs) pts.push_back(channels[i].features.as_vector());
    FeatureScaler scaler = FeatureScaler::fit(pts);
    for (auto& p : pts) p = scaler.transform(p);
    std::vector<int> assign = dbscan(pts, eps, min_pts);

    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t k = 0; k < idxs.size(); ++k)
      if (assign[k] >= 0) groups[assign[k]].push_back(idxs[k]);
    for (auto& [local_id, members] : groups) {
      ClusterArtifact cl;
      cl.time_slice = slice_idx;
      cl.scaler = scaler;
      std::sort(members.begin(), members.end(),
                [&](std::size_t a, std::size_t b) {
                  if (channels[a].start_time != channels[b].start_time)
                    return channels[a].start_time < channels[b].start_time;
                  return a < b;
                });
      std::vector<Label> labels;
      for (std::size_t m : members) {
        ClusterMemberArtifact ma;
        ma.channel_idx = m;
        ma.start_time = channels[m].start_time;
        ma.label = channels[m].label;
        ma.seq = channels[m].seq;
        labels.push_back(channels[m].label);
        cl.members.push_back(std::move(ma));
      }
      cl.label = derive_cluster_label(labels);
      cl.cluster_id = next_id++;
      out.push_back(std::move(cl));
    }
  }
  return out;
}

/// clusters -> fused behavior sequences (start-time order concatenation).
inline std::vector<BehaviorSeqArtifact> build_behseq_artifacts(
    const std::vector<ClusterArtifact>& clusters) {
  std::vector<BehaviorSeqArtifact> out;
  out.reserve(clusters.size());
  for (const auto& cl : clusters) {
    if (cl.members.empty()) throw Error("sequences", "cluster has no members");
    BehaviorSeqArtifact b;
    b.cluster_id = cl.cluster_id;
    b.label = cl.label;
    for (const auto& m : cl.members) {
      b.channel_ids.push_back(m.channel_idx);
      b.tokens.pn.insert(b.tokens.pn.end(), m.seq.pn.begin(), m.seq.pn.end());
      b.tokens.iat.insert(b.tokens.iat.end(), m.seq.iat.begin(),
                          m.seq.iat.end());
      b.tokens.sp.insert(b.tokens.sp.end(), m.seq.sp.begin(), m.seq.sp.end());
      b.tokens.dp.insert(b.tokens.dp.end(), m.seq.dp.begin(), m.seq.dp.end());
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace cbseq
