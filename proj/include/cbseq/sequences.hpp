#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cbseq/clustering.hpp"
#include "cbseq/core.hpp"

namespace cbseq {

// Token caps. IAT quantizes to whole seconds capped at one day; packet
// counts clamp at 10^6 and the OOV mapping in the embedding layer
// handles the tail.
constexpr std::uint32_t kIatCap = 86400;
constexpr std::uint32_t kPnCap = 1000000;

/// The four aligned token lists of one channel. Index i across all four
/// lists refers to flow i of the channel.
struct ChannelSequence {
  std::vector<std::uint32_t> pn;   // client packet count per flow
  std::vector<std::uint32_t> iat;  // whole-second gap to previous flow, [0] = 0
  std::vector<std::uint32_t> sp;   // initiator-side source port per flow
  std::vector<std::uint32_t> dp;   // initiator-side destination port per flow

  std::size_t size() const { return pn.size(); }
};

/// Round-half-up whole-second quantization of inter-flow gaps.
inline std::uint32_t quantize_iat(double gap_seconds) {
  if (gap_seconds < 0.0) gap_seconds = 0.0;
  auto q = static_cast<std::uint64_t>(std::floor(gap_seconds + 0.5));
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(q, kIatCap));
}

inline ChannelSequence channel_sequence(const Channel& ch) {
  ChannelSequence seq;
  const std::size_t n = ch.flows.size();
  seq.pn.reserve(n);
  seq.iat.reserve(n);
  seq.sp.reserve(n);
  seq.dp.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const FlowRecord& f = ch.flows[i];
    seq.pn.push_back(static_cast<std::uint32_t>(
        std::min<std::uint64_t>(f.client_pkts, kPnCap)));
    seq.iat.push_back(
        i == 0 ? 0u
               : quantize_iat(f.start_time - ch.flows[i - 1].start_time));
    seq.sp.push_back(f.tuple.src_port);
    seq.dp.push_back(f.tuple.dst_port);
  }
  return seq;
}

/// The per-cluster fusion of member channel sequences, concatenated in
/// channel start-time order. IAT restarts at 0 at every channel boundary.
struct BehaviorSequence {
  int cluster_id = 0;
  std::vector<std::size_t> channel_ids;  // member channel indices
  ChannelSequence tokens;
  Label label = Label::Unlabeled;
};

inline BehaviorSequence behavior_sequence(const ChannelCluster& cluster,
                                          const std::vector<Channel>& channels) {
  if (cluster.members.empty())
    throw Error("behavior_sequence on empty cluster");
  BehaviorSequence bs;
  bs.cluster_id = cluster.cluster_id;
  bs.label = cluster.label;
  for (std::size_t m : cluster.members) {
    bs.channel_ids.push_back(m);
    ChannelSequence cs = channel_sequence(channels[m]);
    bs.tokens.pn.insert(bs.tokens.pn.end(), cs.pn.begin(), cs.pn.end());
    bs.tokens.iat.insert(bs.tokens.iat.end(), cs.iat.begin(), cs.iat.end());
    bs.tokens.sp.insert(bs.tokens.sp.end(), cs.sp.begin(), cs.sp.end());
    bs.tokens.dp.insert(bs.tokens.dp.end(), cs.dp.begin(), cs.dp.end());
  }
  return bs;
}

enum class SeqType : int { PN = 0, IAT = 1, SP = 2, DP = 3 };

inline const char* seq_type_name(SeqType t) {
  switch (t) {
    case SeqType::PN: return "pn";
    case SeqType::IAT: return "iat";
    case SeqType::SP: return "sp";
    default: return "dp";
  }
}

inline SeqType parse_seq_type(const std::string& s) {
  if (s == "pn") return SeqType::PN;
  if (s == "iat") return SeqType::IAT;
  if (s == "sp") return SeqType::SP;
  if (s == "dp") return SeqType::DP;
  throw Error("unknown sequence type: " + s);
}

inline const std::vector<std::uint32_t>& tokens_of(const ChannelSequence& cs,
                                                   SeqType t) {
  switch (t) {
    case SeqType::PN: return cs.pn;
    case SeqType::IAT: return cs.iat;
    case SeqType::SP: return cs.sp;
    default: return cs.dp;
  }
}

}  // namespace cbseq
