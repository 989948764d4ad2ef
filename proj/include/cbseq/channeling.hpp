#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "cbseq/core.hpp"

namespace cbseq {

constexpr double kDayWindowSeconds = 86400.0;

/// The five-dimensional overview of a channel used for clustering.
struct ChannelAbstractFeatures {
  double duration = 0.0;          // last flow end - first flow start
  std::uint64_t flow_count = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t uplink_bytes = 0;    // client -> server
  std::uint64_t downlink_bytes = 0;  // server -> client

  std::array<double, 5> as_vector() const {
    return {duration, static_cast<double>(flow_count),
            static_cast<double>(total_bytes),
            static_cast<double>(uplink_bytes),
            static_cast<double>(downlink_bytes)};
  }
};

/// Assigns each flow to the window floor(start_time / window); windows
/// align to the epoch, and a flow never splits across windows.
inline std::vector<std::pair<std::int64_t, std::vector<FlowRecord>>>
window_split(const std::vector<FlowRecord>& flows,
             double window = kDayWindowSeconds) {
  std::map<std::int64_t, std::vector<FlowRecord>> by_window;
  for (const auto& f : flows) {
    auto idx = static_cast<std::int64_t>(std::floor(f.start_time / window));
    by_window[idx].push_back(f);
  }
  std::vector<std::pair<std::int64_t, std::vector<FlowRecord>>> out;
  out.reserve(by_window.size());
  for (auto& [idx, fl] : by_window) out.emplace_back(idx, std::move(fl));
  return out;
}

/// One channel per canonical IP pair. A channel is Malware if any member
/// flow is malware, Benign if all members are benign, Unlabeled otherwise
/// (mixed or unlabeled members are excluded from supervised training).
inline std::vector<Channel> aggregate_channels(
    const std::vector<FlowRecord>& flows) {
  std::map<ChannelKey, Channel> by_pair;
  for (const auto& f : flows) {
    ChannelKey key = channel_key(f.tuple);
    auto [it, inserted] = by_pair.try_emplace(key);
    if (inserted) it->second.key = key;
    it->second.insert_flow(f);
  }
  std::vector<Channel> out;
  out.reserve(by_pair.size());
  for (auto& [key, ch] : by_pair) {
    bool any_malware = false, all_benign = !ch.flows.empty();
    for (const auto& f : ch.flows) {
      Label l = flow_label(f);
      if (l == Label::Malware) any_malware = true;
      if (l != Label::Benign) all_benign = false;
    }
    ch.label = any_malware  ? Label::Malware
               : all_benign ? Label::Benign
                            : Label::Unlabeled;
    out.push_back(std::move(ch));
  }
  return out;
}

/// Pure recomputation of the channel overview from its flows.
inline ChannelAbstractFeatures abstract_features(const Channel& ch) {
  if (ch.flows.empty()) throw Error("abstract_features on empty channel");
  ChannelAbstractFeatures f;
  double first_start = ch.flows.front().start_time;
  double last_end = 0.0;
  for (const auto& fl : ch.flows) {
    last_end = std::max(last_end, fl.end_time);
    f.uplink_bytes += fl.client_bytes;
    f.downlink_bytes += fl.server_bytes;
  }
  f.duration = last_end - first_start;
  f.flow_count = ch.flows.size();
  f.total_bytes = f.uplink_bytes + f.downlink_bytes;
  return f;
}

}  // namespace cbseq
