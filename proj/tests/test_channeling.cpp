#include <catch2/catch_amalgamated.hpp>

#include "cbseq/channeling.hpp"
#include "cbseq/rng.hpp"
#include "cbseq/synthgen.hpp"

using namespace cbseq;

namespace {

FlowRecord flow(const std::string& src, std::uint16_t sp,
                const std::string& dst, std::uint16_t dp, double start,
                double end, std::uint64_t cb = 0, std::uint64_t sb = 0,
                int label = FlowRecord::kUnlabeled) {
  FlowRecord f;
  f.tuple = {IpAddress::parse(src), sp, IpAddress::parse(dst), dp, Proto::TCP};
  f.start_time = start;
  f.end_time = end;
  f.client_pkts = 1;
  f.client_bytes = cb;
  f.server_bytes = sb;
  f.label = label;
  return f;
}

}  // namespace

TEST_CASE("window_split keeps one day in one window") {
  std::vector<FlowRecord> flows{flow("10.0.0.1", 1, "10.0.0.2", 2, 100, 101),
                                flow("10.0.0.1", 1, "10.0.0.2", 2, 50000, 50001)};
  auto windows = window_split(flows);
  REQUIRE(windows.size() == 1);
  CHECK(windows[0].first == 0);
  CHECK(windows[0].second.size() == 2);
}

TEST_CASE("window_split boundary at 86400") {
  std::vector<FlowRecord> flows{
      flow("10.0.0.1", 1, "10.0.0.2", 2, 86399, 86400),
      flow("10.0.0.1", 1, "10.0.0.2", 2, 86401, 86402)};
  auto windows = window_split(flows);
  REQUIRE(windows.size() == 2);
  CHECK(windows[0].first == 0);
  CHECK(windows[1].first == 1);
}

TEST_CASE("window counts match generator ground truth over three days") {
  std::vector<synth::ScenarioSpec> specs;
  for (int day = 0; day < 3; ++day) {
    synth::ScenarioSpec s;
    s.kind = synth::ScenarioKind::BenignBackground;
    s.hosts = 5 + day;
    s.start_time = day * 86400.0 + 1000.0;
    s.duration = 3600.0;
    s.seed = 100 + static_cast<std::uint64_t>(day);
    specs.push_back(s);
  }
  auto result = synth::generate_corpus(specs);
  auto windows = window_split(result.flows);
  REQUIRE(windows.size() == 3);
  for (const auto& [idx, flows] : windows)
    CHECK(flows.size() == result.truth.flows_per_window.at(idx));
}

TEST_CASE("aggregate_channels groups by IP pair") {
  std::vector<FlowRecord> flows{
      flow("10.0.0.1", 1000, "10.0.0.2", 443, 0, 1),
      flow("10.0.0.1", 1001, "10.0.0.2", 443, 2, 3),
      flow("10.0.0.3", 1000, "10.0.0.4", 443, 0, 1),
      flow("10.0.0.3", 1001, "10.0.0.4", 443, 2, 3)};
  auto channels = aggregate_channels(flows);
  REQUIRE(channels.size() == 2);
  CHECK(channels[0].flows.size() == 2);
  CHECK(channels[1].flows.size() == 2);
}

TEST_CASE("aggregate_channels merges both directions") {
  std::vector<FlowRecord> flows{flow("10.0.0.1", 1000, "10.0.0.2", 443, 0, 1),
                                flow("10.0.0.2", 443, "10.0.0.1", 2000, 5, 6)};
  auto channels = aggregate_channels(flows);
  REQUIRE(channels.size() == 1);
  CHECK(channels[0].flows.size() == 2);
}

TEST_CASE("channel labels: any malware taints, mixed benign/unlabeled stays unlabeled") {
  auto mal = aggregate_channels(
      {flow("1.1.1.1", 1, "2.2.2.2", 2, 0, 1, 0, 0, FlowRecord::kBenign),
       flow("1.1.1.1", 3, "2.2.2.2", 4, 2, 3, 0, 0, FlowRecord::kMalware)});
  CHECK(mal[0].label == Label::Malware);
  auto ben = aggregate_channels(
      {flow("1.1.1.1", 1, "2.2.2.2", 2, 0, 1, 0, 0, FlowRecord::kBenign)});
  CHECK(ben[0].label == Label::Benign);
  auto unl = aggregate_channels(
      {flow("1.1.1.1", 1, "2.2.2.2", 2, 0, 1, 0, 0, FlowRecord::kBenign),
       flow("1.1.1.1", 3, "2.2.2.2", 4, 2, 3)});
  CHECK(unl[0].label == Label::Unlabeled);
}

TEST_CASE("abstract_features single flow example") {
  Channel ch;
  ch.insert_flow(flow("10.0.0.1", 1, "10.0.0.2", 2, 0, 10, 100, 50));
  auto f = abstract_features(ch);
  CHECK(f.duration == 10.0);
  CHECK(f.flow_count == 1);
  CHECK(f.total_bytes == 150);
  CHECK(f.uplink_bytes == 100);
  CHECK(f.downlink_bytes == 50);
}

TEST_CASE("abstract_features spans first start to last end") {
  Channel ch;
  ch.insert_flow(flow("10.0.0.1", 1, "10.0.0.2", 2, 0, 10));
  ch.insert_flow(flow("10.0.0.1", 3, "10.0.0.2", 2, 60, 70));
  auto f = abstract_features(ch);
  CHECK(f.duration == 70.0);
  CHECK(f.flow_count == 2);
}

TEST_CASE("abstract_features equals an independent recomputation") {
  Rng rng(4242);
  for (int trial = 0; trial < 50; ++trial) {
    Channel ch;
    int n = 1 + static_cast<int>(rng.next_below(20));
    for (int i = 0; i < n; ++i) {
      double s = rng.uniform(0, 1000);
      ch.insert_flow(flow("10.0.0.1", static_cast<std::uint16_t>(1 + i),
                          "10.0.0.2", 443, s, s + rng.uniform(0, 50),
                          rng.next_below(10000), rng.next_below(10000)));
    }
    auto f = abstract_features(ch);
    // Direct recomputation over raw flows.
    double lo = 1e18, hi = -1e18;
    std::uint64_t up = 0, down = 0;
    for (const auto& fl : ch.flows) {
      lo = std::min(lo, fl.start_time);
      hi = std::max(hi, fl.end_time);
      up += fl.client_bytes;
      down += fl.server_bytes;
    }
    CHECK(f.duration == hi - lo);
    CHECK(f.flow_count == static_cast<std::uint64_t>(n));
    CHECK(f.uplink_bytes == up);
    CHECK(f.downlink_bytes == down);
    CHECK(f.total_bytes == up + down);
  }
}

TEST_CASE("flow conservation and permutation invariance of aggregation") {
  Rng rng(4243);
  std::vector<FlowRecord> flows;
  for (int i = 0; i < 200; ++i) {
    auto a = static_cast<std::uint8_t>(1 + rng.next_below(5));
    auto b = static_cast<std::uint8_t>(1 + rng.next_below(5));
    double s = rng.uniform(0, 5000);
    flows.push_back(flow("10.0.0." + std::to_string(a),
                         static_cast<std::uint16_t>(1024 + rng.next_below(100)),
                         "10.0.1." + std::to_string(b), 443, s,
                         s + rng.uniform(0, 10)));
  }
  auto channels = aggregate_channels(flows);
  std::size_t total = 0;
  for (const auto& ch : channels) total += ch.flows.size();
  CHECK(total == flows.size());

  auto shuffled = flows;
  rng.shuffle(shuffled);
  auto channels2 = aggregate_channels(shuffled);
  REQUIRE(channels2.size() == channels.size());
  for (std::size_t i = 0; i < channels.size(); ++i) {
    CHECK(channels2[i].key == channels[i].key);
    CHECK(abstract_features(channels2[i]).as_vector() ==
          abstract_features(channels[i]).as_vector());
  }
}

TEST_CASE("channel count per day matches generator's distinct pair count") {
  synth::ScenarioSpec s;
  s.kind = synth::ScenarioKind::MultiNodeTransient;
  s.hosts = 25;
  s.flows_per_channel = 3;
  s.start_time = 7200;
  s.seed = 77;
  auto result = synth::generate(s);
  auto windows = window_split(result.flows);
  REQUIRE(windows.size() == 1);
  auto channels = aggregate_channels(windows[0].second);
  CHECK(channels.size() ==
        result.truth.ip_pairs_per_window.at(windows[0].first));
  CHECK(channels.size() == 25);
}
