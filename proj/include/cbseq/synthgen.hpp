#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbseq/channeling.hpp"
#include "cbseq/common.hpp"
#include "cbseq/core.hpp"
#include "cbseq/rng.hpp"
#include "cbseq/sequences.hpp"
#include "cbseq/toml.hpp"

namespace cbseq::synth {

/// Splits an epoch timestamp into the (sec, usec) pair a pcap record
/// header stores.
inline std::pair<std::uint32_t, std::uint32_t> split_us(double t) {
  auto sec = static_cast<std::uint32_t>(std::floor(t));
  auto usec = static_cast<std::uint32_t>(
      std::llround((t - std::floor(t)) * 1e6));
  if (usec >= 1000000) {
    sec += 1;
    usec -= 1000000;
  }
  return {sec, usec};
}

/// Rounds a timestamp to what it will read back as after a pcap round
/// trip. All generated flow times pass through this, so the JSONL and
/// pcap outputs describe identical instants.
inline double quantize_us(double t) {
  auto [sec, usec] = split_us(t);
  return static_cast<double>(sec) + static_cast<double>(usec) * 1e-6;
}

enum class ScenarioKind { SingleNodePersistent, MultiNodeTransient,
                          BenignBackground };

inline std::string kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::SingleNodePersistent: return "single_node_persistent";
    case ScenarioKind::MultiNodeTransient: return "multi_node_transient";
    default: return "benign_background";
  }
}

inline ScenarioKind parse_kind(const std::string& s) {
  if (s == "single_node_persistent") return ScenarioKind::SingleNodePersistent;
  if (s == "multi_node_transient") return ScenarioKind::MultiNodeTransient;
  if (s == "benign_background") return ScenarioKind::BenignBackground;
  throw Error("synth", "unknown scenario kind: " + s);
}

enum class PortStrategy { Fixed, Sequential, Ephemeral };

inline PortStrategy parse_port_strategy(const std::string& s) {
  if (s == "fixed") return PortStrategy::Fixed;
  if (s == "sequential") return PortStrategy::Sequential;
  if (s == "ephemeral") return PortStrategy::Ephemeral;
  throw Error("synth", "unknown port strategy: " + s);
}

/// One deterministic workload. Attack kinds emit flows with tight,
/// repetitive behavior; the benign kind emits heterogeneous channels
/// with heavy-tailed sizes and irregular timing.
struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::BenignBackground;
  std::string family = "default";  // workload tag carried into metadata
  int hosts = 1;                   // victim/client channel count
  int flows_per_channel = 10;
  double period = 60.0;        // beacon period (attack kinds)
  double jitter = 0.0;         // uniform [0, jitter) added per beacon
  double stagger = 1.0;        // per-channel start offset
  double flow_duration = 5.0;  // span from first to last packet of a flow
  double pn_mean = 6.0;        // client packets per flow
  double pn_jitter = 0.0;      // +- uniform integer jitter (attack kinds)
  double up_bytes = 2000.0;
  double down_bytes = 1000.0;
  double byte_jitter = 0.0;    // +- uniform fraction (attack kinds)
  double bytes_sigma = 1.0;    // lognormal sigma (benign kind)
  PortStrategy port_strategy = PortStrategy::Ephemeral;
  int sp_base = 40000;
  int dp = 443;
  Proto proto = Proto::TCP;
  double duration = 3600.0;    // benign activity span
  double start_time = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (hosts < 1) throw Error("synth", "hosts must be >= 1");
    if (kind == ScenarioKind::SingleNodePersistent && hosts != 1)
      throw Error("synth", "single_node_persistent emits one channel; "
                           "hosts must be 1");
    if (flows_per_channel < 1)
      throw Error("synth", "flows_per_channel must be >= 1");
    if (period <= 0.0) throw Error("synth", "period must be positive");
    if (jitter < 0.0 || jitter >= period)
      throw Error("synth", "jitter must be in [0, period)");
    if (flow_duration < 0.0)
      throw Error("synth", "flow_duration must be non-negative");
    if (pn_mean < 1.0) throw Error("synth", "pn_mean must be >= 1");
    if (pn_jitter < 0.0 || byte_jitter < 0.0 || byte_jitter > 1.0)
      throw Error("synth", "invalid jitter parameters");
    if (up_bytes < 0.0 || down_bytes < 0.0)
      throw Error("synth", "byte sizes must be non-negative");
    if (bytes_sigma < 0.0) throw Error("synth", "bytes_sigma must be >= 0");
    if (duration <= 0.0) throw Error("synth", "duration must be positive");
    if (sp_base < 1 || sp_base > 65535 || dp < 1 || dp > 65535)
      throw Error("synth", "ports must be in [1, 65535]");
  }
};

/// What the generator promises about one emitted channel. Downstream
/// stages are verified against these values rather than re-deriving
/// them from raw records.
struct TruthChannel {
  std::string ip_a, ip_b;  // canonical order
  Label label = Label::Benign;
  std::string family;
  std::int64_t window = 0;
  ChannelAbstractFeatures features;
  ChannelSequence tokens;
};

struct GroundTruth {
  std::vector<TruthChannel> channels;
  std::uint64_t total_flows = 0;
  std::map<std::int64_t, std::uint64_t> flows_per_window;
  std::map<std::int64_t, std::uint64_t> ip_pairs_per_window;
};

struct SynthResult {
  std::vector<FlowRecord> flows;  // sorted by (start_time, canonical key)
  GroundTruth truth;
};

/// Shannon entropy in bits of a token list, used to check that attack
/// sequences are more repetitive than benign ones.
inline double token_entropy(const std::vector<std::uint32_t>& tokens) {
  if (tokens.empty()) return 0.0;
  std::map<std::uint32_t, std::size_t> counts;
  for (auto t : tokens) ++counts[t];
  double h = 0.0;
  double n = static_cast<double>(tokens.size());
  for (const auto& [tok, c] : counts) {
    double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

namespace detail {

inline IpAddress derived_ip(std::uint8_t first_octet, Rng& rng) {
  return IpAddress::v4(first_octet,
                       static_cast<std::uint8_t>(rng.next_below(256)),
                       static_cast<std::uint8_t>(rng.next_below(256)),
                       static_cast<std::uint8_t>(1 + rng.next_below(254)));
}

inline std::uint16_t pick_port(PortStrategy strat, int base, int flow_idx,
                               Rng& rng) {
  switch (strat) {
    case PortStrategy::Fixed:
      return static_cast<std::uint16_t>(base);
    case PortStrategy::Sequential:
      return static_cast<std::uint16_t>(1024 + (base - 1024 + flow_idx) %
                                                   (65536 - 1024));
    default:
      return static_cast<std::uint16_t>(32768 + rng.next_below(28232));
  }
}

// Benign destination ports, weighted toward common web services.
inline std::uint16_t benign_dport(Rng& rng) {
  static constexpr std::uint16_t palette[] = {443, 443, 443, 80,  80, 8080,
                                              53,  22,  25,  993, 123, 8443};
  return palette[rng.next_below(std::size(palette))];
}

struct ChannelDraft {
  IpAddress client, server;
  std::vector<FlowRecord> flows;
};

}  // namespace detail

/// Emits the scenario's flow records plus ground-truth metadata.
/// Deterministic: the same spec always produces the same bytes.
inline SynthResult generate(const ScenarioSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Rng ip_rng = root.substream(0xA0);

  std::vector<detail::ChannelDraft> drafts;

  if (spec.kind == ScenarioKind::BenignBackground) {
    Rng body = root.substream(0xB0);
    for (int c = 0; c < spec.hosts; ++c) {
      detail::ChannelDraft d;
      d.client = detail::derived_ip(192, ip_rng);
      d.server = detail::derived_ip(5 + static_cast<std::uint8_t>(
                                            ip_rng.next_below(90)),
                                    ip_rng);
      int nflows = 1 + static_cast<int>(body.next_below(
                           static_cast<std::uint64_t>(spec.flows_per_channel)));
      std::vector<double> starts(nflows);
      for (auto& t : starts)
        t = spec.start_time + body.uniform(0.0, spec.duration);
      std::sort(starts.begin(), starts.end());
      for (int i = 0; i < nflows; ++i) {
        FlowRecord f;
        f.tuple.src_ip = d.client;
        f.tuple.dst_ip = d.server;
        f.tuple.src_port = detail::pick_port(PortStrategy::Ephemeral, 0, i,
                                             body);
        f.tuple.dst_port = detail::benign_dport(body);
        f.tuple.proto = spec.proto;
        f.start_time = quantize_us(starts[i]);
        double span = body.uniform(0.2, std::max(0.4, spec.flow_duration * 3));
        f.client_pkts = 1 + static_cast<std::uint64_t>(
                                body.lognormal(std::log(spec.pn_mean), 1.0));
        f.server_pkts = 1 + static_cast<std::uint64_t>(
                                body.lognormal(std::log(spec.pn_mean), 1.0));
        f.client_bytes = static_cast<std::uint64_t>(
            body.lognormal(std::log(spec.up_bytes), spec.bytes_sigma));
        f.server_bytes = static_cast<std::uint64_t>(
            body.lognormal(std::log(spec.down_bytes), spec.bytes_sigma));
        std::uint64_t total_pkts = f.client_pkts + f.server_pkts;
        f.end_time = total_pkts >= 2 ? quantize_us(f.start_time + span)
                                     : f.start_time;
        f.label = FlowRecord::kBenign;
        d.flows.push_back(f);
      }
      drafts.push_back(std::move(d));
    }
  } else {
    // Attack kinds. Flow draws are keyed by flow index alone so every
    // victim channel of a multi-node scenario carries the identical
    // pattern; the single-node kind has exactly one channel anyway.
    IpAddress attacker = detail::derived_ip(10, ip_rng);
    std::uint8_t victim_b = static_cast<std::uint8_t>(ip_rng.next_below(16));
    for (int c = 0; c < spec.hosts; ++c) {
      detail::ChannelDraft d;
      d.client = attacker;
      d.server = spec.kind == ScenarioKind::SingleNodePersistent
                     ? detail::derived_ip(203, ip_rng)
                     : IpAddress::v4(172, static_cast<std::uint8_t>(16 + victim_b),
                                     static_cast<std::uint8_t>(c / 250),
                                     static_cast<std::uint8_t>(1 + c % 250));
      double base = spec.start_time + c * spec.stagger;
      for (int i = 0; i < spec.flows_per_channel; ++i) {
        Rng fr = root.substream(0xF000 + static_cast<std::uint64_t>(i));
        FlowRecord f;
        f.tuple.src_ip = d.client;
        f.tuple.dst_ip = d.server;
        f.tuple.src_port = detail::pick_port(spec.port_strategy, spec.sp_base,
                                             i, fr);
        f.tuple.dst_port = static_cast<std::uint16_t>(spec.dp);
        f.tuple.proto = spec.proto;
        double jit = spec.jitter > 0.0 ? fr.uniform(0.0, spec.jitter) : 0.0;
        f.start_time = quantize_us(base + i * spec.period + jit);
        long pn = std::lround(spec.pn_mean);
        if (spec.pn_jitter > 0.0)
          pn += std::lround(fr.uniform(-spec.pn_jitter, spec.pn_jitter));
        f.client_pkts = static_cast<std::uint64_t>(std::max(1l, pn));
        f.server_pkts = f.client_pkts;
        auto jittered = [&](double mean) {
          double v = mean;
          if (spec.byte_jitter > 0.0)
            v *= 1.0 + fr.uniform(-spec.byte_jitter, spec.byte_jitter);
          return static_cast<std::uint64_t>(std::max(0.0, std::floor(v)));
        };
        f.client_bytes = jittered(spec.up_bytes);
        f.server_bytes = jittered(spec.down_bytes);
        std::uint64_t total_pkts = f.client_pkts + f.server_pkts;
        f.end_time = total_pkts >= 2
                         ? quantize_us(f.start_time + spec.flow_duration)
                         : f.start_time;
        f.label = FlowRecord::kMalware;
        d.flows.push_back(f);
      }
      drafts.push_back(std::move(d));
    }
  }

  SynthResult result;
  for (const auto& d : drafts)
    for (const auto& f : d.flows) result.flows.push_back(f);
  std::sort(result.flows.begin(), result.flows.end(),
            [](const FlowRecord& a, const FlowRecord& b) {
              if (a.start_time != b.start_time)
                return a.start_time < b.start_time;
              return canonicalize(a.tuple) < canonicalize(b.tuple);
            });

  // Ground truth, computed from the generator's own drafts. A draft is
  // split per 24-hour window because that is the channel unit downstream.
  for (const auto& d : drafts) {
    std::map<std::int64_t, std::vector<const FlowRecord*>> per_window;
    for (const auto& f : d.flows)
      per_window[static_cast<std::int64_t>(
                     std::floor(f.start_time / kDayWindowSeconds))]
          .push_back(&f);
    for (const auto& [w, fls] : per_window) {
      TruthChannel tc;
      ChannelKey key = channel_key(d.client, d.server);
      tc.ip_a = key.ip_a.str();
      tc.ip_b = key.ip_b.str();
      tc.label = spec.kind == ScenarioKind::BenignBackground ? Label::Benign
                                                             : Label::Malware;
      tc.family = spec.family;
      tc.window = w;
      double first_start = fls.front()->start_time;
      double last_end = 0.0;
      double prev_start = 0.0;
      for (std::size_t i = 0; i < fls.size(); ++i) {
        const FlowRecord& f = *fls[i];
        last_end = std::max(last_end, f.end_time);
        tc.features.uplink_bytes += f.client_bytes;
        tc.features.downlink_bytes += f.server_bytes;
        tc.tokens.pn.push_back(static_cast<std::uint32_t>(
            std::min<std::uint64_t>(f.client_pkts, kPnCap)));
        tc.tokens.iat.push_back(
            i == 0 ? 0u : quantize_iat(f.start_time - prev_start));
        tc.tokens.sp.push_back(f.tuple.src_port);
        tc.tokens.dp.push_back(f.tuple.dst_port);
        prev_start = f.start_time;
      }
      tc.features.duration = last_end - first_start;
      tc.features.flow_count = fls.size();
      tc.features.total_bytes =
          tc.features.uplink_bytes + tc.features.downlink_bytes;
      result.truth.channels.push_back(std::move(tc));
    }
  }
  result.truth.total_flows = result.flows.size();
  std::map<std::int64_t, std::set<ChannelKey>> pairs;
  for (const auto& f : result.flows) {
    auto w = static_cast<std::int64_t>(
        std::floor(f.start_time / kDayWindowSeconds));
    ++result.truth.flows_per_window[w];
    pairs[w].insert(channel_key(f.tuple));
  }
  for (const auto& [w, s] : pairs)
    result.truth.ip_pairs_per_window[w] = s.size();
  return result;
}

/// Merges several scenarios into one corpus. Ground truth concatenates;
/// window totals are recomputed over the union.
inline SynthResult generate_corpus(const std::vector<ScenarioSpec>& specs) {
  SynthResult all;
  for (const auto& spec : specs) {
    SynthResult one = generate(spec);
    all.flows.insert(all.flows.end(), one.flows.begin(), one.flows.end());
    all.truth.channels.insert(all.truth.channels.end(),
                              one.truth.channels.begin(),
                              one.truth.channels.end());
  }
  std::sort(all.flows.begin(), all.flows.end(),
            [](const FlowRecord& a, const FlowRecord& b) {
              if (a.start_time != b.start_time)
                return a.start_time < b.start_time;
              return canonicalize(a.tuple) < canonicalize(b.tuple);
            });
  all.truth.total_flows = all.flows.size();
  std::map<std::int64_t, std::set<ChannelKey>> pairs;
  for (const auto& f : all.flows) {
    auto w = static_cast<std::int64_t>(
        std::floor(f.start_time / kDayWindowSeconds));
    ++all.truth.flows_per_window[w];
    pairs[w].insert(channel_key(f.tuple));
  }
  for (const auto& [w, s] : pairs)
    all.truth.ip_pairs_per_window[w] = s.size();
  return all;
}

// --- pcap synthesis ---------------------------------------------------------

constexpr std::uint64_t kPcapPacketCap = 2000000;
constexpr std::uint64_t kMaxPacketPayload = 60000;

namespace detail {

inline void put16be(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put32le(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  b.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  b.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

struct PacketPlan {
  double ts;
  FiveTuple tuple;  // oriented per packet direction
  std::uint64_t payload;
};

/// Realizes one flow as a packet schedule: first packet from the client,
/// then alternating while both sides have packets left. Bytes split
/// evenly with the remainder on each side's first packet. Packet times
/// span [start, end] evenly.
inline std::vector<PacketPlan> plan_flow(const FlowRecord& f) {
  std::uint64_t n = f.client_pkts + f.server_pkts;
  std::vector<PacketPlan> plan;
  plan.reserve(n);
  std::uint64_t c_left = f.client_pkts, s_left = f.server_pkts;
  std::uint64_t c_base = f.client_pkts ? f.client_bytes / f.client_pkts : 0;
  std::uint64_t c_rem = f.client_pkts ? f.client_bytes % f.client_pkts : 0;
  std::uint64_t s_base = f.server_pkts ? f.server_bytes / f.server_pkts : 0;
  std::uint64_t s_rem = f.server_pkts ? f.server_bytes % f.server_pkts : 0;
  bool client_turn = true;
  for (std::uint64_t k = 0; k < n; ++k) {
    PacketPlan p;
    if (k == 0)
      p.ts = f.start_time;
    else if (k == n - 1)
      p.ts = f.end_time;
    else
      p.ts = f.start_time + (f.end_time - f.start_time) *
                                static_cast<double>(k) /
                                static_cast<double>(n - 1);
    bool from_client = client_turn ? c_left > 0 : s_left == 0;
    if (c_left == 0) from_client = false;
    if (from_client) {
      p.tuple = f.tuple;
      p.payload = c_base + (c_left == f.client_pkts ? c_rem : 0);
      --c_left;
    } else {
      p.tuple = f.tuple.reversed();
      p.payload = s_base + (s_left == f.server_pkts ? s_rem : 0);
      --s_left;
    }
    client_turn = !client_turn;
    plan.push_back(p);
  }
  return plan;
}

}  // namespace detail

/// Writes the scenario as a classic pcap capture of minimal
/// Ethernet/IPv4 frames. Reading it back and assembling flows recovers
/// the scenario's flow table exactly.
inline SynthResult generate_pcap(const ScenarioSpec& spec,
                                 const std::string& path) {
  SynthResult result = generate(spec);

  std::uint64_t total_pkts = 0;
  for (const auto& f : result.flows) total_pkts += f.client_pkts + f.server_pkts;
  if (total_pkts > kPcapPacketCap)
    throw Error("synth", "scenario exceeds pcap packet cap (" +
                             std::to_string(total_pkts) + " > " +
                             std::to_string(kPcapPacketCap) + ")");

  std::vector<detail::PacketPlan> packets;
  packets.reserve(total_pkts);
  for (const auto& f : result.flows) {
    auto plan = detail::plan_flow(f);
    for (const auto& p : plan) {
      if (p.payload > kMaxPacketPayload)
        throw Error("synth", "per-packet payload exceeds IPv4 limits; "
                             "increase packet counts or lower byte sizes");
      packets.push_back(p);
    }
  }
  std::stable_sort(packets.begin(), packets.end(),
                   [](const detail::PacketPlan& a, const detail::PacketPlan& b) {
                     return a.ts < b.ts;
                   });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("synth", "cannot write pcap file: " + path);
  std::vector<std::uint8_t> buf;
  detail::put32le(buf, 0xa1b2c3d4u);
  buf.push_back(2);  // version major LE16
  buf.push_back(0);
  buf.push_back(4);  // version minor LE16
  buf.push_back(0);
  detail::put32le(buf, 0);       // thiszone
  detail::put32le(buf, 0);       // sigfigs
  detail::put32le(buf, 262144);  // snaplen
  detail::put32le(buf, 1);       // LINKTYPE_ETHERNET
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));

  for (const auto& p : packets) {
    std::vector<std::uint8_t> frame;
    // Ethernet
    for (int i = 0; i < 6; ++i) frame.push_back(0x02);
    for (int i = 0; i < 6; ++i) frame.push_back(0x04);
    detail::put16be(frame, 0x0800);
    // IPv4 header (20 bytes, no options)
    bool tcp = p.tuple.proto == Proto::TCP;
    std::uint16_t l4_hdr = tcp ? 20 : 8;
    auto total_len =
        static_cast<std::uint16_t>(20 + l4_hdr + p.payload);
    frame.push_back(0x45);
    frame.push_back(0);
    detail::put16be(frame, total_len);
    detail::put16be(frame, 0);  // id
    detail::put16be(frame, 0);  // flags/frag
    frame.push_back(64);        // ttl
    frame.push_back(tcp ? 6 : 17);
    detail::put16be(frame, 0);  // checksum left zero
    for (int i = 0; i < 4; ++i) frame.push_back(p.tuple.src_ip.bytes[i]);
    for (int i = 0; i < 4; ++i) frame.push_back(p.tuple.dst_ip.bytes[i]);
    detail::put16be(frame, p.tuple.src_port);
    detail::put16be(frame, p.tuple.dst_port);
    if (tcp) {
      detail::put32le(frame, 0);  // seq
      detail::put32le(frame, 0);  // ack
      frame.push_back(0x50);      // data offset 5
      frame.push_back(0x10);      // ACK
      detail::put16be(frame, 65535);
      detail::put16be(frame, 0);  // checksum
      detail::put16be(frame, 0);  // urgent
    } else {
      detail::put16be(frame, static_cast<std::uint16_t>(8 + p.payload));
      detail::put16be(frame, 0);  // checksum
    }
    frame.insert(frame.end(), p.payload, 0);

    std::vector<std::uint8_t> rec;
    auto [ts_sec, ts_usec] = split_us(p.ts);
    detail::put32le(rec, ts_sec);
    detail::put32le(rec, ts_usec);
    detail::put32le(rec, static_cast<std::uint32_t>(frame.size()));
    detail::put32le(rec, static_cast<std::uint32_t>(frame.size()));
    out.write(reinterpret_cast<const char*>(rec.data()),
              static_cast<std::streamsize>(rec.size()));
    out.write(reinterpret_cast<const char*>(frame.data()),
              static_cast<std::streamsize>(frame.size()));
  }
  return result;
}

// --- TOML scenario specs ----------------------------------------------------

inline ScenarioSpec scenario_from_toml(const toml::Table& t) {
  static const std::set<std::string> known = {
      "kind", "family", "hosts", "flows_per_channel", "period", "jitter",
      "stagger", "flow_duration", "pn_mean", "pn_jitter", "up_bytes",
      "down_bytes", "byte_jitter", "bytes_sigma", "port_strategy", "sp_base",
      "dp", "proto", "duration", "start_time", "seed"};
  for (const auto& [key, v] : t.values)
    if (!known.count(key))
      throw Error("synth", "unknown scenario key: " + key);
  ScenarioSpec s;
  s.kind = parse_kind(t.get_string("kind", "benign_background"));
  s.family = t.get_string("family", kind_name(s.kind));
  s.hosts = static_cast<int>(t.get_int("hosts", 1));
  s.flows_per_channel =
      static_cast<int>(t.get_int("flows_per_channel", 10));
  s.period = t.get_double("period", 60.0);
  s.jitter = t.get_double("jitter", 0.0);
  s.stagger = t.get_double("stagger", 1.0);
  s.flow_duration = t.get_double("flow_duration", 5.0);
  s.pn_mean = t.get_double("pn_mean", 6.0);
  s.pn_jitter = t.get_double("pn_jitter", 0.0);
  s.up_bytes = t.get_double("up_bytes", 2000.0);
  s.down_bytes = t.get_double("down_bytes", 1000.0);
  s.byte_jitter = t.get_double("byte_jitter", 0.0);
  s.bytes_sigma = t.get_double("bytes_sigma", 1.0);
  s.port_strategy =
      parse_port_strategy(t.get_string("port_strategy", "ephemeral"));
  s.sp_base = static_cast<int>(t.get_int("sp_base", 40000));
  s.dp = static_cast<int>(t.get_int("dp", 443));
  s.proto = parse_proto(t.get_string("proto", "tcp"));
  s.duration = t.get_double("duration", 3600.0);
  s.start_time = t.get_double("start_time", 0.0);
  s.seed = static_cast<std::uint64_t>(t.get_int("seed", 1));
  s.validate();
  return s;
}

/// Reads either one top-level scenario or a [[scenario]] list.
inline std::vector<ScenarioSpec> scenarios_from_toml_file(
    const std::string& path) {
  toml::Table root = toml::parse_file(path);
  std::vector<ScenarioSpec> specs;
  auto it = root.table_arrays.find("scenario");
  if (it != root.table_arrays.end()) {
    for (const auto& t : it->second) specs.push_back(scenario_from_toml(t));
  }
  if (!root.values.empty()) specs.push_back(scenario_from_toml(root));
  if (specs.empty()) throw Error("synth", "no scenarios in " + path);
  return specs;
}

// --- ground-truth JSON ------------------------------------------------------

inline nlohmann::ordered_json truth_to_json(const GroundTruth& truth) {
  nlohmann::ordered_json j;
  j["channels"] = nlohmann::ordered_json::array();
  for (const auto& c : truth.channels) {
    nlohmann::ordered_json cj;
    cj["ip_a"] = c.ip_a;
    cj["ip_b"] = c.ip_b;
    cj["label"] = label_name(c.label);
    cj["family"] = c.family;
    cj["window"] = c.window;
    cj["features"] = {{"duration", c.features.duration},
                      {"flow_count", c.features.flow_count},
                      {"total_bytes", c.features.total_bytes},
                      {"uplink_bytes", c.features.uplink_bytes},
                      {"downlink_bytes", c.features.downlink_bytes}};
    cj["tokens"] = {{"pn", c.tokens.pn},
                    {"iat", c.tokens.iat},
                    {"sp", c.tokens.sp},
                    {"dp", c.tokens.dp}};
    j["channels"].push_back(cj);
  }
  j["totals"]["flows"] = truth.total_flows;
  for (const auto& [w, n] : truth.flows_per_window)
    j["totals"]["flows_per_window"][std::to_string(w)] = n;
  for (const auto& [w, n] : truth.ip_pairs_per_window)
    j["totals"]["ip_pairs_per_window"][std::to_string(w)] = n;
  return j;
}

inline void write_truth_json(const GroundTruth& truth,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("synth", "cannot write truth file: " + path);
  out << truth_to_json(truth).dump(2) << '\n';
}

}  // namespace cbseq::synth
