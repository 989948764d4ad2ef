#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbseq/common.hpp"
#include "cbseq/core.hpp"

namespace cbseq {

struct IngestStats {
  std::uint64_t packets = 0;          // accepted
  std::uint64_t skipped_frames = 0;   // non-IP / non-TCP-UDP
  std::uint64_t rejected_out_of_order = 0;
  bool truncated = false;             // capture ended mid-record
};

// ---------------------------------------------------------------------------
// pcap reading (classic libpcap format, Ethernet link type, IPv4 TCP/UDP)
// ---------------------------------------------------------------------------

namespace pcap_detail {

inline std::uint16_t rd16(const std::uint8_t* p, bool swap) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  if (swap) v = static_cast<std::uint16_t>((v >> 8) | (v << 8));
  return v;
}

inline std::uint32_t rd32(const std::uint8_t* p, bool swap) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  if (swap)
    v = ((v >> 24) & 0xff) | ((v >> 8) & 0xff00) | ((v << 8) & 0xff0000) |
        (v << 24);
  return v;
}

inline std::uint16_t be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

}  // namespace pcap_detail

/// Streams PacketRecords out of a classic pcap file. Non-IPv4 frames and
/// non-TCP/UDP protocols are skipped and counted; a truncated trailing
/// record stops the read, keeping everything before it.
inline std::vector<PacketRecord> read_pcap(const std::string& path,
                                           IngestStats* stats = nullptr) {
  using namespace pcap_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("ingest", "cannot open pcap file: " + path);

  std::uint8_t ghdr[24];
  if (!in.read(reinterpret_cast<char*>(ghdr), 24))
    throw Error("ingest", "malformed pcap global header: " + path);
  std::uint32_t magic;
  std::memcpy(&magic, ghdr, 4);
  bool swap;
  if (magic == 0xa1b2c3d4u) {
    swap = false;
  } else if (magic == 0xd4c3b2a1u) {
    swap = true;
  } else {
    throw Error("ingest", "unrecognized pcap magic in " + path);
  }
  std::uint32_t linktype = rd32(ghdr + 20, swap);
  if (linktype != 1)
    throw Error("ingest", "pcap link type " + std::to_string(linktype) +
                              " is not Ethernet");

  IngestStats local;
  IngestStats& st = stats ? *stats : local;
  std::vector<PacketRecord> out;
  std::vector<std::uint8_t> buf;

  for (;;) {
    std::uint8_t rhdr[16];
    if (!in.read(reinterpret_cast<char*>(rhdr), 16)) {
      if (in.gcount() != 0) st.truncated = true;
      break;
    }
    std::uint32_t ts_sec = rd32(rhdr, swap);
    std::uint32_t ts_usec = rd32(rhdr + 4, swap);
    std::uint32_t incl = rd32(rhdr + 8, swap);
    buf.resize(incl);
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(incl))) {
      st.truncated = true;
      break;
    }
    double ts = static_cast<double>(ts_sec) + ts_usec * 1e-6;

    if (incl < 14 + 20) {
      ++st.skipped_frames;
      continue;
    }
    const std::uint8_t* eth = buf.data();
    std::uint16_t ethertype = be16(eth + 12);
    if (ethertype != 0x0800) {  // IPv4 only on the capture path
      ++st.skipped_frames;
      continue;
    }
    const std::uint8_t* ip = eth + 14;
    std::uint8_t ihl = static_cast<std::uint8_t>(ip[0] & 0x0f);
    std::uint32_t ip_hdr_len = ihl * 4u;
    std::uint16_t total_len = be16(ip + 2);
    std::uint8_t proto = ip[9];
    if ((ip[0] >> 4) != 4 || ip_hdr_len < 20 || incl < 14 + ip_hdr_len ||
        total_len < ip_hdr_len) {
      ++st.skipped_frames;
      continue;
    }
    PacketRecord rec;
    rec.timestamp = ts;
    rec.tuple.src_ip = IpAddress::v4(ip[12], ip[13], ip[14], ip[15]);
    rec.tuple.dst_ip = IpAddress::v4(ip[16], ip[17], ip[18], ip[19]);
    const std::uint8_t* l4 = ip + ip_hdr_len;
    if (proto == 6) {
      if (incl < 14 + ip_hdr_len + 20) {
        ++st.skipped_frames;
        continue;
      }
      rec.tuple.proto = Proto::TCP;
      rec.tuple.src_port = be16(l4);
      rec.tuple.dst_port = be16(l4 + 2);
      std::uint32_t data_off = static_cast<std::uint32_t>(l4[12] >> 4) * 4u;
      std::uint32_t hdrs = ip_hdr_len + data_off;
      rec.payload_len = total_len > hdrs ? total_len - hdrs : 0;
    } else if (proto == 17) {
      if (incl < 14 + ip_hdr_len + 8) {
        ++st.skipped_frames;
        continue;
      }
      rec.tuple.proto = Proto::UDP;
      rec.tuple.src_port = be16(l4);
      rec.tuple.dst_port = be16(l4 + 2);
      std::uint16_t udp_len = be16(l4 + 4);
      rec.payload_len = udp_len > 8 ? udp_len - 8u : 0;
    } else {
      ++st.skipped_frames;
      continue;
    }
    ++st.packets;
    out.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flow assembly
// ---------------------------------------------------------------------------

/// Tracks at most one in-progress flow per canonical 5-tuple and closes
/// it after idle_timeout seconds of silence on that tuple.
class FlowTable {
 public:
  explicit FlowTable(double idle_timeout = 120.0)
      : idle_timeout_(idle_timeout) {}

  void add(const PacketRecord& pkt, IngestStats* stats = nullptr) {
    if (pkt.timestamp + reorder_tolerance_ < max_ts_) {
      if (stats) ++stats->rejected_out_of_order;
      return;
    }
    max_ts_ = std::max(max_ts_, pkt.timestamp);
    FlowKey key = canonicalize(pkt.tuple);
    auto it = open_.find(key);
    if (it != open_.end() &&
        pkt.timestamp - it->second.last_activity > idle_timeout_) {
      closed_.push_back(it->second.flow);
      open_.erase(it);
      it = open_.end();
    }
    if (it == open_.end()) {
      Accum acc;
      acc.flow.tuple = pkt.tuple;  // first packet fixes orientation
      acc.flow.start_time = pkt.timestamp;
      acc.flow.end_time = pkt.timestamp;
      acc.last_activity = pkt.timestamp;
      it = open_.emplace(key, acc).first;
    }
    Accum& acc = it->second;
    bool from_client = pkt.tuple.src_ip == acc.flow.tuple.src_ip &&
                       pkt.tuple.src_port == acc.flow.tuple.src_port;
    if (from_client) {
      acc.flow.client_pkts += 1;
      acc.flow.client_bytes += pkt.payload_len;
    } else {
      acc.flow.server_pkts += 1;
      acc.flow.server_bytes += pkt.payload_len;
    }
    acc.flow.end_time = std::max(acc.flow.end_time, pkt.timestamp);
    acc.last_activity = std::max(acc.last_activity, pkt.timestamp);
  }

  /// Closes everything still open and returns all flows sorted by
  /// (start_time, canonical key) so output order is reproducible.
  std::vector<FlowRecord> finish() {
    for (auto& [key, acc] : open_) closed_.push_back(acc.flow);
    open_.clear();
    std::sort(closed_.begin(), closed_.end(),
              [](const FlowRecord& a, const FlowRecord& b) {
                if (a.start_time != b.start_time)
                  return a.start_time < b.start_time;
                return canonicalize(a.tuple) < canonicalize(b.tuple);
              });
    return std::move(closed_);
  }

 private:
  struct Accum {
    FlowRecord flow;
    double last_activity = 0.0;
  };

  double idle_timeout_;
  static constexpr double reorder_tolerance_ = 1.0;
  double max_ts_ = -1e18;
  std::map<FlowKey, Accum> open_;
  std::vector<FlowRecord> closed_;
};

inline std::vector<FlowRecord> assemble_flows(
    const std::vector<PacketRecord>& packets, double idle_timeout = 120.0,
    IngestStats* stats = nullptr) {
  FlowTable table(idle_timeout);
  for (const auto& pkt : packets) table.add(pkt, stats);
  return table.finish();
}

// ---------------------------------------------------------------------------
// Canonical flow-record JSONL
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json flow_to_json(const FlowRecord& f) {
  nlohmann::ordered_json j;
  j["src_ip"] = f.tuple.src_ip.str();
  j["src_port"] = f.tuple.src_port;
  j["dst_ip"] = f.tuple.dst_ip.str();
  j["dst_port"] = f.tuple.dst_port;
  j["proto"] = proto_name(f.tuple.proto);
  j["start_time"] = f.start_time;
  j["end_time"] = f.end_time;
  j["client_pkts"] = f.client_pkts;
  j["server_pkts"] = f.server_pkts;
  j["client_bytes"] = f.client_bytes;
  j["server_bytes"] = f.server_bytes;
  if (f.label == FlowRecord::kBenign) j["label"] = "benign";
  if (f.label == FlowRecord::kMalware) j["label"] = "malware";
  return j;
}

inline FlowRecord flow_from_json(const nlohmann::json& j) {
  FlowRecord f;
  f.tuple.src_ip = IpAddress::parse(j.at("src_ip").get<std::string>());
  f.tuple.src_port = j.at("src_port").get<std::uint16_t>();
  f.tuple.dst_ip = IpAddress::parse(j.at("dst_ip").get<std::string>());
  f.tuple.dst_port = j.at("dst_port").get<std::uint16_t>();
  f.tuple.proto = parse_proto(j.at("proto").get<std::string>());
  f.start_time = j.at("start_time").get<double>();
  f.end_time = j.at("end_time").get<double>();
  f.client_pkts = j.at("client_pkts").get<std::uint64_t>();
  f.server_pkts = j.at("server_pkts").get<std::uint64_t>();
  f.client_bytes = j.at("client_bytes").get<std::uint64_t>();
  f.server_bytes = j.at("server_bytes").get<std::uint64_t>();
  if (j.contains("label")) {
    Label l = parse_label(j.at("label").get<std::string>());
    f.label = l == Label::Benign   ? FlowRecord::kBenign
              : l == Label::Malware ? FlowRecord::kMalware
                                    : FlowRecord::kUnlabeled;
  }
  if (f.end_time < f.start_time)
    throw Error("flow end_time precedes start_time");
  return f;
}

inline void write_flow_jsonl(const std::vector<FlowRecord>& flows,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("ingest", "cannot write flow file: " + path);
  for (const auto& f : flows) out << flow_to_json(f).dump() << '\n';
}

/// Reads the canonical flow format. A malformed line is rejected: with an
/// error collector it is skipped and reported by line number, without one
/// the first bad line aborts the read.
inline std::vector<FlowRecord> read_flow_jsonl(
    const std::string& path, std::vector<std::string>* errors = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("ingest", "cannot open flow file: " + path);
  std::vector<FlowRecord> flows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      flows.push_back(flow_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      std::string msg =
          path + " line " + std::to_string(line_no) + ": " + e.what();
      if (!errors) throw Error("ingest", msg);
      errors->push_back(msg);
    }
  }
  return flows;
}

}  // namespace cbseq
