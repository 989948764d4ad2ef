#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "cbseq/common.hpp"

namespace cbseq {

/// IPv4 or IPv6 address held as raw bytes. Ordering is (family, bytes),
/// which gives the deterministic endpoint ordering canonical keys rely on.
struct IpAddress {
  bool v6 = false;
  std::array<std::uint8_t, 16> bytes{};  // first 4 used when !v6

  auto operator<=>(const IpAddress&) const = default;

  static IpAddress v4(std::uint8_t a, std::uint8_t b, std::uint8_t c,
                      std::uint8_t d) {
    IpAddress ip;
    ip.bytes = {a, b, c, d};
    return ip;
  }

  static IpAddress v4_from_u32(std::uint32_t host_order) {
    return v4(static_cast<std::uint8_t>(host_order >> 24),
              static_cast<std::uint8_t>(host_order >> 16),
              static_cast<std::uint8_t>(host_order >> 8),
              static_cast<std::uint8_t>(host_order));
  }

  /// Parses dotted-quad IPv4 or hex-grouped IPv6 (with "::" elision).
  static IpAddress parse(const std::string& text);

  std::string str() const;
};

inline IpAddress IpAddress::parse(const std::string& text) {
  IpAddress ip;
  if (text.find(':') == std::string::npos) {
    unsigned parts[4];
    int n = 0;
    std::size_t pos = 0;
    while (pos <= text.size() && n < 4) {
      std::size_t dot = text.find('.', pos);
      std::string piece = text.substr(pos, dot == std::string::npos
                                               ? std::string::npos
                                               : dot - pos);
      if (piece.empty() || piece.size() > 3 ||
          piece.find_first_not_of("0123456789") != std::string::npos)
        throw Error("invalid IPv4 address: " + text);
      unsigned v = static_cast<unsigned>(std::stoul(piece));
      if (v > 255) throw Error("invalid IPv4 address: " + text);
      parts[n++] = v;
      if (dot == std::string::npos) {
        pos = text.size() + 1;
        break;
      }
      pos = dot + 1;
    }
    if (n != 4 || pos != text.size() + 1)
      throw Error("invalid IPv4 address: " + text);
    return v4(parts[0], parts[1], parts[2], parts[3]);
  }
  // IPv6
  ip.v6 = true;
  std::vector<std::uint16_t> head, tail;
  bool seen_elision = false;
  std::size_t pos = 0;
  const std::string t = text;
  auto push_group = [&](const std::string& g, std::vector<std::uint16_t>& out) {
    if (g.empty() || g.size() > 4 ||
        g.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
      throw Error("invalid IPv6 address: " + text);
    out.push_back(static_cast<std::uint16_t>(std::stoul(g, nullptr, 16)));
  };
  if (t.rfind("::", 0) == 0) {
    seen_elision = true;
    pos = 2;
  }
  while (pos < t.size()) {
    std::size_t colon = t.find(':', pos);
    std::string g = t.substr(pos, colon == std::string::npos
                                      ? std::string::npos
                                      : colon - pos);
    push_group(g, seen_elision ? tail : head);
    if (colon == std::string::npos) break;
    if (colon + 1 < t.size() && t[colon + 1] == ':') {
      if (seen_elision) throw Error("invalid IPv6 address: " + text);
      seen_elision = true;
      pos = colon + 2;
    } else {
      pos = colon + 1;
    }
  }
  std::size_t total = head.size() + tail.size();
  if (total > 8 || (!seen_elision && total != 8))
    throw Error("invalid IPv6 address: " + text);
  std::vector<std::uint16_t> groups = head;
  groups.insert(groups.end(), 8 - total, 0);
  groups.insert(groups.end(), tail.begin(), tail.end());
  for (int i = 0; i < 8; ++i) {
    ip.bytes[2 * i] = static_cast<std::uint8_t>(groups[i] >> 8);
    ip.bytes[2 * i + 1] = static_cast<std::uint8_t>(groups[i] & 0xff);
  }
  return ip;
}

inline std::string IpAddress::str() const {
  if (!v6) {
    return std::to_string(bytes[0]) + "." + std::to_string(bytes[1]) + "." +
           std::to_string(bytes[2]) + "." + std::to_string(bytes[3]);
  }
  static const char* hexd = "0123456789abcdef";
  std::string s;
  for (int i = 0; i < 8; ++i) {
    std::uint16_t g = static_cast<std::uint16_t>((bytes[2 * i] << 8) |
                                                 bytes[2 * i + 1]);
    if (i) s += ':';
    bool started = false;
    for (int shift = 12; shift >= 0; shift -= 4) {
      int d = (g >> shift) & 0xf;
      if (d || started || shift == 0) {
        s += hexd[d];
        started = true;
      }
    }
  }
  return s;
}

enum class Proto : std::uint8_t { TCP = 6, UDP = 17 };

inline std::string proto_name(Proto p) {
  return p == Proto::TCP ? "tcp" : "udp";
}

inline Proto parse_proto(const std::string& s) {
  if (s == "tcp" || s == "TCP") return Proto::TCP;
  if (s == "udp" || s == "UDP") return Proto::UDP;
  throw Error("unknown proto: " + s);
}

struct FiveTuple {
  IpAddress src_ip;
  std::uint16_t src_port = 0;
  IpAddress dst_ip;
  std::uint16_t dst_port = 0;
  Proto proto = Proto::TCP;

  bool operator==(const FiveTuple&) const = default;

  FiveTuple reversed() const {
    return FiveTuple{dst_ip, dst_port, src_ip, src_port, proto};
  }
};

/// Bidirectional flow key: the 5-tuple with its endpoints unordered.
/// A tuple and its reverse map to the same key.
struct FlowKey {
  IpAddress ip_a;
  std::uint16_t port_a = 0;
  IpAddress ip_b;
  std::uint16_t port_b = 0;
  Proto proto = Proto::TCP;

  auto operator<=>(const FlowKey&) const = default;
};

/// Channel key: the unordered IP pair alone, ports and proto excluded.
struct ChannelKey {
  IpAddress ip_a;
  IpAddress ip_b;

  auto operator<=>(const ChannelKey&) const = default;
};

/// Canonical bidirectional key for a tuple. The lexicographically
/// smaller (ip, port) endpoint comes first, so both directions of a
/// conversation share one key.
inline FlowKey canonicalize(const FiveTuple& t) {
  auto a = std::make_tuple(t.src_ip, t.src_port);
  auto b = std::make_tuple(t.dst_ip, t.dst_port);
  if (b < a)
    return FlowKey{t.dst_ip, t.dst_port, t.src_ip, t.src_port, t.proto};
  return FlowKey{t.src_ip, t.src_port, t.dst_ip, t.dst_port, t.proto};
}

inline ChannelKey channel_key(const IpAddress& x, const IpAddress& y) {
  if (y < x) return ChannelKey{y, x};
  return ChannelKey{x, y};
}

inline ChannelKey channel_key(const FiveTuple& t) {
  return channel_key(t.src_ip, t.dst_ip);
}

struct PacketRecord {
  FiveTuple tuple;
  double timestamp = 0.0;  // epoch seconds
  std::uint64_t payload_len = 0;  // transport payload bytes
};

/// One bidirectional flow, oriented initiator -> responder. The
/// initiator (client) is the sender of the first observed packet.
struct FlowRecord {
  FiveTuple tuple;
  double start_time = 0.0;
  double end_time = 0.0;
  std::uint64_t client_pkts = 0;
  std::uint64_t server_pkts = 0;
  std::uint64_t client_bytes = 0;
  std::uint64_t server_bytes = 0;
  int label = kUnlabeled;  // kBenign / kMalware / kUnlabeled

  static constexpr int kUnlabeled = -1;
  static constexpr int kBenign = 0;
  static constexpr int kMalware = 1;
};

enum class Label : std::uint8_t { Benign, Malware, Unlabeled };

inline std::string label_name(Label l) {
  switch (l) {
    case Label::Benign: return "benign";
    case Label::Malware: return "malware";
    default: return "unlabeled";
  }
}

inline Label parse_label(const std::string& s) {
  if (s == "benign") return Label::Benign;
  if (s == "malware") return Label::Malware;
  if (s == "unlabeled" || s.empty()) return Label::Unlabeled;
  throw Error("unknown label: " + s);
}

inline Label flow_label(const FlowRecord& f) {
  if (f.label == FlowRecord::kBenign) return Label::Benign;
  if (f.label == FlowRecord::kMalware) return Label::Malware;
  return Label::Unlabeled;
}

/// All traffic between one unordered IP pair inside one time window.
/// Flows stay sorted by start time; the list is never empty.
struct Channel {
  ChannelKey key;
  double start_time = 0.0;  // min flow start
  std::vector<FlowRecord> flows;
  Label label = Label::Unlabeled;

  void insert_flow(const FlowRecord& f) {
    auto it = std::upper_bound(
        flows.begin(), flows.end(), f,
        [](const FlowRecord& a, const FlowRecord& b) {
          return a.start_time < b.start_time;
        });
    flows.insert(it, f);
    start_time = flows.front().start_time;
  }
};

}  // namespace cbseq
