#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "splitflow/sha256.hpp"

namespace splitflow {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Per-packet header budget, all fields big-endian on the wire:
//   endpoint 8 + flow 12 + isolation 24 + stream data frame 8 = 52 bytes.
constexpr std::size_t kEndpointHeaderSize = 8;
constexpr std::size_t kFlowHeaderSize = 12;
constexpr std::size_t kIsolationHeaderSize = 24;
constexpr std::size_t kFrameHeaderSize = 8;
constexpr std::size_t kMtu = 1500;
constexpr std::size_t kMaxFlowPayload = kMtu - kEndpointHeaderSize - kFlowHeaderSize;
constexpr std::size_t kMaxStreamSegment =
    kMtu - kEndpointHeaderSize - kFlowHeaderSize - kIsolationHeaderSize - kFrameHeaderSize;

enum class DecodeError { truncated, checksum, malformed };

template <typename T>
using Decoded = std::variant<T, DecodeError>;

template <typename T>
bool ok(const Decoded<T>& d) {
  return std::holds_alternative<T>(d);
}
template <typename T>
DecodeError err_of(const Decoded<T>& d) {
  return std::get<DecodeError>(d);
}

void put_u16(Bytes& b, std::uint16_t v);
void put_u24(Bytes& b, std::uint32_t v);
void put_u32(Bytes& b, std::uint32_t v);
void put_u64(Bytes& b, std::uint64_t v);
std::uint16_t get_u16(const std::uint8_t* p);
std::uint32_t get_u24(const std::uint8_t* p);
std::uint32_t get_u32(const std::uint8_t* p);
std::uint64_t get_u64(const std::uint8_t* p);

// ---------------------------------------------------------------------------
// Endpoint layer: UDP-style datagram header.
//   src_port u16 | dst_port u16 | length u16 | checksum u16
// length covers header+payload; checksum is the 16-bit ones'-complement of the
// ones'-complement sum over header+payload with the checksum field zeroed.

struct HostAddr {
  std::uint32_t value = 0;
  auto operator<=>(const HostAddr&) const = default;
};

struct EndpointAddr {
  HostAddr host;
  std::uint16_t port = 0;
  auto operator<=>(const EndpointAddr&) const = default;
};

struct EndpointHeader {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint16_t length = 0;
  std::uint16_t checksum = 0;
};

std::uint16_t ones_complement_checksum(ByteView data);
Bytes encode_endpoint(std::uint16_t src_port, std::uint16_t dst_port, ByteView payload);

struct EndpointPacket {
  EndpointHeader header;
  ByteView payload;  // view into the decoded buffer
};
Decoded<EndpointPacket> decode_endpoint(ByteView datagram);

// ---------------------------------------------------------------------------
// Flow regulation layer header.
//   seq u32 | ack u32 | ackmap u24 | flags u8
// ackmap bit i (bit 0 = LSB) set <=> sequence (ack-1-i) was received.

constexpr std::uint8_t kFlowFlagAckValid = 0x01;
constexpr std::uint8_t kFlowFlagElnReport = 0x02;
constexpr std::uint8_t kFlowFlagPureAck = 0x04;

struct FlowHeader {
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint32_t ackmap = 0;  // low 24 bits used
  std::uint8_t flags = 0;

  bool ack_valid() const { return flags & kFlowFlagAckValid; }
  bool eln_report() const { return flags & kFlowFlagElnReport; }
  bool pure_ack() const { return flags & kFlowFlagPureAck; }
};

Bytes encode_flow(const FlowHeader& h, ByteView payload);

struct FlowPacket {
  FlowHeader header;
  ByteView payload;
};
Decoded<FlowPacket> decode_flow(ByteView bytes);

// ---------------------------------------------------------------------------
// Isolation layer header.
//   seq u64 | mac 16 bytes
// seq doubles as the nonce; the first byte of a valid isolation packet is
// 0x00 for any seq < 2^56, which is what lets handshake payloads (leading
// 0x01/0x02) share a flow session with sealed packets.

struct IsolationHeader {
  std::uint64_t seq = 0;
  std::array<std::uint8_t, 16> mac{};
};

Bytes encode_isolation(const IsolationHeader& h, ByteView payload);
Decoded<IsolationHeader> decode_isolation_header(ByteView bytes);

// ---------------------------------------------------------------------------
// Semantic layer frames.
//   flags u8 | stream_id u16 | window_exp u8 | offset u32
// window_exp encodes the receive window as 2^exp bytes; exp 0 means closed.

constexpr std::uint8_t kFrameFlagFin = 0x01;
constexpr std::uint8_t kFrameFlagOpen = 0x02;
constexpr std::uint8_t kFrameFlagReset = 0x04;
constexpr std::uint8_t kFrameFlagAck = 0x08;

struct FrameHeader {
  std::uint8_t flags = 0;
  std::uint16_t stream_id = 0;
  std::uint8_t window_exp = 0;
  std::uint32_t offset = 0;

  bool fin() const { return flags & kFrameFlagFin; }
  bool open() const { return flags & kFrameFlagOpen; }
  bool reset() const { return flags & kFrameFlagReset; }
  bool is_ack() const { return flags & kFrameFlagAck; }
};

Bytes encode_frame(const FrameHeader& h, ByteView payload);

struct Frame {
  FrameHeader header;
  ByteView payload;
};
Decoded<Frame> decode_frame(ByteView bytes);

// ACK frame payload: count u8, then (start u32, end u32) pairs, ranges
// half-open, disjoint, sorted ascending.
struct SackRange {
  std::uint32_t start = 0;
  std::uint32_t end = 0;
};
Bytes encode_sack_payload(const std::vector<SackRange>& ranges);
Decoded<std::vector<SackRange>> decode_sack_payload(ByteView payload);

// ---------------------------------------------------------------------------
// Channel negotiation messages, carried as flow payloads.
//   INIT:     0x01 | pub 32B | nonce 8B
//   RESPONSE: 0x02 | pub 32B | nonce 8B | echo_nonce 8B | mac 16B

constexpr std::uint8_t kMsgIsolation = 0x00;
constexpr std::uint8_t kMsgInit = 0x01;
constexpr std::uint8_t kMsgResponse = 0x02;

struct InitMessage {
  std::array<std::uint8_t, 32> pub{};
  std::uint64_t nonce = 0;
};
struct ResponseMessage {
  std::array<std::uint8_t, 32> pub{};
  std::uint64_t nonce = 0;
  std::uint64_t echo_nonce = 0;
  std::array<std::uint8_t, 16> mac{};
};

Bytes encode_init(const InitMessage& m);
Decoded<InitMessage> decode_init(ByteView b);
Bytes encode_response(const ResponseMessage& m);
Decoded<ResponseMessage> decode_response(ByteView b);

// ---------------------------------------------------------------------------
// Registration protocol datagrams (endpoint payloads on port 3737).
//   0x10 REGISTER{identity 32B, host u32, port u16}
//   0x11 REG_OK
//   0x12 LOOKUP{identity 32B}
//   0x13 LOOKUP_OK{host u32, port u16}
//   0x14 NOT_FOUND

constexpr std::uint16_t kRegistryPort = 3737;
constexpr std::uint8_t kMsgRegister = 0x10;
constexpr std::uint8_t kMsgRegOk = 0x11;
constexpr std::uint8_t kMsgLookup = 0x12;
constexpr std::uint8_t kMsgLookupOk = 0x13;
constexpr std::uint8_t kMsgNotFound = 0x14;

using HostIdentity = std::array<std::uint8_t, 32>;

Bytes encode_register(const HostIdentity& id, EndpointAddr locator);
Bytes encode_reg_ok();
Bytes encode_lookup(const HostIdentity& id);
Bytes encode_lookup_ok(EndpointAddr locator);
Bytes encode_not_found();

struct RegistryMessage {
  std::uint8_t type = 0;
  HostIdentity identity{};
  EndpointAddr locator;
};
Decoded<RegistryMessage> decode_registry(ByteView b);

}  // namespace splitflow
