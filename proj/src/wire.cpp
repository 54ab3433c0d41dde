#include "splitflow/wire.hpp"

#include <cstring>

namespace splitflow {

void put_u16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}
void put_u24(Bytes& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}
void put_u32(Bytes& b, std::uint32_t v) {
  put_u16(b, static_cast<std::uint16_t>(v >> 16));
  put_u16(b, static_cast<std::uint16_t>(v));
}
void put_u64(Bytes& b, std::uint64_t v) {
  put_u32(b, static_cast<std::uint32_t>(v >> 32));
  put_u32(b, static_cast<std::uint32_t>(v));
}
std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}
std::uint32_t get_u24(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 16) | (std::uint32_t(p[1]) << 8) | p[2];
}
std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(get_u16(p)) << 16) | get_u16(p + 2);
}
std::uint64_t get_u64(const std::uint8_t* p) {
  return (std::uint64_t(get_u32(p)) << 32) | get_u32(p + 4);
}

// ---------------------------------------------------------------------------
// Endpoint layer

std::uint16_t ones_complement_checksum(ByteView data) {
  std::uint32_t sum = 0;
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) sum += (std::uint32_t(data[i]) << 8) | data[i + 1];
  if (i < data.size()) sum += std::uint32_t(data[i]) << 8;  // odd byte padded with zero
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum & 0xFFFF);
}

Bytes encode_endpoint(std::uint16_t src_port, std::uint16_t dst_port, ByteView payload) {
  Bytes b;
  b.reserve(kEndpointHeaderSize + payload.size());
  put_u16(b, src_port);
  put_u16(b, dst_port);
  put_u16(b, static_cast<std::uint16_t>(kEndpointHeaderSize + payload.size()));
  put_u16(b, 0);  // checksum placeholder
  b.insert(b.end(), payload.begin(), payload.end());
  std::uint16_t sum = ones_complement_checksum(b);
  b[6] = static_cast<std::uint8_t>(sum >> 8);
  b[7] = static_cast<std::uint8_t>(sum);
  return b;
}

Decoded<EndpointPacket> decode_endpoint(ByteView datagram) {
  if (datagram.size() < kEndpointHeaderSize) return DecodeError::truncated;
  EndpointHeader h;
  h.src_port = get_u16(datagram.data());
  h.dst_port = get_u16(datagram.data() + 2);
  h.length = get_u16(datagram.data() + 4);
  h.checksum = get_u16(datagram.data() + 6);
  if (h.length != datagram.size()) return DecodeError::malformed;
  Bytes zeroed(datagram.begin(), datagram.end());
  zeroed[6] = 0;
  zeroed[7] = 0;
  if (ones_complement_checksum(zeroed) != h.checksum) return DecodeError::checksum;
  return EndpointPacket{h, datagram.subspan(kEndpointHeaderSize)};
}

// ---------------------------------------------------------------------------
// Flow layer

Bytes encode_flow(const FlowHeader& h, ByteView payload) {
  Bytes b;
  b.reserve(kFlowHeaderSize + payload.size());
  put_u32(b, h.seq);
  put_u32(b, h.ack);
  put_u24(b, h.ackmap & 0xFFFFFF);
  b.push_back(h.flags);
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

Decoded<FlowPacket> decode_flow(ByteView bytes) {
  if (bytes.size() < kFlowHeaderSize) return DecodeError::truncated;
  FlowHeader h;
  h.seq = get_u32(bytes.data());
  h.ack = get_u32(bytes.data() + 4);
  h.ackmap = get_u24(bytes.data() + 8);
  h.flags = bytes[11];
  return FlowPacket{h, bytes.subspan(kFlowHeaderSize)};
}

// ---------------------------------------------------------------------------
// Isolation layer

Bytes encode_isolation(const IsolationHeader& h, ByteView payload) {
  Bytes b;
  b.reserve(kIsolationHeaderSize + payload.size());
  put_u64(b, h.seq);
  b.insert(b.end(), h.mac.begin(), h.mac.end());
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

Decoded<IsolationHeader> decode_isolation_header(ByteView bytes) {
  if (bytes.size() < kIsolationHeaderSize) return DecodeError::truncated;
  IsolationHeader h;
  h.seq = get_u64(bytes.data());
  std::memcpy(h.mac.data(), bytes.data() + 8, 16);
  return h;
}

// ---------------------------------------------------------------------------
// Semantic layer

Bytes encode_frame(const FrameHeader& h, ByteView payload) {
  Bytes b;
  b.reserve(kFrameHeaderSize + payload.size());
  b.push_back(h.flags);
  put_u16(b, h.stream_id);
  b.push_back(h.window_exp);
  put_u32(b, h.offset);
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

Decoded<Frame> decode_frame(ByteView bytes) {
  if (bytes.size() < kFrameHeaderSize) return DecodeError::truncated;
  FrameHeader h;
  h.flags = bytes[0];
  h.stream_id = get_u16(bytes.data() + 1);
  h.window_exp = bytes[3];
  h.offset = get_u32(bytes.data() + 4);
  return Frame{h, bytes.subspan(kFrameHeaderSize)};
}

Bytes encode_sack_payload(const std::vector<SackRange>& ranges) {
  Bytes b;
  b.push_back(static_cast<std::uint8_t>(ranges.size()));
  for (const auto& r : ranges) {
    put_u32(b, r.start);
    put_u32(b, r.end);
  }
  return b;
}

Decoded<std::vector<SackRange>> decode_sack_payload(ByteView payload) {
  if (payload.empty()) return DecodeError::truncated;
  std::size_t count = payload[0];
  if (payload.size() < 1 + count * 8) return DecodeError::truncated;
  std::vector<SackRange> out;
  out.reserve(count);
  std::uint32_t prev_end = 0;
  for (std::size_t i = 0; i < count; i++) {
    SackRange r;
    r.start = get_u32(payload.data() + 1 + i * 8);
    r.end = get_u32(payload.data() + 1 + i * 8 + 4);
    if (r.end <= r.start) return DecodeError::malformed;       // non-empty
    if (i > 0 && r.start <= prev_end) return DecodeError::malformed;  // sorted, disjoint
    prev_end = r.end;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Negotiation

Bytes encode_init(const InitMessage& m) {
  Bytes b;
  b.push_back(kMsgInit);
  b.insert(b.end(), m.pub.begin(), m.pub.end());
  put_u64(b, m.nonce);
  return b;
}

Decoded<InitMessage> decode_init(ByteView b) {
  if (b.size() < 1 + 32 + 8) return DecodeError::truncated;
  if (b[0] != kMsgInit) return DecodeError::malformed;
  InitMessage m;
  std::memcpy(m.pub.data(), b.data() + 1, 32);
  m.nonce = get_u64(b.data() + 33);
  return m;
}

Bytes encode_response(const ResponseMessage& m) {
  Bytes b;
  b.push_back(kMsgResponse);
  b.insert(b.end(), m.pub.begin(), m.pub.end());
  put_u64(b, m.nonce);
  put_u64(b, m.echo_nonce);
  b.insert(b.end(), m.mac.begin(), m.mac.end());
  return b;
}

Decoded<ResponseMessage> decode_response(ByteView b) {
  if (b.size() < 1 + 32 + 8 + 8 + 16) return DecodeError::truncated;
  if (b[0] != kMsgResponse) return DecodeError::malformed;
  ResponseMessage m;
  std::memcpy(m.pub.data(), b.data() + 1, 32);
  m.nonce = get_u64(b.data() + 33);
  m.echo_nonce = get_u64(b.data() + 41);
  std::memcpy(m.mac.data(), b.data() + 49, 16);
  return m;
}

// ---------------------------------------------------------------------------
// Registration protocol

Bytes encode_register(const HostIdentity& id, EndpointAddr locator) {
  Bytes b;
  b.push_back(kMsgRegister);
  b.insert(b.end(), id.begin(), id.end());
  put_u32(b, locator.host.value);
  put_u16(b, locator.port);
  return b;
}
Bytes encode_reg_ok() { return Bytes{kMsgRegOk}; }
Bytes encode_lookup(const HostIdentity& id) {
  Bytes b;
  b.push_back(kMsgLookup);
  b.insert(b.end(), id.begin(), id.end());
  return b;
}
Bytes encode_lookup_ok(EndpointAddr locator) {
  Bytes b;
  b.push_back(kMsgLookupOk);
  put_u32(b, locator.host.value);
  put_u16(b, locator.port);
  return b;
}
Bytes encode_not_found() { return Bytes{kMsgNotFound}; }

Decoded<RegistryMessage> decode_registry(ByteView b) {
  if (b.empty()) return DecodeError::truncated;
  RegistryMessage m;
  m.type = b[0];
  switch (m.type) {
    case kMsgRegister:
      if (b.size() < 1 + 32 + 6) return DecodeError::truncated;
      std::memcpy(m.identity.data(), b.data() + 1, 32);
      m.locator.host.value = get_u32(b.data() + 33);
      m.locator.port = get_u16(b.data() + 37);
      return m;
    case kMsgLookup:
      if (b.size() < 1 + 32) return DecodeError::truncated;
      std::memcpy(m.identity.data(), b.data() + 1, 32);
      return m;
    case kMsgLookupOk:
      if (b.size() < 1 + 6) return DecodeError::truncated;
      m.locator.host.value = get_u32(b.data() + 1);
      m.locator.port = get_u16(b.data() + 5);
      return m;
    case kMsgRegOk:
    case kMsgNotFound:
      return m;
    default:
      return DecodeError::malformed;
  }
}

}  // namespace splitflow
