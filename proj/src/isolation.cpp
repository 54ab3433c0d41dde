#include "splitflow/isolation.hpp"

#include <algorithm>
#include <cstring>

namespace splitflow {

HostKey HostKey::generate(Rng& rng) {
  HostKey k;
  for (int i = 0; i < 4; i++) {
    std::uint64_t w = rng.next_u64();
    for (int j = 0; j < 8; j++) k.pub[i * 8 + j] = static_cast<std::uint8_t>(w >> (8 * j));
  }
  k.identity = Sha256::of(k.pub);
  return k;
}

// ---------------------------------------------------------------------------
// ReplayWindow

bool ReplayWindow::check_and_update(std::uint64_t seq, OpenError& err) {
  if (seq == 0) {
    err = OpenError::bad_mac;  // sequence space starts at 1
    return false;
  }
  if (anchor_ == 0 || seq > anchor_) {
    std::uint64_t shift = anchor_ == 0 ? 64 : seq - anchor_;
    if (shift >= 64) {
      bitmap_ = 0;
    } else {
      bitmap_ = (bitmap_ << shift) | (1ull << (shift - 1));
    }
    anchor_ = seq;
    return true;
  }
  if (seq == anchor_) {
    err = OpenError::replay;
    return false;
  }
  std::uint64_t d = anchor_ - seq;
  if (d > 64) {
    err = OpenError::window_too_old;
    return false;
  }
  std::uint64_t bit = 1ull << (d - 1);
  if (bitmap_ & bit) {
    err = OpenError::replay;
    return false;
  }
  bitmap_ |= bit;
  return true;
}

// ---------------------------------------------------------------------------
// Channel

Channel::Channel(HostIdentity local, HostIdentity remote, Digest tx_key, Digest rx_key,
                 CipherKind cipher)
    : local_(local), remote_(remote), tx_key_(tx_key), rx_key_(rx_key), cipher_(cipher) {}

std::array<std::uint8_t, 16> Channel::compute_mac(const Digest& key, std::uint64_t seq,
                                                  ByteView payload) const {
  // MAC over header-with-mac-zeroed || payload.
  Bytes msg;
  msg.reserve(kIsolationHeaderSize + payload.size());
  put_u64(msg, seq);
  msg.resize(kIsolationHeaderSize, 0);
  msg.insert(msg.end(), payload.begin(), payload.end());
  Digest full = hmac_sha256(key, msg);
  std::array<std::uint8_t, 16> mac;
  std::memcpy(mac.data(), full.data(), 16);
  return mac;
}

Bytes Channel::apply_cipher(std::uint64_t seq, const Digest& key, ByteView data) const {
  Bytes out(data.begin(), data.end());
  if (cipher_ == CipherKind::null) return out;
  // Keystream blocks from the keyed digest over (label, seq, counter).
  Bytes block_input;
  block_input.reserve(4 + 8 + 4);
  for (char c : std::string_view("xor")) block_input.push_back(c);
  put_u64(block_input, seq);
  std::size_t ctr_at = block_input.size();
  put_u32(block_input, 0);
  for (std::size_t off = 0, ctr = 0; off < out.size(); off += 32, ctr++) {
    block_input[ctr_at] = static_cast<std::uint8_t>(ctr >> 24);
    block_input[ctr_at + 1] = static_cast<std::uint8_t>(ctr >> 16);
    block_input[ctr_at + 2] = static_cast<std::uint8_t>(ctr >> 8);
    block_input[ctr_at + 3] = static_cast<std::uint8_t>(ctr);
    Digest ks = hmac_sha256(key, block_input);
    std::size_t n = std::min<std::size_t>(32, out.size() - off);
    for (std::size_t i = 0; i < n; i++) out[off + i] ^= ks[i];
  }
  return out;
}

std::optional<Bytes> Channel::seal(ByteView frame) {
  if (condition_ == ChannelCondition::failed) return std::nullopt;
  IsolationHeader h;
  h.seq = send_seq_++;
  Bytes body = apply_cipher(h.seq, tx_key_, frame);
  h.mac = compute_mac(tx_key_, h.seq, body);
  stats_.sealed++;
  return encode_isolation(h, body);
}

std::optional<Bytes> Channel::open(ByteView packet, OpenError* err_out) {
  auto set_err = [&](OpenError e) {
    if (err_out) *err_out = e;
  };
  auto decoded = decode_isolation_header(packet);
  if (!ok(decoded)) {
    stats_.rejected_mac++;
    set_err(OpenError::bad_mac);
    return std::nullopt;
  }
  const auto& h = std::get<IsolationHeader>(decoded);
  ByteView body = packet.subspan(kIsolationHeaderSize);
  if (compute_mac(rx_key_, h.seq, body) != h.mac) {
    stats_.rejected_mac++;
    set_err(OpenError::bad_mac);
    return std::nullopt;
  }
  OpenError rerr;
  if (!replay_.check_and_update(h.seq, rerr)) {
    if (rerr == OpenError::replay) stats_.rejected_replay++;
    else stats_.rejected_old++;
    set_err(rerr);
    return std::nullopt;
  }
  stats_.opened++;
  Bytes frame = apply_cipher(h.seq, rx_key_, body);
  if (cb_.deliver_frame) cb_.deliver_frame(frame);
  return frame;
}

void Channel::on_flow_condition(FlowCondition c) {
  ChannelCondition next = condition_;
  switch (c) {
    case FlowCondition::down:
      next = ChannelCondition::failed;
      break;
    case FlowCondition::uncertain:
      next = ChannelCondition::stalled;
      break;
    case FlowCondition::up:
      next = ChannelCondition::active;
      break;
  }
  if (next == condition_ || condition_ == ChannelCondition::failed) return;
  condition_ = next;
  if (cb_.condition) cb_.condition(next);
}

// ---------------------------------------------------------------------------
// Key derivation

Digest derive_channel_key(const std::array<std::uint8_t, 32>& pub_a,
                          const std::array<std::uint8_t, 32>& pub_b, std::uint64_t nonce_i,
                          std::uint64_t nonce_r, std::string_view label) {
  const auto* lo = &pub_a;
  const auto* hi = &pub_b;
  if (std::lexicographical_compare(hi->begin(), hi->end(), lo->begin(), lo->end())) {
    std::swap(lo, hi);
  }
  Bytes key;
  key.insert(key.end(), lo->begin(), lo->end());
  key.insert(key.end(), hi->begin(), hi->end());
  Bytes msg;
  put_u64(msg, nonce_i);
  put_u64(msg, nonce_r);
  msg.insert(msg.end(), label.begin(), label.end());
  return hmac_sha256(key, msg);
}

namespace {

constexpr std::string_view kLabelInitToResp = "key:init->resp";
constexpr std::string_view kLabelRespToInit = "key:resp->init";

std::array<std::uint8_t, 16> response_mac(const Digest& key, const InitMessage& init,
                                          const ResponseMessage& resp) {
  Bytes transcript;
  for (char c : std::string_view("resp")) transcript.push_back(c);
  transcript.insert(transcript.end(), init.pub.begin(), init.pub.end());
  transcript.insert(transcript.end(), resp.pub.begin(), resp.pub.end());
  put_u64(transcript, init.nonce);
  put_u64(transcript, resp.nonce);
  Digest full = hmac_sha256(key, transcript);
  std::array<std::uint8_t, 16> mac;
  std::memcpy(mac.data(), full.data(), 16);
  return mac;
}

}  // namespace

// ---------------------------------------------------------------------------
// Negotiator

Negotiator::Negotiator(Simulator& sim, HostKey local,
                       std::optional<HostIdentity> expected_responder, CipherKind cipher,
                       SendFn send, DoneFn done)
    : sim_(sim),
      local_(local),
      expected_(expected_responder),
      cipher_(cipher),
      send_(std::move(send)),
      done_(std::move(done)) {}

Negotiator::~Negotiator() { sim_.cancel(timer_); }

void Negotiator::start() { attempt(); }

void Negotiator::attempt() {
  if (attempts_ >= 3) {
    fail(NegotiateError::timeout);
    return;
  }
  attempts_++;
  nonce_ = sim_.stream("negotiate/" + hex(local_.identity)).next_u64();
  InitMessage m;
  m.pub = local_.pub;
  m.nonce = nonce_;
  send_(encode_init(m));
  timer_ = sim_.schedule_after(backoff_, [this] {
    timer_ = {};
    attempt();
  });
  backoff_ *= 2;
}

void Negotiator::fail(NegotiateError e) {
  if (finished_) return;
  finished_ = true;
  sim_.cancel(timer_);
  timer_ = {};
  done_(e);
}

bool Negotiator::on_payload(ByteView payload) {
  if (finished_ || payload.empty() || payload[0] != kMsgResponse) return false;
  auto decoded = decode_response(payload);
  if (!ok(decoded)) return false;
  const auto& resp = std::get<ResponseMessage>(decoded);
  if (resp.echo_nonce != nonce_) return true;  // stale attempt, consumed silently
  HostIdentity resp_id = Sha256::of(resp.pub);
  if (expected_ && resp_id != *expected_) {
    fail(NegotiateError::identity_mismatch);
    return true;
  }
  Digest tx = derive_channel_key(local_.pub, resp.pub, nonce_, resp.nonce, kLabelInitToResp);
  Digest rx = derive_channel_key(local_.pub, resp.pub, nonce_, resp.nonce, kLabelRespToInit);
  InitMessage init;
  init.pub = local_.pub;
  init.nonce = nonce_;
  if (response_mac(rx, init, resp) != resp.mac) {
    fail(NegotiateError::identity_mismatch);
    return true;
  }
  finished_ = true;
  sim_.cancel(timer_);
  timer_ = {};
  done_(std::make_unique<Channel>(local_.identity, resp_id, tx, rx, cipher_));
  return true;
}

std::unique_ptr<Channel> respond_to_init(const InitMessage& init, const HostKey& local,
                                         Rng& nonce_rng, CipherKind cipher,
                                         const Negotiator::SendFn& send) {
  ResponseMessage resp;
  resp.pub = local.pub;
  resp.nonce = nonce_rng.next_u64();
  resp.echo_nonce = init.nonce;
  // Responder transmits with the resp->init key; its MAC doubles as the
  // key-confirmation over the transcript.
  Digest tx = derive_channel_key(init.pub, local.pub, init.nonce, resp.nonce, kLabelRespToInit);
  Digest rx = derive_channel_key(init.pub, local.pub, init.nonce, resp.nonce, kLabelInitToResp);
  resp.mac = response_mac(tx, init, resp);
  send(encode_response(resp));
  HostIdentity initiator_id = Sha256::of(init.pub);
  return std::make_unique<Channel>(local.identity, initiator_id, tx, rx, cipher);
}

}  // namespace splitflow
