#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "splitflow/flow.hpp"
#include "splitflow/sha256.hpp"
#include "splitflow/simnet.hpp"
#include "splitflow/wire.hpp"

namespace splitflow {

// Long-term host key material. The "public value" is an opaque 32-byte
// blob; the identity is its digest. The handshake built on this is
// deterministic plumbing, not secure key agreement: it demonstrates that
// in-path devices cannot parse or forge end-to-end content, nothing more.
struct HostKey {
  std::array<std::uint8_t, 32> pub{};
  HostIdentity identity{};

  static HostKey generate(Rng& rng);
};

enum class ChannelCondition { active, stalled, failed };
enum class OpenError { bad_mac, replay, window_too_old };
enum class CipherKind { null, stream_xor };

// Anti-replay: 64-bit sliding bitmap anchored at the highest verified
// sequence. A (channel, direction, seq) is accepted at most once.
class ReplayWindow {
 public:
  bool check_and_update(std::uint64_t seq, OpenError& err);
  std::uint64_t anchor() const { return anchor_; }

 private:
  std::uint64_t anchor_ = 0;  // highest verified; 0 = none yet
  std::uint64_t bitmap_ = 0;  // bit i => anchor-1-i seen
};

// End-to-end authenticated channel between host identities. Sequencing,
// anti-replay, integrity (HMAC-SHA256 truncated to 128 bits; the pinned
// keyed-digest primitive), optional confidentiality, stall propagation.
// No congestion control and no acknowledgments of its own.
class Channel {
 public:
  struct Callbacks {
    std::function<void(ByteView frame)> deliver_frame;
    std::function<void(ChannelCondition)> condition;  // edge-triggered
  };

  Channel(HostIdentity local, HostIdentity remote, Digest tx_key, Digest rx_key,
          CipherKind cipher);

  Callbacks& callbacks() { return cb_; }

  // seal assigns the next sequence, optionally encrypts, MACs. Returns
  // nullopt when the channel has failed.
  std::optional<Bytes> seal(ByteView frame);
  // open verifies MAC then replay window, decrypts, delivers the frame.
  std::optional<Bytes> open(ByteView packet, OpenError* err = nullptr);

  void on_flow_condition(FlowCondition c);

  ChannelCondition condition() const { return condition_; }
  HostIdentity local_identity() const { return local_; }
  HostIdentity remote_identity() const { return remote_; }
  std::uint64_t send_seq() const { return send_seq_; }

  struct Stats {
    std::uint64_t sealed = 0;
    std::uint64_t opened = 0;
    std::uint64_t rejected_mac = 0;
    std::uint64_t rejected_replay = 0;
    std::uint64_t rejected_old = 0;
  };
  const Stats& stats() const { return stats_; }

 private:
  Bytes apply_cipher(std::uint64_t seq, const Digest& key, ByteView data) const;
  std::array<std::uint8_t, 16> compute_mac(const Digest& key, std::uint64_t seq,
                                           ByteView payload) const;

  HostIdentity local_;
  HostIdentity remote_;
  Digest tx_key_;
  Digest rx_key_;
  CipherKind cipher_;
  std::uint64_t send_seq_ = 1;
  ReplayWindow replay_;
  ChannelCondition condition_ = ChannelCondition::active;
  Callbacks cb_;
  Stats stats_;
};

// Key derivation shared by both handshake roles:
//   K(dir) = HMAC(sorted(pub_a, pub_b), nonce_i || nonce_r || label)
Digest derive_channel_key(const std::array<std::uint8_t, 32>& pub_a,
                          const std::array<std::uint8_t, 32>& pub_b, std::uint64_t nonce_i,
                          std::uint64_t nonce_r, std::string_view label);

enum class NegotiateError { timeout, identity_mismatch };

// Initiator half of the two-message INIT/RESPONSE handshake. Messages ride
// as payloads on the flow session the caller provides through send_fn.
class Negotiator {
 public:
  using SendFn = std::function<void(ByteView payload)>;
  using DoneFn =
      std::function<void(std::variant<std::unique_ptr<Channel>, NegotiateError>)>;

  Negotiator(Simulator& sim, HostKey local, std::optional<HostIdentity> expected_responder,
             CipherKind cipher, SendFn send, DoneFn done);
  ~Negotiator();

  void start();
  // Feed RESPONSE payloads here; returns true when consumed.
  bool on_payload(ByteView payload);
  bool finished() const { return finished_; }

 private:
  void attempt();
  void fail(NegotiateError e);

  Simulator& sim_;
  HostKey local_;
  std::optional<HostIdentity> expected_;
  CipherKind cipher_;
  SendFn send_;
  DoneFn done_;
  std::uint64_t nonce_ = 0;
  int attempts_ = 0;
  Duration backoff_ = kRtoInitial;
  EventHandle timer_{};
  bool finished_ = false;
};

// Responder side: stateless handling of one INIT payload. Emits the
// RESPONSE through send_fn and returns the established channel.
std::unique_ptr<Channel> respond_to_init(const InitMessage& init, const HostKey& local,
                                         Rng& nonce_rng, CipherKind cipher,
                                         const Negotiator::SendFn& send);

}  // namespace splitflow
