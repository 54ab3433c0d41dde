#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <variant>

#include "splitflow/flowcc.hpp"
#include "splitflow/simnet.hpp"
#include "splitflow/wire.hpp"

namespace splitflow {

enum class FlowCondition { up, uncertain, down };

enum class SendError { blocked, down };

// Receive-side sequence state: highest sequence seen plus a 24-bit map of
// receipt for the 24 sequences below it. Links are FIFO and paths are
// single-route, so a data sequence falling below the representable window
// can only mean the sender restarted the section; the anchor resets.
class FlowRecvState {
 public:
  enum class Observe { fresh, duplicate, restart };
  Observe observe(std::uint32_t seq);
  bool any() const { return any_; }
  std::uint32_t highest() const { return highest_; }
  std::uint32_t bitmap() const { return bitmap_; }

 private:
  bool any_ = false;
  std::uint32_t highest_ = 0;
  std::uint32_t bitmap_ = 0;
};

struct FlowOptions {
  bool local_recovery = false;   // keep transmitted payloads for ELN retransmission
  bool eln_reports = false;      // receiver: report link-notified losses to the peer
  bool condition_probes = true;  // keepalive probing + condition monitoring
};

// One endpoint of a flow section: sequenced, congestion-controlled,
// unreliable, unordered delivery with per-section acknowledgments and an
// explicit may-send grant toward the layer above.
class FlowSession {
 public:
  using SendDatagramFn =
      std::function<void(EndpointAddr src, EndpointAddr dst, ByteView payload)>;

  struct Callbacks {
    std::function<bool()> may_send;  // return true if the grant was consumed
    std::function<void(ByteView)> deliver;
    std::function<void(std::uint32_t seq, LossKind)> loss_report;
    std::function<void(FlowCondition)> condition;
  };

  FlowSession(Simulator& sim, SendDatagramFn out, EndpointAddr local, EndpointAddr remote,
              std::unique_ptr<CongestionController> cc, FlowOptions opts = {});
  ~FlowSession();

  FlowSession(const FlowSession&) = delete;
  FlowSession& operator=(const FlowSession&) = delete;

  Callbacks& callbacks() { return cb_; }

  // pre: payload.size() <= kMaxFlowPayload
  std::variant<std::uint32_t, SendError> send(ByteView payload);
  int allowance() const;
  // Runs the grant loop: while allowance is positive, offer may_send
  // upcalls until the layer above declines.
  void request_send();

  void on_packet(const FlowHeader& h, ByteView payload);
  void on_link_loss(std::uint32_t lost_seq);

  FlowCondition condition() const { return condition_; }
  CongestionController& cc() { return *cc_; }
  EndpointAddr local() const { return local_; }
  EndpointAddr remote() const { return remote_; }
  std::size_t in_flight() const { return in_flight_.size(); }
  const FlowRecvState& recv_state() const { return recv_; }

  struct Stats {
    std::uint64_t data_sent = 0;
    std::uint64_t data_received = 0;
    std::uint64_t delivered = 0;
    std::uint64_t duplicates_suppressed = 0;
    std::uint64_t acks_emitted = 0;
    std::uint64_t losses_dupack = 0;
    std::uint64_t losses_timeout = 0;
    std::uint64_t losses_eln = 0;
    std::uint64_t eln_retransmits = 0;
    std::uint64_t probes_sent = 0;
    std::uint64_t malformed_dropped = 0;
    std::uint64_t window_violations = 0;  // |in_flight| > ceil(cwnd)+1 right after a send
  };
  const Stats& stats() const { return stats_; }
  void count_malformed() { stats_.malformed_dropped++; }

 private:
  struct InFlight {
    SimTime sent_at;
    std::uint32_t size;
    bool probe;
  };

  void emit_ack(std::uint8_t extra_flags = 0, ByteView payload = {});
  void process_ack(const FlowHeader& h, SimTime now);
  void process_eln_report(ByteView payload, SimTime now);
  void detect_gap_losses(SimTime now);
  void declare_lost(std::uint32_t seq, LossKind kind, SimTime now);
  void arm_rto();
  void on_rto_fire();
  void arm_idle_probe();
  void on_idle_fire();
  void peer_alive();
  void set_condition(FlowCondition c);
  void schedule_rate_wakeup();

  Simulator& sim_;
  SendDatagramFn out_;
  EndpointAddr local_;
  EndpointAddr remote_;
  std::unique_ptr<CongestionController> cc_;
  FlowOptions opts_;
  Callbacks cb_;

  std::uint32_t next_seq_ = 1;
  std::map<std::uint32_t, InFlight> in_flight_;
  std::map<std::uint32_t, Bytes> rtx_buffer_;
  std::set<std::uint32_t> known_received_;
  FlowRecvState recv_;

  FlowCondition condition_ = FlowCondition::up;
  int consecutive_timeouts_ = 0;
  SimTime last_recv_ = 0;

  EventHandle rto_timer_{};
  EventHandle idle_timer_{};
  EventHandle rate_timer_{};
  bool in_grant_loop_ = false;

  Stats stats_;
};

}  // namespace splitflow
