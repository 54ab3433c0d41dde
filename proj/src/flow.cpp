#include "splitflow/flow.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace splitflow {

// ---------------------------------------------------------------------------
// FlowRecvState

FlowRecvState::Observe FlowRecvState::observe(std::uint32_t seq) {
  if (!any_) {
    any_ = true;
    highest_ = seq;
    bitmap_ = 0;
    return Observe::fresh;
  }
  if (seq == highest_) return Observe::duplicate;
  if (seq > highest_) {
    std::uint32_t shift = seq - highest_;
    if (shift >= 25) {
      bitmap_ = 0;
    } else {
      bitmap_ = ((bitmap_ << shift) | (1u << (shift - 1))) & 0xFFFFFF;
    }
    highest_ = seq;
    return Observe::fresh;
  }
  std::uint32_t d = highest_ - seq;
  if (d <= 24) {
    std::uint32_t bit = 1u << (d - 1);
    if (bitmap_ & bit) return Observe::duplicate;
    bitmap_ |= bit;
    return Observe::fresh;
  }
  // Below the representable window: section restart.
  highest_ = seq;
  bitmap_ = 0;
  return Observe::restart;
}

// ---------------------------------------------------------------------------
// FlowSession

FlowSession::FlowSession(Simulator& sim, SendDatagramFn out, EndpointAddr local,
                         EndpointAddr remote, std::unique_ptr<CongestionController> cc,
                         FlowOptions opts)
    : sim_(sim),
      out_(std::move(out)),
      local_(local),
      remote_(remote),
      cc_(std::move(cc)),
      opts_(opts) {
  last_recv_ = sim_.now();
  if (opts_.condition_probes) arm_idle_probe();
}

FlowSession::~FlowSession() {
  sim_.cancel(rto_timer_);
  sim_.cancel(idle_timer_);
  sim_.cancel(rate_timer_);
}

int FlowSession::allowance() const {
  return cc_->allowance(static_cast<int>(in_flight_.size()), sim_.now());
}

std::variant<std::uint32_t, SendError> FlowSession::send(ByteView payload) {
  assert(payload.size() <= kMaxFlowPayload);
  if (condition_ == FlowCondition::down) return SendError::down;
  if (allowance() <= 0) {
    schedule_rate_wakeup();
    return SendError::blocked;
  }
  SimTime now = sim_.now();
  std::uint32_t seq = next_seq_++;
  bool probe = payload.empty();
  in_flight_.emplace(seq, InFlight{now, static_cast<std::uint32_t>(payload.size()), probe});
  if (opts_.local_recovery && !probe) rtx_buffer_[seq] = Bytes(payload.begin(), payload.end());

  FlowHeader h;
  h.seq = seq;
  out_(local_, remote_, encode_flow(h, payload));
  cc_->on_packet_sent(now);
  stats_.data_sent++;
  if (probe) stats_.probes_sent++;
  if (in_flight_.size() > static_cast<std::size_t>(std::ceil(cc_->cwnd())) + 1) {
    stats_.window_violations++;
  }
  if (!rto_timer_.valid()) arm_rto();
  return seq;
}

void FlowSession::request_send() {
  if (in_grant_loop_ || condition_ == FlowCondition::down) return;
  if (!cb_.may_send) return;
  in_grant_loop_ = true;
  while (allowance() > 0) {
    if (!cb_.may_send()) break;
  }
  in_grant_loop_ = false;
  schedule_rate_wakeup();
}

void FlowSession::schedule_rate_wakeup() {
  if (rate_timer_.valid() || !cb_.may_send) return;
  auto t = cc_->next_allowance_time(static_cast<int>(in_flight_.size()), sim_.now());
  if (!t) return;
  rate_timer_ = sim_.schedule_at(std::max(*t, sim_.now()), [this] {
    rate_timer_ = {};
    request_send();
  });
}

void FlowSession::emit_ack(std::uint8_t extra_flags, ByteView payload) {
  FlowHeader h;
  h.seq = 0;
  h.ack = recv_.highest();
  h.ackmap = recv_.bitmap();
  h.flags = static_cast<std::uint8_t>(kFlowFlagAckValid | kFlowFlagPureAck | extra_flags);
  out_(local_, remote_, encode_flow(h, payload));
  stats_.acks_emitted++;
}

void FlowSession::on_packet(const FlowHeader& h, ByteView payload) {
  if (condition_ == FlowCondition::down) return;  // terminal
  SimTime now = sim_.now();
  if (h.pure_ack()) {
    last_recv_ = now;
    peer_alive();
    if (h.eln_report()) process_eln_report(payload, now);
    if (h.ack_valid()) process_ack(h, now);
    request_send();
    return;
  }
  // Data packet: deliver upward immediately, regardless of order; an ack is
  // emitted for every data packet. Duplicates within the 25-sequence window
  // are suppressed but re-acked.
  stats_.data_received++;
  last_recv_ = now;
  auto seen = recv_.observe(h.seq);
  if (seen == FlowRecvState::Observe::duplicate) {
    stats_.duplicates_suppressed++;
    emit_ack();
    return;
  }
  if (!payload.empty()) {
    stats_.delivered++;
    if (cb_.deliver) cb_.deliver(payload);
  }
  emit_ack();
}

void FlowSession::process_ack(const FlowHeader& h, SimTime now) {
  // Sequences this ack reports as received. Sequence 0 is never assigned,
  // so ack=0 means the peer has not received anything yet.
  std::uint32_t reported[25];
  int n = 0;
  if (h.ack != 0) reported[n++] = h.ack;
  for (int i = 0; i < 24; i++) {
    if (h.ackmap & (1u << i)) {
      if (h.ack >= static_cast<std::uint32_t>(i + 1)) reported[n++] = h.ack - 1 - i;
    }
  }
  int newly_acked = 0;
  SimTime newest_sent = 0;
  bool acked_probe_only = true;
  for (int i = 0; i < n; i++) {
    std::uint32_t s = reported[i];
    if (s == 0) continue;
    known_received_.insert(s);
    auto it = in_flight_.find(s);
    if (it == in_flight_.end()) continue;
    newly_acked++;
    newest_sent = std::max(newest_sent, it->second.sent_at);
    if (!it->second.probe) acked_probe_only = false;
    in_flight_.erase(it);
    rtx_buffer_.erase(s);
  }
  (void)acked_probe_only;
  if (newly_acked > 0) {
    Duration rtt = newest_sent > 0 ? now - newest_sent : 0;
    cc_->on_ack(newly_acked, rtt, now);
    detect_gap_losses(now);
    arm_rto();
  }
  // Trim bookkeeping below the oldest outstanding sequence.
  if (!in_flight_.empty()) {
    known_received_.erase(known_received_.begin(),
                          known_received_.lower_bound(in_flight_.begin()->first));
  } else {
    known_received_.clear();
  }
}

void FlowSession::detect_gap_losses(SimTime now) {
  if (in_flight_.empty() || known_received_.empty()) return;
  // A sequence is lost once >= 3 sequences above it are known received.
  std::vector<std::uint32_t> lost;
  auto kit = known_received_.rbegin();
  int above = 0;
  for (auto fit = in_flight_.rbegin(); fit != in_flight_.rend(); ++fit) {
    while (kit != known_received_.rend() && *kit > fit->first) {
      ++kit;
      ++above;
    }
    if (above >= 3) lost.push_back(fit->first);
  }
  for (std::uint32_t s : lost) declare_lost(s, LossKind::dup_ack_gap, now);
}

void FlowSession::declare_lost(std::uint32_t seq, LossKind kind, SimTime now) {
  auto it = in_flight_.find(seq);
  if (it == in_flight_.end()) return;
  bool probe = it->second.probe;
  in_flight_.erase(it);
  rtx_buffer_.erase(seq);
  switch (kind) {
    case LossKind::dup_ack_gap:
      stats_.losses_dupack++;
      break;
    case LossKind::timeout:
      stats_.losses_timeout++;
      break;
    default:
      break;
  }
  cc_->on_loss(kind, now);
  if (!probe && cb_.loss_report) cb_.loss_report(seq, kind);
}

void FlowSession::process_eln_report(ByteView payload, SimTime now) {
  for (std::size_t off = 0; off + 4 <= payload.size(); off += 4) {
    std::uint32_t lseq = get_u32(payload.data() + off);
    auto it = in_flight_.find(lseq);
    if (it == in_flight_.end()) continue;
    in_flight_.erase(it);
    cc_->on_loss(LossKind::eln_notified, now);
    stats_.losses_eln++;
    auto buf = rtx_buffer_.find(lseq);
    if (opts_.local_recovery && buf != rtx_buffer_.end()) {
      Bytes data = std::move(buf->second);
      rtx_buffer_.erase(buf);
      auto res = send(data);
      if (std::holds_alternative<std::uint32_t>(res)) {
        stats_.eln_retransmits++;
        continue;
      }
      // No allowance for local recovery: surface the loss instead.
    } else {
      rtx_buffer_.erase(lseq);
    }
    if (cb_.loss_report) cb_.loss_report(lseq, LossKind::eln_notified);
  }
  arm_rto();
}

void FlowSession::arm_rto() {
  sim_.cancel(rto_timer_);
  rto_timer_ = {};
  if (in_flight_.empty()) return;
  SimTime deadline = in_flight_.begin()->second.sent_at + cc_->rto();
  rto_timer_ = sim_.schedule_at(std::max(deadline, sim_.now()), [this] {
    rto_timer_ = {};
    on_rto_fire();
  });
}

void FlowSession::on_rto_fire() {
  if (in_flight_.empty() || condition_ == FlowCondition::down) return;
  SimTime now = sim_.now();
  std::uint32_t oldest = in_flight_.begin()->first;
  declare_lost(oldest, LossKind::timeout, now);
  if (opts_.condition_probes) {
    consecutive_timeouts_++;
    if (consecutive_timeouts_ >= 4) {
      set_condition(FlowCondition::down);
      return;
    }
    if (consecutive_timeouts_ >= 1) set_condition(FlowCondition::uncertain);
  }
  arm_rto();
  request_send();
}

void FlowSession::arm_idle_probe() {
  sim_.cancel(idle_timer_);
  idle_timer_ = {};
  if (condition_ == FlowCondition::down) return;
  Duration wait = 2 * cc_->rto();
  // At least one rto between checks so probe retries pace with the rto.
  SimTime at = std::max(last_recv_ + wait, sim_.now() + cc_->rto());
  idle_timer_ = sim_.schedule_at(at, [this] {
    idle_timer_ = {};
    on_idle_fire();
  });
}

void FlowSession::on_idle_fire() {
  if (condition_ == FlowCondition::down) return;
  SimTime now = sim_.now();
  if (in_flight_.empty() && now - last_recv_ >= 2 * cc_->rto()) {
    // Keepalive probe: an empty data packet; the ack-per-data rule answers
    // it and the normal RTO path times it out.
    send(ByteView{});
  }
  arm_idle_probe();
}

void FlowSession::peer_alive() {
  consecutive_timeouts_ = 0;
  if (condition_ == FlowCondition::uncertain) set_condition(FlowCondition::up);
}

void FlowSession::set_condition(FlowCondition c) {
  if (condition_ == c || condition_ == FlowCondition::down) return;
  condition_ = c;
  if (c == FlowCondition::down) {
    sim_.cancel(rto_timer_);
    sim_.cancel(idle_timer_);
    sim_.cancel(rate_timer_);
    rto_timer_ = idle_timer_ = rate_timer_ = {};
  }
  if (cb_.condition) cb_.condition(c);
}

void FlowSession::on_link_loss(std::uint32_t lost_seq) {
  if (!opts_.eln_reports || condition_ == FlowCondition::down) return;
  Bytes payload;
  put_u32(payload, lost_seq);
  emit_ack(kFlowFlagElnReport, payload);
}

}  // namespace splitflow
