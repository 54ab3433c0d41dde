#pragma once

#include <deque>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "splitflow/endpoint.hpp"
#include "splitflow/flow.hpp"
#include "splitflow/simnet.hpp"

namespace splitflow {

// Per-side middlebox policy. A side is the set of hosts reachable in one
// direction; the config applies to downstream sections transmitting toward
// those hosts, and to ELN reporting for packets arriving from them.
struct MiddleboxSideConfig {
  std::set<std::uint32_t> toward;  // host addrs on this side
  std::string cc = "newreno";
  CcOptions cc_opts;
  std::size_t queue_capacity = 10;
  bool share_fixed_rate = true;  // divide fixed_rate among active flows
  bool local_recovery = false;
  bool eln_reports = false;
};

struct MiddleboxConfig {
  MiddleboxSideConfig side[2];
  std::size_t max_flows = 1024;
  Duration idle_gc = sec(60);
};

// Flow middlebox: terminates the upstream flow section of every flow
// crossing it, holds packets in a per-flow shared queue, re-originates them
// on the downstream section, and releases upstream acknowledgments only
// after downstream transmission. Never parses beyond the flow header.
class Middlebox {
 public:
  Middlebox(Simulator& sim, Network& net, Node* node, MiddleboxConfig cfg);
  ~Middlebox();

  // All SplitFlows discarded; nothing survives a restart.
  void crash();

  struct SplitFlow {
    EndpointAddr src;
    EndpointAddr dst;
    int downstream_side;
    FlowRecvState released;  // upstream ack state; advances only on forward
    std::deque<std::pair<std::uint32_t, Bytes>> queue;
    std::set<std::uint32_t> pending_ack;  // seqs deposited but not released
    std::unique_ptr<FlowSession> downstream;
    SimTime last_activity = 0;
    std::uint64_t deposited = 0;
    std::uint64_t forwarded = 0;
    std::uint64_t dropped_full = 0;
  };

  std::size_t flow_count() const { return splits_.size(); }
  const SplitFlow* find(EndpointAddr src, EndpointAddr dst) const;
  // Summary of all protocol state, for the fate-sharing check: a crashed
  // and restarted middlebox summarizes identically to a fresh one.
  std::string state_summary() const;

  struct Stats {
    std::uint64_t intercepted = 0;
    std::uint64_t passed_through = 0;
    std::uint64_t deposits = 0;
    std::uint64_t forwards = 0;
    std::uint64_t queue_drops = 0;
    std::uint64_t acks_released = 0;
    std::uint64_t acks_consumed = 0;
  };
  const Stats& stats() const { return stats_; }

  // Instrumentation: called as (upstream_seq, downstream_seq, payload) at
  // the instant a queue entry is re-originated, before the ack releases.
  using ForwardTap = std::function<void(std::uint32_t, std::uint32_t, ByteView)>;
  void set_forward_tap(ForwardTap t) { forward_tap_ = std::move(t); }

 private:
  using Key = std::pair<EndpointAddr, EndpointAddr>;

  bool on_transit(const Datagram& d);
  void deposit(SplitFlow& sf, std::uint32_t seq, ByteView payload);
  bool forward_one(SplitFlow& sf);
  void release_ack(SplitFlow& sf, std::uint32_t seq);
  SplitFlow* find_or_create(EndpointAddr src, EndpointAddr dst);
  int side_of(HostAddr h) const;
  void rebalance_fixed_rates();
  void arm_gc();
  void on_eln(const LossNotification& n);

  Simulator& sim_;
  Network& net_;
  Node* node_;
  EndpointMux mux_;
  MiddleboxConfig cfg_;
  std::map<Key, std::unique_ptr<SplitFlow>> splits_;
  EventHandle gc_timer_{};
  ForwardTap forward_tap_;
  Stats stats_;
};

}  // namespace splitflow
