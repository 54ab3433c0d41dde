#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "splitflow/rng.hpp"
#include "splitflow/time.hpp"
#include "splitflow/wire.hpp"

namespace splitflow {

class Node;
class LinkDir;
class Network;

// ---------------------------------------------------------------------------
// Event engine. Single logical timeline; ties broken by insertion sequence so
// a given scenario+seed replays bit-identically.

using EventFn = std::function<void()>;

struct EventHandle {
  std::uint64_t id = 0;
  bool valid() const { return id != 0; }
};

struct LogLine {
  SimTime t;
  std::string kind;
  std::string where;
  std::string detail;
};

class EventLog {
 public:
  void enable(bool on) { enabled_ = on; }
  bool enabled() const { return enabled_; }
  void record(SimTime t, std::string kind, std::string where, std::string detail);
  const std::vector<LogLine>& lines() const { return lines_; }
  // One line per event: time_ns <TAB> kind <TAB> link_or_node <TAB> detail
  std::string to_tsv() const;
  void clear() { lines_.clear(); }

 private:
  bool enabled_ = false;
  std::vector<LogLine> lines_;
};

class Simulator {
 public:
  explicit Simulator(std::uint64_t master_seed) : master_seed_(master_seed) {}

  SimTime now() const { return now_; }
  std::uint64_t master_seed() const { return master_seed_; }

  // pre: at >= now(). Scheduling in the past is a contract violation.
  EventHandle schedule_at(SimTime at, EventFn fn);
  EventHandle schedule_after(Duration d, EventFn fn) { return schedule_at(now_ + d, fn); }
  void cancel(EventHandle h);

  void run_until(SimTime t_end);
  bool empty() const { return live_events_ == 0; }

  Rng& stream(const std::string& label);  // derived, stable per label

  EventLog& log() { return log_; }

 private:
  struct Entry {
    SimTime t;
    std::uint64_t seq;
    std::uint64_t id;
    bool operator>(const Entry& o) const {
      return t != o.t ? t > o.t : seq > o.seq;
    }
  };

  SimTime now_ = 0;
  std::uint64_t master_seed_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_id_ = 1;
  std::size_t live_events_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> queue_;
  std::unordered_map<std::uint64_t, EventFn> pending_;
  std::map<std::string, Rng> streams_;
  EventLog log_;
};

// ---------------------------------------------------------------------------
// Network model: nodes joined by unidirectional links with a serialization
// rate, propagation delay, a drop-tail packet queue, and a scheduled
// Bernoulli loss model.

struct LossModel {
  // (start_time, loss_rate) entries, start_times strictly increasing.
  std::vector<std::pair<SimTime, double>> schedule;
  double rate_at(SimTime t) const;
};

struct Datagram {
  HostAddr src_host;
  HostAddr dst_host;
  std::shared_ptr<const Bytes> bytes;  // endpoint header + payload

  std::size_t size() const { return bytes ? bytes->size() : 0; }
};

struct LossNotification {
  std::string link_id;
  EndpointAddr src_ep;   // flow section identity parsed from the dropped packet
  EndpointAddr dst_ep;
  std::uint32_t lost_flow_seq = 0;
  SimTime time = 0;
};

struct LinkCounters {
  std::uint64_t enqueued = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped_queue = 0;
  std::uint64_t dropped_loss = 0;
  bool operator==(const LinkCounters&) const = default;
};

class LinkDir {
 public:
  LinkDir(Network& net, std::string id, Node* from, Node* to, std::int64_t bandwidth_bps,
          Duration prop_delay, std::size_t queue_capacity);

  const std::string& id() const { return id_; }
  Node* from() const { return from_; }
  Node* to() const { return to_; }

  void set_loss_model(LossModel m) { loss_ = std::move(m); }
  void set_eln_capable(bool on) { eln_capable_ = on; }
  bool eln_capable() const { return eln_capable_; }
  std::int64_t bandwidth_bps() const { return bandwidth_bps_; }
  Duration prop_delay() const { return prop_delay_; }
  std::size_t queue_capacity() const { return queue_capacity_; }
  std::size_t queue_len() const { return queue_.size(); }

  // Entry point from the owning node. Drop decisions and delivery
  // scheduling happen here.
  void transmit(Datagram d);

  const LinkCounters& counters() const { return counters_; }

  // Instrumentation hooks; tap(kind, datagram) with kind one of
  // "enqueue", "deliver", "drop_queue", "drop_loss".
  using Tap = std::function<void(const std::string&, const Datagram&)>;
  void add_tap(Tap t) { taps_.push_back(std::move(t)); }

 private:
  void begin_serialize(Datagram d);
  void start_next();
  void fire_taps(const std::string& kind, const Datagram& d);

  Network& net_;
  std::string id_;
  Node* from_;
  Node* to_;
  std::int64_t bandwidth_bps_;
  Duration prop_delay_;
  std::size_t queue_capacity_;
  LossModel loss_;
  bool eln_capable_ = false;
  bool busy_ = false;
  std::deque<Datagram> queue_;
  LinkCounters counters_;
  std::vector<Tap> taps_;
};

class Node {
 public:
  Node(Network& net, std::string name, HostAddr addr);

  const std::string& name() const { return name_; }
  HostAddr addr() const { return addr_; }
  Network& net() { return net_; }

  // Local delivery callback (endpoint mux).
  using DeliverFn = std::function<void(const Datagram&)>;
  void set_deliver(DeliverFn f) { deliver_ = std::move(f); }

  // Transit interception (flow middleboxes). Return true to consume.
  using TransitHook = std::function<bool(const Datagram&)>;
  void set_transit_hook(TransitHook h) { transit_hook_ = std::move(h); }

  // Link-layer loss notifications (ELN-capable links terminate here).
  using ElnFn = std::function<void(const LossNotification&)>;
  void set_eln_handler(ElnFn f) { eln_ = std::move(f); }

  // Originate a datagram from this node.
  void send(Datagram d);
  // Called by the network when a datagram arrives at this node.
  void receive(Datagram d);
  void notify_loss(const LossNotification& n);

  std::uint64_t no_route_drops = 0;

 private:
  Network& net_;
  std::string name_;
  HostAddr addr_;
  DeliverFn deliver_;
  TransitHook transit_hook_;
  ElnFn eln_;

  friend class Network;
};

struct SimulationReport {
  std::map<std::string, LinkCounters> links;
  std::map<std::string, std::uint64_t> node_no_route;
  std::string to_string() const;
  bool operator==(const SimulationReport&) const = default;
};

class Network {
 public:
  explicit Network(Simulator& sim) : sim_(sim) {}

  Simulator& sim() { return sim_; }

  Node* add_node(const std::string& name, HostAddr addr);
  // One direction; id is "from->to".
  LinkDir* add_link(const std::string& from, const std::string& to, std::int64_t bandwidth_bps,
                    Duration prop_delay, std::size_t queue_capacity);
  void add_duplex(const std::string& a, const std::string& b, std::int64_t bandwidth_bps,
                  Duration prop_delay, std::size_t queue_capacity);

  Node* node(const std::string& name);
  LinkDir* link(const std::string& id);

  // Shortest-path next hops; recomputed after topology/address changes.
  void recompute_routes();
  void set_node_addr(const std::string& name, HostAddr addr);

  // Routing step: deliver locally, hand to middlebox hook, or forward.
  void route(Node* at, Datagram d);
  // Same, but skips the transit hook: locally originated traffic is never
  // intercepted by the node's own middlebox.
  void route_local(Node* at, Datagram d);

  SimulationReport report() const;

 private:
  Simulator& sim_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::unique_ptr<LinkDir>> links_;
  std::unordered_map<std::string, Node*> by_name_;
  std::map<std::uint32_t, Node*> by_addr_;
  // next_hop_[node][dst_node] -> link
  std::unordered_map<Node*, std::unordered_map<Node*, LinkDir*>> next_hop_;
};

// Parse src/dst endpoints and flow seq out of a raw datagram, for ELN
// notifications and middlebox classification. Returns false for anything
// that is not a well-formed flow data packet.
struct ParsedFlowDatagram {
  EndpointAddr src;
  EndpointAddr dst;
  FlowHeader flow;
  ByteView flow_payload;
};
bool parse_flow_datagram(const Datagram& d, ParsedFlowDatagram& out);

}  // namespace splitflow
