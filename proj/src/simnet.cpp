#include "splitflow/simnet.hpp"

#include <cassert>
#include <sstream>
#include <stdexcept>

namespace splitflow {

// ---------------------------------------------------------------------------
// EventLog

void EventLog::record(SimTime t, std::string kind, std::string where, std::string detail) {
  if (!enabled_) return;
  lines_.push_back({t, std::move(kind), std::move(where), std::move(detail)});
}

std::string EventLog::to_tsv() const {
  std::ostringstream os;
  for (const auto& l : lines_) {
    os << l.t << '\t' << l.kind << '\t' << l.where << '\t' << l.detail << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Simulator

EventHandle Simulator::schedule_at(SimTime at, EventFn fn) {
  if (at < now_) throw std::logic_error("schedule_at: time in the past");
  std::uint64_t id = next_id_++;
  queue_.push(Entry{at, next_seq_++, id});
  pending_.emplace(id, std::move(fn));
  live_events_++;
  return EventHandle{id};
}

void Simulator::cancel(EventHandle h) {
  auto it = pending_.find(h.id);
  if (it == pending_.end()) return;
  pending_.erase(it);
  live_events_--;
}

void Simulator::run_until(SimTime t_end) {
  while (!queue_.empty()) {
    const Entry e = queue_.top();
    auto it = pending_.find(e.id);
    if (it == pending_.end()) {
      queue_.pop();  // cancelled
      continue;
    }
    if (e.t > t_end) break;
    queue_.pop();
    EventFn fn = std::move(it->second);
    pending_.erase(it);
    live_events_--;
    now_ = e.t;
    fn();
  }
  now_ = t_end;
}

Rng& Simulator::stream(const std::string& label) {
  auto it = streams_.find(label);
  if (it == streams_.end()) {
    it = streams_.emplace(label, Rng::derive(master_seed_, label)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// LossModel

double LossModel::rate_at(SimTime t) const {
  double rate = 0.0;
  for (const auto& [start, r] : schedule) {
    if (start <= t) rate = r;
    else break;
  }
  return rate;
}

// ---------------------------------------------------------------------------
// LinkDir

LinkDir::LinkDir(Network& net, std::string id, Node* from, Node* to, std::int64_t bandwidth_bps,
                 Duration prop_delay, std::size_t queue_capacity)
    : net_(net),
      id_(std::move(id)),
      from_(from),
      to_(to),
      bandwidth_bps_(bandwidth_bps),
      prop_delay_(prop_delay),
      queue_capacity_(queue_capacity) {}

void LinkDir::fire_taps(const std::string& kind, const Datagram& d) {
  for (auto& t : taps_) t(kind, d);
}

void LinkDir::transmit(Datagram d) {
  Simulator& sim = net_.sim();
  counters_.enqueued++;
  sim.log().record(sim.now(), "enqueue", id_, std::to_string(d.size()));
  fire_taps("enqueue", d);
  if (busy_) {
    if (queue_.size() >= queue_capacity_) {
      counters_.dropped_queue++;
      sim.log().record(sim.now(), "drop_queue", id_, std::to_string(d.size()));
      fire_taps("drop_queue", d);
      return;
    }
    queue_.push_back(std::move(d));
    return;
  }
  begin_serialize(std::move(d));
}

void LinkDir::begin_serialize(Datagram d) {
  Simulator& sim = net_.sim();
  busy_ = true;
  Duration ser = static_cast<Duration>(d.size()) * 8 * kSecond / bandwidth_bps_;

  // Loss decision at serialization start, one draw per packet on lossy
  // links, from this link's own stream.
  bool lost = false;
  double rate = loss_.rate_at(sim.now());
  if (rate > 0.0) {
    lost = sim.stream("link/" + id_).bernoulli(rate);
  }

  // The serializer frees when the airtime is spent, delivery (or the loss
  // notification) lands prop_delay later.
  sim.schedule_after(ser, [this] { start_next(); });

  if (lost) {
    counters_.dropped_loss++;
    sim.log().record(sim.now(), "drop_loss", id_, std::to_string(d.size()));
    fire_taps("drop_loss", d);
    if (eln_capable_) {
      ParsedFlowDatagram parsed;
      if (parse_flow_datagram(d, parsed) && !parsed.flow.pure_ack()) {
        LossNotification note;
        note.link_id = id_;
        note.src_ep = parsed.src;
        note.dst_ep = parsed.dst;
        note.lost_flow_seq = parsed.flow.seq;
        Node* to = to_;
        sim.schedule_after(ser + prop_delay_, [this, to, note] {
          LossNotification n = note;
          n.time = net_.sim().now();
          to->notify_loss(n);
        });
      }
    }
    return;
  }

  Node* to = to_;
  sim.schedule_after(ser + prop_delay_, [this, to, pkt = std::move(d)]() mutable {
    counters_.delivered++;
    Simulator& s = net_.sim();
    s.log().record(s.now(), "deliver", id_, std::to_string(pkt.size()));
    fire_taps("deliver", pkt);
    to->receive(std::move(pkt));
  });
}

void LinkDir::start_next() {
  busy_ = false;
  if (queue_.empty()) return;
  Datagram d = std::move(queue_.front());
  queue_.pop_front();
  begin_serialize(std::move(d));
}

// ---------------------------------------------------------------------------
// Node

Node::Node(Network& net, std::string name, HostAddr addr)
    : net_(net), name_(std::move(name)), addr_(addr) {}

void Node::send(Datagram d) { net_.route_local(this, std::move(d)); }

void Node::receive(Datagram d) { net_.route(this, std::move(d)); }

void Node::notify_loss(const LossNotification& n) {
  if (eln_) eln_(n);
}

// ---------------------------------------------------------------------------
// Network

Node* Network::add_node(const std::string& name, HostAddr addr) {
  auto n = std::make_unique<Node>(*this, name, addr);
  Node* p = n.get();
  nodes_.push_back(std::move(n));
  by_name_[name] = p;
  by_addr_[addr.value] = p;
  return p;
}

LinkDir* Network::add_link(const std::string& from, const std::string& to,
                           std::int64_t bandwidth_bps, Duration prop_delay,
                           std::size_t queue_capacity) {
  Node* f = node(from);
  Node* t = node(to);
  assert(f && t);
  auto l = std::make_unique<LinkDir>(*this, from + "->" + to, f, t, bandwidth_bps, prop_delay,
                                     queue_capacity);
  LinkDir* p = l.get();
  links_.push_back(std::move(l));
  return p;
}

void Network::add_duplex(const std::string& a, const std::string& b, std::int64_t bandwidth_bps,
                         Duration prop_delay, std::size_t queue_capacity) {
  add_link(a, b, bandwidth_bps, prop_delay, queue_capacity);
  add_link(b, a, bandwidth_bps, prop_delay, queue_capacity);
}

Node* Network::node(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

LinkDir* Network::link(const std::string& id) {
  for (auto& l : links_) {
    if (l->id() == id) return l.get();
  }
  return nullptr;
}

void Network::recompute_routes() {
  next_hop_.clear();
  // BFS from every node over outgoing links.
  for (auto& src : nodes_) {
    std::unordered_map<Node*, LinkDir*> first_link;
    std::deque<Node*> frontier{src.get()};
    std::unordered_set<Node*> seen{src.get()};
    std::unordered_map<Node*, Node*> parent;
    std::unordered_map<Node*, LinkDir*> via;
    while (!frontier.empty()) {
      Node* cur = frontier.front();
      frontier.pop_front();
      for (auto& l : links_) {
        if (l->from() != cur || seen.count(l->to())) continue;
        seen.insert(l->to());
        parent[l->to()] = cur;
        via[l->to()] = l.get();
        frontier.push_back(l->to());
      }
    }
    for (auto& dst : nodes_) {
      if (dst.get() == src.get() || !seen.count(dst.get())) continue;
      // Walk back to find the first hop.
      Node* cur = dst.get();
      while (parent[cur] != src.get()) cur = parent[cur];
      first_link[dst.get()] = via[cur];
    }
    next_hop_[src.get()] = std::move(first_link);
  }
}

void Network::set_node_addr(const std::string& name, HostAddr addr) {
  Node* n = node(name);
  if (!n) return;
  by_addr_.erase(n->addr_.value);
  n->addr_ = addr;
  by_addr_[addr.value] = n;
  sim_.log().record(sim_.now(), "readdress", name, std::to_string(addr.value));
}

void Network::route(Node* at, Datagram d) {
  if (d.dst_host == at->addr()) {
    if (at->deliver_) at->deliver_(d);
    return;
  }
  if (at->transit_hook_ && at->transit_hook_(d)) return;
  route_local(at, std::move(d));
}

void Network::route_local(Node* at, Datagram d) {
  if (d.dst_host == at->addr()) {
    if (at->deliver_) at->deliver_(d);
    return;
  }
  auto dst_it = by_addr_.find(d.dst_host.value);
  if (dst_it == by_addr_.end()) {
    at->no_route_drops++;
    sim_.log().record(sim_.now(), "no_route", at->name(), std::to_string(d.dst_host.value));
    return;
  }
  auto& hops = next_hop_[at];
  auto hop_it = hops.find(dst_it->second);
  if (hop_it == hops.end()) {
    at->no_route_drops++;
    sim_.log().record(sim_.now(), "no_route", at->name(), std::to_string(d.dst_host.value));
    return;
  }
  hop_it->second->transmit(std::move(d));
}

SimulationReport Network::report() const {
  SimulationReport r;
  for (const auto& l : links_) r.links[l->id()] = l->counters();
  for (const auto& n : nodes_) r.node_no_route[n->name()] = n->no_route_drops;
  return r;
}

std::string SimulationReport::to_string() const {
  std::ostringstream os;
  for (const auto& [id, c] : links) {
    os << id << " enqueued=" << c.enqueued << " delivered=" << c.delivered
       << " dropped_queue=" << c.dropped_queue << " dropped_loss=" << c.dropped_loss << '\n';
  }
  for (const auto& [name, n] : node_no_route) {
    if (n) os << name << " no_route=" << n << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

bool parse_flow_datagram(const Datagram& d, ParsedFlowDatagram& out) {
  if (!d.bytes) return false;
  auto ep = decode_endpoint(*d.bytes);
  if (!ok(ep)) return false;
  const auto& pkt = std::get<EndpointPacket>(ep);
  if (pkt.header.dst_port == kRegistryPort || pkt.header.src_port == kRegistryPort) return false;
  auto fl = decode_flow(pkt.payload);
  if (!ok(fl)) return false;
  const auto& fp = std::get<FlowPacket>(fl);
  out.src = EndpointAddr{d.src_host, pkt.header.src_port};
  out.dst = EndpointAddr{d.dst_host, pkt.header.dst_port};
  out.flow = fp.header;
  out.flow_payload = fp.payload;
  return true;
}

}  // namespace splitflow
