#include "splitflow/middlebox.hpp"

#include <sstream>

namespace splitflow {

Middlebox::Middlebox(Simulator& sim, Network& net, Node* node, MiddleboxConfig cfg)
    : sim_(sim), net_(net), node_(node), mux_(sim, node), cfg_(std::move(cfg)) {
  node_->set_transit_hook([this](const Datagram& d) { return on_transit(d); });
  node_->set_eln_handler([this](const LossNotification& n) { on_eln(n); });
  arm_gc();
}

Middlebox::~Middlebox() { sim_.cancel(gc_timer_); }

int Middlebox::side_of(HostAddr h) const {
  if (cfg_.side[0].toward.count(h.value)) return 0;
  if (cfg_.side[1].toward.count(h.value)) return 1;
  return -1;
}

bool Middlebox::on_transit(const Datagram& d) {
  ParsedFlowDatagram p;
  if (!parse_flow_datagram(d, p)) {
    stats_.passed_through++;
    return false;
  }
  if (p.flow.pure_ack()) {
    // Acknowledgment (or ELN report) traveling back toward the flow's
    // source: it belongs to this middlebox's downstream section.
    auto it = splits_.find(Key{p.dst, p.src});
    if (it == splits_.end()) {
      stats_.passed_through++;
      return false;
    }
    stats_.intercepted++;
    stats_.acks_consumed++;
    it->second->last_activity = sim_.now();
    it->second->downstream->on_packet(p.flow, p.flow_payload);
    return true;
  }
  SplitFlow* sf = find_or_create(p.src, p.dst);
  if (!sf) {
    stats_.passed_through++;  // table full: transparent fallback
    return false;
  }
  stats_.intercepted++;
  sf->last_activity = sim_.now();
  deposit(*sf, p.flow.seq, p.flow_payload);
  return true;
}

Middlebox::SplitFlow* Middlebox::find_or_create(EndpointAddr src, EndpointAddr dst) {
  auto it = splits_.find(Key{src, dst});
  if (it != splits_.end()) return it->second.get();
  if (splits_.size() >= cfg_.max_flows) return nullptr;
  int side = side_of(dst.host);
  if (side < 0) return nullptr;
  const MiddleboxSideConfig& sc = cfg_.side[side];

  auto sf = std::make_unique<SplitFlow>();
  SplitFlow* p = sf.get();
  p->src = src;
  p->dst = dst;
  p->downstream_side = side;
  p->last_activity = sim_.now();

  CcOptions opts = sc.cc_opts;
  FlowOptions fopts;
  fopts.local_recovery = sc.local_recovery;
  fopts.condition_probes = false;  // middleboxes hold soft state; no probing
  p->downstream = std::make_unique<FlowSession>(
      sim_,
      [this](EndpointAddr s, EndpointAddr t, ByteView bytes) { mux_.send(s, t, bytes); },
      src, dst, make_controller(sc.cc, opts), fopts);
  p->downstream->callbacks().may_send = [this, p] { return forward_one(*p); };

  splits_.emplace(Key{src, dst}, std::move(sf));
  sim_.log().record(sim_.now(), "split_flow", node_->name(),
                    std::to_string(src.port) + "->" + std::to_string(dst.port));
  rebalance_fixed_rates();
  return p;
}

void Middlebox::deposit(SplitFlow& sf, std::uint32_t seq, ByteView payload) {
  if (sf.pending_ack.count(seq)) return;  // duplicate deposit, queued once
  const MiddleboxSideConfig& sc = cfg_.side[sf.downstream_side];
  if (sf.queue.size() >= sc.queue_capacity) {
    // Silent drop, exactly like a drop-tail router: no ack is ever
    // released, so the upstream sender's loss detection sees a gap.
    sf.dropped_full++;
    stats_.queue_drops++;
    return;
  }
  sf.queue.emplace_back(seq, Bytes(payload.begin(), payload.end()));
  sf.pending_ack.insert(seq);
  sf.deposited++;
  stats_.deposits++;
  // Work-conserving: drain as far as the downstream allowance permits.
  sf.downstream->request_send();
}

bool Middlebox::forward_one(SplitFlow& sf) {
  if (sf.queue.empty()) return false;
  auto [seq, payload] = std::move(sf.queue.front());
  sf.queue.pop_front();
  auto res = sf.downstream->send(payload);
  if (!std::holds_alternative<std::uint32_t>(res)) {
    // No allowance after all; put it back for the next grant.
    sf.queue.emplace_front(seq, std::move(payload));
    return false;
  }
  if (forward_tap_) forward_tap_(seq, std::get<std::uint32_t>(res), payload);
  sf.forwarded++;
  stats_.forwards++;
  // Only now may the upstream section acknowledge receipt.
  sf.pending_ack.erase(seq);
  release_ack(sf, seq);
  return true;
}

void Middlebox::release_ack(SplitFlow& sf, std::uint32_t seq) {
  sf.released.observe(seq);
  FlowHeader h;
  h.seq = 0;
  h.ack = sf.released.highest();
  h.ackmap = sf.released.bitmap();
  h.flags = kFlowFlagAckValid | kFlowFlagPureAck;
  mux_.send(sf.dst, sf.src, encode_flow(h, {}));
  stats_.acks_released++;
}

void Middlebox::on_eln(const LossNotification& n) {
  // A link feeding this middlebox reported a non-congestion loss; if the
  // side the packet came from is ELN-managed, tell the section sender.
  auto it = splits_.find(Key{n.src_ep, n.dst_ep});
  if (it == splits_.end()) return;
  int from_side = side_of(n.src_ep.host);
  if (from_side < 0 || !cfg_.side[from_side].eln_reports) return;
  SplitFlow& sf = *it->second;
  Bytes payload;
  put_u32(payload, n.lost_flow_seq);
  FlowHeader h;
  h.seq = 0;
  h.ack = sf.released.highest();
  h.ackmap = sf.released.bitmap();
  h.flags = kFlowFlagAckValid | kFlowFlagPureAck | kFlowFlagElnReport;
  mux_.send(sf.dst, sf.src, encode_flow(h, payload));
}

void Middlebox::rebalance_fixed_rates() {
  for (int side = 0; side < 2; side++) {
    const MiddleboxSideConfig& sc = cfg_.side[side];
    if (sc.cc != "fixedrate" || !sc.share_fixed_rate) continue;
    std::vector<FixedRateController*> ccs;
    for (auto& [k, sf] : splits_) {
      if (sf->downstream_side != side) continue;
      if (auto* fr = dynamic_cast<FixedRateController*>(&sf->downstream->cc())) {
        ccs.push_back(fr);
      }
    }
    if (ccs.empty()) continue;
    double share = fixed_window_share(sc.cc_opts.fixed_rate_pps,
                                      static_cast<int>(ccs.size()));
    for (auto* fr : ccs) fr->set_rate(share, sim_.now());
  }
}

void Middlebox::arm_gc() {
  gc_timer_ = sim_.schedule_after(cfg_.idle_gc / 2, [this] {
    bool removed = false;
    for (auto it = splits_.begin(); it != splits_.end();) {
      if (sim_.now() - it->second->last_activity >= cfg_.idle_gc) {
        it = splits_.erase(it);
        removed = true;
      } else {
        ++it;
      }
    }
    if (removed) rebalance_fixed_rates();
    arm_gc();
  });
}

void Middlebox::crash() {
  // Soft state only: queues, sections, controllers, counters all vanish.
  splits_.clear();
  stats_ = Stats{};
  sim_.log().record(sim_.now(), "mb_crash", node_->name(), "");
}

const Middlebox::SplitFlow* Middlebox::find(EndpointAddr src, EndpointAddr dst) const {
  auto it = splits_.find(Key{src, dst});
  return it == splits_.end() ? nullptr : it->second.get();
}

std::string Middlebox::state_summary() const {
  std::ostringstream os;
  os << "flows=" << splits_.size();
  for (const auto& [k, sf] : splits_) {
    os << ";" << k.first.host.value << ":" << k.first.port << "->" << k.second.host.value
       << ":" << k.second.port << " q=" << sf->queue.size()
       << " pending=" << sf->pending_ack.size() << " next_seq_inflight=" << sf->downstream->in_flight();
  }
  os << " intercepted=" << stats_.intercepted << " deposits=" << stats_.deposits
     << " forwards=" << stats_.forwards;
  return os.str();
}

}  // namespace splitflow
