#include "splitflow/host.hpp"

#include <cassert>

namespace splitflow {

// ---------------------------------------------------------------------------
// HostStack

HostStack::HostStack(Simulator& sim, Network& net, Node* node, StackConfig cfg)
    : sim_(sim),
      net_(net),
      node_(node),
      cfg_(std::move(cfg)),
      mux_(sim, node),
      rng_(Rng::derive(sim.master_seed(), "host/" + node->name())) {
  key_ = HostKey::generate(rng_);
  node_->set_eln_handler([this](const LossNotification& n) { on_eln(n); });
}

std::unique_ptr<FlowSession> HostStack::make_session(EndpointAddr local, EndpointAddr remote) {
  FlowOptions opts;
  opts.local_recovery = cfg_.local_recovery;
  opts.eln_reports = cfg_.eln_reports;
  opts.condition_probes = true;
  return std::make_unique<FlowSession>(
      sim_,
      [this](EndpointAddr s, EndpointAddr d, ByteView b) { mux_.send(s, d, b); },
      local, remote, make_controller(cfg_.cc, cfg_.cc_opts), opts);
}

Listener* HostStack::listen(std::uint16_t port, Listener::OnStream on_stream) {
  auto l = std::make_unique<Listener>(*this, port, std::move(on_stream));
  Listener* p = l.get();
  listeners_.push_back(std::move(l));
  if (primary_port_ == 0) primary_port_ = port;
  return p;
}

Connection* HostStack::connect(EndpointAddr remote, std::optional<HostIdentity> expected) {
  auto c = std::make_unique<Connection>(*this, remote, expected);
  Connection* p = c.get();
  connections_.push_back(std::move(c));
  return p;
}

void HostStack::set_registry(EndpointAddr server) {
  registry_client_ = std::make_unique<RegistryClient>(sim_, mux_, server);
}

void HostStack::register_now(RegistryClient::RegisterDone done) {
  if (!registry_client_) {
    if (done) done(false);
    return;
  }
  EndpointAddr locator{node_->addr(), primary_port_};
  registry_client_->register_identity(key_.identity, locator, std::move(done));
}

void HostStack::lookup(const HostIdentity& id, RegistryClient::LookupDone done) {
  if (!registry_client_) {
    if (done) done(std::nullopt);
    return;
  }
  registry_client_->lookup(id, std::move(done));
}

void HostStack::readdress(HostAddr addr) {
  net_.set_node_addr(node_->name(), addr);
  net_.recompute_routes();
  if (registry_client_) register_now();
}

void HostStack::on_eln(const LossNotification& n) {
  for (auto& l : listeners_) {
    if (n.dst_ep.port == l->port()) {
      l->handle_eln(n);
      return;
    }
  }
  for (auto& c : connections_) {
    if (n.dst_ep.port == c->local_port()) {
      c->handle_eln(n);
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Connection

Connection::Connection(HostStack& host, EndpointAddr remote,
                       std::optional<HostIdentity> expected)
    : host_(host), remote_(remote), expected_(expected) {
  ensure_stream(1);
  open_session();
  start_negotiation();
}

Connection::~Connection() {
  host_.sim().cancel(rebuild_timer_);
  if (local_port_) host_.mux().unbind(local_port_);
}

Stream& Connection::stream() { return ensure_stream(1); }

Stream& Connection::ensure_stream(std::uint16_t id) {
  auto it = streams_.find(id);
  if (it != streams_.end()) return *it->second;
  auto s = std::make_unique<Stream>(host_.sim(), id);
  Stream* p = s.get();
  p->callbacks().kick = [this] { pump(); };
  streams_.emplace(id, std::move(s));
  if (id != 1 && on_stream_created) on_stream_created(*p);
  return *p;
}

void Connection::open_session() {
  if (local_port_) host_.mux().unbind(local_port_);
  local_port_ = host_.mux().ephemeral_port();
  EndpointAddr local{host_.node()->addr(), local_port_};
  host_.mux().bind(local_port_, [this](EndpointAddr src, EndpointAddr, ByteView payload) {
    if (!session_ || src != session_->remote()) return;
    auto decoded = decode_flow(payload);
    if (!ok(decoded)) {
      if (session_) session_->count_malformed();
      return;
    }
    const auto& fp = std::get<FlowPacket>(decoded);
    session_->on_packet(fp.header, fp.payload);
  });
  session_ = host_.make_session(local, remote_);
  session_->callbacks().may_send = [this] { return on_grant(); };
  session_->callbacks().deliver = [this](ByteView p) { on_flow_payload(p); };
  session_->callbacks().condition = [this](FlowCondition c) {
    if (channel_) channel_->on_flow_condition(c);
    else if (c == FlowCondition::down && !rebuilding_) schedule_rebuild(rebuild_backoff_);
  };
}

void Connection::start_negotiation() {
  negotiator_ = std::make_unique<Negotiator>(
      host_.sim(), host_.key(), expected_, host_.config().cipher,
      [this](ByteView payload) {
        if (session_) session_->send(payload);
      },
      [this](std::variant<std::unique_ptr<Channel>, NegotiateError> result) {
        if (std::holds_alternative<NegotiateError>(result)) {
          stats_.negotiation_failures++;
          if (!ready_signaled_ && on_ready &&
              std::get<NegotiateError>(result) == NegotiateError::identity_mismatch) {
            failed_ = true;
            ready_signaled_ = true;
            on_ready(false);
            return;
          }
          // Keep trying: look the peer up again and renegotiate.
          schedule_rebuild(rebuild_backoff_);
          return;
        }
        adopt_channel(std::move(std::get<std::unique_ptr<Channel>>(result)));
      });
  negotiator_->start();
}

void Connection::adopt_channel(std::unique_ptr<Channel> ch) {
  bool was_rebuild = channel_ != nullptr || rebuilding_;
  channel_ = std::move(ch);
  channel_->callbacks().deliver_frame = [this](ByteView f) { dispatch_frame(f); };
  channel_->callbacks().condition = [this](ChannelCondition c) { on_channel_condition(c); };
  rebuilding_ = false;
  rebuild_backoff_ = sec(1);
  if (was_rebuild) {
    stats_.rebuilds++;
    for (auto& [id, s] : streams_) s->on_reattached(host_.sim().now());
    if (on_rebuilt) on_rebuilt(host_.sim().now());
  }
  if (!ready_signaled_) {
    ready_signaled_ = true;
    if (on_ready) on_ready(true);
  }
  pump();
}

void Connection::on_flow_payload(ByteView payload) {
  if (payload.empty()) return;
  switch (payload[0]) {
    case kMsgResponse:
      if (negotiator_ && !negotiator_->finished()) negotiator_->on_payload(payload);
      break;
    case kMsgInit:
      break;  // initiators do not answer handshakes
    default:
      if (channel_) channel_->open(payload);  // frames arrive via deliver_frame
      break;
  }
}

void Connection::dispatch_frame(ByteView frame) {
  auto decoded = decode_frame(frame);
  if (!ok(decoded)) return;
  const auto& f = std::get<Frame>(decoded);
  ensure_stream(f.header.stream_id).on_frame(f.header, f.payload, host_.sim().now());
}

bool Connection::on_grant() {
  if (!channel_ || channel_->condition() != ChannelCondition::active || !session_) return false;
  SimTime now = host_.sim().now();
  for (auto& [id, s] : streams_) {
    if (!s->has_work(now)) continue;
    auto frame = s->next_frame(now);
    if (!frame) continue;
    auto sealed = channel_->seal(*frame);
    if (!sealed) return false;
    auto res = session_->send(*sealed);
    if (std::holds_alternative<std::uint32_t>(res)) {
      stats_.grants_consumed++;
      stats_.frames_sent++;
      return true;
    }
    return false;
  }
  return false;
}

void Connection::pump() {
  if (session_) session_->request_send();
}

void Connection::on_channel_condition(ChannelCondition c) {
  if (c == ChannelCondition::failed) {
    if (on_stall) on_stall(host_.sim().now());
    if (!rebuilding_) schedule_rebuild(msec(1));
  }
}

void Connection::schedule_rebuild(Duration delay) {
  if (failed_) return;
  rebuilding_ = true;
  host_.sim().cancel(rebuild_timer_);
  rebuild_timer_ = host_.sim().schedule_after(delay, [this] {
    rebuild_timer_ = {};
    rebuild_step();
  });
  rebuild_backoff_ = std::min<Duration>(rebuild_backoff_ * 2, sec(8));
}

void Connection::rebuild_step() {
  // Look the peer up again (its locator may have changed), then negotiate
  // over a fresh section from a fresh local port.
  if (host_.has_registry() && expected_) {
    host_.lookup(*expected_, [this](std::optional<EndpointAddr> locator) {
      if (locator) remote_ = *locator;
      open_session();
      start_negotiation();
    });
  } else {
    open_session();
    start_negotiation();
  }
}

void Connection::handle_eln(const LossNotification& n) {
  if (session_ && n.src_ep == session_->remote()) session_->on_link_loss(n.lost_flow_seq);
}

// ---------------------------------------------------------------------------
// Listener

Listener::Listener(HostStack& host, std::uint16_t port, OnStream on_stream)
    : host_(host), port_(port), on_stream_(std::move(on_stream)) {
  bool bound = host_.mux().bind(port_, [this](EndpointAddr src, EndpointAddr, ByteView payload) {
    on_datagram(src, payload);
  });
  assert(bound);
  (void)bound;
}

Listener::~Listener() { host_.mux().unbind(port_); }

void Listener::on_datagram(EndpointAddr src, ByteView payload) {
  auto decoded = decode_flow(payload);
  if (!ok(decoded)) return;
  const auto& fp = std::get<FlowPacket>(decoded);
  RemoteSession& rs = ensure_session(src);
  rs.session->on_packet(fp.header, fp.payload);
}

Listener::RemoteSession& Listener::ensure_session(EndpointAddr remote) {
  auto it = sessions_.find(remote);
  if (it != sessions_.end()) return it->second;
  RemoteSession rs;
  EndpointAddr local{host_.node()->addr(), port_};
  rs.session = host_.make_session(local, remote);
  rs.session->callbacks().may_send = [this, remote] { return on_grant(remote); };
  rs.session->callbacks().deliver = [this, remote](ByteView p) { on_flow_payload(remote, p); };
  auto [nit, inserted] = sessions_.emplace(remote, std::move(rs));
  RemoteSession* rp = &nit->second;
  rp->session->callbacks().condition = [this, rp](FlowCondition c) {
    if (rp->channel) rp->channel->on_flow_condition(c);
  };
  return nit->second;
}

void Listener::on_flow_payload(EndpointAddr remote, ByteView payload) {
  if (payload.empty()) return;
  auto it = sessions_.find(remote);
  if (it == sessions_.end()) return;
  RemoteSession& rs = it->second;
  switch (payload[0]) {
    case kMsgInit: {
      auto decoded = decode_init(payload);
      if (!ok(decoded)) return;
      const auto& init = std::get<InitMessage>(decoded);
      auto ch = respond_to_init(init, host_.key(), host_.rng(), host_.config().cipher,
                                [&rs](ByteView p) { rs.session->send(p); });
      rs.peer = ch->remote_identity();
      rs.has_peer = true;
      rs.channel = std::move(ch);
      rs.channel->callbacks().deliver_frame = [this, peer = rs.peer](ByteView f) {
        dispatch_frame(peer, f);
      };
      auto [pit, fresh] = peers_.try_emplace(rs.peer);
      PeerState& ps = pit->second;
      bool moved = !fresh && !(ps.current_remote == remote);
      ps.current_remote = remote;
      if (moved) {
        // Streams migrate to the channel that just came up.
        for (auto& [id, s] : ps.streams) s->on_reattached(host_.sim().now());
      }
      break;
    }
    case kMsgResponse:
      break;  // responders do not consume responses
    default:
      if (rs.channel) rs.channel->open(payload);
      break;
  }
}

void Listener::dispatch_frame(const HostIdentity& peer, ByteView frame) {
  auto decoded = decode_frame(frame);
  if (!ok(decoded)) return;
  const auto& f = std::get<Frame>(decoded);
  auto pit = peers_.find(peer);
  if (pit == peers_.end()) return;
  ensure_stream(pit->second, peer, f.header.stream_id)
      .on_frame(f.header, f.payload, host_.sim().now());
}

Stream& Listener::ensure_stream(PeerState& ps, const HostIdentity& peer, std::uint16_t id) {
  auto it = ps.streams.find(id);
  if (it != ps.streams.end()) return *it->second;
  auto s = std::make_unique<Stream>(host_.sim(), id);
  Stream* p = s.get();
  p->callbacks().kick = [this, peer] { pump(peer); };
  ps.streams.emplace(id, std::move(s));
  if (on_stream_) on_stream_(*p, peer);
  return *p;
}

bool Listener::on_grant(EndpointAddr remote) {
  auto sit = sessions_.find(remote);
  if (sit == sessions_.end()) return false;
  RemoteSession& rs = sit->second;
  if (!rs.has_peer || !rs.channel || rs.channel->condition() != ChannelCondition::active) {
    return false;
  }
  auto pit = peers_.find(rs.peer);
  if (pit == peers_.end() || !(pit->second.current_remote == remote)) return false;
  SimTime now = host_.sim().now();
  for (auto& [id, s] : pit->second.streams) {
    if (!s->has_work(now)) continue;
    auto frame = s->next_frame(now);
    if (!frame) continue;
    auto sealed = rs.channel->seal(*frame);
    if (!sealed) return false;
    auto res = rs.session->send(*sealed);
    return std::holds_alternative<std::uint32_t>(res);
  }
  return false;
}

void Listener::pump(const HostIdentity& peer) {
  auto pit = peers_.find(peer);
  if (pit == peers_.end()) return;
  auto sit = sessions_.find(pit->second.current_remote);
  if (sit == sessions_.end()) return;
  sit->second.session->request_send();
}

void Listener::handle_eln(const LossNotification& n) {
  auto it = sessions_.find(n.src_ep);
  if (it != sessions_.end()) it->second.session->on_link_loss(n.lost_flow_seq);
}

}  // namespace splitflow
