#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "splitflow/endpoint.hpp"
#include "splitflow/flow.hpp"
#include "splitflow/isolation.hpp"
#include "splitflow/registry.hpp"
#include "splitflow/semantic.hpp"
#include "splitflow/simnet.hpp"

namespace splitflow {

struct StackConfig {
  std::string cc = "newreno";
  CcOptions cc_opts;
  bool local_recovery = false;
  bool eln_reports = false;
  CipherKind cipher = CipherKind::null;
};

class HostStack;

// Initiator side of one end-to-end connection: a flow session, a negotiated
// channel above it, and the streams riding that channel. Owns recovery:
// when the channel fails, it looks the peer up again and rebuilds on a
// fresh section, migrating streams to the new channel.
class Connection {
 public:
  Connection(HostStack& host, EndpointAddr remote, std::optional<HostIdentity> expected);
  ~Connection();

  Stream& stream();  // default stream (id 1)
  Channel* channel() { return channel_.get(); }
  FlowSession* session() { return session_.get(); }
  std::uint16_t local_port() const { return local_port_; }
  bool ready() const { return channel_ && channel_->condition() == ChannelCondition::active; }
  bool failed_permanently() const { return failed_; }

  std::function<void(bool ok)> on_ready;          // first successful negotiation
  std::function<void(SimTime)> on_stall;          // channel failed
  std::function<void(SimTime)> on_rebuilt;        // migration/rebuild complete
  std::function<void(Stream&)> on_stream_created; // inbound stream ids

  struct Stats {
    std::uint64_t grants_consumed = 0;
    std::uint64_t frames_sent = 0;
    std::uint64_t rebuilds = 0;
    std::uint64_t negotiation_failures = 0;
  };
  const Stats& stats() const { return stats_; }

  void handle_eln(const LossNotification& n);

 private:
  friend class HostStack;
  void open_session();
  void start_negotiation();
  void on_flow_payload(ByteView payload);
  bool on_grant();
  void dispatch_frame(ByteView frame);
  void on_channel_condition(ChannelCondition c);
  void schedule_rebuild(Duration delay);
  void rebuild_step();
  void adopt_channel(std::unique_ptr<Channel> ch);
  Stream& ensure_stream(std::uint16_t id);
  void pump();

  HostStack& host_;
  EndpointAddr remote_;
  std::optional<HostIdentity> expected_;
  std::uint16_t local_port_ = 0;
  std::unique_ptr<FlowSession> session_;
  std::unique_ptr<Negotiator> negotiator_;
  std::unique_ptr<Channel> channel_;
  std::map<std::uint16_t, std::unique_ptr<Stream>> streams_;
  bool ready_signaled_ = false;
  bool rebuilding_ = false;
  bool failed_ = false;
  Duration rebuild_backoff_ = sec(1);
  EventHandle rebuild_timer_{};
  Stats stats_;
};

// Responder side: accepts channels from any initiator on one port. Streams
// (the hard state) are keyed by peer identity and survive channel and
// section turnover; when a fresh channel for a known peer comes up, its
// streams migrate to it.
class Listener {
 public:
  using OnStream = std::function<void(Stream&, const HostIdentity& peer)>;

  Listener(HostStack& host, std::uint16_t port, OnStream on_stream);
  ~Listener();

  std::uint16_t port() const { return port_; }
  std::size_t session_count() const { return sessions_.size(); }

  void handle_eln(const LossNotification& n);

 private:
  friend class HostStack;
  struct RemoteSession {
    std::unique_ptr<FlowSession> session;
    std::unique_ptr<Channel> channel;
    HostIdentity peer{};
    bool has_peer = false;
  };
  struct PeerState {
    std::map<std::uint16_t, std::unique_ptr<Stream>> streams;
    EndpointAddr current_remote;
  };

  void on_datagram(EndpointAddr src, ByteView payload);
  RemoteSession& ensure_session(EndpointAddr remote);
  void on_flow_payload(EndpointAddr remote, ByteView payload);
  bool on_grant(EndpointAddr remote);
  void dispatch_frame(const HostIdentity& peer, ByteView frame);
  Stream& ensure_stream(PeerState& ps, const HostIdentity& peer, std::uint16_t id);
  void pump(const HostIdentity& peer);

  HostStack& host_;
  std::uint16_t port_;
  OnStream on_stream_;
  std::map<EndpointAddr, RemoteSession> sessions_;
  std::map<HostIdentity, PeerState> peers_;
};

// One protocol stack instance on a simulated node.
class HostStack {
 public:
  HostStack(Simulator& sim, Network& net, Node* node, StackConfig cfg);

  Simulator& sim() { return sim_; }
  Network& net() { return net_; }
  Node* node() { return node_; }
  EndpointMux& mux() { return mux_; }
  const HostKey& key() const { return key_; }
  const StackConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }

  Listener* listen(std::uint16_t port, Listener::OnStream on_stream);
  Connection* connect(EndpointAddr remote, std::optional<HostIdentity> expected);

  void set_registry(EndpointAddr server);
  bool has_registry() const { return registry_client_ != nullptr; }
  void register_now(RegistryClient::RegisterDone done = nullptr);
  void lookup(const HostIdentity& id, RegistryClient::LookupDone done);

  // Locator change: the node readdresses, routes recompute, and the stack
  // re-registers. Existing sections stall and recover end-to-end.
  void readdress(HostAddr addr);

  std::unique_ptr<FlowSession> make_session(EndpointAddr local, EndpointAddr remote);

 private:
  friend class Connection;
  friend class Listener;
  void on_eln(const LossNotification& n);

  Simulator& sim_;
  Network& net_;
  Node* node_;
  StackConfig cfg_;
  EndpointMux mux_;
  HostKey key_;
  Rng rng_;
  std::vector<std::unique_ptr<Connection>> connections_;
  std::vector<std::unique_ptr<Listener>> listeners_;
  std::unique_ptr<RegistryClient> registry_client_;
  std::uint16_t primary_port_ = 0;
};

}  // namespace splitflow
