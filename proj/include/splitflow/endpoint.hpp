#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>

#include "splitflow/simnet.hpp"
#include "splitflow/wire.hpp"

namespace splitflow {

// UDP-style endpoint layer: best-effort datagrams between (host, port)
// pairs, demultiplexed by destination port. One mux per node.
//
// The carrier underneath is pluggable; the simulator carrier below is the
// supported one. send() takes an explicit source endpoint because flow
// middleboxes re-originate packets on behalf of the endpoints they split.
class EndpointMux {
 public:
  using Handler = std::function<void(EndpointAddr src, EndpointAddr dst, ByteView payload)>;

  EndpointMux(Simulator& sim, Node* node);

  // pre: port unbound. Returns false on port-in-use.
  bool bind(std::uint16_t port, Handler h);
  void unbind(std::uint16_t port);
  bool bound(std::uint16_t port) const { return handlers_.count(port) > 0; }
  std::uint16_t ephemeral_port();

  void send(EndpointAddr src, EndpointAddr dst, ByteView payload);

  Node* node() { return node_; }
  HostAddr addr() const { return node_->addr(); }
  Simulator& sim() { return sim_; }

  struct Counters {
    std::uint64_t received = 0;
    std::uint64_t unbound_port_drops = 0;
    std::uint64_t checksum_drops = 0;
    std::uint64_t truncated_drops = 0;
  };
  const Counters& counters() const { return counters_; }

 private:
  void on_datagram(const Datagram& d);

  Simulator& sim_;
  Node* node_;
  std::map<std::uint16_t, Handler> handlers_;
  std::uint16_t next_ephemeral_ = 49152;
  Counters counters_;
};

}  // namespace splitflow
