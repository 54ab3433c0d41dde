#pragma once

#include <functional>
#include <map>
#include <optional>

#include "splitflow/endpoint.hpp"
#include "splitflow/simnet.hpp"
#include "splitflow/wire.hpp"

namespace splitflow {

// Registration Protocol service: maps host identities to their current
// endpoint locator. Lives on well-known port 3737 of the node it binds.
class RegistryServer {
 public:
  explicit RegistryServer(EndpointMux& mux);

  struct Record {
    EndpointAddr locator;
    SimTime registered_at;
  };
  std::optional<EndpointAddr> lookup(const HostIdentity& id) const;
  std::size_t size() const { return records_.size(); }

 private:
  void on_datagram(EndpointAddr src, EndpointAddr dst, ByteView payload);

  EndpointMux& mux_;
  std::map<HostIdentity, Record> records_;
};

// Client side: best-effort request/response with retries (3 attempts,
// backoff 1 s, 2 s, 4 s). One outstanding operation per client.
class RegistryClient {
 public:
  using RegisterDone = std::function<void(bool ok)>;
  using LookupDone = std::function<void(std::optional<EndpointAddr>)>;

  RegistryClient(Simulator& sim, EndpointMux& mux, EndpointAddr server);
  ~RegistryClient();

  void register_identity(const HostIdentity& id, EndpointAddr locator, RegisterDone done);
  void lookup(const HostIdentity& id, LookupDone done);
  EndpointAddr server() const { return server_; }

 private:
  void send_current();
  void on_datagram(EndpointAddr src, EndpointAddr dst, ByteView payload);
  void finish_register(bool ok);
  void finish_lookup(std::optional<EndpointAddr> r);

  Simulator& sim_;
  EndpointMux& mux_;
  EndpointAddr server_;
  std::uint16_t port_ = 0;

  enum class Op { none, reg, look } op_ = Op::none;
  Bytes request_;
  int attempts_ = 0;
  Duration backoff_ = sec(1);
  EventHandle timer_{};
  RegisterDone reg_done_;
  LookupDone look_done_;
};

}  // namespace splitflow
