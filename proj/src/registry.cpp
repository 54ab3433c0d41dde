#include "splitflow/registry.hpp"

namespace splitflow {

// ---------------------------------------------------------------------------
// RegistryServer

RegistryServer::RegistryServer(EndpointMux& mux) : mux_(mux) {
  bool bound = mux_.bind(kRegistryPort, [this](EndpointAddr src, EndpointAddr dst, ByteView p) {
    on_datagram(src, dst, p);
  });
  (void)bound;
}

std::optional<EndpointAddr> RegistryServer::lookup(const HostIdentity& id) const {
  auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second.locator;
}

void RegistryServer::on_datagram(EndpointAddr src, EndpointAddr dst, ByteView payload) {
  auto decoded = decode_registry(payload);
  if (!ok(decoded)) return;
  const auto& m = std::get<RegistryMessage>(decoded);
  switch (m.type) {
    case kMsgRegister: {
      // Latest registration wins.
      records_[m.identity] = Record{m.locator, mux_.sim().now()};
      mux_.send(dst, src, encode_reg_ok());
      break;
    }
    case kMsgLookup: {
      auto it = records_.find(m.identity);
      if (it == records_.end()) {
        mux_.send(dst, src, encode_not_found());
      } else {
        mux_.send(dst, src, encode_lookup_ok(it->second.locator));
      }
      break;
    }
    default:
      break;
  }
}

// ---------------------------------------------------------------------------
// RegistryClient

RegistryClient::RegistryClient(Simulator& sim, EndpointMux& mux, EndpointAddr server)
    : sim_(sim), mux_(mux), server_(server) {
  port_ = mux_.ephemeral_port();
  mux_.bind(port_, [this](EndpointAddr src, EndpointAddr dst, ByteView p) {
    on_datagram(src, dst, p);
  });
}

RegistryClient::~RegistryClient() { sim_.cancel(timer_); }

void RegistryClient::register_identity(const HostIdentity& id, EndpointAddr locator,
                                       RegisterDone done) {
  op_ = Op::reg;
  reg_done_ = std::move(done);
  request_ = encode_register(id, locator);
  attempts_ = 0;
  backoff_ = sec(1);
  send_current();
}

void RegistryClient::lookup(const HostIdentity& id, LookupDone done) {
  op_ = Op::look;
  look_done_ = std::move(done);
  request_ = encode_lookup(id);
  attempts_ = 0;
  backoff_ = sec(1);
  send_current();
}

void RegistryClient::send_current() {
  if (attempts_ >= 3) {
    if (op_ == Op::reg) finish_register(false);
    else if (op_ == Op::look) finish_lookup(std::nullopt);
    return;
  }
  attempts_++;
  mux_.send(EndpointAddr{mux_.addr(), port_}, server_, request_);
  timer_ = sim_.schedule_after(backoff_, [this] {
    timer_ = {};
    send_current();
  });
  backoff_ *= 2;
}

void RegistryClient::on_datagram(EndpointAddr, EndpointAddr, ByteView payload) {
  auto decoded = decode_registry(payload);
  if (!ok(decoded)) return;
  const auto& m = std::get<RegistryMessage>(decoded);
  switch (m.type) {
    case kMsgRegOk:
      if (op_ == Op::reg) finish_register(true);
      break;
    case kMsgLookupOk:
      if (op_ == Op::look) finish_lookup(m.locator);
      break;
    case kMsgNotFound:
      if (op_ == Op::look) finish_lookup(std::nullopt);
      break;
    default:
      break;
  }
}

void RegistryClient::finish_register(bool okay) {
  sim_.cancel(timer_);
  timer_ = {};
  op_ = Op::none;
  if (reg_done_) {
    auto cb = std::move(reg_done_);
    reg_done_ = nullptr;
    cb(okay);
  }
}

void RegistryClient::finish_lookup(std::optional<EndpointAddr> r) {
  sim_.cancel(timer_);
  timer_ = {};
  op_ = Op::none;
  if (look_done_) {
    auto cb = std::move(look_done_);
    look_done_ = nullptr;
    cb(r);
  }
}

}  // namespace splitflow
