#include "splitflow/endpoint.hpp"

namespace splitflow {

EndpointMux::EndpointMux(Simulator& sim, Node* node) : sim_(sim), node_(node) {
  node_->set_deliver([this](const Datagram& d) { on_datagram(d); });
}

bool EndpointMux::bind(std::uint16_t port, Handler h) {
  if (port == 0 || handlers_.count(port)) return false;
  handlers_[port] = std::move(h);
  return true;
}

void EndpointMux::unbind(std::uint16_t port) { handlers_.erase(port); }

std::uint16_t EndpointMux::ephemeral_port() {
  while (handlers_.count(next_ephemeral_)) next_ephemeral_++;
  return next_ephemeral_++;
}

void EndpointMux::send(EndpointAddr src, EndpointAddr dst, ByteView payload) {
  Datagram d;
  d.src_host = src.host;
  d.dst_host = dst.host;
  d.bytes = std::make_shared<Bytes>(encode_endpoint(src.port, dst.port, payload));
  node_->send(std::move(d));
}

void EndpointMux::on_datagram(const Datagram& d) {
  counters_.received++;
  auto decoded = decode_endpoint(*d.bytes);
  if (!ok(decoded)) {
    if (err_of(decoded) == DecodeError::checksum) counters_.checksum_drops++;
    else counters_.truncated_drops++;
    return;
  }
  const auto& pkt = std::get<EndpointPacket>(decoded);
  auto it = handlers_.find(pkt.header.dst_port);
  if (it == handlers_.end()) {
    counters_.unbound_port_drops++;
    return;
  }
  it->second(EndpointAddr{d.src_host, pkt.header.src_port},
             EndpointAddr{d.dst_host, pkt.header.dst_port}, pkt.payload);
}

}  // namespace splitflow
