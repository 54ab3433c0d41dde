#include <doctest.h>

#include <cmath>

#include "splitflow/endpoint.hpp"
#include "splitflow/flow.hpp"

using namespace splitflow;

namespace {

// Drives one session by hand: transmissions are captured, never delivered.
struct Bench {
  Simulator sim{1};
  std::vector<std::pair<FlowHeader, Bytes>> out;
  std::unique_ptr<FlowSession> s;

  explicit Bench(const std::string& cc = "newreno", FlowOptions opts = {}) {
    CcOptions copts;
    copts.fixed_rate_pps = 50;
    s = std::make_unique<FlowSession>(
        sim,
        [this](EndpointAddr, EndpointAddr, ByteView bytes) {
          auto d = decode_flow(bytes);
          REQUIRE(ok(d));
          const auto& fp = std::get<FlowPacket>(d);
          out.emplace_back(fp.header, Bytes(fp.payload.begin(), fp.payload.end()));
        },
        EndpointAddr{HostAddr{1}, 100}, EndpointAddr{HostAddr{2}, 200},
        make_controller(cc, copts), opts);
  }

  // Deliver a pure ack acknowledging the given sequences (highest + map).
  void ack(std::uint32_t highest, std::uint32_t ackmap = 0) {
    FlowHeader h;
    h.ack = highest;
    h.ackmap = ackmap;
    h.flags = kFlowFlagAckValid | kFlowFlagPureAck;
    s->on_packet(h, {});
  }
};

// Two sessions joined through a simulated duplex link.
struct Pair {
  Simulator sim{7};
  Network net{sim};
  std::unique_ptr<EndpointMux> mux_a, mux_b;
  std::unique_ptr<FlowSession> a, b;
  LinkDir *ab = nullptr, *ba = nullptr;

  Pair(double bw = 1e6, Duration delay = msec(10), std::size_t queue = 50,
       double loss_ab = 0.0, const std::string& cc_a = "newreno",
       FlowOptions opts_a = {}, FlowOptions opts_b = {}, bool eln = false) {
    net.add_node("a", HostAddr{1});
    net.add_node("b", HostAddr{2});
    ab = net.add_link("a", "b", static_cast<std::int64_t>(bw), delay, queue);
    ba = net.add_link("b", "a", static_cast<std::int64_t>(bw), delay, queue);
    if (loss_ab > 0) {
      LossModel m;
      m.schedule = {{0, loss_ab}};
      ab->set_loss_model(m);
    }
    ab->set_eln_capable(eln);
    net.recompute_routes();
    mux_a = std::make_unique<EndpointMux>(sim, net.node("a"));
    mux_b = std::make_unique<EndpointMux>(sim, net.node("b"));
    a = std::make_unique<FlowSession>(
        sim, [this](EndpointAddr s, EndpointAddr d, ByteView p) { mux_a->send(s, d, p); },
        EndpointAddr{HostAddr{1}, 100}, EndpointAddr{HostAddr{2}, 200},
        make_controller(cc_a, {}), opts_a);
    b = std::make_unique<FlowSession>(
        sim, [this](EndpointAddr s, EndpointAddr d, ByteView p) { mux_b->send(s, d, p); },
        EndpointAddr{HostAddr{2}, 200}, EndpointAddr{HostAddr{1}, 100},
        make_controller("newreno", {}), opts_b);
    mux_a->bind(100, [this](EndpointAddr, EndpointAddr, ByteView p) {
      auto d = decode_flow(p);
      if (!ok(d)) return;
      a->on_packet(std::get<FlowPacket>(d).header, std::get<FlowPacket>(d).payload);
    });
    mux_b->bind(200, [this](EndpointAddr, EndpointAddr, ByteView p) {
      auto d = decode_flow(p);
      if (!ok(d)) return;
      b->on_packet(std::get<FlowPacket>(d).header, std::get<FlowPacket>(d).payload);
    });
    net.node("b")->set_eln_handler(
        [this](const LossNotification& n) { b->on_link_loss(n.lost_flow_seq); });
  }
};

Bytes payload_of(int n, std::uint8_t fill = 0xAB) { return Bytes(static_cast<std::size_t>(n), fill); }

}  // namespace

TEST_CASE("recv state bitmap tracks the 24 sequences below the highest") {
  FlowRecvState rs;
  CHECK(rs.observe(5) == FlowRecvState::Observe::fresh);
  CHECK(rs.highest() == 5);
  CHECK(rs.observe(7) == FlowRecvState::Observe::fresh);
  CHECK(rs.highest() == 7);
  // bit for 6 clear, bit for 5 set
  CHECK((rs.bitmap() & 0x1) == 0);        // seq 6 missing
  CHECK((rs.bitmap() & 0x2) != 0);        // seq 5 received
  CHECK(rs.observe(6) == FlowRecvState::Observe::fresh);
  CHECK(rs.observe(6) == FlowRecvState::Observe::duplicate);
  CHECK(rs.observe(7) == FlowRecvState::Observe::duplicate);
  // far below the window: section restart resets the anchor
  CHECK(rs.observe(7 + 100) == FlowRecvState::Observe::fresh);
  CHECK(rs.observe(2) == FlowRecvState::Observe::restart);
  CHECK(rs.highest() == 2);
}

TEST_CASE("window arithmetic: cwnd=2 permits two sends, third is Blocked") {
  Bench bench;
  CHECK(bench.s->allowance() == 2);
  auto r1 = bench.s->send(payload_of(10));
  auto r2 = bench.s->send(payload_of(10));
  CHECK(std::holds_alternative<std::uint32_t>(r1));
  CHECK(std::holds_alternative<std::uint32_t>(r2));
  CHECK(std::get<std::uint32_t>(r1) == 1);
  CHECK(std::get<std::uint32_t>(r2) == 2);
  auto r3 = bench.s->send(payload_of(10));
  REQUIRE(std::holds_alternative<SendError>(r3));
  CHECK(std::get<SendError>(r3) == SendError::blocked);
  CHECK(bench.s->in_flight() == 2);
}

TEST_CASE("exactly one may_send grant per acked packet") {
  Bench bench;
  bench.s->send(payload_of(10));
  bench.s->send(payload_of(10));
  int grants = 0;
  bench.s->callbacks().may_send = [&] {
    grants++;
    // consume the grant with a real send
    return std::holds_alternative<std::uint32_t>(bench.s->send(payload_of(10)));
  };
  bench.ack(1);  // slow start: +1 cwnd, 1 slot freed -> 2 grants consumed
  // cwnd grew from 2 to 3 and one packet left flight: allowance was 2
  CHECK(grants == 2);
  CHECK(bench.s->in_flight() == 3);
  grants = 0;
  bench.s->callbacks().may_send = [&] {
    grants++;
    return false;  // upper layer declines: exactly one offer
  };
  bench.ack(2);
  CHECK(grants == 1);
}

TEST_CASE("data packets deliver upward in arrival order, dup within window suppressed") {
  Bench bench;
  std::vector<int> delivered;
  bench.s->callbacks().deliver = [&](ByteView p) { delivered.push_back(p[0]); };
  auto data = [&](std::uint32_t seq, std::uint8_t tag) {
    FlowHeader h;
    h.seq = seq;
    Bytes p{tag};
    bench.s->on_packet(h, p);
  };
  data(1, 1);
  data(3, 3);
  data(2, 2);  // arrives after 3, still delivered (unordered contract)
  CHECK(delivered == std::vector<int>{1, 3, 2});
  std::size_t acks_before = bench.out.size();
  data(2, 2);  // duplicate: suppressed but re-acked
  CHECK(delivered == std::vector<int>{1, 3, 2});
  CHECK(bench.out.size() == acks_before + 1);
  CHECK(bench.s->stats().duplicates_suppressed == 1);
  // every data packet produced an ack; acks carry the recv state
  const auto& [h, p] = bench.out.back();
  CHECK(h.pure_ack());
  CHECK(h.ack_valid());
  CHECK(h.ack == 3);
  CHECK((h.ackmap & 0x3) == 0x3);  // 2 and 1 both received
}

TEST_CASE("ack emitted for every data packet, never for pure acks") {
  Bench bench;
  FlowHeader data;
  data.seq = 1;
  Bytes p{9};
  bench.s->on_packet(data, p);
  CHECK(bench.out.size() == 1);
  // empty data packet (keepalive probe shape) is acked too
  FlowHeader probe;
  probe.seq = 2;
  bench.s->on_packet(probe, {});
  CHECK(bench.out.size() == 2);
  // pure acks are never acked
  bench.ack(5);
  CHECK(bench.out.size() == 2);
}

TEST_CASE("dup-ack gap: three sequences above a hole declare it lost") {
  Bench bench;
  // open the window
  for (int i = 0; i < 8; i++) bench.ack(0);  // no-ops
  bench.s->cc().on_ack(8, msec(50), 0);      // grow cwnd directly
  std::vector<std::uint32_t> lost;
  bench.s->callbacks().loss_report = [&](std::uint32_t seq, LossKind k) {
    CHECK(k == LossKind::dup_ack_gap);
    lost.push_back(seq);
  };
  for (int i = 0; i < 5; i++) REQUIRE(std::holds_alternative<std::uint32_t>(bench.s->send(payload_of(5))));
  // acks come back for 2,3,4 but not 1 -> not yet (2 above it after ack=3)...
  bench.ack(2, 0);
  CHECK(lost.empty());
  bench.ack(3, 0b01);  // 3 and 2
  CHECK(lost.empty());
  bench.ack(4, 0b011);  // 4,3,2 received; 1 missing with 3 above -> lost
  CHECK(lost == std::vector<std::uint32_t>{1});
  CHECK(bench.s->stats().losses_dupack == 1);
  // window halved once for the event
  CHECK(bench.s->cc().in_fast_recovery());
}

TEST_CASE("rto timeout: oldest in-flight declared lost, cwnd collapses to 1") {
  Bench bench;
  std::vector<LossKind> kinds;
  bench.s->callbacks().loss_report = [&](std::uint32_t, LossKind k) { kinds.push_back(k); };
  bench.s->send(payload_of(10));
  bench.s->send(payload_of(10));
  bench.sim.run_until(sec(2));  // initial rto is 1 s
  REQUIRE(!kinds.empty());
  CHECK(kinds[0] == LossKind::timeout);
  CHECK(bench.s->cc().cwnd() == doctest::Approx(1.0));
  CHECK(bench.s->stats().losses_timeout >= 1);
}

TEST_CASE("section down after four consecutive timeouts; sends fail afterwards") {
  Bench bench;
  std::vector<FlowCondition> transitions;
  bench.s->callbacks().condition = [&](FlowCondition c) { transitions.push_back(c); };
  bench.s->send(payload_of(10));
  bench.s->send(payload_of(10));
  bench.sim.run_until(sec(60));
  REQUIRE(transitions.size() >= 2);
  CHECK(transitions.front() == FlowCondition::uncertain);
  CHECK(transitions.back() == FlowCondition::down);
  CHECK(bench.s->condition() == FlowCondition::down);
  auto r = bench.s->send(payload_of(1));
  REQUIRE(std::holds_alternative<SendError>(r));
  CHECK(std::get<SendError>(r) == SendError::down);
  // late ack is ignored; down is terminal
  bench.ack(1);
  CHECK(bench.s->condition() == FlowCondition::down);
}

TEST_CASE("idle section with a healthy peer stays up via keepalive probes") {
  Pair pair;
  pair.sim.run_until(sec(120));
  CHECK(pair.a->condition() == FlowCondition::up);
  CHECK(pair.b->condition() == FlowCondition::up);
  CHECK(pair.a->stats().probes_sent > 0);
  // probes are data packets: the peer acked every one
  CHECK(pair.b->stats().acks_emitted >= pair.a->stats().probes_sent);
}

TEST_CASE("blackholed peer: uncertain after one probe timeout, down after four") {
  Bench bench;  // transmissions never arrive anywhere
  std::vector<FlowCondition> transitions;
  bench.s->callbacks().condition = [&](FlowCondition c) { transitions.push_back(c); };
  bench.sim.run_until(sec(120));
  REQUIRE(transitions.size() == 2);
  CHECK(transitions[0] == FlowCondition::uncertain);
  CHECK(transitions[1] == FlowCondition::down);
  CHECK(bench.s->stats().probes_sent >= 4);
}

TEST_CASE("eln report triggers local-recovery retransmission without touching cwnd") {
  FlowOptions opts;
  opts.local_recovery = true;
  Bench bench("simpleeln", opts);
  // grow the window a little
  bench.s->cc().on_ack(4, msec(50), 0);
  REQUIRE(std::holds_alternative<std::uint32_t>(bench.s->send(payload_of(3, 0x5A))));
  auto r2 = bench.s->send(payload_of(3, 0x5B));
  REQUIRE(std::holds_alternative<std::uint32_t>(r2));
  double w = bench.s->cc().cwnd();
  std::size_t sent_before = bench.out.size();

  // ELN report for seq 1
  FlowHeader h;
  h.flags = kFlowFlagAckValid | kFlowFlagPureAck | kFlowFlagElnReport;
  h.ack = 0;
  Bytes lost;
  put_u32(lost, 1);
  bench.s->on_packet(h, lost);

  CHECK(bench.s->cc().cwnd() == doctest::Approx(w));
  REQUIRE(bench.out.size() == sent_before + 1);
  const auto& [rh, rp] = bench.out.back();
  CHECK(rh.seq == 3);                 // fresh sequence
  CHECK(rp == payload_of(3, 0x5A));   // same payload
  CHECK(bench.s->stats().eln_retransmits == 1);
  // the retransmitted copy is buffered again; the old seq is forgotten
  CHECK(bench.s->in_flight() == 2);
}

TEST_CASE("eln without local recovery reports the loss upward") {
  Bench bench;  // newreno: treats eln as a gap signal
  bench.s->cc().on_ack(4, msec(50), 0);
  std::vector<LossKind> kinds;
  bench.s->callbacks().loss_report = [&](std::uint32_t, LossKind k) { kinds.push_back(k); };
  bench.s->send(payload_of(3));
  double w = bench.s->cc().cwnd();
  FlowHeader h;
  h.flags = kFlowFlagAckValid | kFlowFlagPureAck | kFlowFlagElnReport;
  Bytes lost;
  put_u32(lost, 1);
  bench.s->on_packet(h, lost);
  REQUIRE(kinds.size() == 1);
  CHECK(kinds[0] == LossKind::eln_notified);
  CHECK(bench.s->cc().cwnd() == doctest::Approx(w / 2));
}

TEST_CASE("window conservation holds at every transmission") {
  Pair pair(2e6, msec(5), 20, 0.02);
  // greedy source on a: send whenever granted
  pair.a->callbacks().may_send = [&] {
    return std::holds_alternative<std::uint32_t>(pair.a->send(payload_of(1000)));
  };
  pair.a->request_send();
  for (int t = 1; t <= 60; t++) {
    pair.sim.run_until(sec(t));
    pair.a->request_send();
  }
  CHECK(pair.a->stats().data_sent > 1000);
  CHECK(pair.a->stats().window_violations == 0);
}

TEST_CASE("ack honesty: every reported sequence was actually delivered") {
  Pair pair(1e6, msec(5), 20, 0.05);
  // track which sequences b actually received (tap at b's delivery path)
  std::set<std::uint32_t> delivered_seqs;
  pair.mux_b->unbind(200);
  pair.mux_b->bind(200, [&](EndpointAddr, EndpointAddr, ByteView p) {
    auto d = decode_flow(p);
    REQUIRE(ok(d));
    const auto& fp = std::get<FlowPacket>(d);
    if (!fp.header.pure_ack()) delivered_seqs.insert(fp.header.seq);
    pair.b->on_packet(fp.header, fp.payload);
  });
  // validate every ack arriving back at a
  pair.mux_a->unbind(100);
  pair.mux_a->bind(100, [&](EndpointAddr, EndpointAddr, ByteView p) {
    auto d = decode_flow(p);
    REQUIRE(ok(d));
    const auto& fp = std::get<FlowPacket>(d);
    if (fp.header.pure_ack() && fp.header.ack_valid() && fp.header.ack != 0) {
      CHECK(delivered_seqs.count(fp.header.ack));
      for (int i = 0; i < 24; i++) {
        if (fp.header.ackmap & (1u << i)) {
          CHECK(delivered_seqs.count(fp.header.ack - 1 - i));
        }
      }
    }
    pair.a->on_packet(fp.header, fp.payload);
  });
  pair.a->callbacks().may_send = [&] {
    return std::holds_alternative<std::uint32_t>(pair.a->send(payload_of(600)));
  };
  for (int t = 0; t < 30; t++) {
    pair.a->request_send();
    pair.sim.run_until(sec(t + 1));
  }
  CHECK(pair.a->stats().data_sent > 500);
}

TEST_CASE("throughput law sanity: newreno goodput within 2x of the Mathis estimate") {
  // Single flow over a p-loss link; MSS here is the flow payload size.
  for (double p : {0.001, 0.01}) {
    Pair pair(10e6, msec(25), 200, p);  // rtt = 50 ms + queueing
    const std::size_t mss = 1000;
    std::uint64_t delivered_bytes = 0;
    pair.b->callbacks().deliver = [&](ByteView pl) { delivered_bytes += pl.size(); };
    pair.a->callbacks().may_send = [&] {
      return std::holds_alternative<std::uint32_t>(pair.a->send(payload_of(mss)));
    };
    const double run_s = 120;
    for (int t = 0; t < static_cast<int>(run_s); t++) {
      pair.a->request_send();
      pair.sim.run_until(sec(t + 1));
    }
    double rtt_s = 0.050;
    double mathis_bps = mss * 8.0 / (rtt_s * std::sqrt(2.0 * p / 3.0));
    double cap_bps = 10e6 * (static_cast<double>(mss) / (mss + 20));
    double predicted = std::min(mathis_bps, cap_bps);
    double goodput = delivered_bytes * 8.0 / run_s;
    CHECK(goodput >= predicted / 2);
    CHECK(goodput <= predicted * 2);
  }
}
