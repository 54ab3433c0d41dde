#include <doctest.h>

#include "splitflow/isolation.hpp"

using namespace splitflow;

namespace {

struct ChannelPair {
  std::unique_ptr<Channel> a, b;  // a initiated
  ChannelPair(CipherKind cipher = CipherKind::null, std::uint64_t seed = 1) {
    Rng rng(seed);
    HostKey ka = HostKey::generate(rng);
    HostKey kb = HostKey::generate(rng);
    Digest i2r = derive_channel_key(ka.pub, kb.pub, 111, 222, "key:init->resp");
    Digest r2i = derive_channel_key(ka.pub, kb.pub, 111, 222, "key:resp->init");
    a = std::make_unique<Channel>(ka.identity, kb.identity, i2r, r2i, cipher);
    b = std::make_unique<Channel>(kb.identity, ka.identity, r2i, i2r, cipher);
  }
};

}  // namespace

TEST_CASE("replay window accepts each sequence once, rejects old and repeated") {
  ReplayWindow w;
  OpenError err;
  CHECK(w.check_and_update(1, err));
  CHECK(w.check_and_update(3, err));
  CHECK(w.check_and_update(2, err));
  CHECK(!w.check_and_update(2, err));
  CHECK(err == OpenError::replay);
  CHECK(!w.check_and_update(3, err));
  CHECK(w.check_and_update(100, err));
  CHECK(!w.check_and_update(100, err));
  // within 64 of the anchor: accepted once
  CHECK(w.check_and_update(40, err));
  CHECK(!w.check_and_update(40, err));
  // older than the window
  CHECK(!w.check_and_update(30, err));
  CHECK(err == OpenError::window_too_old);
  // anchor never decreases
  CHECK(w.anchor() == 100);
}

TEST_CASE("seal/open round trip for random frames, both ciphers") {
  for (CipherKind ck : {CipherKind::null, CipherKind::stream_xor}) {
    ChannelPair p(ck);
    Rng rng(9);
    for (int i = 0; i < 200; i++) {
      Bytes frame(rng.next_u32() % 1400);
      for (auto& x : frame) x = static_cast<std::uint8_t>(rng.next_u64());
      auto pkt = p.a->seal(frame);
      REQUIRE(pkt.has_value());
      CHECK((*pkt)[0] == 0x00);  // seq < 2^56: first byte is the demux zero
      if (ck == CipherKind::stream_xor && frame.size() > 8) {
        // confidentiality: the sealed body differs from the plaintext
        Bytes body(pkt->begin() + kIsolationHeaderSize, pkt->end());
        CHECK(body != frame);
      }
      auto opened = p.b->open(*pkt);
      REQUIRE(opened.has_value());
      CHECK(*opened == frame);
    }
    CHECK(p.a->send_seq() == 201);
  }
}

TEST_CASE("any single bit flip is rejected with BadMac") {
  ChannelPair p;
  Bytes frame{1, 2, 3, 4, 5, 6, 7, 8};
  Rng rng(4);
  for (int i = 0; i < 500; i++) {
    auto pkt = p.a->seal(frame);
    REQUIRE(pkt.has_value());
    Bytes bad = *pkt;
    std::size_t bit = rng.next_u32() % (bad.size() * 8);
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    OpenError err;
    auto opened = p.b->open(bad, &err);
    CHECK(!opened.has_value());
    // a flip in the seq field may also land as a replay/old rejection once
    // that sequence was verified, but an unseen tampered packet is BadMac
    auto good = p.b->open(*pkt);
    CHECK(good.has_value());
  }
  CHECK(p.b->stats().rejected_mac >= 450);
}

TEST_CASE("replaying a previously delivered packet never delivers twice") {
  ChannelPair p;
  int delivered = 0;
  p.b->callbacks().deliver_frame = [&](ByteView) { delivered++; };
  Bytes frame{42};
  std::vector<Bytes> observed;
  for (int i = 0; i < 50; i++) {
    auto pkt = p.a->seal(frame);
    observed.push_back(*pkt);
    CHECK(p.b->open(*pkt).has_value());
  }
  CHECK(delivered == 50);
  for (const auto& pkt : observed) {
    OpenError err;
    CHECK(!p.b->open(pkt, &err).has_value());
  }
  CHECK(delivered == 50);
  CHECK(p.b->stats().rejected_replay + p.b->stats().rejected_old == 50);
}

TEST_CASE("key derivation: direction keys differ, sides agree, order-insensitive") {
  Rng rng(2);
  HostKey a = HostKey::generate(rng);
  HostKey b = HostKey::generate(rng);
  Digest i2r_1 = derive_channel_key(a.pub, b.pub, 5, 6, "key:init->resp");
  Digest i2r_2 = derive_channel_key(b.pub, a.pub, 5, 6, "key:init->resp");
  CHECK(i2r_1 == i2r_2);  // sorted inputs
  Digest r2i = derive_channel_key(a.pub, b.pub, 5, 6, "key:resp->init");
  CHECK(i2r_1 != r2i);    // per-direction separation
  Digest other_nonce = derive_channel_key(a.pub, b.pub, 5, 7, "key:init->resp");
  CHECK(i2r_1 != other_nonce);
}

TEST_CASE("negotiation: honest two-message handshake derives matching channels") {
  Simulator sim(3);
  Rng rng(8);
  HostKey init_key = HostKey::generate(rng);
  HostKey resp_key = HostKey::generate(rng);

  std::unique_ptr<Channel> resp_channel;
  std::unique_ptr<Channel> init_channel;
  Bytes response_wire;

  Negotiator neg(
      sim, init_key, resp_key.identity, CipherKind::null,
      [&](ByteView payload) {
        // responder handles the INIT synchronously
        auto d = decode_init(payload);
        REQUIRE(ok(d));
        Rng nrng(55);
        resp_channel = respond_to_init(std::get<InitMessage>(d), resp_key, nrng,
                                       CipherKind::null,
                                       [&](ByteView r) { response_wire.assign(r.begin(), r.end()); });
      },
      [&](std::variant<std::unique_ptr<Channel>, NegotiateError> result) {
        REQUIRE(std::holds_alternative<std::unique_ptr<Channel>>(result));
        init_channel = std::move(std::get<std::unique_ptr<Channel>>(result));
      });
  neg.start();
  REQUIRE(!response_wire.empty());
  CHECK(neg.on_payload(response_wire));
  REQUIRE(init_channel);
  REQUIRE(resp_channel);
  CHECK(init_channel->remote_identity() == resp_key.identity);
  CHECK(resp_channel->remote_identity() == init_key.identity);

  // the two sides agree: traffic flows both ways
  auto pkt = init_channel->seal(Bytes{1, 2, 3});
  REQUIRE(pkt);
  CHECK(resp_channel->open(*pkt).has_value());
  auto back = resp_channel->seal(Bytes{4, 5});
  REQUIRE(back);
  CHECK(init_channel->open(*back).has_value());
}

TEST_CASE("negotiation: tampered responder pub fails with IdentityMismatch") {
  Simulator sim(3);
  Rng rng(8);
  HostKey init_key = HostKey::generate(rng);
  HostKey resp_key = HostKey::generate(rng);
  HostKey evil_key = HostKey::generate(rng);

  std::optional<NegotiateError> failure;
  Bytes response_wire;
  Negotiator neg(
      sim, init_key, resp_key.identity, CipherKind::null,
      [&](ByteView payload) {
        auto d = decode_init(payload);
        REQUIRE(ok(d));
        Rng nrng(55);
        // a different key answers: digest(pub) will not match expectations
        respond_to_init(std::get<InitMessage>(d), evil_key, nrng, CipherKind::null,
                        [&](ByteView r) { response_wire.assign(r.begin(), r.end()); });
      },
      [&](std::variant<std::unique_ptr<Channel>, NegotiateError> result) {
        REQUIRE(std::holds_alternative<NegotiateError>(result));
        failure = std::get<NegotiateError>(result);
      });
  neg.start();
  CHECK(neg.on_payload(response_wire));
  REQUIRE(failure.has_value());
  CHECK(*failure == NegotiateError::identity_mismatch);
}

TEST_CASE("negotiation: three lost responses time out on the backoff schedule") {
  Simulator sim(3);
  Rng rng(8);
  HostKey init_key = HostKey::generate(rng);
  int inits_sent = 0;
  std::optional<NegotiateError> failure;
  SimTime failed_at = -1;
  Negotiator neg(
      sim, init_key, std::nullopt, CipherKind::null, [&](ByteView) { inits_sent++; },
      [&](std::variant<std::unique_ptr<Channel>, NegotiateError> result) {
        REQUIRE(std::holds_alternative<NegotiateError>(result));
        failure = std::get<NegotiateError>(result);
        failed_at = sim.now();
      });
  neg.start();
  sim.run_until(sec(30));
  CHECK(inits_sent == 3);
  REQUIRE(failure.has_value());
  CHECK(*failure == NegotiateError::timeout);
  CHECK(failed_at == sec(1) + sec(2) + sec(4));  // backoff 1 s, 2 s, 4 s
}

TEST_CASE("flow conditions map to channel conditions; failed is terminal") {
  ChannelPair p;
  std::vector<ChannelCondition> seen;
  p.a->callbacks().condition = [&](ChannelCondition c) { seen.push_back(c); };
  p.a->on_flow_condition(FlowCondition::uncertain);
  CHECK(p.a->condition() == ChannelCondition::stalled);
  // stalled channels still seal (sends permitted but flagged)
  CHECK(p.a->seal(Bytes{1}).has_value());
  p.a->on_flow_condition(FlowCondition::up);
  CHECK(p.a->condition() == ChannelCondition::active);
  // edge-triggered: repeated up transitions produce no upcall storm
  p.a->on_flow_condition(FlowCondition::up);
  p.a->on_flow_condition(FlowCondition::up);
  CHECK(seen == std::vector<ChannelCondition>{ChannelCondition::stalled,
                                              ChannelCondition::active});
  p.a->on_flow_condition(FlowCondition::down);
  CHECK(p.a->condition() == ChannelCondition::failed);
  CHECK(seen.back() == ChannelCondition::failed);
  CHECK(seen.size() == 3);
  // exactly one failed upcall; later transitions are ignored
  p.a->on_flow_condition(FlowCondition::up);
  CHECK(p.a->condition() == ChannelCondition::failed);
  CHECK(seen.size() == 3);
  // failed channel refuses to seal
  CHECK(!p.a->seal(Bytes{1}).has_value());
}

TEST_CASE("acceptance-scale tamper and replay rejection") {
  ChannelPair p;
  Rng rng(31);
  Bytes frame(64);
  int rejected = 0;
  const int kAttempts = 10000;
  std::vector<Bytes> history;
  for (int i = 0; i < kAttempts / 2; i++) {
    auto pkt = p.a->seal(frame);
    REQUIRE(pkt);
    REQUIRE(p.b->open(*pkt).has_value());
    history.push_back(std::move(*pkt));
  }
  // half tamper attempts
  for (int i = 0; i < kAttempts / 2; i++) {
    Bytes bad = history[rng.next_u32() % history.size()];
    bad[rng.next_u32() % bad.size()] ^= static_cast<std::uint8_t>(1 + rng.next_u32() % 255);
    if (!p.b->open(bad).has_value()) rejected++;
  }
  // half replay attempts
  for (int i = 0; i < kAttempts / 2; i++) {
    if (!p.b->open(history[rng.next_u32() % history.size()]).has_value()) rejected++;
  }
  CHECK(rejected == kAttempts);
}
