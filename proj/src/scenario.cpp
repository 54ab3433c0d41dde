#include "splitflow/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace splitflow {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Validation

namespace {

void fail(const std::string& where, const std::string& what) {
  throw std::runtime_error("scenario config: " + where + ": " + what);
}

bool known_cc(const std::string& s) {
  return s == "newreno" || s == "vegas" || s == "fixedrate" || s == "simpleeln";
}

}  // namespace

void validate(const ScenarioConfig& cfg) {
  if (cfg.duration_s <= 0) fail("duration_s", "must be > 0");
  if (cfg.measurement_interval_s <= 0) fail("measurement_interval_s", "must be > 0");
  std::map<std::string, bool> nodes;
  for (std::size_t i = 0; i < cfg.nodes.size(); i++) {
    const auto& n = cfg.nodes[i];
    if (n.name.empty()) fail("nodes[" + std::to_string(i) + "].name", "empty");
    if (nodes.count(n.name)) fail("nodes[" + std::to_string(i) + "].name", "duplicate");
    nodes[n.name] = true;
  }
  auto need_node = [&](const std::string& where, const std::string& name) {
    if (!nodes.count(name)) fail(where, "unknown node '" + name + "'");
  };
  for (std::size_t i = 0; i < cfg.links.size(); i++) {
    const auto& l = cfg.links[i];
    std::string w = "links[" + std::to_string(i) + "]";
    need_node(w + ".from", l.from);
    need_node(w + ".to", l.to);
    if (l.bandwidth_bps <= 0) fail(w + ".bandwidth_bps", "must be > 0");
    if (l.queue_packets == 0) fail(w + ".queue_packets", "must be >= 1");
    double prev = -1;
    for (const auto& [t, r] : l.loss_schedule) {
      if (r < 0 || r > 1) fail(w + ".loss_schedule", "rate outside [0,1]");
      if (t <= prev) fail(w + ".loss_schedule", "start times must be strictly increasing");
      prev = t;
    }
  }
  for (std::size_t i = 0; i < cfg.middleboxes.size(); i++) {
    const auto& m = cfg.middleboxes[i];
    std::string w = "middleboxes[" + std::to_string(i) + "]";
    need_node(w + ".node", m.node);
    for (const auto* side : {&m.side_a, &m.side_b}) {
      if (!known_cc(side->cc)) fail(w + ".cc", "unknown controller '" + side->cc + "'");
      if (side->cc == "fixedrate" && side->fixed_rate_pps <= 0) {
        fail(w + ".fixed_rate_pps", "fixedrate requires a positive rate");
      }
      for (const auto& t : side->toward) need_node(w + ".toward", t);
    }
  }
  std::map<std::string, bool> flow_ids;
  for (std::size_t i = 0; i < cfg.flows.size(); i++) {
    const auto& f = cfg.flows[i];
    std::string w = "flows[" + std::to_string(i) + "]";
    if (f.id.empty()) fail(w + ".id", "empty");
    if (flow_ids.count(f.id)) fail(w + ".id", "duplicate");
    flow_ids[f.id] = true;
    need_node(w + ".src", f.src);
    need_node(w + ".dst", f.dst);
    if (f.dst_port == 0 || f.dst_port == kRegistryPort) fail(w + ".dst_port", "reserved port");
    if (!known_cc(f.src_cc)) fail(w + ".src_cc", "unknown controller");
    if (!known_cc(f.dst_cc)) fail(w + ".dst_cc", "unknown controller");
    if (f.start_s < 0 || f.start_s >= cfg.duration_s) fail(w + ".start_s", "outside run");
    if (f.role != "observed" && f.role != "cross") fail(w + ".role", "observed|cross");
  }
  for (std::size_t i = 0; i < cfg.events.size(); i++) {
    const auto& e = cfg.events[i];
    std::string w = "events[" + std::to_string(i) + "]";
    if (e.kind != "readdress" && e.kind != "mb_crash" && e.kind != "reregister") {
      fail(w + ".kind", "readdress|mb_crash|reregister");
    }
    need_node(w + ".node", e.node);
    if (e.at_s < 0 || e.at_s > cfg.duration_s) fail(w + ".at_s", "outside run");
  }
  if (!cfg.registry_node.empty()) need_node("registry_node", cfg.registry_node);
}

// ---------------------------------------------------------------------------
// JSON

std::string to_json(const ScenarioConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["duration_s"] = cfg.duration_s;
  j["measurement_interval_s"] = cfg.measurement_interval_s;
  j["encrypt"] = cfg.encrypt;
  if (!cfg.registry_node.empty()) j["registry_node"] = cfg.registry_node;
  for (const auto& n : cfg.nodes) j["nodes"].push_back({{"name", n.name}, {"addr", n.addr}});
  for (const auto& l : cfg.links) {
    json lj{{"from", l.from},
            {"to", l.to},
            {"bandwidth_bps", l.bandwidth_bps},
            {"delay_ms", l.delay_ms},
            {"queue_packets", l.queue_packets}};
    if (l.eln) lj["eln"] = true;
    for (const auto& [t, r] : l.loss_schedule) lj["loss_schedule"].push_back({t, r});
    j["links"].push_back(lj);
  }
  auto side_json = [](const MiddleboxSideSpec& s) {
    json sj{{"toward", s.toward}, {"cc", s.cc}, {"queue_packets", s.queue_packets}};
    if (s.fixed_rate_pps > 0) sj["fixed_rate_pps"] = s.fixed_rate_pps;
    if (s.local_recovery) sj["local_recovery"] = true;
    if (s.eln_reports) sj["eln_reports"] = true;
    return sj;
  };
  for (const auto& m : cfg.middleboxes) {
    j["middleboxes"].push_back(
        {{"node", m.node}, {"side_a", side_json(m.side_a)}, {"side_b", side_json(m.side_b)}});
  }
  for (const auto& f : cfg.flows) {
    json fj{{"id", f.id},         {"role", f.role},
            {"src", f.src},       {"dst", f.dst},
            {"dst_port", f.dst_port}, {"start_s", f.start_s},
            {"src_cc", f.src_cc}, {"dst_cc", f.dst_cc}};
    if (f.transfer_bytes) fj["transfer_bytes"] = f.transfer_bytes;
    if (f.src_local_recovery) fj["src_local_recovery"] = true;
    if (f.dst_local_recovery) fj["dst_local_recovery"] = true;
    if (f.src_eln_reports) fj["src_eln_reports"] = true;
    if (f.dst_eln_reports) fj["dst_eln_reports"] = true;
    j["flows"].push_back(fj);
  }
  for (const auto& e : cfg.events) {
    json ej{{"at_s", e.at_s}, {"kind", e.kind}, {"node", e.node}};
    if (e.kind == "readdress") ej["new_addr"] = e.new_addr;
    j["events"].push_back(ej);
  }
  return j.dump(2);
}

ScenarioConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("scenario config: ") + e.what());
  }
  ScenarioConfig cfg;
  try {
    cfg.name = j.value("name", "");
    cfg.duration_s = j.value("duration_s", 10.0);
    cfg.measurement_interval_s = j.value("measurement_interval_s", 2.5);
    cfg.encrypt = j.value("encrypt", false);
    cfg.registry_node = j.value("registry_node", "");
    for (const auto& nj : j.value("nodes", json::array())) {
      cfg.nodes.push_back({nj.at("name").get<std::string>(), nj.at("addr").get<std::uint32_t>()});
    }
    for (const auto& lj : j.value("links", json::array())) {
      LinkSpec l;
      l.from = lj.at("from").get<std::string>();
      l.to = lj.at("to").get<std::string>();
      l.bandwidth_bps = lj.at("bandwidth_bps").get<double>();
      l.delay_ms = lj.at("delay_ms").get<double>();
      l.queue_packets = lj.value("queue_packets", std::size_t{100});
      l.eln = lj.value("eln", false);
      for (const auto& e : lj.value("loss_schedule", json::array())) {
        l.loss_schedule.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
      }
      cfg.links.push_back(std::move(l));
    }
    auto side_from = [](const json& sj) {
      MiddleboxSideSpec s;
      s.toward = sj.value("toward", std::vector<std::string>{});
      s.cc = sj.value("cc", std::string("newreno"));
      s.queue_packets = sj.value("queue_packets", std::size_t{10});
      s.fixed_rate_pps = sj.value("fixed_rate_pps", 0.0);
      s.local_recovery = sj.value("local_recovery", false);
      s.eln_reports = sj.value("eln_reports", false);
      return s;
    };
    for (const auto& mj : j.value("middleboxes", json::array())) {
      MiddleboxSpec m;
      m.node = mj.at("node").get<std::string>();
      m.side_a = side_from(mj.at("side_a"));
      m.side_b = side_from(mj.at("side_b"));
      cfg.middleboxes.push_back(std::move(m));
    }
    for (const auto& fj : j.value("flows", json::array())) {
      FlowSpec f;
      f.id = fj.at("id").get<std::string>();
      f.role = fj.value("role", std::string("observed"));
      f.src = fj.at("src").get<std::string>();
      f.dst = fj.at("dst").get<std::string>();
      f.dst_port = fj.value("dst_port", std::uint16_t{5001});
      f.start_s = fj.value("start_s", 0.0);
      f.transfer_bytes = fj.value("transfer_bytes", std::uint64_t{0});
      f.src_cc = fj.value("src_cc", std::string("newreno"));
      f.dst_cc = fj.value("dst_cc", std::string("newreno"));
      f.src_local_recovery = fj.value("src_local_recovery", false);
      f.dst_local_recovery = fj.value("dst_local_recovery", false);
      f.src_eln_reports = fj.value("src_eln_reports", false);
      f.dst_eln_reports = fj.value("dst_eln_reports", false);
      cfg.flows.push_back(std::move(f));
    }
    for (const auto& ej : j.value("events", json::array())) {
      EventSpec e;
      e.at_s = ej.at("at_s").get<double>();
      e.kind = ej.at("kind").get<std::string>();
      e.node = ej.at("node").get<std::string>();
      e.new_addr = ej.value("new_addr", 0u);
      cfg.events.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("scenario config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Variants

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::split: return "split";
    case Variant::e2e_newreno: return "e2e-newreno";
    case Variant::e2e_vegas: return "e2e-vegas";
  }
  return "?";
}

std::optional<Variant> variant_from_name(const std::string& s) {
  if (s == "split") return Variant::split;
  if (s == "e2e-newreno") return Variant::e2e_newreno;
  if (s == "e2e-vegas") return Variant::e2e_vegas;
  return std::nullopt;
}

ScenarioConfig with_variant(ScenarioConfig cfg, Variant v) {
  if (v == Variant::split) return cfg;
  cfg.middleboxes.clear();
  std::string cc = v == Variant::e2e_newreno ? "newreno" : "vegas";
  for (auto& f : cfg.flows) {
    if (f.role != "observed") continue;
    f.src_cc = cc;
    f.dst_cc = cc;
    f.src_local_recovery = f.dst_local_recovery = false;
    f.src_eln_reports = f.dst_eln_reports = false;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// FlowRuntime

FlowRuntime::FlowRuntime(ScenarioEngine& eng, Simulator& sim, FlowSpec spec,
                         std::uint64_t pattern_seed)
    : eng_(eng), sim_(sim), spec_(std::move(spec)), pattern_seed_(pattern_seed) {}

void FlowRuntime::fill_pattern(std::uint64_t seed, std::uint64_t offset, Bytes& out) {
  for (std::size_t i = 0; i < out.size();) {
    std::uint64_t widx = (offset + i) / 8;
    std::uint64_t z = seed + (widx + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    int b = static_cast<int>((offset + i) % 8);
    while (b < 8 && i < out.size()) {
      out[i++] = static_cast<std::uint8_t>(z >> (8 * b));
      b++;
    }
  }
}

Digest FlowRuntime::pattern_digest(std::uint64_t seed, std::uint64_t len) {
  Sha256 d;
  Bytes chunk;
  std::uint64_t off = 0;
  while (off < len) {
    chunk.resize(std::min<std::uint64_t>(len - off, 1 << 16));
    fill_pattern(seed, off, chunk);
    d.update(chunk);
    off += chunk.size();
  }
  return d.finish();
}

void FlowRuntime::attach_listener(HostStack& dst_stack) {
  listener_ = dst_stack.listen(spec_.dst_port, [this](Stream& s, const HostIdentity&) {
    if (recv_stream_) return;  // single stream per flow
    recv_stream_ = &s;
    s.callbacks().readable = [this] { on_readable(); };
  });
}

void FlowRuntime::start(HostStack& src_stack, EndpointAddr dst_ep, HostIdentity dst_id) {
  conn_ = src_stack.connect(dst_ep, dst_id);
  conn_->on_stall = [this](SimTime t) {
    if (stall_t_ < 0) stall_t_ = t;
  };
  conn_->on_rebuilt = [this](SimTime t) { rebuilt_t_ = t; };
  send_stream_ = &conn_->stream();
  send_stream_->callbacks().writable = [this] { write_more(); };
  write_more();
}

void FlowRuntime::write_more() {
  if (fin_requested_ || !send_stream_) return;
  Bytes chunk;
  for (;;) {
    std::uint64_t want = 1 << 16;
    if (spec_.transfer_bytes) {
      want = std::min<std::uint64_t>(want, spec_.transfer_bytes - written_);
      if (want == 0) {
        send_stream_->finish_write();
        fin_requested_ = true;
        return;
      }
    }
    chunk.resize(want);
    fill_pattern(pattern_seed_, written_, chunk);
    std::size_t n = send_stream_->write(chunk);
    if (n > 0) {
      stamps_.emplace_back(written_, written_ + n, sim_.now());
      written_ += n;
    }
    if (n < want) return;  // send buffer full; resume on writable
  }
}

void FlowRuntime::on_readable() {
  if (!recv_stream_) return;
  for (;;) {
    Bytes data = recv_stream_->read(1 << 20);
    if (data.empty()) break;
    std::uint64_t start = delivered_;
    delivered_ += data.size();
    sink_digest_.update(data);
    interval_bytes_ += data.size();
    while (!stamps_.empty()) {
      auto& [s, e, wt] = stamps_.front();
      std::uint64_t ov_s = std::max(s, start);
      std::uint64_t ov_e = std::min(e, delivered_);
      if (ov_e > ov_s) {
        std::uint64_t b = ov_e - ov_s;
        interval_delay_sum_ += static_cast<double>(sim_.now() - wt) * b;
        interval_delay_bytes_ += b;
      }
      if (e <= delivered_) stamps_.pop_front();
      else break;
    }
    if (stall_t_ >= 0 && resume_t_ < 0) resume_t_ = sim_.now();
  }
  if (recv_stream_->recv_finished() && !completed_) {
    completed_ = true;
    completion_t_ = sim_.now();
    final_digest_ = sink_digest_.finish();
    digest_final_ = true;
  }
}

MetricSample FlowRuntime::sample(double t_s, double interval_s) {
  MetricSample m;
  m.t_s = t_s;
  m.flow_id = spec_.id;
  m.goodput_bps = static_cast<double>(interval_bytes_) * 8.0 / interval_s;
  m.e2e_delay_ms = interval_delay_bytes_
                       ? interval_delay_sum_ / interval_delay_bytes_ / 1e6
                       : std::numeric_limits<double>::quiet_NaN();
  m.cum_bytes = delivered_;
  interval_bytes_ = 0;
  interval_delay_sum_ = 0;
  interval_delay_bytes_ = 0;
  return m;
}

FlowOutcome FlowRuntime::outcome() const {
  FlowOutcome o;
  o.delivered_bytes = delivered_;
  o.written_bytes = written_;
  o.completed = completed_;
  o.completion_s = completion_t_ >= 0 ? to_seconds(completion_t_) : -1;
  o.stall_s = stall_t_ >= 0 ? to_seconds(stall_t_) : -1;
  o.rebuilt_s = rebuilt_t_ >= 0 ? to_seconds(rebuilt_t_) : -1;
  o.resume_s = resume_t_ >= 0 ? to_seconds(resume_t_) : -1;
  if (spec_.role == "observed") {
    o.digest_checked = true;
    Digest actual;
    if (digest_final_) {
      actual = final_digest_;
    } else {
      Sha256 copy = sink_digest_;  // value copy; finishing it is side-effect free here
      actual = copy.finish();
    }
    o.digest_ok = actual == pattern_digest(pattern_seed_, delivered_);
  }
  return o;
}

// ---------------------------------------------------------------------------
// ScenarioEngine

ScenarioEngine::ScenarioEngine(ScenarioConfig cfg, std::uint64_t seed, Variant v,
                               bool capture_log)
    : cfg_(with_variant(std::move(cfg), v)), seed_(seed), capture_log_(capture_log) {
  validate(cfg_);
  build();
}

ScenarioEngine::~ScenarioEngine() = default;

HostStack* ScenarioEngine::stack(const std::string& node) {
  auto it = stacks_.find(node);
  return it == stacks_.end() ? nullptr : it->second.get();
}

Middlebox* ScenarioEngine::middlebox(const std::string& node) {
  auto it = middleboxes_.find(node);
  return it == middleboxes_.end() ? nullptr : it->second.get();
}

FlowRuntime* ScenarioEngine::flow(const std::string& id) {
  for (auto& f : flows_) {
    if (f->spec().id == id) return f.get();
  }
  return nullptr;
}

void ScenarioEngine::build() {
  sim_ = std::make_unique<Simulator>(seed_);
  sim_->log().enable(capture_log_);
  net_ = std::make_unique<Network>(*sim_);

  for (const auto& n : cfg_.nodes) net_->add_node(n.name, HostAddr{n.addr});
  for (const auto& l : cfg_.links) {
    LinkDir* link = net_->add_link(l.from, l.to, static_cast<std::int64_t>(l.bandwidth_bps),
                                   from_seconds(l.delay_ms / 1e3), l.queue_packets);
    if (!l.loss_schedule.empty()) {
      LossModel m;
      for (const auto& [t, r] : l.loss_schedule) m.schedule.emplace_back(from_seconds(t), r);
      link->set_loss_model(std::move(m));
    }
    link->set_eln_capable(l.eln);
  }
  net_->recompute_routes();

  // One stack per endpoint node; per-flow controller settings must agree
  // when a node terminates several flows.
  std::map<std::string, StackConfig> stack_cfgs;
  auto ensure_stack_cfg = [&](const std::string& node, const std::string& cc, double va,
                              double vb, bool lr, bool eln) {
    StackConfig sc;
    sc.cc = cc;
    sc.cc_opts.vegas_alpha = va;
    sc.cc_opts.vegas_beta = vb;
    sc.local_recovery = lr;
    sc.eln_reports = eln;
    sc.cipher = cfg_.encrypt ? CipherKind::stream_xor : CipherKind::null;
    auto it = stack_cfgs.find(node);
    if (it == stack_cfgs.end()) {
      stack_cfgs[node] = sc;
      return;
    }
    if (it->second.cc != sc.cc || it->second.local_recovery != sc.local_recovery ||
        it->second.eln_reports != sc.eln_reports) {
      fail("flows", "conflicting stack settings for node '" + node + "'");
    }
  };
  for (const auto& f : cfg_.flows) {
    ensure_stack_cfg(f.src, f.src_cc, f.vegas_alpha, f.vegas_beta, f.src_local_recovery,
                     f.src_eln_reports);
    ensure_stack_cfg(f.dst, f.dst_cc, f.vegas_alpha, f.vegas_beta, f.dst_local_recovery,
                     f.dst_eln_reports);
  }
  if (!cfg_.registry_node.empty() && !stack_cfgs.count(cfg_.registry_node)) {
    stack_cfgs[cfg_.registry_node] = StackConfig{};
  }
  for (const auto& [node, sc] : stack_cfgs) {
    stacks_[node] = std::make_unique<HostStack>(*sim_, *net_, net_->node(node), sc);
  }

  if (!cfg_.registry_node.empty()) {
    registry_ = std::make_unique<RegistryServer>(stacks_[cfg_.registry_node]->mux());
    EndpointAddr reg_ep{net_->node(cfg_.registry_node)->addr(), kRegistryPort};
    for (auto& [name, st] : stacks_) {
      if (name == cfg_.registry_node) continue;
      st->set_registry(reg_ep);
      HostStack* sp = st.get();
      sim_->schedule_at(0, [sp] { sp->register_now(); });
    }
  }

  for (const auto& m : cfg_.middleboxes) {
    MiddleboxConfig mc;
    auto convert = [&](const MiddleboxSideSpec& s) {
      MiddleboxSideConfig out;
      for (const auto& name : s.toward) out.toward.insert(net_->node(name)->addr().value);
      out.cc = s.cc;
      out.cc_opts.fixed_rate_pps = s.fixed_rate_pps;
      out.cc_opts.vegas_alpha = s.vegas_alpha;
      out.cc_opts.vegas_beta = s.vegas_beta;
      out.queue_capacity = s.queue_packets;
      out.local_recovery = s.local_recovery;
      out.eln_reports = s.eln_reports;
      return out;
    };
    mc.side[0] = convert(m.side_a);
    mc.side[1] = convert(m.side_b);
    middleboxes_[m.node] =
        std::make_unique<Middlebox>(*sim_, *net_, net_->node(m.node), mc);
  }

  for (const auto& f : cfg_.flows) {
    auto fr = std::make_unique<FlowRuntime>(*this, *sim_, f,
                                            seed_ ^ fnv1a64("flow/" + f.id));
    FlowRuntime* fp = fr.get();
    fp->attach_listener(*stacks_[f.dst]);
    HostStack* src = stacks_[f.src].get();
    HostStack* dst = stacks_[f.dst].get();
    EndpointAddr dst_ep{net_->node(f.dst)->addr(), f.dst_port};
    sim_->schedule_at(from_seconds(f.start_s), [fp, src, dst_ep, dst] {
      fp->start(*src, dst_ep, dst->key().identity);
    });
    flows_.push_back(std::move(fr));
  }

  for (const auto& e : cfg_.events) {
    if (e.kind == "readdress") {
      HostStack* st = stacks_[e.node].get();
      std::uint32_t addr = e.new_addr;
      sim_->schedule_at(from_seconds(e.at_s), [st, addr] { st->readdress(HostAddr{addr}); });
    } else if (e.kind == "mb_crash") {
      sim_->schedule_at(from_seconds(e.at_s), [this, node = e.node] {
        if (auto* mb = middlebox(node)) mb->crash();
      });
    } else if (e.kind == "reregister") {
      HostStack* st = stacks_[e.node].get();
      sim_->schedule_at(from_seconds(e.at_s), [st] { st->register_now(); });
    }
  }

  int samples = static_cast<int>(cfg_.duration_s / cfg_.measurement_interval_s + 1e-9);
  for (int k = 1; k <= samples; k++) {
    sim_->schedule_at(from_seconds(k * cfg_.measurement_interval_s),
                      [this, k] { sample_tick(k); });
  }
}

void ScenarioEngine::sample_tick(int k) {
  double t = k * cfg_.measurement_interval_s;
  for (auto& f : flows_) samples_.push_back(f->sample(t, cfg_.measurement_interval_s));
}

void ScenarioEngine::run() {
  sim_->run_until(from_seconds(cfg_.duration_s));
  ran_ = true;
}

ScenarioResult ScenarioEngine::take_result() {
  ScenarioResult r;
  r.samples = std::move(samples_);
  for (auto& f : flows_) r.flows[f->spec().id] = f->outcome();
  r.report = net_->report();
  if (capture_log_) r.event_log_tsv = sim_->log().to_tsv();
  return r;
}

ScenarioResult run_scenario(const ScenarioConfig& cfg, std::uint64_t seed, Variant v,
                            bool capture_log) {
  ScenarioEngine eng(cfg, seed, v, capture_log);
  eng.run();
  return eng.take_result();
}

std::string samples_to_csv(const std::vector<MetricSample>& samples) {
  std::ostringstream os;
  os << "t_s,flow_id,goodput_bps,e2e_delay_ms,cum_bytes\n";
  char buf[160];
  for (const auto& m : samples) {
    if (std::isnan(m.e2e_delay_ms)) {
      std::snprintf(buf, sizeof buf, "%.3f,%s,%.1f,nan,%llu\n", m.t_s, m.flow_id.c_str(),
                    m.goodput_bps, static_cast<unsigned long long>(m.cum_bytes));
    } else {
      std::snprintf(buf, sizeof buf, "%.3f,%s,%.1f,%.3f,%llu\n", m.t_s, m.flow_id.c_str(),
                    m.goodput_bps, m.e2e_delay_ms, static_cast<unsigned long long>(m.cum_bytes));
    }
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Built-in scenarios

namespace {

ScenarioConfig dsl_base(bool download) {
  ScenarioConfig c;
  c.name = download ? "dsl-download" : "dsl-upload";
  c.duration_s = 1000;
  c.measurement_interval_s = 2.5;
  c.nodes = {{"client", 1}, {"gw", 2}, {"r1", 3}, {"r2", 4}, {"server", 5}, {"xa", 6}, {"xb", 7}};
  auto link = [&](const std::string& a, const std::string& b, double bps, double ms,
                  std::size_t q) {
    c.links.push_back({a, b, bps, ms, q, {}, false});
  };
  // ADSL access link: 384 kbit/s up with ~1000 ms of queue, 2 Mbit/s down
  // with ~300 ms of queue.
  link("client", "gw", 384e3, 10, 32);
  link("gw", "client", 2e6, 10, 50);
  link("gw", "r1", 100e6, 1, 400);
  link("r1", "gw", 100e6, 1, 400);
  // Shared 10 Mbit/s core link with ~100 ms of queue; one-way delays add up
  // to a 120 ms idle client-server RTT.
  link("r1", "r2", 10e6, 48, 83);
  link("r2", "r1", 10e6, 48, 83);
  link("r2", "server", 100e6, 1, 400);
  link("server", "r2", 100e6, 1, 400);
  link("xa", "r1", 100e6, 1, 400);
  link("r1", "xa", 100e6, 1, 400);
  link("xb", "r2", 100e6, 1, 400);
  link("r2", "xb", 100e6, 1, 400);

  MiddleboxSpec mb;
  mb.node = "gw";
  mb.side_a.toward = {"client"};
  mb.side_a.cc = "vegas";
  mb.side_a.queue_packets = 15;  // download direction
  mb.side_b.toward = {"server"};
  mb.side_b.cc = "newreno";
  mb.side_b.queue_packets = 10;  // upload direction
  c.middleboxes.push_back(mb);

  FlowSpec obs;
  obs.id = "observed";
  obs.role = "observed";
  obs.dst_port = 5001;
  obs.start_s = 0;
  if (download) {
    obs.src = "server";
    obs.dst = "client";
    obs.src_cc = "newreno";
    obs.dst_cc = "vegas";
  } else {
    obs.src = "client";
    obs.dst = "server";
    obs.src_cc = "vegas";
    obs.dst_cc = "newreno";
  }
  c.flows.push_back(obs);

  for (int i = 0; i < 3; i++) {
    FlowSpec x;
    x.id = "cross" + std::to_string(i + 1);
    x.role = "cross";
    x.src = download ? "xb" : "xa";
    x.dst = download ? "xa" : "xb";
    x.dst_port = static_cast<std::uint16_t>(6001 + i);
    x.start_s = 250.0 * (i + 1);
    c.flows.push_back(x);
  }
  return c;
}

ScenarioConfig wireless_eln() {
  ScenarioConfig c;
  c.name = "wireless-eln";
  c.duration_s = 1000;
  c.measurement_interval_s = 2.5;
  c.nodes = {{"client", 1}, {"bs", 2}, {"server", 3}};
  std::vector<std::pair<double, double>> loss = {{0, 0}, {250, 0.001}, {500, 0.01}, {750, 0.03}};
  c.links.push_back({"client", "bs", 5e6, 5, 50, loss, true});
  c.links.push_back({"bs", "client", 5e6, 5, 50, loss, true});
  c.links.push_back({"bs", "server", 10e6, 50, 100, {}, false});
  c.links.push_back({"server", "bs", 10e6, 50, 100, {}, false});

  MiddleboxSpec mb;
  mb.node = "bs";
  mb.side_a.toward = {"client"};
  mb.side_a.cc = "simpleeln";
  mb.side_a.queue_packets = 15;
  mb.side_a.local_recovery = true;
  mb.side_a.eln_reports = true;
  mb.side_b.toward = {"server"};
  mb.side_b.cc = "newreno";
  mb.side_b.queue_packets = 10;
  c.middleboxes.push_back(mb);

  FlowSpec obs;
  obs.id = "observed";
  obs.role = "observed";
  obs.src = "client";
  obs.dst = "server";
  obs.dst_port = 5001;
  obs.src_cc = "simpleeln";
  obs.src_local_recovery = true;
  obs.src_eln_reports = true;
  obs.dst_cc = "newreno";
  c.flows.push_back(obs);
  return c;
}

ScenarioConfig intersite() {
  ScenarioConfig c;
  c.name = "intersite";
  c.duration_s = 60;
  c.measurement_interval_s = 2.5;
  c.nodes = {{"s1", 1}, {"mb1", 2}, {"mb2", 3}, {"s2", 4}};
  std::vector<std::pair<double, double>> loss = {{0, 0},     {10, 0.001}, {20, 0.005},
                                                 {30, 0.01}, {40, 0.02},  {50, 0.03}};
  c.links.push_back({"s1", "mb1", 100e6, 1, 400, {}, false});
  c.links.push_back({"mb1", "s1", 100e6, 1, 400, {}, false});
  c.links.push_back({"mb1", "mb2", 10e6, 100, 200, loss, false});
  c.links.push_back({"mb2", "mb1", 10e6, 100, 200, loss, false});
  c.links.push_back({"mb2", "s2", 100e6, 1, 400, {}, false});
  c.links.push_back({"s2", "mb2", 100e6, 1, 400, {}, false});

  const double wan_rate_pps = 10e6 / (kMtu * 8.0);
  for (const auto& [node, lan, wan] :
       {std::tuple<std::string, std::string, std::string>{"mb1", "s1", "s2"},
        std::tuple<std::string, std::string, std::string>{"mb2", "s2", "s1"}}) {
    MiddleboxSpec mb;
    mb.node = node;
    mb.side_a.toward = {lan};
    mb.side_a.cc = "newreno";
    mb.side_a.queue_packets = 10;
    mb.side_b.toward = {wan};
    mb.side_b.cc = "fixedrate";
    mb.side_b.fixed_rate_pps = wan_rate_pps;
    mb.side_b.queue_packets = 50;
    c.middleboxes.push_back(mb);
  }

  FlowSpec obs;
  obs.id = "observed";
  obs.role = "observed";
  obs.src = "s1";
  obs.dst = "s2";
  obs.dst_port = 5001;
  c.flows.push_back(obs);
  return c;
}

ScenarioConfig migration() {
  ScenarioConfig c;
  c.name = "migration";
  c.duration_s = 60;
  c.measurement_interval_s = 0.5;
  c.nodes = {{"a", 1}, {"r", 2}, {"b", 3}, {"reg", 4}};
  c.links.push_back({"a", "r", 10e6, 5, 100, {}, false});
  c.links.push_back({"r", "a", 10e6, 5, 100, {}, false});
  c.links.push_back({"r", "b", 10e6, 5, 100, {}, false});
  c.links.push_back({"b", "r", 10e6, 5, 100, {}, false});
  c.links.push_back({"reg", "r", 100e6, 1, 100, {}, false});
  c.links.push_back({"r", "reg", 100e6, 1, 100, {}, false});
  c.registry_node = "reg";

  FlowSpec obs;
  obs.id = "observed";
  obs.role = "observed";
  obs.src = "a";
  obs.dst = "b";
  obs.dst_port = 5001;
  obs.start_s = 0.5;
  obs.transfer_bytes = 20ull << 20;
  c.flows.push_back(obs);

  EventSpec e;
  e.at_s = 10;
  e.kind = "readdress";
  e.node = "a";
  e.new_addr = 100;
  c.events.push_back(e);
  return c;
}

ScenarioConfig middlebox_crash() {
  ScenarioConfig c;
  c.name = "middlebox-crash";
  c.duration_s = 60;
  c.measurement_interval_s = 0.5;
  c.nodes = {{"a", 1}, {"mb", 2}, {"b", 3}};
  c.links.push_back({"a", "mb", 20e6, 5, 100, {}, false});
  c.links.push_back({"mb", "a", 20e6, 5, 100, {}, false});
  c.links.push_back({"mb", "b", 10e6, 10, 100, {}, false});
  c.links.push_back({"b", "mb", 10e6, 10, 100, {}, false});

  MiddleboxSpec mb;
  mb.node = "mb";
  mb.side_a.toward = {"a"};
  mb.side_a.cc = "newreno";
  mb.side_a.queue_packets = 10;
  mb.side_b.toward = {"b"};
  mb.side_b.cc = "newreno";
  mb.side_b.queue_packets = 10;
  c.middleboxes.push_back(mb);

  FlowSpec obs;
  obs.id = "observed";
  obs.role = "observed";
  obs.src = "a";
  obs.dst = "b";
  obs.dst_port = 5001;
  obs.start_s = 0.1;
  obs.transfer_bytes = 20ull << 20;
  c.flows.push_back(obs);

  EventSpec e;
  e.at_s = 5;
  e.kind = "mb_crash";
  e.node = "mb";
  c.events.push_back(e);
  return c;
}

}  // namespace

std::vector<std::string> builtin_scenarios() {
  return {"dsl-upload", "dsl-download", "wireless-eln", "intersite", "migration",
          "middlebox-crash"};
}

ScenarioConfig builtin_scenario(const std::string& name) {
  if (name == "dsl-upload") return dsl_base(false);
  if (name == "dsl-download") return dsl_base(true);
  if (name == "wireless-eln") return wireless_eln();
  if (name == "intersite") return intersite();
  if (name == "migration") return migration();
  if (name == "middlebox-crash") return middlebox_crash();
  throw std::runtime_error("unknown scenario '" + name + "'");
}

// ---------------------------------------------------------------------------
// Aggregation / compare

double mean_goodput_bps(const std::vector<MetricSample>& samples, const std::string& flow_id,
                        double t0, double t1) {
  std::uint64_t c0 = cum_bytes_at(samples, flow_id, t0);
  std::uint64_t c1 = cum_bytes_at(samples, flow_id, t1);
  if (t1 <= t0) return 0;
  return static_cast<double>(c1 - c0) * 8.0 / (t1 - t0);
}

double mean_delay_ms(const std::vector<MetricSample>& samples, const std::string& flow_id,
                     double t0, double t1) {
  double sum = 0;
  double weight = 0;
  for (const auto& m : samples) {
    if (m.flow_id != flow_id || m.t_s <= t0 || m.t_s > t1) continue;
    if (std::isnan(m.e2e_delay_ms) || m.goodput_bps <= 0) continue;
    sum += m.e2e_delay_ms * m.goodput_bps;
    weight += m.goodput_bps;
  }
  return weight > 0 ? sum / weight : std::numeric_limits<double>::quiet_NaN();
}

std::uint64_t cum_bytes_at(const std::vector<MetricSample>& samples, const std::string& flow_id,
                           double t) {
  std::uint64_t best = 0;
  double best_t = -1;
  for (const auto& m : samples) {
    if (m.flow_id != flow_id || m.t_s > t + 1e-9) continue;
    if (m.t_s > best_t) {
      best_t = m.t_s;
      best = m.cum_bytes;
    }
  }
  return best;
}

std::vector<CompareRow> compare_runs(const ScenarioConfig& cfg, std::uint64_t seed,
                                     const std::vector<Variant>& variants,
                                     double window_start_s, double window_end_s,
                                     const std::string& flow_id) {
  std::vector<CompareRow> rows;
  for (Variant v : variants) {
    ScenarioResult r = run_scenario(cfg, seed, v);
    CompareRow row;
    row.variant = variant_name(v);
    row.mean_goodput_bps = mean_goodput_bps(r.samples, flow_id, window_start_s, window_end_s);
    row.mean_delay_ms = mean_delay_ms(r.samples, flow_id, window_start_s, window_end_s);
    row.final_cum_bytes = cum_bytes_at(r.samples, flow_id, cfg.duration_s);
    rows.push_back(row);
  }
  return rows;
}

std::string compare_to_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "variant,mean_goodput_bps,mean_delay_ms,final_cum_bytes\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.1f,%.3f,%llu\n", r.variant.c_str(),
                  r.mean_goodput_bps, r.mean_delay_ms,
                  static_cast<unsigned long long>(r.final_cum_bytes));
    os << buf;
  }
  return os.str();
}

}  // namespace splitflow
