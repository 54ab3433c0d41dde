#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "splitflow/host.hpp"
#include "splitflow/middlebox.hpp"
#include "splitflow/registry.hpp"
#include "splitflow/simnet.hpp"

namespace splitflow {

// ---------------------------------------------------------------------------
// Configuration (JSON-mirrored; see from_json/to_json)

struct NodeSpec {
  std::string name;
  std::uint32_t addr = 0;
};

struct LinkSpec {
  std::string from;
  std::string to;
  double bandwidth_bps = 0;
  double delay_ms = 0;
  std::size_t queue_packets = 100;
  std::vector<std::pair<double, double>> loss_schedule;  // (t_s, rate)
  bool eln = false;
};

struct MiddleboxSideSpec {
  std::vector<std::string> toward;  // node names on this side
  std::string cc = "newreno";
  std::size_t queue_packets = 10;
  double fixed_rate_pps = 0;
  bool local_recovery = false;
  bool eln_reports = false;
  double vegas_alpha = 2, vegas_beta = 4;
};

struct MiddleboxSpec {
  std::string node;
  MiddleboxSideSpec side_a, side_b;
};

struct FlowSpec {
  std::string id;
  std::string role = "observed";  // observed | cross
  std::string src, dst;
  std::uint16_t dst_port = 5001;
  double start_s = 0;
  std::uint64_t transfer_bytes = 0;  // 0 = greedy for the whole run
  std::string src_cc = "newreno", dst_cc = "newreno";
  double vegas_alpha = 2, vegas_beta = 4;
  bool src_local_recovery = false, dst_local_recovery = false;
  bool src_eln_reports = false, dst_eln_reports = false;
};

struct EventSpec {
  double at_s = 0;
  std::string kind;  // readdress | mb_crash | reregister
  std::string node;
  std::uint32_t new_addr = 0;
};

struct ScenarioConfig {
  std::string name;
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> links;
  std::vector<MiddleboxSpec> middleboxes;
  std::vector<FlowSpec> flows;
  std::vector<EventSpec> events;
  std::string registry_node;  // empty = none
  double duration_s = 10;
  double measurement_interval_s = 2.5;
  bool encrypt = false;  // stream cipher on end-to-end channels
};

// Validates field references and value ranges; throws std::runtime_error
// with a field-path diagnostic.
void validate(const ScenarioConfig& cfg);

std::string to_json(const ScenarioConfig& cfg);
ScenarioConfig config_from_json(const std::string& text);

enum class Variant { split, e2e_newreno, e2e_vegas };
std::string variant_name(Variant v);
std::optional<Variant> variant_from_name(const std::string& s);
// e2e variants drop middleboxes and run the named end-to-end controller on
// the observed flows; cross traffic always stays end-to-end NewReno.
ScenarioConfig with_variant(ScenarioConfig cfg, Variant v);

// ---------------------------------------------------------------------------
// Results

struct MetricSample {
  double t_s = 0;
  std::string flow_id;
  double goodput_bps = 0;
  double e2e_delay_ms = 0;  // NaN when nothing was delivered in the interval
  std::uint64_t cum_bytes = 0;
};

struct FlowOutcome {
  std::uint64_t delivered_bytes = 0;
  std::uint64_t written_bytes = 0;
  bool digest_checked = false;
  bool digest_ok = false;
  bool completed = false;  // fixed-size transfer fully delivered
  double completion_s = -1;
  double stall_s = -1;    // channel-failure report on the initiator
  double rebuilt_s = -1;  // rebuild finished
  double resume_s = -1;   // first delivery after the stall
};

struct ScenarioResult {
  std::vector<MetricSample> samples;
  std::map<std::string, FlowOutcome> flows;
  SimulationReport report;
  std::string event_log_tsv;  // filled when capture_log
};

std::string samples_to_csv(const std::vector<MetricSample>& samples);

// ---------------------------------------------------------------------------
// Engine

class FlowRuntime;

class ScenarioEngine {
 public:
  ScenarioEngine(ScenarioConfig cfg, std::uint64_t seed, Variant v = Variant::split,
                 bool capture_log = false);
  ~ScenarioEngine();

  Simulator& sim() { return *sim_; }
  Network& net() { return *net_; }
  HostStack* stack(const std::string& node);
  Middlebox* middlebox(const std::string& node);
  FlowRuntime* flow(const std::string& id);
  const ScenarioConfig& config() const { return cfg_; }

  void run();  // runs to duration, sampling along the way
  ScenarioResult take_result();

 private:
  void build();
  void sample_tick(int k);

  ScenarioConfig cfg_;
  std::uint64_t seed_;
  bool capture_log_;
  std::unique_ptr<Simulator> sim_;
  std::unique_ptr<Network> net_;
  std::map<std::string, std::unique_ptr<HostStack>> stacks_;
  std::map<std::string, std::unique_ptr<Middlebox>> middleboxes_;
  std::unique_ptr<RegistryServer> registry_;
  std::vector<std::unique_ptr<FlowRuntime>> flows_;
  std::vector<MetricSample> samples_;
  bool ran_ = false;
};

// Per-flow runtime: a greedy or fixed-size source, a digesting sink, write
// timestamps for the one-way delay metric, and interval accumulators.
class FlowRuntime {
 public:
  FlowRuntime(ScenarioEngine& eng, Simulator& sim, FlowSpec spec, std::uint64_t pattern_seed);

  const FlowSpec& spec() const { return spec_; }
  void attach_listener(HostStack& dst_stack);
  void start(HostStack& src_stack, EndpointAddr dst_ep, HostIdentity dst_id);

  MetricSample sample(double t_s, double interval_s);
  FlowOutcome outcome() const;
  Connection* connection() { return conn_; }
  std::uint64_t delivered() const { return delivered_; }

  static void fill_pattern(std::uint64_t seed, std::uint64_t offset, Bytes& out);
  static Digest pattern_digest(std::uint64_t seed, std::uint64_t len);

 private:
  void write_more();
  void on_readable();

  ScenarioEngine& eng_;
  Simulator& sim_;
  FlowSpec spec_;
  std::uint64_t pattern_seed_;
  Connection* conn_ = nullptr;
  Stream* send_stream_ = nullptr;
  Stream* recv_stream_ = nullptr;
  Listener* listener_ = nullptr;

  std::uint64_t written_ = 0;
  bool fin_requested_ = false;
  std::deque<std::tuple<std::uint64_t, std::uint64_t, SimTime>> stamps_;

  std::uint64_t delivered_ = 0;
  Sha256 sink_digest_;
  Digest final_digest_{};
  bool digest_final_ = false;

  std::uint64_t interval_bytes_ = 0;
  double interval_delay_sum_ = 0;  // sum over bytes of delay_ns
  std::uint64_t interval_delay_bytes_ = 0;

  bool completed_ = false;
  SimTime completion_t_ = -1;
  SimTime stall_t_ = -1;
  SimTime rebuilt_t_ = -1;
  SimTime resume_t_ = -1;
};

ScenarioResult run_scenario(const ScenarioConfig& cfg, std::uint64_t seed,
                            Variant v = Variant::split, bool capture_log = false);

// Built-in scenario definitions reproducing the experiment suite:
// dsl-upload, dsl-download, wireless-eln, intersite, migration,
// middlebox-crash.
std::vector<std::string> builtin_scenarios();
ScenarioConfig builtin_scenario(const std::string& name);

struct CompareRow {
  std::string variant;
  double mean_goodput_bps = 0;
  double mean_delay_ms = 0;
  std::uint64_t final_cum_bytes = 0;
};
std::vector<CompareRow> compare_runs(const ScenarioConfig& cfg, std::uint64_t seed,
                                     const std::vector<Variant>& variants,
                                     double window_start_s, double window_end_s,
                                     const std::string& flow_id = "observed");
std::string compare_to_csv(const std::vector<CompareRow>& rows);

// Window aggregation helpers shared by compare and the acceptance suite.
double mean_goodput_bps(const std::vector<MetricSample>& samples, const std::string& flow_id,
                        double t0, double t1);
double mean_delay_ms(const std::vector<MetricSample>& samples, const std::string& flow_id,
                     double t0, double t1);
std::uint64_t cum_bytes_at(const std::vector<MetricSample>& samples, const std::string& flow_id,
                           double t);

}  // namespace splitflow
