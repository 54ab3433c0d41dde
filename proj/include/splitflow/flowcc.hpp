#pragma once

#include <memory>
#include <optional>
#include <string>

#include "splitflow/time.hpp"

namespace splitflow {

// Loss signals handed to a controller by the flow layer.
enum class LossKind { dup_ack_gap, timeout, eln_notified, queue_overflow_local };

constexpr Duration kRtoMin = msec(200);
constexpr Duration kRtoMax = sec(60);
constexpr Duration kRtoInitial = sec(1);

// Pluggable per-section congestion control behind one transmit-allowance
// contract. Window controllers answer max(0, floor(cwnd) - in_flight);
// the fixed-rate controller answers from a token bucket.
class CongestionController {
 public:
  virtual ~CongestionController() = default;

  virtual void on_ack(int newly_acked, Duration rtt_sample, SimTime now);
  virtual void on_loss(LossKind kind, SimTime now);
  virtual int allowance(int in_flight, SimTime now) const;
  virtual void on_packet_sent(SimTime now);

  // For rate-based controllers: when will allowance next become positive,
  // assuming nothing else changes. Window controllers return nullopt (their
  // allowance only opens on acks/losses).
  virtual std::optional<SimTime> next_allowance_time(int in_flight, SimTime now) const;

  virtual const char* name() const = 0;

  double cwnd() const { return cwnd_; }
  double ssthresh() const { return ssthresh_; }
  Duration srtt() const { return srtt_; }
  Duration rto() const { return rto_; }
  Duration base_rtt() const { return base_rtt_; }
  bool in_fast_recovery() const { return in_fast_recovery_; }

 protected:
  void update_rtt(Duration sample);
  void halve_window(SimTime now);  // one halving per loss event

  double cwnd_ = 2.0;
  double ssthresh_ = 1 << 20;
  Duration srtt_ = 0;
  Duration rttvar_ = 0;
  Duration rto_ = kRtoInitial;
  Duration base_rtt_ = 0;  // minimum observed
  bool has_rtt_ = false;
  bool in_fast_recovery_ = false;
  SimTime recovery_until_ = 0;
};

class NewRenoController : public CongestionController {
 public:
  void on_ack(int newly_acked, Duration rtt_sample, SimTime now) override;
  void on_loss(LossKind kind, SimTime now) override;
  const char* name() const override { return "newreno"; }
};

class VegasController : public CongestionController {
 public:
  VegasController(double alpha, double beta) : alpha_(alpha), beta_(beta) {}
  void on_ack(int newly_acked, Duration rtt_sample, SimTime now) override;
  void on_loss(LossKind kind, SimTime now) override;
  const char* name() const override { return "vegas"; }

  // diff = cwnd * (1 - base_rtt/rtt); +1 below alpha, -1 above beta,
  // floored at 2. Exposed for the formula oracle tests.
  void vegas_update(Duration rtt_last_epoch);

 private:
  double alpha_;
  double beta_;
  SimTime epoch_start_ = 0;
  Duration epoch_min_rtt_ = 0;
};

// Retransmits on explicit loss notification without touching the window;
// otherwise NewReno-like.
class SimpleElnController : public NewRenoController {
 public:
  void on_loss(LossKind kind, SimTime now) override;
  const char* name() const override { return "simpleeln"; }
};

// Administratively fixed transmission rate: a token bucket refilled at
// rate_pps with burst capacity of one packet beyond steady credit.
// Insensitive to acks and losses by construction.
class FixedRateController : public CongestionController {
 public:
  explicit FixedRateController(double rate_pps);
  void on_ack(int newly_acked, Duration rtt_sample, SimTime now) override;
  void on_loss(LossKind kind, SimTime now) override {
    (void)kind;
    (void)now;
  }
  int allowance(int in_flight, SimTime now) const override;
  void on_packet_sent(SimTime now) override;
  std::optional<SimTime> next_allowance_time(int in_flight, SimTime now) const override;
  const char* name() const override { return "fixedrate"; }

  double rate_pps() const { return rate_pps_; }
  void set_rate(double rate_pps, SimTime now);

 private:
  double tokens_at(SimTime now) const;

  double rate_pps_;
  double tokens_ = 1.0;
  SimTime tokens_as_of_ = 0;
  static constexpr double kBucketCap = 2.0;
};

struct CcOptions {
  double vegas_alpha = 2.0;
  double vegas_beta = 4.0;
  double fixed_rate_pps = 0.0;
};

// Controller selection by name: "newreno", "vegas", "fixedrate", "simpleeln".
std::unique_ptr<CongestionController> make_controller(const std::string& name,
                                                      const CcOptions& opts = {});

// Divides an administratively fixed total rate among n active flows.
double fixed_window_share(double total_rate_pps, int active_flows);

}  // namespace splitflow
