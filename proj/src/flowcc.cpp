#include "splitflow/flowcc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace splitflow {

// ---------------------------------------------------------------------------
// Shared state

void CongestionController::update_rtt(Duration sample) {
  if (sample <= 0) return;
  if (!has_rtt_) {
    srtt_ = sample;
    rttvar_ = sample / 2;
    base_rtt_ = sample;
    has_rtt_ = true;
  } else {
    // Standard smoothed estimator, gains 1/8 and 1/4.
    Duration err = sample - srtt_;
    srtt_ += err / 8;
    rttvar_ += (std::abs(err) - rttvar_) / 4;
    base_rtt_ = std::min(base_rtt_, sample);
  }
  rto_ = std::clamp<Duration>(srtt_ + 4 * rttvar_, kRtoMin, kRtoMax);
}

void CongestionController::halve_window(SimTime now) {
  // One halving per loss event; every loss within an RTT of the first is
  // part of the same event.
  if (in_fast_recovery_ && now < recovery_until_) return;
  ssthresh_ = std::max(cwnd_ / 2.0, 2.0);
  cwnd_ = ssthresh_;
  in_fast_recovery_ = true;
  recovery_until_ = now + (has_rtt_ ? srtt_ : kRtoInitial);
}

void CongestionController::on_ack(int newly_acked, Duration rtt_sample, SimTime now) {
  (void)newly_acked;
  update_rtt(rtt_sample);
  if (in_fast_recovery_ && now >= recovery_until_) in_fast_recovery_ = false;
}

void CongestionController::on_loss(LossKind kind, SimTime now) {
  switch (kind) {
    case LossKind::timeout:
      ssthresh_ = std::max(cwnd_ / 2.0, 2.0);
      cwnd_ = 1.0;
      rto_ = std::min<Duration>(rto_ * 2, kRtoMax);
      in_fast_recovery_ = false;
      break;
    case LossKind::eln_notified:
      // Default controllers have no notion of a non-congestion loss.
      halve_window(now);
      break;
    case LossKind::dup_ack_gap:
    case LossKind::queue_overflow_local:
      halve_window(now);
      break;
  }
}

int CongestionController::allowance(int in_flight, SimTime now) const {
  (void)now;
  return std::max(0, static_cast<int>(std::floor(cwnd_)) - in_flight);
}

void CongestionController::on_packet_sent(SimTime now) { (void)now; }

std::optional<SimTime> CongestionController::next_allowance_time(int, SimTime) const {
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// NewReno

void NewRenoController::on_ack(int newly_acked, Duration rtt_sample, SimTime now) {
  CongestionController::on_ack(newly_acked, rtt_sample, now);
  for (int i = 0; i < newly_acked; i++) {
    if (cwnd_ < ssthresh_) {
      cwnd_ += 1.0;  // slow start
    } else {
      cwnd_ += 1.0 / cwnd_;  // congestion avoidance, stepwise
    }
  }
}

void NewRenoController::on_loss(LossKind kind, SimTime now) {
  CongestionController::on_loss(kind, now);
}

// ---------------------------------------------------------------------------
// Vegas

void VegasController::vegas_update(Duration rtt_last_epoch) {
  if (base_rtt_ <= 0 || rtt_last_epoch <= 0) return;
  // diff = cwnd * (1 - base/rtt), computed as cwnd*(rtt-base)/rtt so the
  // boundary cases land exactly.
  double diff = cwnd_ * static_cast<double>(rtt_last_epoch - base_rtt_) / rtt_last_epoch;
  if (diff < alpha_) {
    cwnd_ += 1.0;
  } else if (diff > beta_) {
    cwnd_ -= 1.0;
  }
  cwnd_ = std::max(cwnd_, 2.0);
}

void VegasController::on_ack(int newly_acked, Duration rtt_sample, SimTime now) {
  CongestionController::on_ack(newly_acked, rtt_sample, now);
  if (rtt_sample > 0) {
    if (epoch_min_rtt_ == 0 || rtt_sample < epoch_min_rtt_) epoch_min_rtt_ = rtt_sample;
  }
  // One window adjustment per RTT.
  if (epoch_start_ == 0) {
    epoch_start_ = now;
    return;
  }
  Duration epoch_len = has_rtt_ ? srtt_ : kRtoInitial;
  if (now - epoch_start_ >= epoch_len && epoch_min_rtt_ > 0) {
    vegas_update(epoch_min_rtt_);
    epoch_start_ = now;
    epoch_min_rtt_ = 0;
  }
}

void VegasController::on_loss(LossKind kind, SimTime now) {
  // Reacts to loss like NewReno, per original Vegas.
  CongestionController::on_loss(kind, now);
}

// ---------------------------------------------------------------------------
// SimpleELN

void SimpleElnController::on_loss(LossKind kind, SimTime now) {
  if (kind == LossKind::eln_notified) return;  // link loss, window untouched
  NewRenoController::on_loss(kind, now);
}

// ---------------------------------------------------------------------------
// FixedRate

FixedRateController::FixedRateController(double rate_pps) : rate_pps_(rate_pps) {
  if (rate_pps <= 0) throw std::invalid_argument("fixedrate requires rate > 0");
}

double FixedRateController::tokens_at(SimTime now) const {
  double t = tokens_ + rate_pps_ * to_seconds(now - tokens_as_of_);
  return std::min(t, kBucketCap);
}

void FixedRateController::on_ack(int, Duration, SimTime) {}

int FixedRateController::allowance(int, SimTime now) const {
  return static_cast<int>(std::floor(tokens_at(now)));
}

void FixedRateController::on_packet_sent(SimTime now) {
  tokens_ = tokens_at(now) - 1.0;
  tokens_as_of_ = now;
}

std::optional<SimTime> FixedRateController::next_allowance_time(int, SimTime now) const {
  double t = tokens_at(now);
  if (t >= 1.0) return now;
  double wait_s = (1.0 - t) / rate_pps_;
  return now + from_seconds(wait_s);
}

void FixedRateController::set_rate(double rate_pps, SimTime now) {
  tokens_ = tokens_at(now);
  tokens_as_of_ = now;
  rate_pps_ = rate_pps;
}

// ---------------------------------------------------------------------------

std::unique_ptr<CongestionController> make_controller(const std::string& name,
                                                      const CcOptions& opts) {
  if (name == "newreno") return std::make_unique<NewRenoController>();
  if (name == "vegas") return std::make_unique<VegasController>(opts.vegas_alpha, opts.vegas_beta);
  if (name == "simpleeln") return std::make_unique<SimpleElnController>();
  if (name == "fixedrate") return std::make_unique<FixedRateController>(opts.fixed_rate_pps);
  throw std::invalid_argument("unknown congestion controller: " + name);
}

double fixed_window_share(double total_rate_pps, int active_flows) {
  if (active_flows < 1) throw std::invalid_argument("fixed_window_share: n >= 1 required");
  return total_rate_pps / active_flows;
}

}  // namespace splitflow
