#include "splitflow/semantic.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace splitflow {

// ---------------------------------------------------------------------------
// RangeSet

void RangeSet::insert(std::uint64_t start, std::uint64_t end) {
  if (start >= end) return;
  auto it = r_.upper_bound(start);
  if (it != r_.begin()) {
    auto prev = std::prev(it);
    if (prev->second >= start) {
      start = prev->first;
      end = std::max(end, prev->second);
      it = r_.erase(prev);
    }
  }
  while (it != r_.end() && it->first <= end) {
    end = std::max(end, it->second);
    it = r_.erase(it);
  }
  r_[start] = end;
}

void RangeSet::subtract(std::uint64_t start, std::uint64_t end) {
  if (start >= end) return;
  auto it = r_.upper_bound(start);
  if (it != r_.begin()) --it;
  while (it != r_.end() && it->first < end) {
    std::uint64_t s = it->first, e = it->second;
    if (e <= start) {
      ++it;
      continue;
    }
    it = r_.erase(it);
    if (s < start) r_[s] = start;
    if (e > end) {
      r_[end] = e;
      break;
    }
  }
}

bool RangeSet::contains(std::uint64_t start, std::uint64_t end) const {
  if (start >= end) return true;
  auto it = r_.upper_bound(start);
  if (it == r_.begin()) return false;
  --it;
  return it->second >= end;
}

std::uint64_t RangeSet::coverage() const {
  std::uint64_t total = 0;
  for (const auto& [s, e] : r_) total += e - s;
  return total;
}

std::uint64_t RangeSet::coverage_from(std::uint64_t x) const {
  std::uint64_t total = 0;
  auto it = r_.lower_bound(x);
  if (it != r_.begin()) {
    auto prev = std::prev(it);
    if (prev->second > x) total += prev->second - x;
  }
  for (; it != r_.end(); ++it) total += it->second - it->first;
  return total;
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> RangeSet::gaps_in(
    std::uint64_t start, std::uint64_t end) const {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  if (start >= end) return out;
  std::uint64_t p = start;
  auto it = r_.upper_bound(start);
  if (it != r_.begin()) {
    auto prev = std::prev(it);
    if (prev->second > p) p = std::min(prev->second, end);
  }
  for (; p < end && it != r_.end() && it->first < end; ++it) {
    if (it->first > p) out.emplace_back(p, it->first);
    p = std::min(std::max(p, it->second), end);
  }
  if (p < end) out.emplace_back(p, end);
  return out;
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> RangeSet::first() const {
  if (r_.empty()) return std::nullopt;
  return *r_.begin();
}

// ---------------------------------------------------------------------------
// Stream

Stream::Stream(Simulator& sim, std::uint16_t id) : sim_(sim), id_(id) {}

Stream::~Stream() {
  sim_.cancel(rtx_timer_);
  sim_.cancel(persist_timer_);
}

bool Stream::send_finished() const {
  return fin_offset_ && fin_acked_ && unacked_.empty();
}

std::size_t Stream::write(ByteView data) {
  if (fin_offset_) return 0;  // StreamClosed for further writes
  std::uint64_t lowest = unacked_.empty() ? write_next_ : unacked_.first()->first;
  std::uint64_t residency = write_next_ - lowest;
  std::size_t room = residency >= kSendBufferCap
                         ? 0
                         : static_cast<std::size_t>(kSendBufferCap - residency);
  std::size_t n = std::min(room, data.size());
  if (n == 0) return 0;
  send_chunks_[write_next_] = Bytes(data.begin(), data.begin() + n);
  unacked_.insert(write_next_, write_next_ + n);
  write_next_ += n;
  if (cb_.kick) cb_.kick();
  return n;
}

bool Stream::finish_write() {
  if (fin_offset_) return false;
  fin_offset_ = write_next_;
  if (cb_.kick) cb_.kick();
  return true;
}

Bytes Stream::read(std::size_t max) {
  Bytes out;
  while (out.size() < max) {
    auto it = recv_chunks_.begin();
    if (it == recv_chunks_.end() || it->first > read_next_) break;
    std::uint64_t skip = read_next_ - it->first;
    if (skip >= it->second.size()) {
      recv_chunks_.erase(it);
      continue;
    }
    std::size_t take = std::min(max - out.size(), it->second.size() - skip);
    out.insert(out.end(), it->second.begin() + skip, it->second.begin() + skip + take);
    read_next_ += take;
    if (skip + take == it->second.size()) recv_chunks_.erase(it);
  }
  if (recv_finished() && !recv_closed_signaled_) {
    recv_closed_signaled_ = true;
    if (cb_.recv_closed) cb_.recv_closed();
  }
  return out;
}

std::uint64_t Stream::readable_bytes() const {
  auto it = received_.ranges().upper_bound(read_next_);
  if (it != received_.ranges().begin()) {
    --it;
    if (it->second > read_next_ && it->first <= read_next_) return it->second - read_next_;
  }
  return 0;
}

std::uint64_t Stream::outstanding_bytes() const {
  // Sent and not yet acked: unacked coverage below the send frontier.
  return unacked_.coverage() - unacked_.coverage_from(send_next_);
}

std::uint64_t Stream::recv_window() const {
  std::uint64_t held = received_.coverage() - read_next_;
  return held >= kRecvBufferCap ? 0 : kRecvBufferCap - held;
}

std::uint8_t Stream::window_exp() const {
  std::uint64_t w = recv_window();
  if (w < 2) return 0;  // closed
  std::uint8_t e = 0;
  while ((2ull << e) <= w && e < 62) e++;
  return e;  // 2^e <= w
}

void Stream::note_peer_window(std::uint8_t exp) {
  std::uint64_t w = exp == 0 ? 0 : (1ull << exp);
  bool was_zero = peer_window_ == 0;
  peer_window_ = w;
  if (was_zero && w > 0) {
    sim_.cancel(persist_timer_);
    persist_timer_ = {};
    probe_due_ = false;
    if (cb_.kick) cb_.kick();
  }
  if (w == 0) arm_persist_timer();
}

void Stream::arm_persist_timer() {
  if (persist_timer_.valid()) return;
  persist_timer_ = sim_.schedule_after(kPersistInterval, [this] {
    persist_timer_ = {};
    if (peer_window_ == 0) {
      probe_due_ = true;
      if (cb_.kick) cb_.kick();
      arm_persist_timer();
    }
  });
}

Bytes Stream::copy_send_range(std::uint64_t offset, std::uint64_t len) const {
  Bytes out;
  out.reserve(len);
  auto it = send_chunks_.upper_bound(offset);
  assert(it != send_chunks_.begin());
  --it;
  while (out.size() < len && it != send_chunks_.end()) {
    std::uint64_t skip = offset + out.size() - it->first;
    assert(skip < it->second.size());
    std::size_t take = std::min<std::uint64_t>(len - out.size(), it->second.size() - skip);
    out.insert(out.end(), it->second.begin() + skip, it->second.begin() + skip + take);
    ++it;
  }
  assert(out.size() == len);
  return out;
}

void Stream::free_acked_chunks() {
  std::uint64_t keep_from = unacked_.empty() ? write_next_ : unacked_.first()->first;
  while (!send_chunks_.empty()) {
    auto it = send_chunks_.begin();
    if (it->first + it->second.size() <= keep_from) {
      send_chunks_.erase(it);
    } else {
      break;
    }
  }
}

void Stream::update_rtt(Duration sample) {
  if (sample <= 0) return;
  if (!has_rtt_) {
    srtt_ = sample;
    rttvar_ = sample / 2;
    has_rtt_ = true;
  } else {
    Duration err = sample - srtt_;
    srtt_ += err / 8;
    rttvar_ += (std::abs(err) - rttvar_) / 4;
  }
  rto_ = std::clamp<Duration>(srtt_ + 4 * rttvar_, kRtoMin, kRtoMax);
}

void Stream::arm_rtx_timer() {
  sim_.cancel(rtx_timer_);
  rtx_timer_ = {};
  SimTime earliest = 0;
  for (const auto& [s, seg] : sent_segs_) {
    SimTime deadline = seg.last_send + rto_;
    if (earliest == 0 || deadline < earliest) earliest = deadline;
  }
  if (fin_sent_ && !fin_acked_) {
    SimTime fd = fin_last_send_ + rto_;
    if (earliest == 0 || fd < earliest) earliest = fd;
  }
  if (earliest == 0) return;
  rtx_timer_ = sim_.schedule_at(std::max(earliest, sim_.now()), [this] {
    rtx_timer_ = {};
    check_rtx_deadlines(sim_.now());
  });
}

void Stream::check_rtx_deadlines(SimTime now) {
  bool due = false;
  for (auto& [s, seg] : sent_segs_) {
    if (seg.last_send + rto_ <= now) {
      rtx_eligible_.insert(s, seg.end);
      due = true;
    }
  }
  if (fin_sent_ && !fin_acked_ && fin_last_send_ + rto_ <= now) due = true;
  arm_rtx_timer();
  if (due && cb_.kick) cb_.kick();
}

bool Stream::has_work(SimTime now) const {
  if (ack_pending_) return true;
  if (!rtx_eligible_.empty()) return true;
  std::uint64_t limit = fin_offset_ ? *fin_offset_ : write_next_;
  if (send_next_ < limit && outstanding_bytes() < peer_window_) return true;
  if (fin_offset_ && send_next_ >= *fin_offset_ && !fin_acked_ &&
      (!fin_sent_ || fin_last_send_ + rto_ <= now)) {
    return true;
  }
  if (probe_due_) return true;
  return false;
}

void Stream::carve_sent_records(std::uint64_t start, std::uint64_t end) {
  auto it = sent_segs_.upper_bound(start);
  if (it != sent_segs_.begin()) --it;
  while (it != sent_segs_.end() && it->first < end) {
    std::uint64_t s = it->first;
    SentSeg seg = it->second;
    if (seg.end <= start) {
      ++it;
      continue;
    }
    it = sent_segs_.erase(it);
    if (s < start) sent_segs_[s] = SentSeg{start, seg.last_send, seg.retransmitted};
    if (seg.end > end) {
      sent_segs_[end] = SentSeg{seg.end, seg.last_send, seg.retransmitted};
      break;
    }
  }
}

Bytes Stream::make_data_frame(std::uint64_t offset, std::uint64_t len, SimTime now, bool rtx) {
  FrameHeader h;
  h.stream_id = id_;
  h.window_exp = window_exp();
  h.offset = static_cast<std::uint32_t>(offset);
  if (offset == 0) h.flags |= kFrameFlagOpen;
  if (fin_offset_ && offset + len == *fin_offset_) {
    h.flags |= kFrameFlagFin;
    fin_sent_ = true;
    fin_last_send_ = now;
  }
  Bytes payload = len ? copy_send_range(offset, len) : Bytes{};
  if (len > 0) {
    sent_segs_[offset] = SentSeg{offset + len, now, rtx};
    if (rtx) stats_.retransmitted_bytes += len;
  }
  stats_.frames_sent++;
  stats_.max_outstanding = std::max(stats_.max_outstanding, outstanding_bytes());
  arm_rtx_timer();
  return encode_frame(h, payload);
}

Bytes Stream::make_ack_frame() {
  FrameHeader h;
  h.flags = kFrameFlagAck;
  if (final_size_) h.flags |= kFrameFlagFin;
  h.stream_id = id_;
  h.window_exp = window_exp();
  std::vector<SackRange> ranges;
  for (const auto& [s, e] : received_.ranges()) {
    if (ranges.size() >= 32) break;
    ranges.push_back(SackRange{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(e)});
  }
  stats_.acks_sent++;
  return encode_frame(h, encode_sack_payload(ranges));
}

std::optional<Bytes> Stream::next_frame(SimTime now) {
  // Priority: acks, then retransmissions, then new data, then fin/probe.
  if (ack_pending_) {
    ack_pending_ = false;
    return make_ack_frame();
  }
  if (auto r = rtx_eligible_.first()) {
    std::uint64_t off = r->first;
    std::uint64_t len = std::min<std::uint64_t>(r->second - r->first, kMss);
    rtx_eligible_.subtract(off, off + len);
    carve_sent_records(off, off + len);
    return make_data_frame(off, len, now, true);
  }
  std::uint64_t limit = fin_offset_ ? *fin_offset_ : write_next_;
  if (send_next_ < limit) {
    std::uint64_t out = outstanding_bytes();
    if (out < peer_window_) {
      std::uint64_t len =
          std::min<std::uint64_t>({limit - send_next_, kMss, peer_window_ - out});
      std::uint64_t off = send_next_;
      send_next_ += len;
      return make_data_frame(off, len, now, false);
    }
    if (probe_due_) {
      probe_due_ = false;
      stats_.window_probe_frames++;
      return make_data_frame(send_next_, 0, now, false);
    }
    if (peer_window_ == 0) arm_persist_timer();
    return std::nullopt;
  }
  if (fin_offset_ && send_next_ >= *fin_offset_ && !fin_acked_ &&
      (!fin_sent_ || fin_last_send_ + rto_ <= now)) {
    return make_data_frame(*fin_offset_, 0, now, fin_sent_);
  }
  if (probe_due_) {
    probe_due_ = false;
    stats_.window_probe_frames++;
    return make_data_frame(send_next_, 0, now, false);
  }
  return std::nullopt;
}

void Stream::on_frame(const FrameHeader& h, ByteView payload, SimTime now) {
  note_peer_window(h.window_exp);
  if (h.is_ack()) {
    on_ack_frame(h, payload, now);
  } else {
    on_data_frame(h, payload, now);
  }
}

void Stream::on_data_frame(const FrameHeader& h, ByteView payload, SimTime now) {
  (void)now;
  stats_.frames_received++;
  std::uint64_t off = h.offset;
  if (h.fin()) final_size_ = off + payload.size();
  if (!payload.empty()) {
    std::uint64_t start = off, end = off + payload.size();
    auto gaps = received_.gaps_in(start, end);
    std::uint64_t fresh = 0;
    for (const auto& [gs, ge] : gaps) {
      recv_chunks_[gs] = Bytes(payload.begin() + (gs - start), payload.begin() + (ge - start));
      fresh += ge - gs;
    }
    stats_.duplicate_bytes_received += (end - start) - fresh;
    received_.insert(start, end);
  }
  ack_pending_ = true;
  if (cb_.kick) cb_.kick();
  if (readable_bytes() > 0 && cb_.readable) cb_.readable();
  if (recv_finished() && !recv_closed_signaled_) {
    recv_closed_signaled_ = true;
    if (cb_.recv_closed) cb_.recv_closed();
  }
}

void Stream::on_ack_frame(const FrameHeader& h, ByteView payload, SimTime now) {
  auto decoded = decode_sack_payload(payload);
  if (!ok(decoded)) {
    stats_.malformed_acks++;
    return;
  }
  if (h.fin()) fin_acked_ = true;
  const auto& ranges = std::get<std::vector<SackRange>>(decoded);
  for (const auto& r : ranges) {
    acked_.insert(r.start, r.end);
    unacked_.subtract(r.start, r.end);
    rtx_eligible_.subtract(r.start, r.end);
  }
  // Segment records: sample RTT on clean full coverage; keep only the
  // still-unacked parts (a partially acked record forfeits its sample).
  for (auto it = sent_segs_.begin(); it != sent_segs_.end();) {
    std::uint64_t s = it->first;
    SentSeg seg = it->second;
    auto keep = acked_.gaps_in(s, seg.end);
    if (keep.size() == 1 && keep[0].first == s && keep[0].second == seg.end) {
      ++it;
      continue;
    }
    if (keep.empty() && !seg.retransmitted) update_rtt(now - seg.last_send);
    it = sent_segs_.erase(it);
    for (const auto& [ks, ke] : keep) {
      sent_segs_[ks] = SentSeg{ke, seg.last_send, true};
    }
  }
  // Dup-threshold rule: a range becomes retransmission-eligible once
  // >= 3 MSS of bytes above it are acked while it stays unacked.
  for (const auto& [s, seg] : sent_segs_) {
    if (acked_.coverage_from(seg.end) >= 3 * kMss) {
      rtx_eligible_.insert(s, seg.end);
    }
  }
  free_acked_chunks();
  arm_rtx_timer();
  if (cb_.writable) cb_.writable();
  if (send_finished() && !sent_completed_signal_) {
    sent_completed_signal_ = true;
    if (cb_.send_complete) cb_.send_complete();
  }
  if (cb_.kick) cb_.kick();
}

void Stream::on_reattached(SimTime now) {
  (void)now;
  // Everything sent and unacked goes straight to the retransmission set.
  for (const auto& [s, seg] : sent_segs_) rtx_eligible_.insert(s, seg.end);
  if (fin_sent_ && !fin_acked_) fin_last_send_ = 0;
  if (cb_.kick) cb_.kick();
}

}  // namespace splitflow
