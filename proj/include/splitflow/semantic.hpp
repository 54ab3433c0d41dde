#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>

#include "splitflow/flowcc.hpp"
#include "splitflow/simnet.hpp"
#include "splitflow/wire.hpp"

namespace splitflow {

constexpr std::size_t kMss = kMaxStreamSegment;  // 1448 payload bytes per DATA frame
constexpr std::size_t kSendBufferCap = 1u << 20;
constexpr std::size_t kRecvBufferCap = 1u << 20;
constexpr Duration kPersistInterval = sec(1);

// Sorted disjoint half-open intervals; the SACK bookkeeping workhorse.
class RangeSet {
 public:
  void insert(std::uint64_t start, std::uint64_t end);
  void subtract(std::uint64_t start, std::uint64_t end);
  void clear() { r_.clear(); }
  bool empty() const { return r_.empty(); }
  bool contains(std::uint64_t start, std::uint64_t end) const;
  std::uint64_t coverage() const;
  std::uint64_t coverage_from(std::uint64_t x) const;  // covered bytes in [x, inf)
  // Sub-ranges of [start, end) not covered by this set.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> gaps_in(std::uint64_t start,
                                                               std::uint64_t end) const;
  std::size_t count() const { return r_.size(); }
  std::optional<std::pair<std::uint64_t, std::uint64_t>> first() const;
  const std::map<std::uint64_t, std::uint64_t>& ranges() const { return r_; }

 private:
  std::map<std::uint64_t, std::uint64_t> r_;  // start -> end
};

enum class StreamError { closed, attach_refused };

// Reliable, ordered byte stream holding all end-to-end hard state:
// segmentation, byte-range SACK, retransmission, in-order delivery and
// receive-window control. No congestion state lives here; every frame
// emitted is pulled by a may-send grant from the flow layer below.
class Stream {
 public:
  struct Callbacks {
    std::function<void()> kick;      // ask the owner to run the grant loop
    std::function<void()> readable;
    std::function<void()> writable;
    std::function<void()> recv_closed;    // FIN delivered in order
    std::function<void()> send_complete;  // everything written+FIN acked
  };

  Stream(Simulator& sim, std::uint16_t id);
  ~Stream();

  std::uint16_t id() const { return id_; }
  Callbacks& callbacks() { return cb_; }

  // --- application side
  std::size_t write(ByteView data);  // returns accepted count; 0 when buffer full
  bool finish_write();               // FIN; false (StreamClosed) if already finished
  Bytes read(std::size_t max);
  std::uint64_t bytes_read() const { return read_next_; }
  std::uint64_t bytes_written() const { return write_next_; }
  bool recv_finished() const { return final_size_ && read_next_ == *final_size_; }
  bool send_finished() const;
  std::uint64_t readable_bytes() const;

  // --- engine side (driven by the owning connection)
  bool has_work(SimTime now) const;
  std::optional<Bytes> next_frame(SimTime now);  // one frame per grant
  void on_frame(const FrameHeader& h, ByteView payload, SimTime now);
  // Stream migrated to a fresh channel: every unacked range becomes
  // immediately retransmission-eligible; receive state is untouched.
  void on_reattached(SimTime now);

  std::uint64_t peer_window() const { return peer_window_; }
  std::uint64_t outstanding_bytes() const;
  std::uint64_t recv_window() const;

  struct Stats {
    std::uint64_t frames_sent = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t acks_sent = 0;
    std::uint64_t retransmitted_bytes = 0;
    std::uint64_t duplicate_bytes_received = 0;
    std::uint64_t malformed_acks = 0;
    std::uint64_t max_outstanding = 0;
    std::uint64_t window_probe_frames = 0;
  };
  const Stats& stats() const { return stats_; }

 private:
  struct SentSeg {
    std::uint64_t end;
    SimTime last_send;
    bool retransmitted;
  };

  void on_ack_frame(const FrameHeader& h, ByteView payload, SimTime now);
  void on_data_frame(const FrameHeader& h, ByteView payload, SimTime now);
  void carve_sent_records(std::uint64_t start, std::uint64_t end);
  Bytes make_data_frame(std::uint64_t offset, std::uint64_t len, SimTime now, bool rtx);
  Bytes make_ack_frame();
  std::uint8_t window_exp() const;
  void note_peer_window(std::uint8_t exp);
  Bytes copy_send_range(std::uint64_t offset, std::uint64_t len) const;
  void free_acked_chunks();
  void update_rtt(Duration sample);
  void arm_rtx_timer();
  void arm_persist_timer();
  void check_rtx_deadlines(SimTime now);

  Simulator& sim_;
  std::uint16_t id_;
  Callbacks cb_;

  // send side
  std::map<std::uint64_t, Bytes> send_chunks_;
  RangeSet unacked_;       // written but not acked
  RangeSet acked_;         // cumulative SACK knowledge
  RangeSet rtx_eligible_;  // unacked ranges due for retransmission
  std::map<std::uint64_t, SentSeg> sent_segs_;
  std::uint64_t write_next_ = 0;
  std::uint64_t send_next_ = 0;
  std::optional<std::uint64_t> fin_offset_;
  bool fin_sent_ = false;
  bool fin_acked_ = false;
  SimTime fin_last_send_ = 0;
  std::uint64_t peer_window_ = kRecvBufferCap;  // assume open until told otherwise
  bool probe_due_ = false;
  Duration srtt_ = 0;
  Duration rttvar_ = 0;
  Duration rto_ = kRtoInitial;
  bool has_rtt_ = false;
  EventHandle rtx_timer_{};
  EventHandle persist_timer_{};

  // receive side
  std::map<std::uint64_t, Bytes> recv_chunks_;
  RangeSet received_;
  std::uint64_t read_next_ = 0;
  std::optional<std::uint64_t> final_size_;
  bool ack_pending_ = false;
  bool sent_completed_signal_ = false;
  bool recv_closed_signaled_ = false;

  Stats stats_;
};

}  // namespace splitflow
