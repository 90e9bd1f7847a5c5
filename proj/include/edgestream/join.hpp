#pragma once

// Temporal joins over the streams of one topic.
//
// DataTriggeredJoiner follows the two-way algorithm generalized to n streams:
// on an arrival, yield if every other stream has a latest item, then replace
// the arriving stream's latest iff the new timestamp is strictly greater.
// HybridJoiner is the same with a minimum spacing between emissions.
// TimeTriggeredJoiner emits the per-stream latest items at window boundaries.
//
// Joiners are single-writer state machines. They leave slot payloads empty;
// the runtime fills them.

#include "edgestream/core.hpp"

#include <memory>

namespace edgestream {

class JoinError : public Error {
 public:
  using Error::Error;
};

/// What one arrival did to the joiner.
struct Arrival {
  std::optional<JoinTuple> tuple;
  bool suppressed = false;    // hybrid: state updated, emission held back
  bool late_dropped = false;  // time-triggered: straggler beyond the lateness bound
};

struct StreamState {
  std::optional<Header> latest;
  std::optional<Timestamp> latest_ts;  // nullopt stands for -infinity
};

class DataTriggeredJoiner {
 public:
  explicit DataTriggeredJoiner(TopicConfig config);

  /// t is the item's timestamp under the topic's time basis; now is the
  /// arrival time, recorded as the tuple's emit_ts.
  Arrival on_arrival(const Header& item, Timestamp t, Timestamp now);

  [[nodiscard]] const std::vector<StreamState>& state() const noexcept { return state_; }
  [[nodiscard]] bool warm() const noexcept;
  [[nodiscard]] const TopicConfig& config() const noexcept { return config_; }

 protected:
  std::size_t slot_or_throw(const Header& item) const;
  bool others_present(std::size_t slot) const;
  JoinTuple make_tuple(std::size_t trigger_slot, const Header& trigger, Timestamp t, Timestamp now) const;
  void update(std::size_t slot, const Header& item, Timestamp t);

  TopicConfig config_;
  std::vector<StreamState> state_;
};

class HybridJoiner : public DataTriggeredJoiner {
 public:
  HybridJoiner(TopicConfig config, Duration min_interval);

  Arrival on_arrival(const Header& item, Timestamp t, Timestamp now);

  [[nodiscard]] Duration min_interval() const noexcept { return min_interval_; }
  [[nodiscard]] std::optional<Timestamp> last_emit() const noexcept { return last_emit_; }

 private:
  Duration min_interval_;
  std::optional<Timestamp> last_emit_;
};

class TimeTriggeredJoiner {
 public:
  explicit TimeTriggeredJoiner(TopicConfig config);

  Arrival on_arrival(const Header& item, Timestamp t, Timestamp now);
  /// Closes the window ending at window_end; boundaries must increase.
  std::optional<JoinTuple> close_window(Timestamp window_end);

  [[nodiscard]] Duration window() const noexcept { return window_; }
  [[nodiscard]] const std::vector<StreamState>& state() const noexcept { return state_; }
  [[nodiscard]] std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  struct Pending {
    std::size_t slot;
    Header item;
    Timestamp t;
  };

  TopicConfig config_;
  Duration window_;
  std::vector<StreamState> state_;
  std::vector<bool> changed_;
  std::vector<Pending> buffer_;  // event-time basis only
  std::optional<Timestamp> last_close_;
};

struct SkewVerdict {
  bool accepted = true;
  Duration skew{0};
};

/// Accepts iff the spread of slot timestamps is within max_skew.
SkewVerdict skew_filter(const JoinTuple& tuple, Bound max_skew, TimeBasis basis = TimeBasis::event_time);

/// Picks the joiner for a topic config. A data-triggered topic with a
/// target prediction frequency behaves as hybrid with that interval.
class Joiner {
 public:
  explicit Joiner(const TopicConfig& config);

  Arrival on_header(const Header& item, Timestamp now);
  std::optional<JoinTuple> on_window(Timestamp window_end);

  /// Window width for time-triggered topics.
  [[nodiscard]] std::optional<Duration> window() const;
  [[nodiscard]] const TopicConfig& config() const noexcept { return config_; }

 private:
  TopicConfig config_;
  std::variant<DataTriggeredJoiner, HybridJoiner, TimeTriggeredJoiner> impl_;
};

}  // namespace edgestream
