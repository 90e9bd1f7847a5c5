#pragma once

// Lifecycle event log and the latency/throughput metrics computed from it.
//
// One line per event:
//   ts_micros \t node \t kind \t topic \t stream \t event_ts \t seq \t extra
// Empty fields are written as "-". extra is a ';'-separated list of key=value
// pairs. Each node appends to <node>.log; reports merge all files offline.

#include "edgestream/core.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>

namespace edgestream {

enum class EventKind {
  produce_begin,
  produce_end,
  broker_deliver,
  fetch_begin,
  fetch_end,
  join_emit,
  model_begin,
  model_end,
  predict_publish,
  skip,
  shutdown,
};

std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

struct MetricEvent {
  Timestamp at;
  std::string node;
  EventKind kind = EventKind::skip;
  std::string topic;
  std::string stream;
  std::optional<std::uint64_t> event_ts;
  std::optional<std::uint64_t> seq;
  std::string extra;

  bool operator==(const MetricEvent&) const = default;
};

class LogParseError : public Error {
 public:
  LogParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what) {}
};

/// Percent-escapes characters that would break the line or extra syntax.
std::string escape_field(std::string_view s);
std::string unescape_field(std::string_view s);

std::string format_event(const MetricEvent& e);
MetricEvent parse_event(std::string_view line, const std::string& file = "<log>", std::size_t line_no = 0);

using Extra = std::map<std::string, std::string>;
Extra parse_extra(std::string_view extra);
std::string format_extra(const Extra& kv);

/// Skip reasons. The first five come from the join/runtime contracts; the
/// rest cover the remaining ways an item can leave the pipeline unpredicted.
namespace skip_reason {
inline constexpr std::string_view stale = "stale";
inline constexpr std::string_view skew = "skew";
inline constexpr std::string_view superseded_by_hybrid = "superseded_by_hybrid";
inline constexpr std::string_view shared_rebalance = "shared_rebalance";
inline constexpr std::string_view failed_fetch = "failed_fetch";
inline constexpr std::string_view superseded_by_window = "superseded_by_window";
inline constexpr std::string_view downsampled = "downsampled";
inline constexpr std::string_view unjoined = "unjoined";
inline constexpr std::string_view model_error = "model_error";
inline constexpr std::string_view late = "late";
}  // namespace skip_reason

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void record(MetricEvent e) = 0;
};

/// In-memory log, kept per node in record order. Thread-safe.
class EventLog final : public EventSink {
 public:
  void record(MetricEvent e) override;
  [[nodiscard]] std::vector<MetricEvent> events() const;
  [[nodiscard]] std::vector<std::string> nodes() const;
  /// Writes <dir>/<node>.log for every node.
  void write(const std::filesystem::path& dir) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::vector<MetricEvent>> by_node_;
  std::vector<MetricEvent> all_;
};

/// Appends each event to <dir>/<node>.log as it is recorded. Thread-safe.
class FileEventLog final : public EventSink {
 public:
  explicit FileEventLog(std::filesystem::path dir);
  void record(MetricEvent e) override;
  void flush();

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::ofstream> files_;
};

/// Reads every *.log in dir and merges them by timestamp. Ties keep file
/// name order, then line order.
std::vector<MetricEvent> read_log_dir(const std::filesystem::path& dir);

class IncompleteLog : public Error {
 public:
  using Error::Error;
};

struct ItemKey {
  std::string topic;
  std::string stream;
  std::uint64_t event_ts = 0;
  auto operator<=>(const ItemKey&) const = default;
};

struct Distribution {
  std::size_t count = 0;
  Duration min{0}, max{0}, mean{0}, median{0}, p95{0}, p99{0};
};

/// Nearest-rank percentile (p in (0, 100]) of an ascending sample.
Duration nearest_rank(const std::vector<Duration>& sorted, double p);
Distribution distribution(std::vector<Duration> sample);

enum class ItemStatus { predicted, skipped, unaccounted };

struct ItemMetrics {
  ItemKey key;
  Timestamp produced;
  std::optional<Duration> producer_sending;
  std::optional<Duration> consumer_receiving;
  std::optional<Duration> total_communication;
  std::optional<Duration> reaction;
  std::optional<Duration> end_to_end;
  std::optional<Duration> processing;  // model time of the tuple that predicted it
  ItemStatus status = ItemStatus::unaccounted;
  std::string skip_reason;
};

struct MetricReport {
  std::map<std::string, Distribution> distributions;
  std::optional<Duration> total_working_duration;
  std::optional<Duration> backlog;
  std::uint64_t items = 0;
  std::uint64_t predicted = 0;
  std::uint64_t unaccounted = 0;
  std::map<std::string, std::uint64_t> skipped_by_reason;
  std::uint64_t predictions = 0;
  std::uint64_t broker_frame_bytes = 0;
  std::uint64_t broker_payload_bytes = 0;
  std::uint64_t p2p_payload_bytes = 0;
  std::vector<ItemMetrics> per_item;
  std::map<ItemKey, Duration> queueing;  // per derived (prediction) item
  std::vector<Duration> processing;      // per model invocation
};

/// Computes every metric from a merged log. Pure: equal logs give equal reports.
MetricReport report(const std::vector<MetricEvent>& log);
void write_csv(const MetricReport& r, std::ostream& out);

/// join_emit.at minus produce_begin.at of the tuple's trigger item.
Duration reaction_time(const std::vector<MetricEvent>& log, const std::string& node, const std::string& topic,
                       std::uint64_t tuple_seq);

/// End-to-end latency of the last produced item that was predicted.
Duration backlog(const std::vector<MetricEvent>& log);

/// Step function of labels; a step applies from its timestamp onward.
class LabelTimeline {
 public:
  void add(Timestamp from, std::int64_t label);
  [[nodiscard]] std::optional<std::int64_t> at(Timestamp t) const;
  [[nodiscard]] const std::vector<std::pair<Timestamp, std::int64_t>>& steps() const noexcept { return steps_; }

 private:
  std::vector<std::pair<Timestamp, std::int64_t>> steps_;
};

struct AccuracyResult {
  double accuracy = 0;
  double macro_f1 = 0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // emitted before the first label
};

/// Judges each (emit_ts, label) prediction against the label in force at
/// emit_ts. Throws ContractViolation when nothing can be evaluated.
AccuracyResult real_time_accuracy(const std::vector<std::pair<Timestamp, std::int64_t>>& predictions,
                                  const LabelTimeline& labels);

}  // namespace edgestream
