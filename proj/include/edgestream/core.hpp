#pragma once

// Domain types shared by every module: timestamps, stream/topic names,
// headers, topic configuration, join tuples and the skew/freshness helpers.

#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace edgestream {

using Duration = std::chrono::microseconds;
using Bytes = std::vector<std::uint8_t>;

/// An upper bound on a duration; std::nullopt means unlimited.
using Bound = std::optional<Duration>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller breaks an operation's precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Microseconds since an epoch (simulation start or the Unix epoch).
struct Timestamp {
  std::uint64_t micros = 0;

  constexpr auto operator<=>(const Timestamp&) const = default;

  static constexpr Timestamp from_millis(std::uint64_t ms) { return Timestamp{ms * 1000}; }
  static constexpr Timestamp max() { return Timestamp{UINT64_MAX}; }
};

constexpr Duration operator-(Timestamp a, Timestamp b) {
  return Duration(static_cast<std::int64_t>(a.micros - b.micros));
}

// Saturates at zero and at Timestamp::max().
constexpr Timestamp operator+(Timestamp t, Duration d) {
  const auto delta = d.count();
  if (delta < 0) {
    const auto back = static_cast<std::uint64_t>(-delta);
    return Timestamp{back > t.micros ? 0 : t.micros - back};
  }
  const auto fwd = static_cast<std::uint64_t>(delta);
  return Timestamp{UINT64_MAX - t.micros < fwd ? UINT64_MAX : t.micros + fwd};
}

constexpr Timestamp operator-(Timestamp t, Duration d) { return t + Duration(-d.count()); }

std::string to_string(Duration d);

/// Validated UTF-8 name, 1..255 bytes. Tag keeps stream and topic names apart.
template <class Tag>
class Name {
 public:
  explicit Name(std::string value) : value_(std::move(value)) { validate(value_); }
  Name(const char* value) : Name(std::string(value)) {}

  [[nodiscard]] const std::string& str() const noexcept { return value_; }

  auto operator<=>(const Name&) const = default;

 private:
  static void validate(const std::string& v);
  std::string value_;
};

bool is_valid_utf8(std::string_view s) noexcept;

template <class Tag>
void Name<Tag>::validate(const std::string& v) {
  if (v.empty() || v.size() > 255) {
    throw ContractViolation("name must be 1..255 bytes: '" + v + "'");
  }
  if (!is_valid_utf8(v)) throw ContractViolation("name is not valid UTF-8");
}

using StreamId = Name<struct StreamTag>;
using TopicId = Name<struct TopicTag>;

struct NodeAddress {
  std::string host;
  std::uint16_t port = 0;

  auto operator<=>(const NodeAddress&) const = default;

  [[nodiscard]] std::string to_string() const;
  /// Parses "host:port".
  static NodeAddress parse(std::string_view text);
};

/// Claim check for a payload that stays on its source node.
struct PayloadLocator {
  NodeAddress node;
  std::uint64_t segment = 0;
  std::uint64_t offset = 0;
  std::uint32_t length = 0;

  auto operator<=>(const PayloadLocator&) const = default;
};

struct InlinePayload {
  Bytes bytes;
  bool operator==(const InlinePayload&) const = default;
};

struct Header {
  TopicId topic;
  StreamId stream;
  Timestamp event_ts;
  Timestamp publish_ts;
  std::variant<PayloadLocator, InlinePayload> body;

  bool operator==(const Header&) const = default;

  [[nodiscard]] bool is_lazy() const noexcept { return std::holds_alternative<PayloadLocator>(body); }
  [[nodiscard]] const PayloadLocator& locator() const { return std::get<PayloadLocator>(body); }
  [[nodiscard]] const Bytes& inline_bytes() const { return std::get<InlinePayload>(body).bytes; }
  [[nodiscard]] std::uint64_t payload_length() const noexcept;

  /// Throws ContractViolation when publish_ts < event_ts.
  void validate() const;
};

struct TimeTriggered {
  Duration window;
  bool operator==(const TimeTriggered&) const = default;
};
struct DataTriggered {
  bool operator==(const DataTriggered&) const = default;
};
struct Hybrid {
  Duration min_interval;
  bool operator==(const Hybrid&) const = default;
};
using JoinMode = std::variant<TimeTriggered, DataTriggered, Hybrid>;

enum class TimeBasis : std::uint8_t { event_time = 0, processing_time = 1 };

struct TopicConfig {
  TopicId topic;
  std::vector<StreamId> streams;  // order defines tuple slot order
  JoinMode join_mode = DataTriggered{};
  Bound max_skew;
  Bound freshness_threshold;
  Bound target_prediction_frequency;
  TimeBasis time_basis = TimeBasis::event_time;

  bool operator==(const TopicConfig&) const = default;

  /// Throws ContractViolation on an empty/duplicated stream list or a
  /// non-positive window or interval.
  void validate() const;
  [[nodiscard]] std::optional<std::size_t> slot_of(const StreamId& stream) const;
  /// The timestamp that joins and skew use for this header.
  [[nodiscard]] Timestamp basis_ts(const Header& h) const noexcept {
    return time_basis == TimeBasis::event_time ? h.event_ts : h.publish_ts;
  }
  /// Minimum spacing between emissions, if the topic is rate controlled.
  [[nodiscard]] Bound min_emit_interval() const;
};

struct Slot {
  Header header;
  std::optional<Bytes> payload;  // empty while pending
  bool substituted = false;      // filled by fail-soft imputation
  bool excluded = false;         // left out of a partial-input model

  bool operator==(const Slot&) const = default;
};

struct JoinTuple {
  TopicId topic;
  std::vector<Slot> slots;
  StreamId trigger_stream;
  Timestamp trigger_ts;
  Timestamp emit_ts;
  // Time-triggered only: no stream produced anything new since the last window.
  bool carried_forward = false;

  bool operator==(const JoinTuple&) const = default;

  [[nodiscard]] const Slot& slot(const StreamId& stream) const;
};

/// max(ts) - min(ts). Throws ContractViolation on an empty list.
Duration compute_skew(std::span<const Timestamp> timestamps);

/// Age of an item; clamped to zero when the item claims to be from the future.
constexpr Duration age(Timestamp event_ts, Timestamp now) {
  return now <= event_ts ? Duration::zero() : now - event_ts;
}

bool is_fresh(Timestamp event_ts, Timestamp now, Bound threshold);
inline bool is_fresh(const Header& header, Timestamp now, Bound threshold) {
  return is_fresh(header.event_ts, now, threshold);
}

class Clock {
 public:
  virtual ~Clock() = default;
  [[nodiscard]] virtual Timestamp now() const = 0;
};

class WallClock final : public Clock {
 public:
  [[nodiscard]] Timestamp now() const override;
};

/// Logical clock advanced explicitly, owned by the simulator's event loop.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = {}) : now_(start) {}
  [[nodiscard]] Timestamp now() const override { return now_; }
  void set(Timestamp t) { now_ = t; }
  void advance(Duration d) { now_ = now_ + d; }

 private:
  Timestamp now_;
};

/// Little-endian 64-bit label/value encoding used by the synthetic models.
Bytes encode_i64(std::int64_t value);
std::optional<std::int64_t> decode_i64_prefix(std::span<const std::uint8_t> bytes);

}  // namespace edgestream

template <class Tag>
struct std::hash<edgestream::Name<Tag>> {
  std::size_t operator()(const edgestream::Name<Tag>& n) const noexcept {
    return std::hash<std::string>{}(n.str());
  }
};

template <>
struct std::hash<edgestream::NodeAddress> {
  std::size_t operator()(const edgestream::NodeAddress& a) const noexcept {
    return std::hash<std::string>{}(a.host) * 31u + a.port;
  }
};

template <>
struct std::hash<edgestream::PayloadLocator> {
  std::size_t operator()(const edgestream::PayloadLocator& l) const noexcept {
    std::size_t h = std::hash<edgestream::NodeAddress>{}(l.node);
    h = h * 1000003u ^ std::hash<std::uint64_t>{}(l.segment);
    h = h * 1000003u ^ std::hash<std::uint64_t>{}(l.offset);
    return h;
  }
};
