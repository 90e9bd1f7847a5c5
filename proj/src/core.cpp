#include "edgestream/core.hpp"

#include <algorithm>
#include <charconv>
#include <unordered_set>

namespace edgestream {

std::string to_string(Duration d) { return std::to_string(d.count()) + "us"; }

bool is_valid_utf8(std::string_view s) noexcept {
  std::size_t i = 0;
  const auto n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= n) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000)) {
      return false;
    }
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

std::string NodeAddress::to_string() const { return host + ":" + std::to_string(port); }

NodeAddress NodeAddress::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw ContractViolation("address must be host:port: '" + std::string(text) + "'");
  }
  unsigned port = 0;
  const auto digits = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535) {
    throw ContractViolation("bad port in address '" + std::string(text) + "'");
  }
  return NodeAddress{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

std::uint64_t Header::payload_length() const noexcept {
  return is_lazy() ? std::get<PayloadLocator>(body).length : std::get<InlinePayload>(body).bytes.size();
}

void Header::validate() const {
  if (publish_ts < event_ts) throw ContractViolation("header publish_ts precedes event_ts");
}

void TopicConfig::validate() const {
  if (streams.empty()) throw ContractViolation("topic '" + topic.str() + "' has no streams");
  std::unordered_set<StreamId> seen;
  for (const auto& s : streams) {
    if (!seen.insert(s).second) {
      throw ContractViolation("topic '" + topic.str() + "' lists stream '" + s.str() + "' twice");
    }
  }
  if (const auto* tt = std::get_if<TimeTriggered>(&join_mode); tt && tt->window <= Duration::zero()) {
    throw ContractViolation("time-triggered window must be positive");
  }
  if (const auto* hy = std::get_if<Hybrid>(&join_mode); hy && hy->min_interval < Duration::zero()) {
    throw ContractViolation("hybrid min_interval must be non-negative");
  }
  for (const auto& b : {max_skew, freshness_threshold, target_prediction_frequency}) {
    if (b && *b < Duration::zero()) throw ContractViolation("bounds must be non-negative");
  }
}

std::optional<std::size_t> TopicConfig::slot_of(const StreamId& stream) const {
  const auto it = std::find(streams.begin(), streams.end(), stream);
  if (it == streams.end()) return std::nullopt;
  return static_cast<std::size_t>(it - streams.begin());
}

Bound TopicConfig::min_emit_interval() const {
  if (const auto* hy = std::get_if<Hybrid>(&join_mode)) return hy->min_interval;
  if (std::holds_alternative<DataTriggered>(join_mode)) return target_prediction_frequency;
  return std::nullopt;
}

const Slot& JoinTuple::slot(const StreamId& stream) const {
  for (const auto& s : slots) {
    if (s.header.stream == stream) return s;
  }
  throw ContractViolation("tuple has no slot for stream '" + stream.str() + "'");
}

Duration compute_skew(std::span<const Timestamp> timestamps) {
  if (timestamps.empty()) throw ContractViolation("compute_skew needs at least one timestamp");
  const auto [lo, hi] = std::minmax_element(timestamps.begin(), timestamps.end());
  return *hi - *lo;
}

bool is_fresh(Timestamp event_ts, Timestamp now, Bound threshold) {
  if (!threshold) return true;
  return age(event_ts, now) <= *threshold;
}

Timestamp WallClock::now() const {
  const auto since = std::chrono::system_clock::now().time_since_epoch();
  return Timestamp{static_cast<std::uint64_t>(std::chrono::duration_cast<Duration>(since).count())};
}

Bytes encode_i64(std::int64_t value) {
  Bytes out(8);
  auto u = static_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(u >> (8 * i));
  return out;
}

std::optional<std::int64_t> decode_i64_prefix(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) return std::nullopt;
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<std::int64_t>(u);
}

}  // namespace edgestream
