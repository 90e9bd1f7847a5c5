#pragma once

// Framing and serialization for broker and peer-to-peer messages.
//
// Frame layout (all integers little-endian):
//
//   u32 length      bytes following this field (= body size + 2)
//   u8  version     always 1
//   u8  msg_type    see MsgType
//   ... body
//
// Strings are u16 length + UTF-8 bytes. Durations are u64 microseconds; an
// optional bound uses 0xFFFFFFFFFFFFFFFF for "unlimited". docs/wire.md has the
// per-message body layouts.

#include "edgestream/core.hpp"

#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>

namespace edgestream::wire {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kLengthFieldBytes = 4;
inline constexpr std::uint64_t kUnlimited = UINT64_MAX;
inline constexpr std::size_t kDefaultMaxPayload = 64u * 1024 * 1024;

enum class MsgType : std::uint8_t {
  publish_header = 0,
  subscribe = 1,
  deliver = 2,
  fetch_request = 3,
  fetch_response = 4,
  ack = 5,
  create_topic = 6,
  error = 7,
};

enum class FetchStatus : std::uint8_t {
  ok = 0,
  not_found = 1,
  evicted = 2,
  stale_rejected = 3,
  // Local only, never encoded: the peer could not be reached.
  transport_failure = 255,
};

std::string_view to_string(FetchStatus s);

struct PublishHeader {
  Header header;
  bool operator==(const PublishHeader&) const = default;
};

struct Subscribe {
  TopicId topic;
  std::string consumer_id;
  bool shared = false;
  bool operator==(const Subscribe&) const = default;
};

struct Deliver {
  Header header;
  bool operator==(const Deliver&) const = default;
};

struct FetchRequest {
  PayloadLocator locator;
  Bound max_age;  // server-side freshness re-check
  bool operator==(const FetchRequest&) const = default;
};

struct FetchResponse {
  FetchStatus status = FetchStatus::ok;
  Bytes payload;
  bool operator==(const FetchResponse&) const = default;
};

struct Ack {
  std::uint64_t sequence = 0;
  bool operator==(const Ack&) const = default;
};

struct CreateTopic {
  TopicConfig config;
  bool operator==(const CreateTopic&) const = default;
};

enum class ErrorCode : std::uint8_t {
  duplicate_topic = 1,
  unknown_topic = 2,
  unknown_stream = 3,
  duplicate_consumer = 4,
  malformed = 5,
  frame_too_large = 6,
  gap = 7,  // detail carries "first_missing:resume_at"
  internal = 8,
};

struct ErrorReply {
  ErrorCode code = ErrorCode::internal;
  std::string detail;
  bool operator==(const ErrorReply&) const = default;
};

using WireMessage =
    std::variant<PublishHeader, Subscribe, Deliver, FetchRequest, FetchResponse, Ack, CreateTopic, ErrorReply>;

MsgType type_of(const WireMessage& m) noexcept;

class EncodeError : public Error {
 public:
  using Error::Error;
};

enum class DecodeErrc {
  truncated,
  unsupported_version,
  unknown_type,
  malformed_utf8,
  trailing_bytes,
  malformed,
  payload_too_large,
};

std::string_view to_string(DecodeErrc e);

class DecodeError : public Error {
 public:
  DecodeError(DecodeErrc code, const std::string& what) : Error(what), code_(code) {}
  [[nodiscard]] DecodeErrc code() const noexcept { return code_; }

 private:
  DecodeErrc code_;
};

struct Limits {
  std::size_t max_payload = kDefaultMaxPayload;
};

/// Deterministic, canonical encoding of one message as a complete frame.
Bytes encode(const WireMessage& message, const Limits& limits = {});

/// Size encode() would produce, without materializing the frame.
std::size_t encoded_size(const WireMessage& message);

/// Decodes exactly one frame; bytes beyond the frame are an error.
WireMessage decode(std::span<const std::uint8_t> bytes, const Limits& limits = {});

/// Reassembles frames from a byte stream that may split or join them.
class FrameReader {
 public:
  explicit FrameReader(Limits limits = {}) : limits_(limits) {}

  void feed(std::span<const std::uint8_t> bytes);
  /// Next complete message, or nullopt if more bytes are needed.
  std::optional<WireMessage> next();
  [[nodiscard]] std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  Limits limits_;
  Bytes buffer_;
};

}  // namespace edgestream::wire
