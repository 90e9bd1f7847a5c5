#include "edgestream/wire.hpp"

#include <cstring>

namespace edgestream::wire {

namespace {

class Writer {
 public:
  explicit Writer(const Limits& limits) : limits_(limits) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }

  void str(std::string_view s) {
    if (s.size() > UINT16_MAX) throw EncodeError("string longer than 65535 bytes");
    if (!is_valid_utf8(s)) throw EncodeError("string is not valid UTF-8");
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }

  void blob(std::span<const std::uint8_t> b) {
    if (b.size() > limits_.max_payload) throw EncodeError("payload exceeds configured maximum");
    u32(static_cast<std::uint32_t>(b.size()));
    out_.insert(out_.end(), b.begin(), b.end());
  }

  void duration(Duration d) { u64(static_cast<std::uint64_t>(d.count())); }
  void bound(const Bound& b) { u64(b ? static_cast<std::uint64_t>(b->count()) : kUnlimited); }

  Bytes take() && { return std::move(out_); }
  Bytes& raw() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  const Limits& limits_;
  Bytes out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, const Limits& limits) : in_(in), limits_(limits) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }

  std::string str() {
    const auto n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    if (!is_valid_utf8(s)) throw DecodeError(DecodeErrc::malformed_utf8, "string is not valid UTF-8");
    return s;
  }

  Bytes blob() {
    const auto n = u32();
    if (n > limits_.max_payload) throw DecodeError(DecodeErrc::payload_too_large, "payload exceeds maximum");
    need(n);
    Bytes b(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }

  Duration duration() {
    const auto v = u64();
    if (v > static_cast<std::uint64_t>(INT64_MAX)) throw DecodeError(DecodeErrc::malformed, "duration out of range");
    return Duration(static_cast<std::int64_t>(v));
  }

  Bound bound() {
    const auto v = u64();
    if (v == kUnlimited) return std::nullopt;
    if (v > static_cast<std::uint64_t>(INT64_MAX)) throw DecodeError(DecodeErrc::malformed, "bound out of range");
    return Duration(static_cast<std::int64_t>(v));
  }

  [[nodiscard]] bool at_end() const noexcept { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DecodeError(DecodeErrc::malformed, "body shorter than its fields");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> in_;
  const Limits& limits_;
  std::size_t pos_ = 0;
};

// Names are validated twice on decode: UTF-8 by the reader, length and
// emptiness by the Name constructor.
template <class N>
N read_name(Reader& r) {
  auto s = r.str();
  try {
    return N(std::move(s));
  } catch (const ContractViolation& e) {
    throw DecodeError(DecodeErrc::malformed, e.what());
  }
}

void write_locator(Writer& w, const PayloadLocator& l) {
  w.str(l.node.host);
  w.u16(l.node.port);
  w.u64(l.segment);
  w.u64(l.offset);
  w.u32(l.length);
}

PayloadLocator read_locator(Reader& r) {
  PayloadLocator l;
  l.node.host = r.str();
  l.node.port = r.u16();
  l.segment = r.u64();
  l.offset = r.u64();
  l.length = r.u32();
  return l;
}

void write_header(Writer& w, const Header& h) {
  w.str(h.topic.str());
  w.str(h.stream.str());
  w.u64(h.event_ts.micros);
  w.u64(h.publish_ts.micros);
  if (h.is_lazy()) {
    w.u8(0);
    write_locator(w, h.locator());
  } else {
    w.u8(1);
    w.blob(h.inline_bytes());
  }
}

Header read_header(Reader& r) {
  auto topic = read_name<TopicId>(r);
  auto stream = read_name<StreamId>(r);
  const Timestamp event_ts{r.u64()};
  const Timestamp publish_ts{r.u64()};
  const auto mode = r.u8();
  if (mode == 0) {
    return Header{std::move(topic), std::move(stream), event_ts, publish_ts, read_locator(r)};
  }
  if (mode == 1) {
    return Header{std::move(topic), std::move(stream), event_ts, publish_ts, InlinePayload{r.blob()}};
  }
  throw DecodeError(DecodeErrc::malformed, "unknown header body mode " + std::to_string(mode));
}

void write_config(Writer& w, const TopicConfig& c) {
  w.str(c.topic.str());
  if (c.streams.size() > UINT16_MAX) throw EncodeError("too many streams");
  w.u16(static_cast<std::uint16_t>(c.streams.size()));
  for (const auto& s : c.streams) w.str(s.str());
  std::visit(
      [&](const auto& mode) {
        using M = std::decay_t<decltype(mode)>;
        if constexpr (std::is_same_v<M, TimeTriggered>) {
          w.u8(0);
          w.duration(mode.window);
        } else if constexpr (std::is_same_v<M, DataTriggered>) {
          w.u8(1);
        } else {
          w.u8(2);
          w.duration(mode.min_interval);
        }
      },
      c.join_mode);
  w.bound(c.max_skew);
  w.bound(c.freshness_threshold);
  w.bound(c.target_prediction_frequency);
  w.u8(static_cast<std::uint8_t>(c.time_basis));
}

TopicConfig read_config(Reader& r) {
  auto topic = read_name<TopicId>(r);
  const auto n = r.u16();
  std::vector<StreamId> streams;
  streams.reserve(n);
  for (std::uint16_t i = 0; i < n; ++i) streams.push_back(read_name<StreamId>(r));
  JoinMode mode;
  switch (r.u8()) {
    case 0: mode = TimeTriggered{r.duration()}; break;
    case 1: mode = DataTriggered{}; break;
    case 2: mode = Hybrid{r.duration()}; break;
    default: throw DecodeError(DecodeErrc::malformed, "unknown join mode");
  }
  TopicConfig c{std::move(topic), std::move(streams), mode, r.bound(), r.bound(), r.bound()};
  const auto basis = r.u8();
  if (basis > 1) throw DecodeError(DecodeErrc::malformed, "unknown time basis");
  c.time_basis = static_cast<TimeBasis>(basis);
  return c;
}

void write_body(Writer& w, const WireMessage& m) {
  std::visit(
      [&](const auto& msg) {
        using M = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<M, PublishHeader> || std::is_same_v<M, Deliver>) {
          write_header(w, msg.header);
        } else if constexpr (std::is_same_v<M, Subscribe>) {
          w.str(msg.topic.str());
          w.str(msg.consumer_id);
          w.u8(msg.shared ? 1 : 0);
        } else if constexpr (std::is_same_v<M, FetchRequest>) {
          write_locator(w, msg.locator);
          w.bound(msg.max_age);
        } else if constexpr (std::is_same_v<M, FetchResponse>) {
          if (msg.status == FetchStatus::transport_failure) throw EncodeError("transport_failure is not a wire status");
          w.u8(static_cast<std::uint8_t>(msg.status));
          w.blob(msg.payload);
        } else if constexpr (std::is_same_v<M, Ack>) {
          w.u64(msg.sequence);
        } else if constexpr (std::is_same_v<M, CreateTopic>) {
          write_config(w, msg.config);
        } else {
          w.u8(static_cast<std::uint8_t>(msg.code));
          w.str(msg.detail);
        }
      },
      m);
}

WireMessage read_body(Reader& r, MsgType type) {
  switch (type) {
    case MsgType::publish_header: return PublishHeader{read_header(r)};
    case MsgType::deliver: return Deliver{read_header(r)};
    case MsgType::subscribe: {
      auto topic = read_name<TopicId>(r);
      auto consumer = r.str();
      const auto shared = r.u8();
      if (shared > 1) throw DecodeError(DecodeErrc::malformed, "shared flag must be 0 or 1");
      return Subscribe{std::move(topic), std::move(consumer), shared == 1};
    }
    case MsgType::fetch_request: {
      auto loc = read_locator(r);
      return FetchRequest{std::move(loc), r.bound()};
    }
    case MsgType::fetch_response: {
      const auto status = r.u8();
      if (status > 3) throw DecodeError(DecodeErrc::malformed, "unknown fetch status");
      return FetchResponse{static_cast<FetchStatus>(status), r.blob()};
    }
    case MsgType::ack: return Ack{r.u64()};
    case MsgType::create_topic: return CreateTopic{read_config(r)};
    case MsgType::error: {
      const auto code = r.u8();
      if (code < 1 || code > 8) throw DecodeError(DecodeErrc::malformed, "unknown error code");
      return ErrorReply{static_cast<ErrorCode>(code), r.str()};
    }
  }
  throw DecodeError(DecodeErrc::unknown_type, "unknown msg_type " + std::to_string(static_cast<int>(type)));
}

std::size_t header_size(const Header& h) {
  std::size_t n = 2 + h.topic.str().size() + 2 + h.stream.str().size() + 8 + 8 + 1;
  if (h.is_lazy()) {
    n += 2 + h.locator().node.host.size() + 2 + 8 + 8 + 4;
  } else {
    n += 4 + h.inline_bytes().size();
  }
  return n;
}

}  // namespace

std::string_view to_string(FetchStatus s) {
  switch (s) {
    case FetchStatus::ok: return "ok";
    case FetchStatus::not_found: return "not_found";
    case FetchStatus::evicted: return "evicted";
    case FetchStatus::stale_rejected: return "stale_rejected";
    case FetchStatus::transport_failure: return "transport_failure";
  }
  return "unknown";
}

std::string_view to_string(DecodeErrc e) {
  switch (e) {
    case DecodeErrc::truncated: return "truncated";
    case DecodeErrc::unsupported_version: return "unsupported_version";
    case DecodeErrc::unknown_type: return "unknown_type";
    case DecodeErrc::malformed_utf8: return "malformed_utf8";
    case DecodeErrc::trailing_bytes: return "trailing_bytes";
    case DecodeErrc::malformed: return "malformed";
    case DecodeErrc::payload_too_large: return "payload_too_large";
  }
  return "unknown";
}

MsgType type_of(const WireMessage& m) noexcept {
  return static_cast<MsgType>(m.index());
}

Bytes encode(const WireMessage& message, const Limits& limits) {
  Writer w(limits);
  w.u32(0);  // patched below
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(type_of(message)));
  write_body(w, message);
  Bytes out = std::move(w).take();
  const auto length = out.size() - kLengthFieldBytes;
  if (length > UINT32_MAX) throw EncodeError("frame exceeds u32 length");
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(length >> (8 * i));
  return out;
}

std::size_t encoded_size(const WireMessage& message) {
  const std::size_t body = std::visit(
      [](const auto& msg) -> std::size_t {
        using M = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<M, PublishHeader> || std::is_same_v<M, Deliver>) {
          return header_size(msg.header);
        } else if constexpr (std::is_same_v<M, FetchResponse>) {
          return 1 + 4 + msg.payload.size();
        } else {
          Limits unlimited{SIZE_MAX};
          Writer w(unlimited);
          write_body(w, msg);
          return w.raw().size();
        }
      },
      message);
  return kLengthFieldBytes + 2 + body;
}

WireMessage decode(std::span<const std::uint8_t> bytes, const Limits& limits) {
  if (bytes.size() < kLengthFieldBytes) throw DecodeError(DecodeErrc::truncated, "missing length field");
  std::uint32_t length = 0;
  for (int i = 0; i < 4; ++i) length |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  if (bytes.size() - kLengthFieldBytes < length) {
    throw DecodeError(DecodeErrc::truncated, "frame length " + std::to_string(length) + " exceeds available " +
                                                 std::to_string(bytes.size() - kLengthFieldBytes) + " bytes");
  }
  if (bytes.size() - kLengthFieldBytes > length) {
    throw DecodeError(DecodeErrc::trailing_bytes, "bytes follow the frame");
  }
  if (length < 2) throw DecodeError(DecodeErrc::truncated, "frame too short for version and type");
  const auto version = bytes[4];
  if (version != kVersion) {
    throw DecodeError(DecodeErrc::unsupported_version, "unsupported version " + std::to_string(version));
  }
  const auto type = bytes[5];
  if (type > static_cast<std::uint8_t>(MsgType::error)) {
    throw DecodeError(DecodeErrc::unknown_type, "unknown msg_type " + std::to_string(type));
  }
  Reader r(bytes.subspan(6), limits);
  auto msg = read_body(r, static_cast<MsgType>(type));
  if (!r.at_end()) throw DecodeError(DecodeErrc::trailing_bytes, "body longer than its fields");
  return msg;
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<WireMessage> FrameReader::next() {
  if (buffer_.size() < kLengthFieldBytes) return std::nullopt;
  std::uint32_t length = 0;
  for (int i = 0; i < 4; ++i) length |= static_cast<std::uint32_t>(buffer_[i]) << (8 * i);
  if (length > limits_.max_payload + 64 * 1024) {
    throw DecodeError(DecodeErrc::payload_too_large, "frame length " + std::to_string(length) + " over limit");
  }
  const std::size_t total = kLengthFieldBytes + length;
  if (buffer_.size() < total) return std::nullopt;
  auto msg = decode(std::span<const std::uint8_t>(buffer_.data(), total), limits_);
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(total));
  return msg;
}

}  // namespace edgestream::wire
