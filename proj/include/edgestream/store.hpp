#pragma once

// Source-side payload log and the consumer-side fetch path of lazy routing.
//
// A PayloadStore keeps, per stream, a sequence of segments of records
//   u64 event_ts | u32 length | payload
// and hands out PayloadLocators (node, segment, offset, length) for them.
// Segment ids are unique per node. Eviction is oldest-first per stream once
// the stream's payload bytes exceed its budget.

#include "edgestream/core.hpp"
#include "edgestream/wire.hpp"

#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>

namespace edgestream {

class StoreError : public Error {
 public:
  using Error::Error;
};

struct StoreOptions {
  std::uint64_t retention_bytes = 1ull << 30;  // per stream
  std::uint64_t segment_bytes = 64ull << 20;
  Duration segment_span = std::chrono::minutes(10);
  std::size_t max_payload = wire::kDefaultMaxPayload;
  // When set, segments are also written to <directory>/<stream>/seg-<ts>.log
  // with a sparse .idx sidecar.
  std::optional<std::filesystem::path> directory;
};

inline constexpr std::size_t kRecordHeaderBytes = 12;
inline constexpr std::size_t kIndexStride = 64;

struct StoreStats {
  std::uint64_t appended_records = 0;
  std::uint64_t appended_bytes = 0;
  std::uint64_t evicted_records = 0;
  std::uint64_t retained_bytes = 0;
  std::uint64_t served_requests = 0;
  std::uint64_t served_bytes = 0;
};

class PayloadStore {
 public:
  PayloadStore(NodeAddress node, StoreOptions options = {});
  ~PayloadStore();
  PayloadStore(const PayloadStore&) = delete;
  PayloadStore& operator=(const PayloadStore&) = delete;

  /// Logs the payload and returns its claim check. Throws StoreError when the
  /// payload alone exceeds the stream's retention budget or the size limit.
  PayloadLocator append(const StreamId& stream, Timestamp event_ts, std::span<const std::uint8_t> payload);

  struct Record {
    wire::FetchStatus status = wire::FetchStatus::not_found;
    Timestamp event_ts;
    Bytes payload;
  };
  [[nodiscard]] Record read(const PayloadLocator& locator) const;

  /// Server side of a fetch. Re-checks max_age against now; stale records
  /// are refused without payload bytes.
  wire::FetchResponse serve(const wire::FetchRequest& request, Timestamp now);

  [[nodiscard]] const NodeAddress& node() const noexcept { return node_; }
  [[nodiscard]] StoreStats stats() const;

 private:
  struct Entry {
    std::uint64_t offset;
    Timestamp event_ts;
    std::uint32_t length;
    Bytes payload;
    bool evicted = false;
  };
  struct Segment {
    std::uint64_t id;
    StreamId stream;
    Timestamp start_ts;
    std::uint64_t size = 0;
    std::vector<Entry> entries;
    std::size_t evicted = 0;  // entries [0, evicted) are gone
    std::filesystem::path file;
  };
  struct StreamLog {
    std::vector<std::uint64_t> segments;  // ids, oldest first
    std::uint64_t retained = 0;
  };

  void roll(StreamLog& log, const StreamId& stream, Timestamp event_ts);
  void write_record(Segment& seg, const Entry& e);
  void evict(StreamLog& log);

  NodeAddress node_;
  StoreOptions options_;
  mutable std::shared_mutex mu_;
  std::unordered_map<StreamId, StreamLog> streams_;
  std::map<std::uint64_t, Segment> segments_;
  std::uint64_t next_segment_ = 0;
  StoreStats stats_;
};

/// Least-recently-used payload cache bounded by total payload bytes.
class FetchCache {
 public:
  explicit FetchCache(std::uint64_t capacity_bytes) : capacity_(capacity_bytes) {}

  [[nodiscard]] std::optional<Bytes> get(const PayloadLocator& locator);
  void put(const PayloadLocator& locator, const Bytes& payload);
  [[nodiscard]] std::uint64_t size_bytes() const;
  [[nodiscard]] std::size_t entries() const;

 private:
  using Item = std::pair<PayloadLocator, Bytes>;
  std::uint64_t capacity_;
  std::uint64_t used_ = 0;
  std::list<Item> lru_;  // front = most recent
  std::unordered_map<PayloadLocator, std::list<Item>::iterator> index_;
  mutable std::mutex mu_;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

/// One request/response exchange with the node named in the locator.
class FetchTransport {
 public:
  virtual ~FetchTransport() = default;
  /// Throws TransportError when the peer cannot be reached.
  virtual wire::FetchResponse exchange(const wire::FetchRequest& request) = 0;
};

/// In-process transport: routes requests straight to registered stores.
class LocalTransport final : public FetchTransport {
 public:
  explicit LocalTransport(const Clock& clock) : clock_(clock) {}
  void attach(PayloadStore& store);
  wire::FetchResponse exchange(const wire::FetchRequest& request) override;

 private:
  const Clock& clock_;
  std::mutex mu_;
  std::unordered_map<NodeAddress, PayloadStore*> stores_;
};

struct FreshnessGate {
  Timestamp now;
  Bound threshold;
  std::optional<Timestamp> event_ts;  // known from the header; enables the local check
};

struct FetchOutcome {
  wire::FetchStatus status = wire::FetchStatus::ok;
  Bytes payload;
  bool cache_hit = false;
  std::uint64_t network_bytes = 0;  // payload bytes moved over the transport
};

struct FetchStats {
  std::uint64_t requests = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t network_fetches = 0;
  std::uint64_t network_bytes = 0;
  std::uint64_t stale_local = 0;
  std::uint64_t stale_remote = 0;
  std::uint64_t failures = 0;
};

class FetchClient {
 public:
  FetchClient(FetchTransport& transport, std::uint64_t cache_bytes = 256ull << 20);

  FetchOutcome fetch(const PayloadLocator& locator, const std::optional<FreshnessGate>& freshness = std::nullopt);
  [[nodiscard]] FetchStats stats() const;

 private:
  FetchTransport& transport_;
  std::optional<FetchCache> cache_;
  mutable std::mutex mu_;
  FetchStats stats_;
};

}  // namespace edgestream
