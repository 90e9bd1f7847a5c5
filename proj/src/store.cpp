#include "edgestream/store.hpp"

#include <algorithm>
#include <fstream>

namespace edgestream {

namespace {

void put_le(std::ostream& out, std::uint64_t v, int n) {
  char buf[8];
  for (int i = 0; i < n; ++i) buf[i] = static_cast<char>(v >> (8 * i));
  out.write(buf, n);
}

}  // namespace

PayloadStore::PayloadStore(NodeAddress node, StoreOptions options) : node_(std::move(node)), options_(std::move(options)) {
  if (options_.retention_bytes == 0) throw ContractViolation("store retention must be positive");
  if (options_.directory) std::filesystem::create_directories(*options_.directory);
}

PayloadStore::~PayloadStore() = default;

PayloadLocator PayloadStore::append(const StreamId& stream, Timestamp event_ts, std::span<const std::uint8_t> payload) {
  if (payload.size() > options_.max_payload) {
    throw StoreError("payload of " + std::to_string(payload.size()) + " bytes exceeds the maximum");
  }
  if (payload.size() > options_.retention_bytes) {
    throw StoreError("storage full: payload of " + std::to_string(payload.size()) + " bytes exceeds retention for '" +
                     stream.str() + "'");
  }
  std::unique_lock lock(mu_);
  auto& log = streams_[stream];
  const auto record_bytes = kRecordHeaderBytes + payload.size();
  bool need_roll = log.segments.empty();
  if (!need_roll) {
    const auto& cur = segments_.at(log.segments.back());
    need_roll = !cur.entries.empty() &&
                (cur.size + record_bytes > options_.segment_bytes ||
                 (event_ts >= cur.start_ts && event_ts - cur.start_ts >= options_.segment_span));
  }
  if (need_roll) roll(log, stream, event_ts);

  auto& seg = segments_.at(log.segments.back());
  Entry e{seg.size, event_ts, static_cast<std::uint32_t>(payload.size()), Bytes(payload.begin(), payload.end())};
  if (options_.directory) write_record(seg, e);
  seg.size += record_bytes;
  const PayloadLocator loc{node_, seg.id, e.offset, e.length};
  seg.entries.push_back(std::move(e));
  log.retained += payload.size();
  stats_.appended_records += 1;
  stats_.appended_bytes += payload.size();
  stats_.retained_bytes += payload.size();
  evict(log);
  return loc;
}

void PayloadStore::roll(StreamLog& log, const StreamId& stream, Timestamp event_ts) {
  Segment seg{next_segment_++, stream, event_ts, 0, {}, 0, {}};
  if (options_.directory) {
    const auto dir = *options_.directory / stream.str();
    std::filesystem::create_directories(dir);
    const auto base = "seg-" + std::to_string(event_ts.micros);
    seg.file = dir / (base + ".log");
    for (int n = 1; std::filesystem::exists(seg.file); ++n) seg.file = dir / (base + "." + std::to_string(n) + ".log");
  }
  log.segments.push_back(seg.id);
  segments_.emplace(seg.id, std::move(seg));
}

void PayloadStore::write_record(Segment& seg, const Entry& e) {
  std::ofstream out(seg.file, std::ios::binary | std::ios::app);
  put_le(out, e.event_ts.micros, 8);
  put_le(out, e.length, 4);
  out.write(reinterpret_cast<const char*>(e.payload.data()), static_cast<std::streamsize>(e.payload.size()));
  if (!out) throw StoreError("failed to write segment " + seg.file.string());
  if (seg.entries.size() % kIndexStride == 0) {
    auto idx = seg.file;
    idx.replace_extension(".idx");
    std::ofstream ix(idx, std::ios::binary | std::ios::app);
    put_le(ix, e.event_ts.micros, 8);
    put_le(ix, e.offset, 8);
  }
}

void PayloadStore::evict(StreamLog& log) {
  while (log.retained > options_.retention_bytes) {
    auto& seg = segments_.at(log.segments.front());
    auto& e = seg.entries[seg.evicted++];
    e.evicted = true;
    log.retained -= e.length;
    stats_.retained_bytes -= e.length;
    stats_.evicted_records += 1;
    Bytes().swap(e.payload);
    if (seg.evicted == seg.entries.size() && log.segments.size() > 1) {
      if (!seg.file.empty()) {
        std::error_code ec;
        auto idx = seg.file;
        idx.replace_extension(".idx");
        std::filesystem::remove(seg.file, ec);
        std::filesystem::remove(idx, ec);
      }
      // Keep the husk so later reads report evicted rather than not found.
      seg.entries.shrink_to_fit();
      log.segments.erase(log.segments.begin());
    }
  }
}

PayloadStore::Record PayloadStore::read(const PayloadLocator& locator) const {
  std::shared_lock lock(mu_);
  if (locator.node != node_) return {};
  const auto it = segments_.find(locator.segment);
  if (it == segments_.end()) return {};
  const auto& seg = it->second;
  const auto e = std::lower_bound(seg.entries.begin(), seg.entries.end(), locator.offset,
                                  [](const Entry& x, std::uint64_t off) { return x.offset < off; });
  if (e == seg.entries.end() || e->offset != locator.offset || e->length != locator.length) return {};
  if (e->evicted) return {wire::FetchStatus::evicted, e->event_ts, {}};
  return {wire::FetchStatus::ok, e->event_ts, e->payload};
}

wire::FetchResponse PayloadStore::serve(const wire::FetchRequest& request, Timestamp now) {
  auto rec = read(request.locator);
  std::unique_lock lock(mu_);
  stats_.served_requests += 1;
  if (rec.status != wire::FetchStatus::ok) return {rec.status, {}};
  if (!is_fresh(rec.event_ts, now, request.max_age)) return {wire::FetchStatus::stale_rejected, {}};
  stats_.served_bytes += rec.payload.size();
  return {wire::FetchStatus::ok, std::move(rec.payload)};
}

StoreStats PayloadStore::stats() const {
  std::shared_lock lock(mu_);
  return stats_;
}

std::optional<Bytes> FetchCache::get(const PayloadLocator& locator) {
  std::lock_guard lock(mu_);
  const auto it = index_.find(locator);
  if (it == index_.end()) return std::nullopt;
  lru_.splice(lru_.begin(), lru_, it->second);
  return it->second->second;
}

void FetchCache::put(const PayloadLocator& locator, const Bytes& payload) {
  std::lock_guard lock(mu_);
  if (payload.size() > capacity_) return;
  if (const auto it = index_.find(locator); it != index_.end()) {
    used_ -= it->second->second.size();
    lru_.erase(it->second);
    index_.erase(it);
  }
  while (used_ + payload.size() > capacity_) {
    used_ -= lru_.back().second.size();
    index_.erase(lru_.back().first);
    lru_.pop_back();
  }
  lru_.emplace_front(locator, payload);
  index_[locator] = lru_.begin();
  used_ += payload.size();
}

std::uint64_t FetchCache::size_bytes() const {
  std::lock_guard lock(mu_);
  return used_;
}

std::size_t FetchCache::entries() const {
  std::lock_guard lock(mu_);
  return lru_.size();
}

void LocalTransport::attach(PayloadStore& store) {
  std::lock_guard lock(mu_);
  stores_[store.node()] = &store;
}

wire::FetchResponse LocalTransport::exchange(const wire::FetchRequest& request) {
  PayloadStore* store = nullptr;
  {
    std::lock_guard lock(mu_);
    const auto it = stores_.find(request.locator.node);
    if (it == stores_.end()) throw TransportError("no route to " + request.locator.node.to_string());
    store = it->second;
  }
  return store->serve(request, clock_.now());
}

FetchClient::FetchClient(FetchTransport& transport, std::uint64_t cache_bytes) : transport_(transport) {
  if (cache_bytes > 0) cache_.emplace(cache_bytes);
}

FetchOutcome FetchClient::fetch(const PayloadLocator& locator, const std::optional<FreshnessGate>& freshness) {
  {
    std::lock_guard lock(mu_);
    stats_.requests += 1;
  }
  if (freshness && freshness->event_ts && !is_fresh(*freshness->event_ts, freshness->now, freshness->threshold)) {
    std::lock_guard lock(mu_);
    stats_.stale_local += 1;
    return {wire::FetchStatus::stale_rejected, {}, false, 0};
  }
  if (cache_) {
    if (auto hit = cache_->get(locator)) {
      std::lock_guard lock(mu_);
      stats_.cache_hits += 1;
      return {wire::FetchStatus::ok, std::move(*hit), true, 0};
    }
  }
  wire::FetchResponse resp;
  try {
    resp = transport_.exchange(wire::FetchRequest{locator, freshness ? freshness->threshold : std::nullopt});
  } catch (const TransportError&) {
    std::lock_guard lock(mu_);
    stats_.failures += 1;
    return {wire::FetchStatus::transport_failure, {}, false, 0};
  }
  std::lock_guard lock(mu_);
  stats_.network_fetches += 1;
  stats_.network_bytes += resp.payload.size();
  if (resp.status == wire::FetchStatus::stale_rejected) stats_.stale_remote += 1;
  if (resp.status != wire::FetchStatus::ok) {
    if (resp.status != wire::FetchStatus::stale_rejected) stats_.failures += 1;
    return {resp.status, {}, false, resp.payload.size()};
  }
  if (cache_) cache_->put(locator, resp.payload);
  const auto moved = resp.payload.size();
  return {wire::FetchStatus::ok, std::move(resp.payload), false, moved};
}

FetchStats FetchClient::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

}  // namespace edgestream
