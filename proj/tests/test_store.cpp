#include "edgestream/store.hpp"
#include "gen.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace edgestream;
using namespace std::chrono_literals;
using wire::FetchStatus;

namespace {

const NodeAddress kNode{"cam0", 9000};

Bytes filled(std::size_t n, std::uint8_t v) { return Bytes(n, v); }

struct Fixture {
  ManualClock clock;
  PayloadStore store;
  LocalTransport transport{clock};
  explicit Fixture(StoreOptions o = {}) : store(kNode, std::move(o)) { transport.attach(store); }
};

}  // namespace

TEST_CASE("appended payloads resolve to their own bytes") {
  Fixture f;
  std::vector<PayloadLocator> locs;
  for (std::uint8_t i = 0; i < 3; ++i) locs.push_back(f.store.append("s", Timestamp{i}, filled(10 + i, i)));
  CHECK(std::set<PayloadLocator>(locs.begin(), locs.end()).size() == 3);
  for (std::uint8_t i = 0; i < 3; ++i) {
    const auto r = f.store.read(locs[i]);
    CHECK(r.status == FetchStatus::ok);
    CHECK(r.payload == filled(10 + i, i));
    CHECK(locs[i].length == 10u + i);
  }
  // Record offsets follow the on-disk layout: 12 header bytes + payload.
  CHECK(locs[1].offset == 12 + 10);
  CHECK(locs[2].offset == 12 + 10 + 12 + 11);
}

TEST_CASE("unknown locators are not found") {
  Fixture f;
  const auto loc = f.store.append("s", Timestamp{1}, filled(4, 1));
  auto bad = loc;
  bad.segment = 99;
  CHECK(f.store.read(bad).status == FetchStatus::not_found);
  bad = loc;
  bad.offset = 3;
  CHECK(f.store.read(bad).status == FetchStatus::not_found);
  bad = loc;
  bad.length = 5;
  CHECK(f.store.read(bad).status == FetchStatus::not_found);
  bad = loc;
  bad.node.port = 1;
  CHECK(f.store.read(bad).status == FetchStatus::not_found);
}

TEST_CASE("retention evicts oldest first") {
  // Ten 1 MiB payloads against a 5 MiB budget: the newest five fit exactly,
  // so payloads 1..5 are evicted and 6..10 remain.
  Fixture f(StoreOptions{.retention_bytes = 5ull << 20, .segment_bytes = 3ull << 20});
  std::vector<PayloadLocator> locs;
  for (int i = 0; i < 10; ++i) locs.push_back(f.store.append("s", Timestamp{static_cast<std::uint64_t>(i)}, filled(1 << 20, i)));
  for (int i = 0; i < 10; ++i) {
    CHECK(f.store.read(locs[i]).status == (i < 5 ? FetchStatus::evicted : FetchStatus::ok));
  }
  FetchClient client(f.transport, 0);
  CHECK(client.fetch(locs[0]).status == FetchStatus::evicted);
  CHECK(f.store.stats().retained_bytes == 5ull << 20);
}

TEST_CASE("a payload larger than retention is a storage-full error") {
  Fixture f(StoreOptions{.retention_bytes = 100});
  CHECK_THROWS_AS(f.store.append("s", Timestamp{1}, filled(101, 0)), StoreError);
  CHECK_NOTHROW(f.store.append("s", Timestamp{1}, filled(100, 0)));
}

TEST_CASE("segments roll on size and on event-time span") {
  Fixture f(StoreOptions{.segment_bytes = 100, .segment_span = 10s});
  const auto a = f.store.append("s", Timestamp{0}, filled(50, 1));
  const auto b = f.store.append("s", Timestamp{1}, filled(50, 2));  // 62 + 62 > 100
  CHECK(a.segment != b.segment);
  const auto c = f.store.append("s", Timestamp{2}, filled(1, 3));
  CHECK(c.segment == b.segment);
  const auto d = f.store.append("s", Timestamp{1} + 10s, filled(1, 4));
  CHECK(d.segment != c.segment);
  // Segment ids are node-wide.
  const auto other = f.store.append("t", Timestamp{0}, filled(1, 5));
  CHECK(other.segment != d.segment);
}

TEST_CASE("segment files and sparse index on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "edgestream_store_test";
  std::filesystem::remove_all(dir);
  {
    Fixture f(StoreOptions{.directory = dir});
    for (int i = 0; i < 130; ++i) f.store.append("cam", Timestamp{1000 + static_cast<std::uint64_t>(i)}, filled(3, i));
  }
  const auto log = dir / "cam" / "seg-1000.log";
  const auto idx = dir / "cam" / "seg-1000.idx";
  REQUIRE(std::filesystem::exists(log));
  CHECK(std::filesystem::file_size(log) == 130 * (12 + 3));
  // One index entry per 64 records: records 0, 64, 128.
  CHECK(std::filesystem::file_size(idx) == 3 * 16);
  std::ifstream in(idx, std::ios::binary);
  unsigned char buf[48];
  in.read(reinterpret_cast<char*>(buf), 48);
  auto u64 = [&](int at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[at + i]) << (8 * i);
    return v;
  };
  CHECK(u64(16) == 1064);
  CHECK(u64(24) == 64 * 15);
  std::filesystem::remove_all(dir);
}

TEST_CASE("second fetch of a locator is a cache hit with zero network bytes") {
  Fixture f;
  const auto loc = f.store.append("s", Timestamp{1}, filled(1000, 7));
  FetchClient client(f.transport);
  const auto first = client.fetch(loc);
  CHECK(first.status == FetchStatus::ok);
  CHECK_FALSE(first.cache_hit);
  CHECK(first.network_bytes == 1000);
  const auto second = client.fetch(loc);
  CHECK(second.cache_hit);
  CHECK(second.network_bytes == 0);
  CHECK(second.payload == first.payload);
  CHECK(client.stats().network_fetches == 1);
}

TEST_CASE("freshness gate rejects stale items without moving bytes") {
  Fixture f;
  f.clock.set(Timestamp::from_millis(1000));
  const auto loc = f.store.append("s", Timestamp::from_millis(400), filled(1000, 7));
  FetchClient client(f.transport);

  SUBCASE("consumer side, from the header timestamp") {
    const auto r = client.fetch(loc, FreshnessGate{Timestamp::from_millis(1000), 500ms, Timestamp::from_millis(400)});
    CHECK(r.status == FetchStatus::stale_rejected);
    CHECK(r.network_bytes == 0);
    CHECK(client.stats().network_fetches == 0);
  }
  SUBCASE("server side re-check") {
    const auto r = client.fetch(loc, FreshnessGate{Timestamp::from_millis(1000), 500ms, std::nullopt});
    CHECK(r.status == FetchStatus::stale_rejected);
    CHECK(r.network_bytes == 0);
    CHECK(f.store.stats().served_bytes == 0);
  }
  SUBCASE("fresh enough") {
    f.clock.set(Timestamp::from_millis(800));
    const auto r = client.fetch(loc, FreshnessGate{Timestamp::from_millis(800), 500ms, Timestamp::from_millis(400)});
    CHECK(r.status == FetchStatus::ok);
  }
}

TEST_CASE("unreachable peer is a transport failure") {
  ManualClock clock;
  LocalTransport transport(clock);
  FetchClient client(transport);
  CHECK(client.fetch(PayloadLocator{{"ghost", 1}, 0, 0, 1}).status == FetchStatus::transport_failure);
}

TEST_CASE("skipping a fraction of headers saves that fraction of bytes") {
  Fixture f;
  // Equal-sized frames, as from a fixed-resolution camera.
  std::vector<PayloadLocator> locs;
  std::uint64_t total = 0;
  for (int i = 0; i < 150; ++i) {
    const std::size_t n = 2048;
    total += n;
    locs.push_back(f.store.append("cam", Timestamp{static_cast<std::uint64_t>(i)}, filled(n, 1)));
  }
  FetchClient client(f.transport);
  // Skip 40% of headers evenly: fetch item i iff floor((i+1)*0.6) > floor(i*0.6).
  std::uint64_t expected = 0;
  std::size_t max_item = 0;
  for (int i = 0; i < 150; ++i) {
    max_item = std::max<std::size_t>(max_item, locs[i].length);
    if ((i + 1) * 3 / 5 > i * 3 / 5) {
      client.fetch(locs[i]);
      expected += locs[i].length;
    }
  }
  CHECK(client.stats().network_bytes == expected);
  const double target = 0.6 * static_cast<double>(total);
  CHECK(std::abs(static_cast<double>(client.stats().network_bytes) - target) <= static_cast<double>(max_item));
}

TEST_CASE("cache evicts least recently used by bytes") {
  FetchCache cache(250);
  auto loc = [](std::uint64_t off) { return PayloadLocator{kNode, 0, off, 100}; };
  cache.put(loc(1), Bytes(100, 1));
  cache.put(loc(2), Bytes(100, 2));
  CHECK(cache.get(loc(1)).has_value());  // 1 is now most recent
  cache.put(loc(3), Bytes(100, 3));
  CHECK_FALSE(cache.get(loc(2)).has_value());
  CHECK(cache.get(loc(1)) == Bytes(100, 1));
  CHECK(cache.get(loc(3)) == Bytes(100, 3));
  CHECK(cache.size_bytes() == 200);
  cache.put(loc(4), Bytes(300, 4));  // larger than capacity, ignored
  CHECK(cache.entries() == 2);
}

TEST_CASE("each locator is fetched over the network at most once") {
  Fixture f;
  testgen::Gen g(4);
  std::vector<PayloadLocator> locs;
  std::uint64_t distinct_bytes = 0;
  for (int i = 0; i < 40; ++i) {
    locs.push_back(f.store.append("s", Timestamp{static_cast<std::uint64_t>(i)}, filled(g.range(1, 500), 2)));
    distinct_bytes += locs.back().length;
  }
  FetchClient client(f.transport);
  for (int i = 0; i < 400; ++i) client.fetch(locs[g.range(0, 39)]);
  for (const auto& l : locs) client.fetch(l);
  CHECK(client.stats().network_fetches == 40);
  CHECK(client.stats().network_bytes == distinct_bytes);
}
