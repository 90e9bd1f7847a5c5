#include "edgestream/broker.hpp"
#include "gen.hpp"

#include <doctest.h>

#include <set>
#include <thread>

using namespace edgestream;
using namespace std::chrono_literals;

namespace {

TopicConfig four_streams() { return TopicConfig{"T", {"a", "b", "c", "d"}}; }

Header hdr(const char* stream, std::uint64_t ts, std::uint32_t len = 10) {
  return Header{"T", stream, Timestamp{ts}, Timestamp{ts}, PayloadLocator{{"src", 1}, 0, ts, len}};
}

std::vector<Delivery> deliveries(const std::vector<BrokerEvent>& events) {
  std::vector<Delivery> out;
  for (const auto& e : events) {
    if (const auto* d = std::get_if<Delivery>(&e)) out.push_back(*d);
  }
  return out;
}

BrokerErrc error_of(auto&& fn) {
  try {
    fn();
  } catch (const BrokerError& e) {
    return e.code();
  }
  FAIL("no broker error");
  return BrokerErrc::malformed_config;
}

}  // namespace

TEST_CASE("topic lifecycle errors") {
  Broker b;
  b.create_topic(four_streams());
  CHECK(b.publish(hdr("a", 1)) == 0);
  CHECK(error_of([&] { b.create_topic(four_streams()); }) == BrokerErrc::duplicate_topic);
  CHECK(error_of([&] { b.publish(Header{"nope", "a", {}, {}, InlinePayload{}}); }) == BrokerErrc::unknown_topic);
  CHECK(error_of([&] { b.publish(hdr("zz", 1)); }) == BrokerErrc::unknown_stream);
  CHECK(error_of([&] { b.create_topic(TopicConfig{"E", {}}); }) == BrokerErrc::malformed_config);
  CHECK(error_of([&] { b.subscribe("nope", "c", false); }) == BrokerErrc::unknown_topic);
  b.subscribe("T", "c", false);
  CHECK(error_of([&] { b.subscribe("T", "c", true); }) == BrokerErrc::duplicate_consumer);
  CHECK(b.topic_config("T") == four_streams());
}

TEST_CASE("sequence numbers are assigned in arrival order") {
  Broker b;
  b.create_topic(four_streams());
  CHECK(b.publish(hdr("a", 1)) == 0);
  CHECK(b.publish(hdr("b", 1)) == 1);
  CHECK(b.publish(hdr("a", 2)) == 2);
}

TEST_CASE("oversized frames are refused") {
  Broker b(BrokerOptions{.max_frame_bytes = 100});
  b.create_topic(four_streams());
  Header h{"T", "a", {}, {}, InlinePayload{Bytes(200)}};
  CHECK(error_of([&] { b.publish(h); }) == BrokerErrc::frame_too_large);
}

TEST_CASE("exclusive subscribers receive every header in order") {
  Broker b;
  b.create_topic(four_streams());
  b.subscribe("T", "x", false);
  b.subscribe("T", "y", false);
  testgen::Gen g(5);
  const char* names[] = {"a", "b", "c", "d"};
  std::vector<Delivery> got_x, got_y;
  for (int i = 0; i < 1000; ++i) {
    b.publish(hdr(names[g.range(0, 3)], g.range(0, 1'000'000)));
    if (g.coin(0.1)) {
      auto d = deliveries(b.poll("T", "x", g.range(1, 50)));
      got_x.insert(got_x.end(), d.begin(), d.end());
    }
  }
  auto rest = deliveries(b.poll("T", "x"));
  got_x.insert(got_x.end(), rest.begin(), rest.end());
  got_y = deliveries(b.poll("T", "y"));

  // Oracle: the broker's own log, replayed.
  const auto log = b.log("T");
  REQUIRE(log.size() == 1000);
  REQUIRE(got_x.size() == log.size());
  REQUIRE(got_y.size() == log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(got_x[i].sequence == i);
    CHECK(got_x[i].header == log[i].header);
    CHECK(got_y[i].header == log[i].header);
  }
}

TEST_CASE("exclusive subscription starts at the subscription point") {
  Broker b;
  b.create_topic(four_streams());
  b.publish(hdr("a", 1));
  b.subscribe("T", "late", false);
  b.publish(hdr("a", 2));
  const auto d = deliveries(b.poll("T", "late"));
  REQUIRE(d.size() == 1);
  CHECK(d[0].sequence == 1);
}

TEST_CASE("slow exclusive subscriber gets a gap notification") {
  Broker b(BrokerOptions{.retention = 4});
  b.create_topic(four_streams());
  b.subscribe("T", "slow", false);
  for (int i = 0; i < 10; ++i) b.publish(hdr("a", i));
  const auto ev = b.poll("T", "slow");
  REQUIRE(ev.size() == 5);
  const auto* gap = std::get_if<Gap>(&ev[0]);
  REQUIRE(gap);
  CHECK(gap->first_missing == 0);
  CHECK(gap->resume_at == 6);
  CHECK(std::get<Delivery>(ev[1]).sequence == 6);
  CHECK(std::get<Delivery>(ev[4]).sequence == 9);
}

TEST_CASE("shared subscribers partition the header sequence") {
  testgen::Gen g(9);
  for (int trial = 0; trial < 50; ++trial) {
    Broker b(BrokerOptions{.shared_window = g.range(1, 8)});
    b.create_topic(four_streams());
    const int k = 4;
    std::vector<std::string> names;
    for (int i = 0; i < k; ++i) {
      names.push_back("w" + std::to_string(i));
      b.subscribe("T", names.back(), true);
    }
    std::vector<std::uint64_t> processed(k, 0);
    std::vector<std::vector<std::uint64_t>> unacked(k);
    std::multiset<std::uint64_t> seen;
    int published = 0;
    while (published < 100 || seen.size() < 100) {
      if (published < 100 && g.coin(0.6)) {
        b.publish(hdr("a", published++));
        continue;
      }
      const auto w = g.range(0, k - 1);
      for (const auto& d : deliveries(b.poll("T", names[w], g.range(1, 4)))) {
        seen.insert(d.sequence);
        unacked[w].push_back(d.sequence);
      }
      if (!unacked[w].empty() && g.coin(0.7)) {
        const auto n = g.range(1, unacked[w].size());
        processed[w] += n;
        unacked[w].erase(unacked[w].begin(), unacked[w].begin() + static_cast<std::ptrdiff_t>(n));
        b.ack("T", names[w], processed[w]);
      }
    }
    REQUIRE(seen.size() == 100);
    std::uint64_t expect = 0;
    for (auto s : seen) CHECK(s == expect++);
  }
}

TEST_CASE("shared dispatch respects the in-flight window") {
  Broker b(BrokerOptions{.shared_window = 2});
  b.create_topic(four_streams());
  b.subscribe("T", "w0", true);
  b.subscribe("T", "w1", true);
  for (int i = 0; i < 10; ++i) b.publish(hdr("a", i));
  CHECK(b.pending("T", "w0") == 2);
  CHECK(b.pending("T", "w1") == 2);
  const auto d0 = deliveries(b.poll("T", "w0"));
  CHECK(d0.size() == 2);
  CHECK(b.pending("T", "w0") == 0);
  b.ack("T", "w0", 1);
  CHECK(b.pending("T", "w0") == 1);
}

TEST_CASE("a departing shared consumer's headers are redelivered") {
  Broker b(BrokerOptions{.shared_window = 3});
  b.create_topic(four_streams());
  b.subscribe("T", "w0", true);
  b.subscribe("T", "w1", true);
  for (int i = 0; i < 6; ++i) b.publish(hdr("a", i));
  const auto w0 = deliveries(b.poll("T", "w0"));
  b.ack("T", "w0", 1);
  b.unsubscribe("T", "w0");
  std::set<std::uint64_t> all{w0[0].sequence};
  std::uint64_t processed = 0;
  for (int round = 0; round < 10; ++round) {
    for (const auto& d : deliveries(b.poll("T", "w1"))) {
      CHECK(all.insert(d.sequence).second);
      b.ack("T", "w1", ++processed);
    }
  }
  CHECK(all.size() == 6);
}

TEST_CASE("lazy routing moves no payload bytes through the broker") {
  Broker b;
  b.create_topic(four_streams());
  b.subscribe("T", "x", false);
  for (int i = 0; i < 20; ++i) b.publish(hdr("a", i, 5'000'000));
  b.poll("T", "x");
  auto s = b.stats();
  CHECK(s.payload_bytes == 0);
  CHECK(s.frames_in == 20);
  CHECK(s.frames_out == 20);
  CHECK(s.frame_bytes_in < 20 * 100);

  b.publish(Header{"T", "a", {}, {}, InlinePayload{Bytes(1000)}});
  b.poll("T", "x");
  CHECK(b.stats().payload_bytes == 2000);
}

TEST_CASE("concurrent publishers and a blocking consumer") {
  Broker b;
  b.create_topic(four_streams());
  b.subscribe("T", "x", false);
  const char* names[] = {"a", "b", "c", "d"};
  std::vector<std::thread> pubs;
  for (int p = 0; p < 4; ++p) {
    pubs.emplace_back([&, p] {
      for (int i = 0; i < 250; ++i) b.publish(hdr(names[p], i));
    });
  }
  std::vector<Delivery> got;
  while (got.size() < 1000) {
    auto d = deliveries(b.wait("T", "x", 64, 1s));
    got.insert(got.end(), d.begin(), d.end());
  }
  for (auto& t : pubs) t.join();
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].sequence == i);
  // Per-stream order survives interleaving.
  std::map<std::string, std::uint64_t> last;
  for (const auto& d : got) {
    auto& l = last[d.header.stream.str()];
    CHECK(d.header.event_ts.micros >= l);
    l = d.header.event_ts.micros;
  }
}
