#include "edgestream/net.hpp"

#include <doctest.h>

#include <set>

using namespace edgestream;
using namespace std::chrono_literals;

namespace {

const NodeAddress kAny{"127.0.0.1", 0};

std::vector<Header> drain(net::Subscription& sub, std::size_t n) {
  std::vector<Header> out;
  while (out.size() < n) {
    auto ev = sub.next(2s);
    REQUIRE(ev);
    REQUIRE(std::holds_alternative<Header>(*ev));
    out.push_back(std::get<Header>(*ev));
  }
  return out;
}

}  // namespace

TEST_CASE("live publish, deliver and fetch") {
  Broker broker;
  net::BrokerServer server(broker, kAny);
  WallClock clock;
  // Reserve a port for the source's fetch server first, then name it in the store.
  auto listener = std::make_unique<net::Listener>(kAny);
  const auto source_addr = listener->address();
  listener.reset();
  PayloadStore source(source_addr);
  net::FetchServer fetcher(source, source_addr, clock);

  net::BrokerClient pub(server.address());
  pub.create_topic(TopicConfig{"cam", {"front"}});
  net::Subscription sub(server.address(), "cam", "c1", false);

  std::vector<Bytes> sent;
  for (std::uint64_t i = 0; i < 20; ++i) {
    Bytes b(1000 + i * 977, static_cast<std::uint8_t>(i));
    const auto loc = source.append("front", Timestamp{100 + i}, b);
    CHECK(pub.publish(Header{"cam", "front", Timestamp{100 + i}, Timestamp{100 + i}, loc}) == i);
    sent.push_back(std::move(b));
  }
  const auto got = drain(sub, 20);
  net::TcpTransport transport;
  FetchClient client(transport, 0);
  for (std::size_t i = 0; i < got.size(); ++i) {
    REQUIRE(got[i].is_lazy());
    CHECK(got[i].event_ts == Timestamp{100 + i});
    const auto out = client.fetch(got[i].locator());
    CHECK(out.status == wire::FetchStatus::ok);
    CHECK(out.payload == sent[i]);
  }
  CHECK(broker.stats().payload_bytes == 0);

  // unknown locators come back as not found, unreachable peers as transport errors
  auto bogus = got[0].locator();
  bogus.segment = 999;
  CHECK(client.fetch(bogus).status != wire::FetchStatus::ok);
  bogus.node.port = 1;
  CHECK_THROWS_AS(transport.exchange(wire::FetchRequest{bogus, std::nullopt}), TransportError);
}

TEST_CASE("inline payloads travel through the broker") {
  Broker broker;
  net::BrokerServer server(broker, kAny);
  net::BrokerClient pub(server.address());
  pub.create_topic(TopicConfig{"t", {"s"}});
  net::Subscription sub(server.address(), "t", "c", false);
  const Bytes big(300'000, 0x5a);
  pub.publish(Header{"t", "s", Timestamp{1}, Timestamp{1}, InlinePayload{big}});
  const auto got = drain(sub, 1);
  CHECK(got[0].inline_bytes() == big);
}

TEST_CASE("shared subscribers split a topic and acks release more work") {
  Broker broker(BrokerOptions{1024, 2});
  net::BrokerServer server(broker, kAny);
  net::BrokerClient pub(server.address());
  pub.create_topic(TopicConfig{"q", {"s"}});
  net::Subscription a(server.address(), "q", "a", true);
  net::Subscription b(server.address(), "q", "b", true);
  for (std::uint64_t i = 0; i < 8; ++i) pub.publish(Header{"q", "s", Timestamp{i + 1}, Timestamp{i + 1}, InlinePayload{}});
  std::set<std::uint64_t> seen;
  std::uint64_t done_a = 0, done_b = 0;
  while (seen.size() < 8) {
    bool progress = false;
    for (auto* sub : {&a, &b}) {
      while (auto ev = sub->next(50ms)) {
        CHECK(seen.insert(std::get<Header>(*ev).event_ts.micros).second);
        auto& done = sub == &a ? done_a : done_b;
        sub->ack(++done);
        progress = true;
      }
    }
    REQUIRE(progress);
  }
  CHECK(done_a > 0);
  CHECK(done_b > 0);
}

TEST_CASE("broker errors are reported to clients") {
  Broker broker;
  net::BrokerServer server(broker, kAny);
  CHECK_THROWS_WITH_AS(net::Subscription(server.address(), "nope", "c", false), doctest::Contains("nope"),
                       net::NetError);
  net::BrokerClient pub(server.address());
  CHECK_THROWS_AS(pub.publish(Header{"nope", "s", Timestamp{1}, Timestamp{1}, InlinePayload{}}), net::NetError);
  // the connection stays usable after an error
  CHECK(pub.create_topic(TopicConfig{"yes", {"s"}}));
  CHECK(pub.publish(Header{"yes", "s", Timestamp{1}, Timestamp{1}, InlinePayload{}}) == 0);
  CHECK_THROWS_AS(net::connect(NodeAddress{"127.0.0.1", 1}), net::NetError);
}
