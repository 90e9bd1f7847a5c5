#include "edgestream/sim.hpp"

#include "gen.hpp"

#include <doctest.h>

#include <fstream>

using namespace edgestream;
using namespace edgestream::sim;
using namespace std::chrono_literals;

namespace {

// source -> leader -> worker, every link 2 ms and unlimited unless given.
Scenario chain(Routing routing, std::uint64_t items, Duration period, std::uint64_t bytes, Duration cost,
               std::uint64_t bandwidth = 0) {
  Scenario s;
  s.name = "chain";
  s.routing = routing;
  s.run_length = period * static_cast<std::int64_t>(items);
  s.leader = "leader";
  s.nodes = {{"src"}, {"leader"}, {"w1"}, {"w2"}, {"w3"}};
  s.default_link = LinkSpec{"", "", 2ms, bandwidth};
  s.streams.push_back(StreamSpec{"cam", "frames", "src", Periodic{period, bytes}});
  s.streams.back().values = Values::counter;
  s.topics.push_back(TopicConfig{"frames", {"cam"}});
  s.models.push_back(ModelPlacement{"m", {"w1"}, "frames", "frames_out", "pred", ModelSpec{"identity"}, cost});
  return s;
}

std::uint64_t accounted(const MetricReport& r) {
  std::uint64_t n = r.predicted + r.unaccounted;
  for (const auto& [reason, k] : r.skipped_by_reason) n += k;
  return n;
}

}  // namespace

TEST_CASE("generators produce the expected counts") {
  StreamSpec slow{"s", "t", "n", Periodic{5s, 10}};
  CHECK(generate(slow, 60s).size() == 12);
  StreamSpec fast{"f", "t", "n", Bursty{0us, 100ms, 1, 1}};
  CHECK(generate(fast, 60s).size() == 600);
  StreamSpec bursts{"b", "t", "n", Bursty{1s, 10ms, 5, 1}};
  const auto b = generate(bursts, 3s);
  // each cycle is 5 events over 50 ms then 1 s quiet
  CHECK(b.size() == 15);
  CHECK(b[5].at == Timestamp{} + 1050ms);
  StreamSpec traced{"x", "t", "n", Trace{{{30ms, 3}, {10ms, 1}, {20ms, 2}, {90s, 9}}}};
  const auto t = generate(traced, 60s);
  REQUIRE(t.size() == 3);
  CHECK(t[0].payload_bytes == 1);
  CHECK(t[2].at == Timestamp{} + 30ms);
  StreamSpec bad{"s", "t", "n", Periodic{0us, 1}};
  CHECK_THROWS_AS(generate(bad, 1s), ContractViolation);
}

TEST_CASE("trace files skip comments and report bad rows") {
  const auto dir = std::filesystem::temp_directory_path() / "edgestream_trace_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ok.csv") << "# ms,bytes\n0,100\n\n12.5,200 # late\n";
  const auto t = read_trace(dir / "ok.csv");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1].at == 12500us);
  CHECK(t.rows[1].payload_bytes == 200);
  std::ofstream(dir / "bad.csv") << "0,1\nnot a row\n";
  try {
    (void)read_trace(dir / "bad.csv");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.csv:2") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("scenario JSON round trip and validation") {
  const auto j = parse_json(R"({
    "name": "demo", "seed": 3, "routing": "eager", "run_length_ms": 1000, "leader": "l",
    "nodes": [{"id": "l"}, {"id": "a", "cost_multiplier": 2}],
    "links": [{"a": "a", "b": "l", "latency_ms": 1.5, "bandwidth_mbps": 8}],
    "leader_cap_mbps": 80,
    "topics": [{"topic": "t", "streams": ["s"], "join": {"mode": "time", "window_ms": 100}}],
    "streams": [{"stream": "s", "topic": "t", "node": "a",
                 "pattern": {"kind": "bursty", "rate_hz": 20, "burst_length": 3, "quiet_ms": 200, "payload_bytes": 4}}],
    "models": [{"id": "m", "node": "a", "consumes": "t", "kind": "threshold_label", "threshold": 5, "cost_ms": 3}]
  })", "demo.json");
  const auto s = scenario_from_json(j);
  CHECK(s.routing == Routing::eager);
  CHECK(s.links.at(0).latency == 1500us);
  CHECK(s.links.at(0).bandwidth == 1'000'000);
  CHECK(s.leader_cap == 10'000'000);
  CHECK(std::get<Bursty>(s.streams.at(0).pattern).burst_period == 50ms);
  CHECK(s.models.at(0).output_topic == TopicId("m_out"));
  CHECK(s.models.at(0).cost == 3ms);

  auto broken = j;
  broken["streams"][0]["node"] = "ghost";
  CHECK_THROWS_WITH_AS(scenario_from_json(broken), doctest::Contains("ghost"), ConfigError);
  broken = j;
  broken["links"] = Json::array();
  CHECK_THROWS_WITH_AS(scenario_from_json(broken), doctest::Contains("cannot reach"), ConfigError);
  broken = j;
  broken["models"][0]["kind"] = "oracle";
  CHECK_THROWS_AS(scenario_from_json(broken), ConfigError);
  broken = j;
  broken["models"][0]["skew_policy"] = "exclude_slots";
  CHECK_THROWS_WITH_AS(scenario_from_json(broken), doctest::Contains("exclude"), ConfigError);
  CHECK_THROWS_AS(parse_json("{\n  \"a\": ,\n}", "x.json"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_json("{\n  \"a\": ,\n}", "x.json"), doctest::Contains("x.json:2:"), ConfigError);
}

TEST_CASE("single item latencies match a hand computation") {
  // lazy: publish 2 + deliver 2 + fetch (5 setup + 2 request + 2 response) + cost 10 = 23 ms
  auto s = chain(Routing::lazy, 1, 100ms, 1000, 10ms);
  auto r = run_scenario(s);
  REQUIRE(r.report.per_item.size() == 1);
  CHECK(r.report.per_item[0].status == ItemStatus::predicted);
  CHECK(r.report.distributions.at("end_to_end_latency").max == 23ms);
  CHECK(r.report.distributions.at("producer_sending_latency").max == 2ms);
  CHECK(r.report.distributions.at("processing_latency").max == 10ms);
  // eager has no fetch: 2 + 2 + 10
  s.routing = Routing::eager;
  r = run_scenario(s);
  CHECK(r.report.distributions.at("end_to_end_latency").max == 14ms);
  // a 1 MB/s link adds 1 ms per kB on each hop that carries the payload
  s = chain(Routing::eager, 1, 100ms, 1000, 10ms, 1'000'000);
  r = run_scenario(s);
  REQUIRE(r.transfers.size() == 2);  // publish and deliver
  Duration hops{0};
  for (const auto& t : r.transfers) {
    CHECK(t.bytes > 1000);
    hops += Duration(static_cast<std::int64_t>((t.bytes * 1'000'000 + 999'999) / 1'000'000));
  }
  CHECK(r.report.distributions.at("end_to_end_latency").max == 4ms + hops + 10ms);
}

TEST_CASE("identity outputs follow the inputs under both routings") {
  for (const auto routing : {Routing::lazy, Routing::eager}) {
    auto s = chain(routing, 50, 20ms, 64, 5ms);
    s.record_payloads = true;
    const auto r = run_scenario(s);
    REQUIRE(r.predictions.at("m").size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(*decode_i64_prefix(r.predictions.at("m")[i].value) == static_cast<std::int64_t>(i));
    }
    CHECK(r.report.unaccounted == 0);
    if (routing == Routing::lazy) {
      CHECK(r.report.broker_payload_bytes == 0);
      CHECK(r.report.p2p_payload_bytes == r.generated_payload_bytes);
    } else {
      CHECK(r.report.broker_payload_bytes == r.generated_payload_bytes);
      CHECK(r.report.p2p_payload_bytes == 0);
    }
  }
}

TEST_CASE("runs are deterministic per seed") {
  auto s = chain(Routing::lazy, 40, 15ms, 256, 20ms);
  s.streams[0].values = Values::random;
  s.models[0].nodes = {"w1", "w2"};
  s.models[0].shared = true;
  const auto a = run_scenario(s);
  const auto b = run_scenario(s);
  CHECK(a.events == b.events);
  REQUIRE(a.predictions.at("m").size() == b.predictions.at("m").size());
  for (std::size_t i = 0; i < a.predictions.at("m").size(); ++i) {
    CHECK(a.predictions.at("m")[i].value == b.predictions.at("m")[i].value);
  }
  s.seed = 2;
  const auto c = run_scenario(s);
  CHECK(c.predictions.at("m").front().value != a.predictions.at("m").front().value);
}

TEST_CASE("capped resources never carry two transfers at once") {
  auto s = chain(Routing::eager, 30, 10ms, 20'000, 5ms, 4'000'000);
  s.leader_cap = 1'000'000;
  const auto r = run_scenario(s);
  std::map<std::string, std::vector<const Transfer*>> by;
  std::uint64_t leader_in = 0;
  for (const auto& t : r.transfers) {
    by[t.resource].push_back(&t);
    if (t.resource == "leader:in") leader_in += t.bytes;
    // duration is the byte count at capacity, rounded up to a microsecond
    CHECK((t.end - t.start).count() == static_cast<std::int64_t>((t.bytes * 1'000'000 + t.capacity - 1) / t.capacity));
  }
  CHECK(leader_in >= r.generated_payload_bytes);
  REQUIRE(by.contains("leader:out"));
  for (const auto& [res, ts] : by) {
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i - 1]->end <= ts[i]->start);
  }
  // 30 x 20 kB through a 1 MB/s NIC takes at least 0.6 s each way
  CHECK(by.at("leader:in").back()->end >= Timestamp{} + 600ms);
  CHECK(by.at("leader:out").back()->end >= by.at("leader:in").back()->end);
}

TEST_CASE("every generated item is accounted for") {
  testgen::Gen g(11);
  for (int round = 0; round < 12; ++round) {
    auto s = chain(g.coin() ? Routing::lazy : Routing::eager, g.range(5, 60), Duration(g.range(5, 40) * 1000),
                   g.range(1, 5000), Duration(g.range(1, 60) * 1000), g.coin() ? 0 : g.range(100'000, 5'000'000));
    s.seed = g.u64();
    s.streams.push_back(StreamSpec{"mic", "frames", "src", Periodic{Duration(g.range(3, 30) * 1000), g.range(1, 100)}});
    s.topics[0].streams.push_back("mic");
    if (g.coin()) s.topics[0].max_skew = Duration(g.range(1, 30) * 1000);
    if (g.coin()) s.topics[0].freshness_threshold = Duration(g.range(5, 200) * 1000);
    const auto mode = g.range(0, 2);
    if (mode == 1) s.topics[0].join_mode = TimeTriggered{Duration(g.range(10, 100) * 1000)};
    if (mode == 2) s.topics[0].join_mode = Hybrid{Duration(g.range(10, 100) * 1000)};
    s.models[0].model = ModelSpec{"sum"};
    if (g.coin()) {
      s.models[0].nodes = {"w1", "w2", "w3"};
      s.models[0].shared = true;
    }
    s.models[0].options.skip_fraction = g.coin() ? 0.0 : static_cast<double>(g.range(0, 9)) / 10.0;
    CAPTURE(round);
    const auto r = run_scenario(s);
    CHECK(r.report.items == r.generated_items);
    CHECK(accounted(r.report) == r.report.items);
    CHECK(r.report.unaccounted == 0);
  }
}

TEST_CASE("downsampling removes the requested fraction of tuples") {
  for (const double f : {0.0, 0.25, 0.5, 0.75}) {
    auto s = chain(Routing::lazy, 200, 10ms, 100, 1ms);
    s.models[0].options.skip_fraction = f;
    const auto r = run_scenario(s);
    const auto expected = 200.0 * (1.0 - f);
    CAPTURE(f);
    CHECK(std::abs(static_cast<double>(r.predictions.at("m").size()) - expected) <= 1.0);
    CHECK(accounted(r.report) == 200);
  }
}

TEST_CASE("a shared subscription splits the work without duplicates") {
  auto s = chain(Routing::lazy, 60, 10ms, 100, 25ms);
  s.models[0].nodes = {"w1", "w2", "w3"};
  s.models[0].shared = true;
  const auto r = run_scenario(s);
  const auto& preds = r.predictions.at("m");
  REQUIRE(preds.size() == 60);
  std::set<std::int64_t> seen;
  for (const auto& p : preds) seen.insert(*decode_i64_prefix(p.value));
  CHECK(seen.size() == 60);
  std::map<std::string, int> per_node;
  for (const auto& e : r.events) {
    if (e.kind == EventKind::model_end) ++per_node[e.node];
  }
  CHECK(per_node.size() == 3);
  for (const auto& [n, k] : per_node) CHECK(k >= 10);
}

TEST_CASE("derived topics feed downstream models") {
  auto s = chain(Routing::lazy, 20, 50ms, 8, 5ms);
  s.topics.push_back(TopicConfig{"frames_out", {"pred"}});
  s.models.push_back(ModelPlacement{"post", {"w2"}, "frames_out", "final", "label", ModelSpec{"threshold_label", 9}, 1ms});
  const auto r = run_scenario(s);
  REQUIRE(r.predictions.at("post").size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(*decode_i64_prefix(r.predictions.at("post")[i].value) == (i >= 9 ? 1 : 0));
  }
  CHECK(r.report.predicted == 20);
  CHECK(r.report.unaccounted == 0);
}

TEST_CASE("write_run produces per-node logs that reload to the same report") {
  const auto dir = std::filesystem::temp_directory_path() / "edgestream_run_test";
  std::filesystem::remove_all(dir);
  auto s = chain(Routing::lazy, 25, 20ms, 100, 5ms);
  const auto r = run_scenario(s);
  write_run(r, s, dir);
  CHECK(std::filesystem::exists(dir / "src.log"));
  CHECK(std::filesystem::exists(dir / "w1.log"));
  const auto meta = load_json(dir / "topics.json");
  CHECK(meta.at("pipelines").size() == 1);
  const auto back = read_log_dir(dir);
  std::ostringstream a, b;
  write_csv(r.report, a);
  write_csv(report(back), b);
  CHECK(a.str() == b.str());
  std::filesystem::remove_all(dir);
}
