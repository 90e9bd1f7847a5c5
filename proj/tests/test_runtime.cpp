#include "edgestream/runtime.hpp"

#include "gen.hpp"
#include "join_fixtures.hpp"

#include <doctest.h>

#include <algorithm>

using namespace edgestream;
using namespace std::chrono_literals;

namespace {

ModelOperator model_for(const std::string& topic, ModelFn fn, Duration cost = 0us, bool partial = false,
                        const std::string& out_topic = "out", const std::string& out_stream = "pred") {
  return ModelOperator{"m-" + topic, TopicId(topic), TopicId(out_topic), StreamId(out_stream), cost, std::move(fn),
                       partial};
}

Header inline_header(const std::string& topic, const std::string& stream, std::uint64_t ts, Bytes payload) {
  return Header{TopicId(topic), StreamId(stream), Timestamp{ts}, Timestamp{ts}, InlinePayload{std::move(payload)}};
}

std::int64_t as_int(const Bytes& b) { return *decode_i64_prefix(b); }

std::size_t count_skips(const EventLog& log, const std::string& reason, const std::string& scope) {
  std::size_t n = 0;
  for (const auto& e : log.events()) {
    if (e.kind != EventKind::skip) continue;
    const auto kv = parse_extra(e.extra);
    if (kv.at("reason") == reason && kv.at("scope") == scope) ++n;
  }
  return n;
}

// Feeds arrivals one at a time and drains after each, as a live consumer would.
std::vector<Prediction> run(Pipeline& p, ManualClock& clock, const std::vector<Header>& arrivals,
                            FetchClient* client = nullptr) {
  std::vector<Prediction> out;
  std::uint64_t seq = 0;
  for (const auto& h : arrivals) {
    if (clock.now() < h.publish_ts) clock.set(h.publish_ts);
    p.on_header(h, clock.now(), seq++, 64);
    for (auto& pr : drain(p, client, clock, [&](Duration d) { clock.advance(d); })) out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace

TEST_CASE("identity over a single stream echoes the inputs in order") {
  EventLog log;
  ManualClock clock;
  Pipeline p("c", TopicConfig{"t", {"s"}}, model_for("t", models::identity()), {}, log);
  std::vector<Header> in;
  for (std::uint64_t i = 0; i < 20; ++i) in.push_back(inline_header("t", "s", 10 + i, Bytes{std::uint8_t(i), 7}));
  const auto out = run(p, clock, in);
  REQUIRE(out.size() == in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    CHECK(out[i].value == in[i].inline_bytes());
    CHECK(out[i].input_trigger_ts == in[i].event_ts);
    CHECK(out[i].emit_ts >= out[i].input_trigger_ts);
    CHECK(out[i].header.topic == TopicId("out"));
  }
}

TEST_CASE("sum model over the worked schedule gives the sums of the six tuples") {
  // Arrival i carries the value i + 1.
  const auto sched = fixtures::figure_schedule();
  std::map<std::string, std::int64_t> value;
  std::vector<Header> in;
  for (std::size_t i = 0; i < sched.size(); ++i) {
    value[sched[i].label] = static_cast<std::int64_t>(i + 1);
    in.push_back(inline_header("fig", sched[i].stream, sched[i].t, encode_i64(value[sched[i].label])));
  }
  const std::vector<std::vector<std::string>> tuples{{"A1", "B1", "C1", "D1"}, {"A1", "B2", "C1", "D1"},
                                                     {"A1", "B2", "C1", "D2"}, {"A1", "B3", "C1", "D2"},
                                                     {"A1", "B3", "C2", "D2"}, {"A2", "B3", "C2", "D2"}};
  std::vector<std::int64_t> expected;
  for (const auto& t : tuples) {
    std::int64_t s = 0;
    for (const auto& l : t) s += value.at(l);
    expected.push_back(s);
  }
  CHECK(expected == std::vector<std::int64_t>{10, 13, 15, 17, 22, 30});

  EventLog log;
  ManualClock clock;
  Pipeline p("c", fixtures::figure_topic(DataTriggered{}), model_for("fig", models::sum()), {}, log);
  std::vector<std::int64_t> got;
  for (const auto& pr : run(p, clock, in)) got.push_back(as_int(pr.value));
  CHECK(got == expected);
}

TEST_CASE("a delivery stall past the freshness threshold skips exactly the stale items") {
  constexpr std::uint64_t ms = 1000, period = 100 * ms, transit = 10 * ms, threshold = 500 * ms;
  constexpr std::uint64_t stall_from = 2000 * ms, stall_to = 4000 * ms;
  TopicConfig cfg{"t", {"s"}};
  cfg.freshness_threshold = Duration(threshold);
  EventLog log;
  ManualClock clock;
  Pipeline p("c", cfg, model_for("t", models::identity(), 5ms), {}, log);

  std::vector<Header> in;
  std::set<std::uint64_t> stale;  // oracle
  for (std::uint64_t k = 0; k < 60; ++k) {
    const auto produced = k * period;
    const auto delivered = (produced >= stall_from && produced < stall_to ? stall_to : produced) + transit;
    if (delivered - produced > threshold) stale.insert(produced);
    auto h = inline_header("t", "s", produced, encode_i64(static_cast<std::int64_t>(k)));
    h.publish_ts = Timestamp{delivered};
    in.push_back(h);
  }
  REQUIRE(stale.size() == 16);
  const auto out = run(p, clock, in);
  for (const auto& pr : out) CHECK_FALSE(stale.contains(pr.input_trigger_ts.micros));
  CHECK(out.size() == 60 - stale.size());
  p.finalize(clock.now());
  CHECK(count_skips(log, "stale", "item") == stale.size());
}

TEST_CASE("lazy payloads are fetched, stale ones rejected after a slow fetch") {
  ManualClock clock;
  PayloadStore store(NodeAddress{"src", 1});
  LocalTransport transport(clock);
  transport.attach(store);

  struct SlowTransport final : FetchTransport {
    FetchTransport& inner;
    ManualClock& clock;
    Duration delay;
    SlowTransport(FetchTransport& i, ManualClock& c, Duration d) : inner(i), clock(c), delay(d) {}
    wire::FetchResponse exchange(const wire::FetchRequest& r) override {
      clock.advance(delay);
      return inner.exchange(r);
    }
  };

  TopicConfig cfg{"t", {"s"}};
  cfg.freshness_threshold = 100ms;
  SUBCASE("fast fetch") {
    SlowTransport slow(transport, clock, 1ms);
    FetchClient client(slow, 0);
    EventLog log;
    Pipeline p("c", cfg, model_for("t", models::identity()), {}, log);
    const auto loc = store.append(StreamId("s"), Timestamp{0}, Bytes{1, 2, 3});
    const auto out = run(p, clock, {Header{TopicId("t"), StreamId("s"), Timestamp{0}, Timestamp{0}, loc}}, &client);
    REQUIRE(out.size() == 1);
    CHECK(out[0].value == Bytes{1, 2, 3});
  }
  SUBCASE("fetch outlasting the threshold") {
    SlowTransport slow(transport, clock, 150ms);
    FetchClient client(slow, 0);
    EventLog log;
    Pipeline p("c", cfg, model_for("t", models::identity()), {}, log);
    const auto loc = store.append(StreamId("s"), Timestamp{0}, Bytes{1, 2, 3});
    const auto out = run(p, clock, {Header{TopicId("t"), StreamId("s"), Timestamp{0}, Timestamp{0}, loc}}, &client);
    CHECK(out.empty());
    CHECK(p.stats().dropped_tuples.at("stale") == 1);
  }
}

TEST_CASE("fail-soft policies") {
  ManualClock clock;
  PayloadStore store(NodeAddress{"src", 1}, StoreOptions{.retention_bytes = 8});
  LocalTransport transport(clock);
  transport.attach(store);
  FetchClient client(transport, 0);

  auto lazy = [&](std::uint64_t ts, Bytes b) {
    const auto loc = store.append(StreamId("s"), Timestamp{ts}, b);
    return Header{TopicId("t"), StreamId("s"), Timestamp{ts}, Timestamp{ts}, loc};
  };

  SUBCASE("last_known_good substitutes the previous payload") {
    EventLog log;
    Pipeline p("c", TopicConfig{"t", {"s"}}, model_for("t", models::identity()),
               {FailSoftPolicy::last_known_good, SkewPolicy::reject_tuple, 0}, log);
    auto out = run(p, clock, {lazy(1, Bytes{1, 1, 1, 1})}, &client);
    REQUIRE(out.size() == 1);
    // The next header's payload is evicted before the consumer sees it.
    const auto h = lazy(2, Bytes{2, 2, 2, 2});
    lazy(3, Bytes{3, 3, 3, 3, 3, 3, 3, 3});
    out = run(p, clock, {h}, &client);
    REQUIRE(out.size() == 1);
    CHECK(out[0].value == Bytes{1, 1, 1, 1});
    CHECK(p.stats().substitutions == 1);
  }
  SUBCASE("drop_tuple discards") {
    EventLog log;
    Pipeline p("c", TopicConfig{"t", {"s"}}, model_for("t", models::identity()), {}, log);
    run(p, clock, {lazy(1, Bytes{1, 1, 1, 1})}, &client);
    const auto h = lazy(2, Bytes{2, 2, 2, 2});
    lazy(3, Bytes{3, 3, 3, 3, 3, 3, 3, 3});
    CHECK(run(p, clock, {h}, &client).empty());
    CHECK(p.stats().dropped_tuples.at("failed_fetch") == 1);
  }
  SUBCASE("first failure with no prior value falls back to drop") {
    EventLog log;
    Pipeline p("c", TopicConfig{"t", {"s"}}, model_for("t", models::identity()),
               {FailSoftPolicy::last_known_good, SkewPolicy::reject_tuple, 0}, log);
    const auto h = lazy(2, Bytes{2, 2, 2, 2});
    lazy(3, Bytes{3, 3, 3, 3, 3, 3, 3, 3});
    CHECK(run(p, clock, {h}, &client).empty());
    CHECK(p.stats().substitutions == 0);
  }
}

TEST_CASE("majority vote") {
  auto vote = [](std::vector<std::int64_t> labels) {
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto h = inline_header("v", "s" + std::to_string(i), 0, encode_i64(labels[i]));
      slots.push_back(Slot{h, encode_i64(labels[i])});
    }
    return as_int(models::majority_vote()(slots));
  };
  CHECK(vote({1, 1, 2, 1}) == 1);
  CHECK(vote({1, 2, 1, 2}) == 1);
  CHECK(vote({2, 1, 1, 2}) == 2);
  CHECK(vote({7, 7, 7, 7}) == 7);

  std::vector<Slot> bad{Slot{inline_header("v", "s", 0, Bytes{1}), Bytes{1}}};
  CHECK_THROWS_AS(models::majority_vote()(bad), ModelError);

  // With a strict majority the answer does not depend on slot order.
  testgen::Gen g(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = g.range(1, 9);
    const auto winner = static_cast<std::int64_t>(g.range(0, 3));
    std::vector<std::int64_t> labels(n / 2 + 1, winner);
    while (labels.size() < n) labels.push_back(static_cast<std::int64_t>(g.range(4, 6)));
    std::shuffle(labels.begin(), labels.end(), g.engine());
    CHECK(vote(labels) == winner);
  }
}

TEST_CASE("slot exclusion leaves out lagging votes") {
  TopicConfig cfg{"votes", {"a", "b", "c", "d"}};
  cfg.max_skew = 20us;
  EventLog log;
  ManualClock clock;
  Pipeline p("leader", cfg, model_for("votes", models::majority_vote(), 0us, true),
             {FailSoftPolicy::drop_tuple, SkewPolicy::exclude_slots, 0}, log);
  // d@0 lags by 50. Counting it would tie 1/2 and the tie would go to a's 1.
  const auto out = run(p, clock,
                       {inline_header("votes", "d", 0, encode_i64(1)), inline_header("votes", "a", 50, encode_i64(1)),
                        inline_header("votes", "b", 50, encode_i64(2)), inline_header("votes", "c", 50, encode_i64(2)),
                        inline_header("votes", "d", 50, encode_i64(1))});
  // c triggers (a, b, c, d@0) with d excluded; d@50 then joins a full tie.
  REQUIRE(out.size() == 2);
  CHECK(as_int(out[0].value) == 2);
  CHECK(as_int(out[1].value) == 1);
}

TEST_CASE("slot exclusion needs a partial-input model") {
  EventLog log;
  CHECK_THROWS_AS(Pipeline("c", TopicConfig{"t", {"a", "b"}}, model_for("t", models::sum()),
                           {FailSoftPolicy::drop_tuple, SkewPolicy::exclude_slots, 0}, log),
                  ContractViolation);
  CHECK_THROWS_AS(Pipeline("c", TopicConfig{"t", {"a"}}, model_for("u", models::sum()), {}, log), ContractViolation);
}

TEST_CASE("a model error drops the tuple and the pipeline continues") {
  EventLog log;
  ManualClock clock;
  Pipeline p("c", TopicConfig{"t", {"s"}}, model_for("t", models::sum()), {}, log);
  const auto out = run(p, clock,
                       {inline_header("t", "s", 1, encode_i64(4)), inline_header("t", "s", 2, Bytes{1, 2}),
                        inline_header("t", "s", 3, encode_i64(5))});
  REQUIRE(out.size() == 2);
  CHECK(as_int(out[1].value) == 5);
  CHECK(p.stats().dropped_tuples.at("model_error") == 1);
}

TEST_CASE("plain data-triggered queues every tuple; hybrid keeps the newest") {
  std::vector<Header> in;
  for (std::uint64_t i = 0; i < 10; ++i) in.push_back(inline_header("t", "s", i * 10, encode_i64(1)));
  {
    EventLog log;
    Pipeline p("c", TopicConfig{"t", {"s"}}, model_for("t", models::identity()), {}, log);
    for (std::size_t i = 0; i < in.size(); ++i) p.on_header(in[i], in[i].event_ts, i, 0);
    CHECK(p.queued() == 10);
  }
  {
    EventLog log;
    Pipeline p("c", TopicConfig{"t", {"s"}, Hybrid{5us}}, model_for("t", models::identity()), {}, log);
    for (std::size_t i = 0; i < in.size(); ++i) p.on_header(in[i], in[i].event_ts, i, 0);
    CHECK(p.queued() == 1);
    CHECK(p.stats().dropped_tuples.at("superseded_by_hybrid") == 9);
  }
}

TEST_CASE("downsampling skips an even fraction of headers") {
  for (const double f : {0.0, 0.25, 0.5, 0.75}) {
    EventLog log;
    ManualClock clock;
    Pipeline p("c", TopicConfig{"t", {"s"}}, model_for("t", models::identity()),
               {FailSoftPolicy::drop_tuple, SkewPolicy::reject_tuple, f}, log);
    std::vector<Header> in;
    for (std::uint64_t i = 0; i < 101; ++i) in.push_back(inline_header("t", "s", i, encode_i64(1)));
    const auto out = run(p, clock, in);
    const auto skipped = 101 - out.size();
    CHECK(static_cast<double>(skipped) <= f * 101 + 1);
    CHECK(static_cast<double>(skipped) >= f * 101 - 1);
  }
}

TEST_CASE("inline, lazy and centralized execution agree") {
  testgen::Gen g(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n_streams = g.range(1, 4);
    TopicConfig cfg{"t", {}};
    for (std::size_t i = 0; i < n_streams; ++i) cfg.streams.push_back(StreamId("s" + std::to_string(i)));

    ManualClock clock;
    PayloadStore store(NodeAddress{"src", 1});
    LocalTransport transport(clock);
    transport.attach(store);
    FetchClient client(transport, 0);

    std::vector<Header> eager, lazy;
    std::uint64_t t = 0;
    for (std::uint64_t i = 0, n = g.range(1, 40); i < n; ++i) {
      t += g.range(1, 5);
      const auto stream = cfg.streams[g.range(0, n_streams - 1)];
      const auto payload = g.bytes(16);
      eager.push_back(Header{TopicId("t"), stream, Timestamp{t}, Timestamp{t}, InlinePayload{payload}});
      lazy.push_back(Header{TopicId("t"), stream, Timestamp{t}, Timestamp{t}, store.append(stream, Timestamp{t}, payload)});
    }
    // Centralized: joiner plus model applied by hand.
    std::vector<Bytes> central;
    DataTriggeredJoiner j(cfg);
    for (const auto& h : eager) {
      if (auto a = j.on_arrival(h, h.event_ts, h.event_ts); a.tuple) {
        for (auto& s : a.tuple->slots) s.payload = s.header.inline_bytes();
        central.push_back(models::identity()(a.tuple->slots));
      }
    }
    auto values = [](const std::vector<Prediction>& ps) {
      std::vector<Bytes> v;
      for (const auto& p : ps) v.push_back(p.value);
      return v;
    };
    EventLog l1, l2;
    Pipeline pe("c", cfg, model_for("t", models::identity()), {}, l1);
    Pipeline pl("c", cfg, model_for("t", models::identity()), {}, l2);
    CHECK(values(run(pe, clock, eager)) == central);
    CHECK(values(run(pl, clock, lazy, &client)) == central);
  }
}

TEST_CASE("late fusion: local predictions feed an ensemble topic unchanged") {
  EventLog log;
  ManualClock clock;
  std::vector<std::unique_ptr<Pipeline>> local;
  TopicConfig votes{"votes", {}};
  for (int i = 0; i < 3; ++i) {
    const auto s = "s" + std::to_string(i);
    votes.streams.push_back(StreamId("v" + std::to_string(i)));
    local.push_back(std::make_unique<Pipeline>(
        "n" + std::to_string(i), TopicConfig{TopicId("in" + std::to_string(i)), {StreamId(s)}},
        model_for("in" + std::to_string(i), models::threshold_label(10), 1ms, false, "votes", "v" + std::to_string(i)),
        PipelineOptions{}, log));
  }
  Pipeline ensemble("leader", votes, model_for("votes", models::majority_vote(), 0us, true, "final", "label"), {}, log);
  std::vector<std::int64_t> finals;
  std::uint64_t seq = 0;
  for (std::uint64_t k = 0; k < 5; ++k) {
    clock.set(std::max(clock.now(), Timestamp{k * 100}));
    for (int i = 0; i < 3; ++i) {
      const auto v = static_cast<std::int64_t>(i == 2 ? 0 : k * 5);  // stream 2 always votes 0
      local[i]->on_header(inline_header("in" + std::to_string(i), "s" + std::to_string(i), k * 100, encode_i64(v)),
                          clock.now(), seq++, 0);
      for (auto& pr : drain(*local[i], nullptr, clock, [&](Duration d) { clock.advance(d); })) {
        ensemble.on_header(pr.header, clock.now(), seq++, 0);
        for (auto& f : drain(ensemble, nullptr, clock, [&](Duration d) { clock.advance(d); })) {
          finals.push_back(as_int(f.value));
        }
      }
    }
  }
  // k*5 >= 10 from k = 2 on, so streams 0 and 1 vote 1 and outvote stream 2.
  REQUIRE(finals.size() == 13);
  CHECK(finals.back() == 1);
  CHECK(finals.front() == 0);
}

TEST_CASE("every received item is predicted or skipped with a reason") {
  testgen::Gen g(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n_streams = g.range(1, 4);
    TopicConfig cfg{"t", {}};
    for (std::size_t i = 0; i < n_streams; ++i) cfg.streams.push_back(StreamId("s" + std::to_string(i)));
    switch (g.range(0, 2)) {
      case 0: break;
      case 1: cfg.join_mode = Hybrid{Duration(static_cast<std::int64_t>(g.range(1, 20)))}; break;
      default: cfg.join_mode = TimeTriggered{Duration(static_cast<std::int64_t>(g.range(5, 20)))};
    }
    if (g.coin()) cfg.max_skew = Duration(static_cast<std::int64_t>(g.range(1, 30)));
    if (g.coin()) cfg.freshness_threshold = Duration(static_cast<std::int64_t>(g.range(5, 40)));
    const bool tt = std::holds_alternative<TimeTriggered>(cfg.join_mode);

    EventLog log;
    ManualClock clock;
    Pipeline p("c", cfg, model_for("t", models::identity(), Duration(static_cast<std::int64_t>(g.range(0, 8)))),
               {FailSoftPolicy::drop_tuple, SkewPolicy::reject_tuple, g.coin() ? 0.3 : 0.0}, log);
    std::uint64_t t = 0, next_close = 0;
    const auto window = tt ? static_cast<std::uint64_t>(p.window()->count()) : 0;
    for (std::uint64_t i = 0, n = g.range(1, 60); i < n; ++i) {
      t += g.range(0, 6);
      const auto produced = t - std::min<std::uint64_t>(t, g.range(0, 10));
      const auto stream = cfg.streams[g.range(0, n_streams - 1)];
      if (tt) {
        while (next_close + window <= t) {
          next_close += window;
          clock.set(std::max(clock.now(), Timestamp{next_close}));
          p.on_window(Timestamp{next_close});
          drain(p, nullptr, clock, [&](Duration d) { clock.advance(d); });
        }
      }
      const Header h{TopicId("t"), stream, Timestamp{produced}, Timestamp{t}, InlinePayload{Bytes{1}}};
      log.record(MetricEvent{Timestamp{produced}, "src", EventKind::produce_begin, "t", stream.str(), produced, i, ""});
      log.record(MetricEvent{Timestamp{t}, "src", EventKind::produce_end, "t", stream.str(), produced, i, ""});
      clock.set(std::max(clock.now(), Timestamp{t}));
      p.on_header(h, clock.now(), i, 0);
      drain(p, nullptr, clock, [&](Duration d) { clock.advance(d); });
    }
    p.finalize(clock.now());
    auto events = log.events();
    std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.at < b.at; });
    const auto r = report(events);
    CHECK(r.unaccounted == 0);
    for (const auto& m : r.per_item) {
      if (m.status == ItemStatus::skipped) CHECK_FALSE(m.skip_reason.empty());
    }
  }
}
