#include "edgestream/sim.hpp"

#include "edgestream/replay.hpp"
#include "edgestream/wire.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <random>
#include <set>
#include <sstream>

namespace edgestream::sim {

std::string_view to_string(Topology t) {
  switch (t) {
    case Topology::early_fusion: return "early_fusion";
    case Topology::early_fusion_parallel: return "early_fusion_parallel";
    case Topology::late_fusion: return "late_fusion";
  }
  return "?";
}

std::string_view to_string(Routing r) { return r == Routing::lazy ? "lazy" : "eager"; }

std::vector<GeneratedItem> generate(const StreamSpec& spec, Duration run_length) {
  std::vector<GeneratedItem> out;
  const Timestamp end = Timestamp{} + run_length;
  Timestamp t = Timestamp{} + spec.start;
  if (const auto* p = std::get_if<Periodic>(&spec.pattern)) {
    if (p->period <= Duration::zero()) throw ContractViolation("period of '" + spec.stream.str() + "' must be positive");
    for (; t < end; t = t + p->period) out.push_back({t, p->payload_bytes});
  } else if (const auto* b = std::get_if<Bursty>(&spec.pattern)) {
    if (b->burst_period <= Duration::zero() || b->burst_length == 0) {
      throw ContractViolation("burst period and length of '" + spec.stream.str() + "' must be positive");
    }
    if (b->quiet < Duration::zero()) throw ContractViolation("quiet gap must be non-negative");
    while (t < end) {
      for (std::uint64_t i = 0; i < b->burst_length && t < end; ++i) {
        out.push_back({t, b->payload_bytes});
        t = t + b->burst_period;
      }
      t = t + b->quiet;
    }
  } else {
    for (const auto& row : std::get<Trace>(spec.pattern).rows) {
      const auto at = Timestamp{} + spec.start + row.at;
      if (at < end) out.push_back({at, row.payload_bytes});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.at < y.at; });
  }
  return out;
}

Trace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open trace");
  Trace trace;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    double ms = 0;
    char comma = 0;
    std::uint64_t bytes = 0;
    if (!(row >> ms >> comma >> bytes) || comma != ',' || ms < 0) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected 'event_ts_ms,payload_bytes'");
    }
    trace.rows.push_back({ms_to_duration(ms), bytes});
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Scenario files

namespace {

std::uint64_t mbps(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return 0;
  return static_cast<std::uint64_t>(it->get<double>() * 1e6 / 8.0);
}

LinkSpec link_from_json(const Json& j) {
  return LinkSpec{j.value("a", std::string()), j.value("b", std::string()), ms_to_duration(j.value("latency_ms", 0.0)),
                  mbps(j, "bandwidth_mbps")};
}

Pattern pattern_from_json(const Json& j, const std::filesystem::path& base_dir) {
  const auto kind = j.at("kind").get<std::string>();
  const auto bytes = j.value("payload_bytes", std::uint64_t{0});
  if (kind == "periodic") return Periodic{ms_to_duration(j.at("period_ms").get<double>()), bytes};
  if (kind == "bursty") {
    const auto period = j.contains("rate_hz") ? ms_to_duration(1000.0 / j.at("rate_hz").get<double>())
                                              : ms_to_duration(j.at("burst_period_ms").get<double>());
    return Bursty{ms_to_duration(j.value("quiet_ms", 0.0)), period, j.value("burst_length", std::uint64_t{1}), bytes};
  }
  if (kind == "trace") {
    if (const auto rows = j.find("rows"); rows != j.end()) {
      Trace t;
      for (const auto& r : *rows) t.rows.push_back({ms_to_duration(r.at(0).get<double>()), r.at(1).get<std::uint64_t>()});
      return t;
    }
    return read_trace(base_dir / j.at("file").get<std::string>());
  }
  throw ConfigError("unknown stream pattern '" + kind + "'");
}

template <typename E>
E pick(const Json& j, const char* key, std::initializer_list<std::pair<const char*, E>> options, E fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  const auto v = it->get<std::string>();
  for (const auto& [name, e] : options) {
    if (v == name) return e;
  }
  throw ConfigError("unknown " + std::string(key) + " '" + v + "'");
}

}  // namespace

Scenario scenario_from_json(const Json& j, const std::filesystem::path& base_dir) {
  Scenario s;
  try {
    s.name = j.value("name", std::string("scenario"));
    s.seed = j.value("seed", std::uint64_t{1});
    s.topology = pick<Topology>(j, "topology",
                                {{"early_fusion", Topology::early_fusion},
                                 {"early_fusion_parallel", Topology::early_fusion_parallel},
                                 {"late_fusion", Topology::late_fusion}},
                                Topology::early_fusion);
    s.routing = pick<Routing>(j, "routing", {{"lazy", Routing::lazy}, {"eager", Routing::eager}}, Routing::lazy);
    s.run_length = ms_to_duration(j.at("run_length_ms").get<double>());
    s.leader = j.at("leader").get<std::string>();
    for (const auto& n : j.at("nodes")) s.nodes.push_back({n.at("id").get<std::string>(), n.value("cost_multiplier", 1.0)});
    for (const auto& l : j.value("links", Json::array())) s.links.push_back(link_from_json(l));
    if (const auto d = j.find("default_link"); d != j.end() && !d->is_null()) s.default_link = link_from_json(*d);
    s.leader_cap = mbps(j, "leader_cap_mbps");
    if (j.contains("fetch_setup_ms")) s.fetch_setup = ms_to_duration(j.at("fetch_setup_ms").get<double>());
    if (j.contains("cache_mb")) s.cache_bytes = static_cast<std::uint64_t>(j.at("cache_mb").get<double>() * (1 << 20));
    s.shared_window = j.value("shared_window", s.shared_window);
    s.window_origin = ms_to_duration(j.value("window_origin_ms", 0.0));
    s.record_payloads = j.value("record_payloads", false);
    for (const auto& t : j.at("topics")) s.topics.push_back(topic_from_json(t));
    for (const auto& st : j.at("streams")) {
      StreamSpec spec{StreamId(st.at("stream").get<std::string>()), TopicId(st.at("topic").get<std::string>()),
                      st.at("node").get<std::string>(), pattern_from_json(st.at("pattern"), base_dir)};
      spec.start = ms_to_duration(st.value("start_ms", 0.0));
      spec.publish_delay = ms_to_duration(st.value("publish_delay_ms", 0.0));
      spec.values = pick<Values>(st, "values",
                                 {{"random", Values::random}, {"counter", Values::counter}, {"labels", Values::labels}},
                                 Values::random);
      s.streams.push_back(std::move(spec));
    }
    for (const auto& m : j.at("models")) {
      const auto id = m.at("id").get<std::string>();
      ModelPlacement p{id, {}, TopicId(m.at("consumes").get<std::string>()), TopicId(m.value("output_topic", id + "_out")),
                       StreamId(m.value("produces", id))};
      if (const auto n = m.find("nodes"); n != m.end()) {
        for (const auto& x : *n) p.nodes.push_back(x.get<std::string>());
      } else {
        p.nodes.push_back(m.at("node").get<std::string>());
      }
      p.model.kind = m.value("kind", std::string("identity"));
      p.model.threshold = m.value("threshold", std::int64_t{0});
      if (const auto t = m.find("table"); t != m.end()) {
        for (const auto& [k, v] : t->items()) p.model.table[std::stoll(k)] = v.get<std::int64_t>();
      }
      p.cost = ms_to_duration(m.value("cost_ms", 0.0));
      p.shared = m.value("shared", p.nodes.size() > 1);
      p.options.fail_soft = pick<FailSoftPolicy>(
          m, "fail_soft",
          {{"drop_tuple", FailSoftPolicy::drop_tuple}, {"last_known_good", FailSoftPolicy::last_known_good}},
          FailSoftPolicy::drop_tuple);
      p.options.skew_policy = pick<SkewPolicy>(
          m, "skew_policy", {{"reject_tuple", SkewPolicy::reject_tuple}, {"exclude_slots", SkewPolicy::exclude_slots}},
          SkewPolicy::reject_tuple);
      p.options.skip_fraction = m.value("skip_fraction", 0.0);
      s.models.push_back(std::move(p));
    }
    if (const auto l = j.find("labels"); l != j.end() && !l->is_null()) {
      s.labels = LabelWorld{l->value("classes", std::int64_t{2}), ms_to_duration(l->at("min_duration_ms").get<double>()),
                            ms_to_duration(l->at("max_duration_ms").get<double>()),
                            l->value("observation_accuracy", 1.0)};
    }
  } catch (const Json::exception& e) {
    throw ConfigError("scenario '" + s.name + "': " + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError("scenario '" + s.name + "': " + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(load_json(path), path.parent_path());
}

void Scenario::validate() const {
  auto fail = [&](const std::string& what) { throw ConfigError("scenario '" + name + "': " + what); };
  std::set<std::string> ids;
  for (const auto& n : nodes) {
    if (n.id.empty() || !ids.insert(n.id).second) fail("duplicate or empty node id '" + n.id + "'");
    if (n.cost_multiplier < 0) fail("node '" + n.id + "' has a negative cost multiplier");
  }
  if (!ids.contains(leader)) fail("leader '" + leader + "' is not a node");
  if (run_length <= Duration::zero()) fail("run length must be positive");
  std::set<std::pair<std::string, std::string>> linked;
  for (const auto& l : links) {
    if (!ids.contains(l.a) || !ids.contains(l.b)) fail("link " + l.a + "-" + l.b + " names an unknown node");
    linked.insert({l.a, l.b});
    linked.insert({l.b, l.a});
  }
  auto reachable = [&](const std::string& a, const std::string& b) {
    return a == b || default_link || linked.contains({a, b});
  };
  std::map<TopicId, const TopicConfig*> topic_of;
  for (const auto& t : topics) {
    if (!topic_of.emplace(t.topic, &t).second) fail("duplicate topic '" + t.topic.str() + "'");
  }
  std::set<StreamId> stream_ids;
  for (const auto& st : streams) {
    if (!ids.contains(st.node)) fail("stream '" + st.stream.str() + "' is on unknown node '" + st.node + "'");
    if (!stream_ids.insert(st.stream).second) fail("duplicate stream '" + st.stream.str() + "'");
    const auto t = topic_of.find(st.topic);
    if (t == topic_of.end()) fail("stream '" + st.stream.str() + "' publishes to unknown topic '" + st.topic.str() + "'");
    if (!t->second->slot_of(st.stream)) fail("topic '" + st.topic.str() + "' does not list '" + st.stream.str() + "'");
    if (!reachable(st.node, leader)) fail("node '" + st.node + "' cannot reach the leader");
    if (st.values == Values::labels && !labels) fail("stream '" + st.stream.str() + "' needs a label world");
  }
  std::set<std::pair<std::string, TopicId>> placed;
  std::set<std::string> model_ids;
  for (const auto& m : models) {
    if (!model_ids.insert(m.id).second) fail("duplicate model '" + m.id + "'");
    if (m.nodes.empty()) fail("model '" + m.id + "' has no node");
    if (m.nodes.size() > 1 && !m.shared) fail("replicated model '" + m.id + "' must use a shared subscription");
    if (!topic_of.contains(m.consumes)) fail("model '" + m.id + "' consumes unknown topic '" + m.consumes.str() + "'");
    if (const auto out = topic_of.find(m.output_topic); out != topic_of.end()) {
      if (!out->second->slot_of(m.produces)) {
        fail("topic '" + m.output_topic.str() + "' does not list model output '" + m.produces.str() + "'");
      }
    }
    for (const auto& n : m.nodes) {
      if (!ids.contains(n)) fail("model '" + m.id + "' is on unknown node '" + n + "'");
      if (!placed.insert({n, m.consumes}).second) fail("node '" + n + "' runs two pipelines for one topic");
      if (!reachable(n, leader)) fail("node '" + n + "' cannot reach the leader");
      for (const auto& st : streams) {
        if (st.topic == m.consumes && routing == Routing::lazy && !reachable(n, st.node)) {
          fail("node '" + n + "' cannot reach source '" + st.node + "'");
        }
      }
    }
    try {
      (void)make_model_fn(m.model);
    } catch (const ContractViolation& e) {
      fail("model '" + m.id + "': " + e.what());
    }
    if (m.options.skew_policy == SkewPolicy::exclude_slots && !model_accepts_partial(m.model)) {
      fail("model '" + m.id + "' cannot exclude slots");
    }
  }
  if (labels && (labels->classes < 2 || labels->min_duration <= Duration::zero() ||
                 labels->max_duration < labels->min_duration)) {
    fail("label world needs >= 2 classes and 0 < min_duration <= max_duration");
  }
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

constexpr int kWindowPriority = 0;
constexpr int kDefaultPriority = 1;

Duration transfer_time(std::uint64_t bytes, std::uint64_t bandwidth) {
  if (bandwidth == 0) return Duration::zero();
  return Duration(static_cast<std::int64_t>((bytes * 1'000'000 + bandwidth - 1) / bandwidth));
}

// Size of a header frame, without copying large inline payloads.
template <typename Msg>
std::uint64_t frame_bytes(const Header& h) {
  if (h.is_lazy()) return wire::encoded_size(Msg{h});
  Header empty{h.topic, h.stream, h.event_ts, h.publish_ts, InlinePayload{}};
  return wire::encoded_size(Msg{empty}) + h.inline_bytes().size();
}

class Simulation {
 public:
  explicit Simulation(const Scenario& s) : sc_(s), broker_(BrokerOptions{1u << 22, s.shared_window}), transport_(clock_) {}

  SimResult run() {
    setup();
    while (!queue_.empty()) {
      auto ev = queue_.top();
      queue_.pop();
      clock_.set(ev.at);
      ev.fn();
    }
    for (auto& c : consumers_) c.pipe->finalize(clock_.now());
    result_.events = log_.events();
    std::stable_sort(result_.events.begin(), result_.events.end(),
                     [](const MetricEvent& a, const MetricEvent& b) { return a.at < b.at; });
    result_.report = report(result_.events);
    result_.broker = broker_.stats();
    result_.end = clock_.now();
    return std::move(result_);
  }

 private:
  struct Event {
    Timestamp at;
    int priority;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const {
      return std::tie(at, priority, seq) > std::tie(o.at, o.priority, o.seq);
    }
  };

  struct Node {
    NodeSpec spec;
    NodeAddress address;
    std::unique_ptr<PayloadStore> store;
    std::unique_ptr<FetchClient> client;
  };

  struct Consumer {
    std::string node;
    std::string name;
    std::string model_id;
    TopicId topic;
    bool shared = false;
    std::unique_ptr<Pipeline> pipe;
    std::uint64_t received = 0;
    std::uint64_t acked = 0;
  };

  struct InFlight {
    Work work;
    std::size_t pending = 0;
  };

  void at(Timestamp t, std::function<void()> fn, int priority = kDefaultPriority) {
    queue_.push(Event{t, priority, next_seq_++, std::move(fn)});
  }

  Timestamp now() const { return clock_.now(); }

  const LinkSpec& link(const std::string& a, const std::string& b) const {
    for (const auto& l : sc_.links) {
      if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return l;
    }
    if (sc_.default_link) return *sc_.default_link;
    throw ConfigError("no link between '" + a + "' and '" + b + "'");
  }

  // Occupies a serialized resource; returns when the last byte leaves it.
  Timestamp occupy(const std::string& resource, std::uint64_t bandwidth, std::uint64_t bytes, Timestamp ready) {
    if (bandwidth == 0) return ready;
    auto& busy = busy_[resource];
    const auto start = std::max(ready, busy);
    busy = start + transfer_time(bytes, bandwidth);
    result_.transfers.push_back(Transfer{resource, start, busy, bytes, bandwidth});
    return busy;
  }

  // Arrival time at `to` of bytes sent from `from` at `ready`. Broker traffic
  // also passes the leader's NIC when it is capped.
  Timestamp send(const std::string& from, const std::string& to, std::uint64_t bytes, Timestamp ready,
                 bool via_leader) {
    if (from == to) return ready;
    const auto& l = link(from, to);
    auto t = occupy("link:" + from + ">" + to, l.bandwidth, bytes, ready);
    if (via_leader && sc_.leader_cap > 0) {
      if (to == sc_.leader) t = occupy("leader:in", sc_.leader_cap, bytes, t);
      if (from == sc_.leader) t = occupy("leader:out", sc_.leader_cap, bytes, t);
    }
    return t + l.latency;
  }

  void setup() {
    std::uint16_t port = 1;
    for (const auto& n : sc_.nodes) {
      Node node{n, NodeAddress{n.id, port++}, nullptr, nullptr};
      node.store = std::make_unique<PayloadStore>(node.address);
      transport_.attach(*node.store);
      node.client = std::make_unique<FetchClient>(transport_, sc_.cache_bytes);
      nodes_.emplace(n.id, std::move(node));
    }
    for (const auto& t : sc_.topics) {
      broker_.create_topic(t);
      topics_.emplace(t.topic, t);
    }
    if (sc_.labels) make_labels();

    for (const auto& m : sc_.models) {
      for (const auto& n : m.nodes) {
        Consumer c{n, n + "/" + m.id, m.id, m.consumes, m.shared};
        const auto cost = Duration(static_cast<std::int64_t>(
            std::llround(static_cast<double>(m.cost.count()) * nodes_.at(n).spec.cost_multiplier)));
        ModelOperator op{m.id, m.consumes, m.output_topic, m.produces, cost, make_model_fn(m.model),
                         model_accepts_partial(m.model)};
        c.pipe = std::make_unique<Pipeline>(n, topics_.at(m.consumes), std::move(op), m.options, log_);
        broker_.subscribe(m.consumes, c.name, c.shared);
        by_topic_[m.consumes].push_back(consumers_.size());
        consumers_.push_back(std::move(c));
      }
    }

    for (std::size_t ci = 0; ci < consumers_.size(); ++ci) {
      const auto w = consumers_[ci].pipe->window();
      if (!w) continue;
      for (auto b = Timestamp{} + sc_.window_origin + *w; b <= Timestamp{} + sc_.run_length + *w; b = b + *w) {
        at(b, [this, ci, b] {
          consumers_[ci].pipe->on_window(b);
          kick(ci);
        }, kWindowPriority);
      }
    }

    for (std::size_t si = 0; si < sc_.streams.size(); ++si) {
      const auto& spec = sc_.streams[si];
      std::seed_seq seq{sc_.seed, std::uint64_t{si}, std::uint64_t{0x5eed}};
      auto rng = std::make_shared<std::mt19937_64>(seq);
      std::uint64_t index = 0;
      for (const auto& item : generate(spec, sc_.run_length)) {
        at(item.at, [this, si, item, rng, i = index++] { produce(si, item, i, *rng); });
      }
    }
  }

  void make_labels() {
    std::seed_seq seq{sc_.seed, std::uint64_t{0x1abe1}};
    std::mt19937_64 rng(seq);
    const auto& w = *sc_.labels;
    std::uniform_int_distribution<std::int64_t> dur(w.min_duration.count(), w.max_duration.count());
    std::uniform_int_distribution<std::int64_t> cls(0, w.classes - 1), other(1, w.classes - 1);
    std::int64_t label = cls(rng);
    for (auto t = Timestamp{}; t < Timestamp{} + sc_.run_length + std::chrono::seconds(10);
         t = t + Duration(dur(rng))) {
      result_.labels.add(t, label);
      label = (label + other(rng)) % w.classes;
    }
  }

  Bytes payload_for(const StreamSpec& spec, const GeneratedItem& item, std::uint64_t index, std::mt19937_64& rng) {
    switch (spec.values) {
      case Values::counter: {
        auto b = encode_i64(static_cast<std::int64_t>(index));
        if (item.payload_bytes > b.size()) b.resize(item.payload_bytes, 0);
        return b;
      }
      case Values::labels: {
        const auto& w = *sc_.labels;
        auto label = *result_.labels.at(item.at);
        if (std::uniform_real_distribution<double>(0, 1)(rng) >= w.observation_accuracy) {
          label = (label + std::uniform_int_distribution<std::int64_t>(1, w.classes - 1)(rng)) % w.classes;
        }
        return encode_i64(label);
      }
      case Values::random: break;
    }
    Bytes b(item.payload_bytes);
    std::size_t i = 0;
    for (; i + 8 <= b.size(); i += 8) {
      const auto v = rng();
      for (int k = 0; k < 8; ++k) b[i + k] = static_cast<std::uint8_t>(v >> (8 * k));
    }
    for (; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>(rng());
    return b;
  }

  void produce(std::size_t si, const GeneratedItem& item, std::uint64_t index, std::mt19937_64& rng) {
    const auto& spec = sc_.streams[si];
    auto payload = payload_for(spec, item, index, rng);
    ++result_.generated_items;
    result_.generated_payload_bytes += payload.size();
    log_.record(MetricEvent{now(), spec.node, EventKind::produce_begin, spec.topic.str(), spec.stream.str(),
                            item.at.micros, index,
                            "bytes=" + std::to_string(payload.size()) + ";routing=" + std::string(to_string(sc_.routing))});
    Header h{spec.topic, spec.stream, item.at, item.at + spec.publish_delay, InlinePayload{}};
    if (sc_.routing == Routing::lazy) {
      h.body = nodes_.at(spec.node).store->append(spec.stream, item.at, payload);
    } else {
      h.body = InlinePayload{std::move(payload)};
    }
    const auto frame = frame_bytes<wire::PublishHeader>(h);
    at(h.publish_ts, [this, h = std::move(h), frame, node = spec.node] {
      const auto arrival = send(node, sc_.leader, frame, now(), true);
      at(arrival, [this, h, frame, node] { publish(h, node, frame, true); });
    });
  }

  void publish(const Header& h, const std::string& from, std::uint64_t frame, bool source) {
    const auto seq = broker_.publish(h);
    if (source) {
      log_.record(MetricEvent{now(), from, EventKind::produce_end, h.topic.str(), h.stream.str(), h.event_ts.micros,
                              seq, "frame=" + std::to_string(frame)});
    }
    dispatch(h.topic);
  }

  void dispatch(const TopicId& topic) {
    const auto it = by_topic_.find(topic);
    if (it == by_topic_.end()) return;
    for (const auto ci : it->second) {
      auto& c = consumers_[ci];
      for (auto& ev : broker_.poll(topic, c.name)) {
        auto* d = std::get_if<Delivery>(&ev);
        if (!d) continue;  // gaps cannot occur with the simulator's retention
        const auto frame = frame_bytes<wire::Deliver>(d->header);
        const auto arrival = send(sc_.leader, c.node, frame, now(), true);
        at(arrival, [this, ci, d = std::move(*d), frame] {
          auto& c = consumers_[ci];
          ++c.received;
          c.pipe->on_header(d.header, now(), d.sequence, frame);
          kick(ci);
        });
      }
    }
  }

  void ack(std::size_t ci) {
    auto& c = consumers_[ci];
    if (!c.shared) return;
    const auto outstanding = c.pipe->queued() + (c.pipe->busy() ? 1 : 0);
    const auto processed = c.received > outstanding ? c.received - outstanding : 0;
    if (processed <= c.acked) return;
    c.acked = processed;
    broker_.ack(c.topic, c.name, processed);
    dispatch(c.topic);
  }

  void kick(std::size_t ci) {
    auto& c = consumers_[ci];
    if (c.pipe->busy()) return;
    auto w = c.pipe->start(now());
    if (!w) {
      ack(ci);
      return;
    }
    auto job = std::make_shared<InFlight>(InFlight{std::move(*w), 0});
    if (job->work.fetches.empty()) {
      assembled(ci, job);
      return;
    }
    job->pending = job->work.fetches.size();
    const auto threshold = topics_.at(c.topic).freshness_threshold;
    for (const auto slot : job->work.fetches) {
      const auto& h = job->work.tuple.slots[slot].header;
      c.pipe->fetch_begin(job->work, slot, now());
      const auto& loc = h.locator();
      const auto& owner = loc.node.host;
      Timestamp done = now();
      const bool local_stale = !is_fresh(h.event_ts, now(), threshold);
      auto outcome = nodes_.at(c.node).client->fetch(loc, FreshnessGate{now(), threshold, h.event_ts});
      if (!outcome.cache_hit && !local_stale && owner != c.node) {
        const auto request_at = now() + sc_.fetch_setup + link(c.node, owner).latency;
        const auto bytes = wire::encoded_size(wire::FetchResponse{outcome.status, {}}) + outcome.payload.size();
        done = send(owner, c.node, bytes, request_at, false);
      }
      at(done, [this, ci, job, slot, outcome = std::move(outcome)] {
        consumers_[ci].pipe->fetch_end(job->work, slot, outcome, now());
        if (--job->pending == 0) assembled(ci, job);
      });
    }
  }

  void assembled(std::size_t ci, const std::shared_ptr<InFlight>& job) {
    auto& c = consumers_[ci];
    if (!c.pipe->assemble(job->work, now())) {
      ack(ci);
      kick(ci);
      return;
    }
    const auto begin = now();
    at(begin + c.pipe->model().cost, [this, ci, job, begin] { finish(ci, job, begin); });
  }

  void finish(std::size_t ci, const std::shared_ptr<InFlight>& job, Timestamp begin) {
    auto& c = consumers_[ci];
    auto pred = c.pipe->invoke(job->work, begin, now());
    if (sc_.record_payloads) {
      Bytes input;
      for (const auto& s : job->work.tuple.slots) {
        if (s.excluded || !s.payload) continue;
        const auto n = encode_i64(static_cast<std::int64_t>(s.payload->size()));
        input.insert(input.end(), n.begin(), n.end());
        input.insert(input.end(), s.payload->begin(), s.payload->end());
      }
      result_.assembled[c.model_id].push_back(std::move(input));
    }
    if (pred) {
      result_.predictions[c.model_id].push_back({pred->emit_ts, pred->value});
      if (topics_.contains(pred->header.topic)) {
        const auto frame = frame_bytes<wire::PublishHeader>(pred->header);
        const auto arrival = send(c.node, sc_.leader, frame, now(), true);
        at(arrival, [this, h = std::move(pred->header), frame, node = c.node] { publish(h, node, frame, false); });
      }
    }
    ack(ci);
    kick(ci);
  }

  const Scenario& sc_;
  ManualClock clock_;
  EventLog log_;
  Broker broker_;
  LocalTransport transport_;
  std::map<std::string, Node> nodes_;
  std::map<TopicId, TopicConfig> topics_;
  std::vector<Consumer> consumers_;
  std::map<TopicId, std::vector<std::size_t>> by_topic_;
  std::map<std::string, Timestamp> busy_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t next_seq_ = 0;
  SimResult result_;
};

}  // namespace

SimResult run_scenario(const Scenario& scenario) {
  scenario.validate();
  return Simulation(scenario).run();
}

void write_run(const SimResult& result, const Scenario& scenario, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".log") std::filesystem::remove(entry.path());
  }
  std::map<std::string, std::ofstream> files;
  for (const auto& e : result.events) {
    auto it = files.find(e.node);
    if (it == files.end()) it = files.emplace(e.node, std::ofstream(dir / (e.node + ".log"), std::ios::trunc)).first;
    it->second << format_event(e) << '\n';
  }
  for (auto& [node, f] : files) {
    if (!f) throw Error("failed to write log for node '" + node + "'");
  }
  ReplayMeta m{scenario.window_origin, scenario.topics, {}};
  for (const auto& model : scenario.models) {
    for (const auto& n : model.nodes) m.pipelines.push_back({n, model.consumes});
  }
  auto meta = replay_meta_to_json(m);
  meta["scenario"] = scenario.name;
  meta["seed"] = scenario.seed;
  std::ofstream(dir / "topics.json") << meta.dump(2) << '\n';
}

std::vector<ScalingPoint> scaling_experiment(const Scenario& base, const std::string& model_id, std::size_t max_k) {
  const auto it = std::find_if(base.models.begin(), base.models.end(), [&](const auto& m) { return m.id == model_id; });
  if (it == base.models.end()) throw ConfigError("no model '" + model_id + "' in scenario '" + base.name + "'");
  if (it->nodes.size() < max_k) throw ConfigError("model '" + model_id + "' lists fewer than " + std::to_string(max_k) + " nodes");
  std::vector<ScalingPoint> out;
  for (std::size_t k = 1; k <= max_k; ++k) {
    auto s = base;
    auto& m = *std::find_if(s.models.begin(), s.models.end(), [&](const auto& x) { return x.id == model_id; });
    m.nodes.resize(k);
    m.shared = true;
    const auto r = run_scenario(s);
    if (!r.report.total_working_duration) throw Error("scaling run with k=" + std::to_string(k) + " predicted nothing");
    const auto d = *r.report.total_working_duration;
    const double speedup = out.empty() ? 1.0
                                       : static_cast<double>(out.front().total_working_duration.count()) /
                                             static_cast<double>(d.count());
    out.push_back({k, d, speedup});
  }
  return out;
}

}  // namespace edgestream::sim
