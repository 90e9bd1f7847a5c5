// edgestream: live-mode processes, simulation, metrics and replay.
// Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 replay divergence.

#include "edgestream/net.hpp"
#include "edgestream/replay.hpp"
#include "edgestream/sim.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>

using namespace edgestream;

namespace {

constexpr int kOk = 0, kConfig = 1, kRuntime = 2, kDivergence = 3;

std::atomic<bool> g_stop{false};
std::atomic<int> g_signal{0};

extern "C" void on_signal(int sig) {
  g_signal = sig;
  g_stop = true;
}

void install_signals() {
  std::signal(SIGTERM, on_signal);
  std::signal(SIGINT, on_signal);
}

// --log-dir beats EDGESTREAM_LOG_DIR, which beats the default.
std::filesystem::path log_dir(const std::string& flag, const std::string& fallback = "logs") {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("EDGESTREAM_LOG_DIR"); env && *env) return env;
  return fallback;
}

void shutdown_marker(EventSink& log, const std::string& node, const Clock& clock) {
  const std::string reason = g_signal == SIGTERM ? "sigterm" : g_signal == SIGINT ? "sigint" : "complete";
  log.record(MetricEvent{clock.now(), node, EventKind::shutdown, "-", "-", std::nullopt, std::nullopt,
                         "reason=" + reason});
}

std::vector<TopicConfig> read_topics(const std::string& path) {
  const auto j = load_json(path);
  const auto& list = j.is_array() ? j : j.at("topics");
  std::vector<TopicConfig> out;
  for (const auto& t : list) out.push_back(topic_from_json(t));
  return out;
}

// Adds this pipeline to <dir>/topics.json so the run can be replayed.
void register_pipeline(const std::filesystem::path& dir, const std::string& node, const TopicConfig& topic) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "topics.json";
  ReplayMeta meta;
  if (std::filesystem::exists(path)) meta = replay_meta_from_json(load_json(path));
  if (std::none_of(meta.topics.begin(), meta.topics.end(), [&](const auto& t) { return t.topic == topic.topic; })) {
    meta.topics.push_back(topic);
  }
  if (std::none_of(meta.pipelines.begin(), meta.pipelines.end(),
                   [&](const auto& p) { return p.node == node && p.topic == topic.topic; })) {
    meta.pipelines.push_back({node, topic.topic});
  }
  const auto tmp = path.string() + ".tmp";
  std::ofstream(tmp) << replay_meta_to_json(meta).dump(2) << '\n';
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------

struct BrokerArgs {
  std::string listen = "127.0.0.1:7400";
  std::size_t retention = 65536;
  std::size_t shared_window = 16;
  std::string node = "broker";
  std::string log_dir;
};

int run_broker(const BrokerArgs& a) {
  WallClock clock;
  FileEventLog log(log_dir(a.log_dir));
  Broker broker(BrokerOptions{a.retention, a.shared_window});
  net::BrokerServer server(broker, NodeAddress::parse(a.listen));
  std::cout << "listening on " << server.address().to_string() << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  broker.close();
  server.stop();
  shutdown_marker(log, a.node, clock);
  return kOk;
}

struct SourceArgs {
  std::string broker = "127.0.0.1:7400";
  std::string listen = "127.0.0.1:0";
  std::string node = "source";
  std::string topic, stream, topics_file;
  double period_ms = 100;
  std::uint64_t payload_bytes = 8;
  std::uint64_t count = 0;
  std::string routing = "lazy";
  std::string values = "counter";
  std::uint64_t seed = 1;
  double linger_ms = -1;
  std::string log_dir;
};

int run_source(const SourceArgs& a) {
  if (a.routing != "lazy" && a.routing != "eager") throw ConfigError("routing must be lazy or eager");
  if (a.values != "counter" && a.values != "random") throw ConfigError("values must be counter or random");
  if (a.period_ms <= 0) throw ConfigError("period_ms must be positive");
  WallClock clock;
  FileEventLog log(log_dir(a.log_dir));
  std::vector<TopicConfig> topics;
  if (!a.topics_file.empty()) {
    topics = read_topics(a.topics_file);
  } else {
    topics.push_back(TopicConfig{TopicId(a.topic), {StreamId(a.stream)}});
  }

  // The store's locators must carry the fetch server's real port.
  auto address = NodeAddress::parse(a.listen);
  if (address.port == 0) address = net::Listener(address).address();
  PayloadStore store(address);
  net::FetchServer fetcher(store, address, clock);
  net::BrokerClient broker(NodeAddress::parse(a.broker));
  for (const auto& t : topics) broker.create_topic(t);

  std::mt19937_64 rng(a.seed);
  const auto period = ms_to_duration(a.period_ms);
  auto next = clock.now();
  for (std::uint64_t i = 0; !g_stop && (a.count == 0 || i < a.count); ++i) {
    while (!g_stop && clock.now() < next) std::this_thread::sleep_for(next - clock.now());
    if (g_stop) break;
    const auto at = clock.now();
    Bytes payload;
    if (a.values == "counter") {
      payload = encode_i64(static_cast<std::int64_t>(i));
      if (payload.size() < a.payload_bytes) payload.resize(a.payload_bytes, 0);
    } else {
      payload.resize(a.payload_bytes);
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
    }
    log.record(MetricEvent{at, a.node, EventKind::produce_begin, a.topic, a.stream, at.micros, i,
                           "bytes=" + std::to_string(payload.size()) + ";routing=" + a.routing});
    Header h{TopicId(a.topic), StreamId(a.stream), at, at, InlinePayload{}};
    if (a.routing == "lazy") {
      h.body = store.append(h.stream, at, payload);
    } else {
      h.body = InlinePayload{std::move(payload)};
    }
    h.publish_ts = clock.now();
    const auto frame = wire::encoded_size(wire::PublishHeader{h});
    const auto sent = clock.now();
    const auto seq = broker.publish(h);
    // The broker accepted the header somewhere inside the round trip; take the midpoint.
    const auto accepted = sent + (clock.now() - sent) / 2;
    log.record(MetricEvent{accepted, a.node, EventKind::produce_end, a.topic, a.stream, at.micros, seq,
                           "frame=" + std::to_string(frame)});
    next = next + period;
  }
  // Keep serving fetches for consumers that are still catching up.
  const auto until = a.linger_ms < 0 ? Timestamp::max() : clock.now() + ms_to_duration(a.linger_ms);
  while (!g_stop && clock.now() < until) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  fetcher.stop();
  shutdown_marker(log, a.node, clock);
  return kOk;
}

struct ModelArgs {
  std::string broker = "127.0.0.1:7400";
  std::string node = "model";
  std::string consumer;
  std::string topic, model = "identity", output = "prediction", output_topic;
  double cost_ms = 0;
  bool shared = false;
  std::int64_t threshold = 0;
  double skip_fraction = 0;
  std::string skew_policy = "reject_tuple", fail_soft = "drop_tuple";
  double cache_mb = 256;
  std::uint64_t max_predictions = 0;
  double duration_ms = -1;
  bool print = false;
  std::string log_dir;
};

int run_model(const ModelArgs& a) {
  WallClock clock;
  const auto dir = log_dir(a.log_dir);
  FileEventLog log(dir);
  const auto broker_addr = NodeAddress::parse(a.broker);
  std::unique_ptr<net::Subscription> sub;
  try {
    sub = std::make_unique<net::Subscription>(broker_addr, TopicId(a.topic), a.consumer.empty() ? a.node : a.consumer,
                                              a.shared);
  } catch (const net::NetError& e) {
    // The broker answers unknown topics with an error; surface it as a config problem.
    if (std::string(e.what()).find("unknown") != std::string::npos) {
      throw ConfigError("model '" + a.model + "' consumes unknown topic '" + a.topic + "': " + e.what());
    }
    throw;
  }
  const auto& topic = sub->config();
  const ModelSpec spec{a.model, a.threshold, {}};
  PipelineOptions options;
  options.skip_fraction = a.skip_fraction;
  options.skew_policy = a.skew_policy == "exclude_slots" ? SkewPolicy::exclude_slots : SkewPolicy::reject_tuple;
  options.fail_soft = a.fail_soft == "last_known_good" ? FailSoftPolicy::last_known_good : FailSoftPolicy::drop_tuple;
  const TopicId out_topic(a.output_topic.empty() ? a.topic + "_out" : a.output_topic);
  ModelOperator op{a.model, topic.topic, out_topic, StreamId(a.output), ms_to_duration(a.cost_ms),
                   make_model_fn(spec), model_accepts_partial(spec)};
  Pipeline pipeline(a.node, topic, std::move(op), options, log);
  register_pipeline(dir, a.node, topic);

  net::TcpTransport transport;
  FetchClient client(transport, static_cast<std::uint64_t>(a.cache_mb * (1 << 20)));
  net::BrokerClient publisher(broker_addr);
  bool publish_outputs = true;

  const auto started = clock.now();
  const auto window = pipeline.window();
  std::optional<Timestamp> next_boundary;
  if (window) next_boundary = Timestamp{(clock.now().micros / window->count() + 1) * window->count()};
  std::uint64_t received = 0, predictions = 0;
  auto sleep = [](Duration d) { std::this_thread::sleep_for(d); };

  while (!g_stop) {
    if (a.duration_ms >= 0 && clock.now() - started >= ms_to_duration(a.duration_ms)) break;
    if (a.max_predictions && predictions >= a.max_predictions) break;
    Duration timeout = std::chrono::milliseconds(50);
    if (next_boundary) timeout = std::min(timeout, std::max(Duration{0}, *next_boundary - clock.now()));
    if (auto ev = sub->next(timeout)) {
      if (auto* h = std::get_if<Header>(&*ev)) {
        pipeline.on_header(*h, clock.now(), received++, wire::encoded_size(wire::Deliver{*h}));
      }
    }
    while (next_boundary && *next_boundary <= clock.now()) {
      pipeline.on_window(*next_boundary);
      *next_boundary = *next_boundary + *window;
    }
    for (auto& p : drain(pipeline, &client, clock, sleep)) {
      ++predictions;
      if (a.print) {
        if (p.value.size() >= 8) {
          std::cout << *decode_i64_prefix(p.value) << std::endl;
        } else {
          std::cout << "<" << p.value.size() << " bytes>" << std::endl;
        }
      }
      if (publish_outputs) {
        try {
          publisher.publish(p.header);
        } catch (const net::NetError&) {
          publish_outputs = false;  // no such output topic; predictions stay terminal
        }
      }
    }
    if (a.shared) sub->ack(received - pipeline.queued());
  }
  pipeline.finalize(clock.now());
  sub->close();
  shutdown_marker(log, a.node, clock);
  return kOk;
}

struct SimArgs {
  std::string scenario, out, routing;
  std::optional<std::uint64_t> seed;
};

int run_sim(const SimArgs& a) {
  auto s = sim::load_scenario(a.scenario);
  if (a.seed) s.seed = *a.seed;
  if (a.routing == "lazy") s.routing = sim::Routing::lazy;
  if (a.routing == "eager") s.routing = sim::Routing::eager;
  if (!a.routing.empty() && a.routing != "lazy" && a.routing != "eager") throw ConfigError("routing must be lazy or eager");
  const auto out = log_dir(a.out, "runs/" + s.name);
  const auto r = sim::run_scenario(s);
  sim::write_run(r, s, out);
  std::ofstream csv(out / "report.csv");
  write_csv(r.report, csv);
  std::cout << "scenario " << s.name << " seed " << s.seed << " (" << sim::to_string(s.routing) << ")\n"
            << "items " << r.report.items << ", predicted " << r.report.predicted << ", unaccounted "
            << r.report.unaccounted << "\n";
  for (const auto& [reason, n] : r.report.skipped_by_reason) std::cout << "skipped " << reason << " " << n << "\n";
  if (r.report.total_working_duration) {
    std::cout << "total working duration " << duration_to_ms(*r.report.total_working_duration) << " ms\n";
  }
  if (r.report.backlog) std::cout << "backlog " << duration_to_ms(*r.report.backlog) << " ms\n";
  std::cout << "logs written to " << out.string() << "\n";
  return kOk;
}

int run_report(const std::string& logs, const std::string& out) {
  const auto r = report(read_log_dir(log_dir(logs)));
  if (out.empty() || out == "-") {
    write_csv(r, std::cout);
  } else {
    std::ofstream f(out);
    if (!f) throw Error("cannot write '" + out + "'");
    write_csv(r, f);
  }
  return kOk;
}

int run_replay(const std::string& logs) {
  const auto r = replay_dir(log_dir(logs));
  if (r.divergence) {
    const auto& d = *r.divergence;
    std::cout << "divergence at " << d.node << "/" << d.topic << " tuple " << d.seq << "\n"
              << "  logged:   " << d.expected << "\n"
              << "  replayed: " << d.actual << "\n";
    return kDivergence;
  }
  std::cout << "replayed " << r.tuples << " join decisions over " << r.pipelines << " pipelines: identical\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edgestream: multi-stream edge inference runtime, simulator and tools"};
  app.require_subcommand(1);

  BrokerArgs ba;
  auto* broker = app.add_subcommand("broker", "run the leader's message broker");
  broker->add_option("--listen", ba.listen, "host:port to listen on (port 0 picks one)");
  broker->add_option("--retention", ba.retention, "headers kept per topic");
  broker->add_option("--shared-window", ba.shared_window, "in-flight headers per shared consumer");
  broker->add_option("--node", ba.node, "node id used in the metric log");
  broker->add_option("--log-dir", ba.log_dir, "metric log directory");

  SourceArgs sa;
  auto* source = app.add_subcommand("source", "publish a stream and serve its payloads");
  source->add_option("--broker", sa.broker, "broker host:port");
  source->add_option("--listen", sa.listen, "fetch server host:port");
  source->add_option("--node", sa.node, "node id");
  source->add_option("--topic", sa.topic, "topic to publish to")->required();
  source->add_option("--stream", sa.stream, "stream name")->required();
  source->add_option("--topics", sa.topics_file, "JSON file with topic configs to create");
  source->add_option("--period-ms", sa.period_ms, "collection period");
  source->add_option("--payload-bytes", sa.payload_bytes, "payload size");
  source->add_option("--count", sa.count, "items to publish (0 = until stopped)");
  source->add_option("--routing", sa.routing, "lazy or eager");
  source->add_option("--values", sa.values, "counter or random");
  source->add_option("--seed", sa.seed, "seed for random payloads");
  source->add_option("--linger-ms", sa.linger_ms, "keep serving fetches this long after the last item");
  source->add_option("--log-dir", sa.log_dir, "metric log directory");

  ModelArgs ma;
  auto* model = app.add_subcommand("model", "run a model pipeline on a topic");
  model->add_option("--broker", ma.broker, "broker host:port");
  model->add_option("--node", ma.node, "node id");
  model->add_option("--consumer", ma.consumer, "subscription id (defaults to the node id)");
  model->add_option("--topic", ma.topic, "topic to consume")->required();
  model->add_option("--model", ma.model, "identity | sum | threshold_label | table_lookup | majority_vote");
  model->add_option("--output", ma.output, "output stream name");
  model->add_option("--output-topic", ma.output_topic, "topic for predictions (default <topic>_out)");
  model->add_option("--cost-ms", ma.cost_ms, "model cost per invocation");
  model->add_flag("--shared", ma.shared, "join a shared subscription");
  model->add_option("--threshold", ma.threshold, "threshold_label threshold");
  model->add_option("--skip-fraction", ma.skip_fraction, "fraction of headers to downsample");
  model->add_option("--skew-policy", ma.skew_policy, "reject_tuple or exclude_slots");
  model->add_option("--fail-soft", ma.fail_soft, "drop_tuple or last_known_good");
  model->add_option("--cache-mb", ma.cache_mb, "fetch cache size");
  model->add_option("--max-predictions", ma.max_predictions, "stop after this many predictions");
  model->add_option("--duration-ms", ma.duration_ms, "stop after this long");
  model->add_flag("--print", ma.print, "print each prediction value");
  model->add_option("--log-dir", ma.log_dir, "metric log directory");

  SimArgs sima;
  std::uint64_t seed = 0;
  auto* simc = app.add_subcommand("sim", "run a scenario in the simulator");
  simc->add_option("--scenario", sima.scenario, "scenario JSON file")->required();
  auto* seed_opt = simc->add_option("--seed", seed, "override the scenario seed");
  simc->add_option("--out", sima.out, "output directory for logs and report.csv");
  simc->add_option("--routing", sima.routing, "override routing: lazy or eager");

  std::string report_logs, report_out;
  auto* metrics = app.add_subcommand("metrics", "metric tools");
  metrics->require_subcommand(1);
  auto* rep = metrics->add_subcommand("report", "compute the metric report from a log directory");
  rep->add_option("--logs", report_logs, "log directory");
  rep->add_option("--out", report_out, "CSV output file (default stdout)");

  std::string replay_logs;
  auto* replayc = app.add_subcommand("replay", "re-run joiners over a log and compare decisions");
  replayc->add_option("--logs", replay_logs, "log directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  if (*seed_opt) sima.seed = seed;

  install_signals();
  try {
    if (*broker) return run_broker(ba);
    if (*source) return run_source(sa);
    if (*model) return run_model(ma);
    if (*simc) return run_sim(sima);
    if (*rep) return run_report(report_logs, report_out);
    if (*replayc) return run_replay(replay_logs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ContractViolation& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
