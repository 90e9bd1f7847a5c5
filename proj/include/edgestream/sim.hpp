#pragma once

// Deterministic discrete-event simulation of an edge cluster: source nodes,
// a leader hosting the broker, consumer nodes running pipelines, and links
// with latency and serialized bandwidth. The broker, joiners, pipelines,
// stores and fetch clients are the same objects live mode uses; only time
// and the network are simulated.

#include "edgestream/broker.hpp"
#include "edgestream/config.hpp"
#include "edgestream/runtime.hpp"

namespace edgestream::sim {

struct Periodic {
  Duration period{0};
  std::uint64_t payload_bytes = 0;
};

/// Bursts of burst_length events spaced by burst_period, separated by quiet
/// gaps. quiet = 0 gives a continuous stream.
struct Bursty {
  Duration quiet{0};
  Duration burst_period{0};
  std::uint64_t burst_length = 1;
  std::uint64_t payload_bytes = 0;
};

struct TraceRow {
  Duration at{0};
  std::uint64_t payload_bytes = 0;
};
struct Trace {
  std::vector<TraceRow> rows;
};

using Pattern = std::variant<Periodic, Bursty, Trace>;

/// Payload contents: random bytes, the item index, or a noisy observation
/// of the scenario's ground-truth label (8-byte integer).
enum class Values { random, counter, labels };

struct StreamSpec {
  StreamId stream;
  TopicId topic;
  std::string node;
  Pattern pattern;
  Duration start{0};
  Duration publish_delay{0};  // constant delay between collection and send
  Values values = Values::random;
};

struct GeneratedItem {
  Timestamp at;
  std::uint64_t payload_bytes = 0;
};

/// Collection times within [start, run_length). Throws ContractViolation on
/// a non-positive period.
std::vector<GeneratedItem> generate(const StreamSpec& spec, Duration run_length);
/// Reads "event_ts_ms,payload_bytes" rows; '#' starts a comment.
Trace read_trace(const std::filesystem::path& path);

enum class Topology { early_fusion, early_fusion_parallel, late_fusion };
enum class Routing { lazy, eager };

std::string_view to_string(Topology t);
std::string_view to_string(Routing r);

struct NodeSpec {
  std::string id;
  double cost_multiplier = 1.0;
};

struct LinkSpec {
  std::string a, b;
  Duration latency{0};
  std::uint64_t bandwidth = 0;  // bytes per second per direction; 0 = unlimited
};

struct ModelPlacement {
  std::string id;
  std::vector<std::string> nodes;  // one pipeline per node
  TopicId consumes;
  TopicId output_topic;
  StreamId produces;
  ModelSpec model;
  Duration cost{0};
  bool shared = false;  // replicas share one subscription
  PipelineOptions options;
};

struct LabelWorld {
  std::int64_t classes = 2;
  Duration min_duration{0};
  Duration max_duration{0};
  double observation_accuracy = 1.0;
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  Topology topology = Topology::early_fusion;
  Routing routing = Routing::lazy;
  Duration run_length{0};
  std::string leader;
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> links;
  std::optional<LinkSpec> default_link;  // for node pairs without a listed link
  std::uint64_t leader_cap = 0;          // bytes/s through the leader's NIC for broker traffic; 0 = none
  Duration fetch_setup{std::chrono::milliseconds(5)};
  std::uint64_t cache_bytes = 256ull << 20;
  std::size_t shared_window = 16;
  Duration window_origin{0};
  std::vector<StreamSpec> streams;
  std::vector<TopicConfig> topics;
  std::vector<ModelPlacement> models;
  std::optional<LabelWorld> labels;
  bool record_payloads = false;  // keep assembled model inputs in the result

  /// Throws ConfigError naming the offending node, link, topic or model.
  void validate() const;
};

Scenario scenario_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

/// One use of a capped resource (link direction or leader NIC).
struct Transfer {
  std::string resource;
  Timestamp start, end;
  std::uint64_t bytes = 0;
  std::uint64_t capacity = 0;  // bytes/s
};

struct PredictionRecord {
  Timestamp emit;
  Bytes value;
};

struct SimResult {
  std::vector<MetricEvent> events;  // merged, stable by time
  MetricReport report;
  BrokerStats broker;
  std::uint64_t generated_items = 0;
  std::uint64_t generated_payload_bytes = 0;
  std::vector<Transfer> transfers;
  std::map<std::string, std::vector<PredictionRecord>> predictions;  // by model id
  std::map<std::string, std::vector<Bytes>> assembled;             // by model id, when recorded
  LabelTimeline labels;
  Timestamp end;
};

/// Runs until every generated item has been processed or skipped.
/// Identical scenarios give identical results.
SimResult run_scenario(const Scenario& scenario);

/// Writes <dir>/<node>.log per node and <dir>/topics.json for replay.
void write_run(const SimResult& result, const Scenario& scenario, const std::filesystem::path& dir);

struct ScalingPoint {
  std::size_t k = 0;
  Duration total_working_duration{0};
  double speedup = 0;
};

/// Runs the scenario with the given model replicated onto the first k of its
/// nodes (shared subscription), for k = 1..max_k.
std::vector<ScalingPoint> scaling_experiment(const Scenario& base, const std::string& model_id, std::size_t max_k);

}  // namespace edgestream::sim
