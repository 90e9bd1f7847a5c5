#pragma once

// Model operators and the per-topic pipeline that drives them:
// header -> joiner -> filters -> fetch -> fail-soft -> model -> prediction.
//
// A Pipeline is a single-threaded state machine split into stages so the
// simulator can put virtual time between them (fetch latency, model cost)
// while live mode runs the same stages back to back.

#include "edgestream/join.hpp"
#include "edgestream/metrics.hpp"
#include "edgestream/store.hpp"

#include <deque>
#include <functional>
#include <set>

namespace edgestream {

class ModelError : public Error {
 public:
  using Error::Error;
};

/// Maps the assembled slots (payloads filled, some possibly excluded) to a
/// prediction value. Throws ModelError on input it cannot handle.
using ModelFn = std::function<Bytes(const std::vector<Slot>&)>;

struct ModelOperator {
  std::string id;
  TopicId consumes;
  TopicId output_topic;
  StreamId produces;
  Duration cost{0};
  ModelFn apply;
  bool accepts_partial = false;  // may run with some slots excluded

  void validate() const;
};

/// Synthetic models. Values are 8-byte little-endian integers unless noted.
namespace models {
ModelFn identity();  // concatenation of the included payloads in slot order
ModelFn sum();
ModelFn threshold_label(std::int64_t threshold);  // 1 if sum >= threshold else 0
ModelFn table_lookup(std::map<std::int64_t, std::int64_t> table);  // first included slot
ModelFn majority_vote();  // modal label; ties go to the lowest slot index
}  // namespace models

/// Plain description of a model, as found in scenario files and CLI flags.
struct ModelSpec {
  std::string kind;  // identity | sum | threshold_label | table_lookup | majority_vote
  std::int64_t threshold = 0;
  std::map<std::int64_t, std::int64_t> table;
};
ModelFn make_model_fn(const ModelSpec& spec);
/// majority_vote accepts partial input; the others need every slot.
bool model_accepts_partial(const ModelSpec& spec);

struct Prediction {
  Bytes value;
  std::string source_model;
  Timestamp input_trigger_ts;
  Timestamp emit_ts;
  std::uint64_t tuple_id = 0;
  Header header;  // inline header for the output stream
};

enum class FailSoftPolicy { drop_tuple, last_known_good };
enum class SkewPolicy {
  reject_tuple,   // drop tuples whose skew exceeds max_skew
  exclude_slots,  // leave out slots older than newest - max_skew (partial models only)
};

struct PipelineOptions {
  FailSoftPolicy fail_soft = FailSoftPolicy::drop_tuple;
  SkewPolicy skew_policy = SkewPolicy::reject_tuple;
  double skip_fraction = 0;  // consumer-side downsampling, in [0, 1)
};

struct PipelineStats {
  std::uint64_t headers = 0;
  std::uint64_t tuples = 0;
  std::uint64_t predictions = 0;
  std::uint64_t substitutions = 0;
  std::map<std::string, std::uint64_t> dropped_tuples;  // by reason
};

/// One tuple on its way through the pipeline.
struct Work {
  std::uint64_t id = 0;
  JoinTuple tuple;
  std::vector<std::size_t> fetches;  // slot indices needing a payload fetch
  std::vector<std::pair<std::size_t, wire::FetchStatus>> failed;
};

class Pipeline {
 public:
  Pipeline(std::string node, TopicConfig topic, ModelOperator model, PipelineOptions options, EventSink& log);

  /// A header delivered by the broker. Logs broker_deliver, applies the
  /// receipt freshness check and downsampling, then feeds the joiner.
  void on_header(const Header& header, Timestamp now, std::uint64_t broker_seq, std::uint64_t frame_bytes);
  /// Closes a time-triggered window.
  void on_window(Timestamp end);

  /// Tuples waiting for the model. Plain data-triggered topics queue FIFO;
  /// rate-controlled ones keep only the newest tuple.
  [[nodiscard]] std::size_t queued() const noexcept { return queue_.size(); }
  [[nodiscard]] bool busy() const noexcept { return busy_; }

  /// Takes the next queued tuple through the pre-fetch filters (skew, then
  /// freshness). Dropped tuples are logged and skipped. Marks the pipeline
  /// busy until invoke() or a drop in assemble().
  std::optional<Work> start(Timestamp now);
  void fetch_begin(const Work& w, std::size_t slot, Timestamp now);
  void fetch_end(Work& w, std::size_t slot, const FetchOutcome& outcome, Timestamp now);
  /// Applies fail-soft and the post-fetch freshness re-check. False if the
  /// tuple was dropped.
  bool assemble(Work& w, Timestamp now);
  /// Runs the model between begin and end (end - begin is the model cost in
  /// simulation). Returns nothing if the model failed.
  std::optional<Prediction> invoke(Work& w, Timestamp begin, Timestamp end);

  /// Logs a scope=item skip for every received item that no completed
  /// invocation used.
  void finalize(Timestamp now);

  [[nodiscard]] const TopicConfig& topic() const noexcept { return topic_; }
  [[nodiscard]] const ModelOperator& model() const noexcept { return model_; }
  [[nodiscard]] const std::string& node() const noexcept { return node_; }
  [[nodiscard]] const PipelineStats& stats() const noexcept { return stats_; }
  [[nodiscard]] std::optional<Duration> window() const { return joiner_.window(); }

 private:
  void emit(JoinTuple tuple);
  void drop(const Work& w, std::string_view reason, Timestamp now);
  Timestamp trigger_event_ts(const JoinTuple& t) const;
  void log(Timestamp at, EventKind kind, const std::string& topic, const std::string& stream,
           std::optional<std::uint64_t> event_ts, std::optional<std::uint64_t> seq, std::string extra = {});
  ItemKey key_of(const Header& h) const;
  void note(const ItemKey& k, std::string_view reason);

  std::string node_;
  TopicConfig topic_;
  ModelOperator model_;
  PipelineOptions options_;
  EventSink& log_;
  Joiner joiner_;
  bool fifo_;
  std::deque<Work> queue_;
  bool busy_ = false;
  std::uint64_t next_tuple_ = 0;
  std::uint64_t received_ = 0;
  std::map<StreamId, Bytes> last_good_;

  // Item accounting.
  std::vector<ItemKey> arrivals_;
  std::set<ItemKey> before_first_emit_;
  std::set<ItemKey> seen_, covered_, joined_;
  bool any_emitted_ = false;
  std::map<ItemKey, std::string> reasons_;
  PipelineStats stats_;
};

/// Runs every queued tuple to completion, fetching with client and waiting
/// out the model cost with wait (live: sleep; tests: advance a ManualClock).
std::vector<Prediction> drain(Pipeline& p, FetchClient* client, const Clock& clock,
                              const std::function<void(Duration)>& wait);

}  // namespace edgestream
