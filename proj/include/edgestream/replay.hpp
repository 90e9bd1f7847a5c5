#pragma once

// Re-runs each pipeline's joiner over its logged arrival order and checks the
// emitted tuples against the logged join_emit sequence.

#include "edgestream/config.hpp"
#include "edgestream/metrics.hpp"

namespace edgestream {

struct ReplayPipeline {
  std::string node;
  TopicId topic;
};

/// Contents of topics.json next to a run's logs.
struct ReplayMeta {
  Duration window_origin{0};
  std::vector<TopicConfig> topics;
  std::vector<ReplayPipeline> pipelines;
};

ReplayMeta replay_meta_from_json(const Json& j);
Json replay_meta_to_json(const ReplayMeta& m);

struct Divergence {
  std::string node;
  std::string topic;
  std::uint64_t seq = 0;  // index of the first differing tuple
  std::string expected;   // logged, or "<none>"
  std::string actual;     // replayed, or "<none>"
};

struct ReplayResult {
  std::size_t pipelines = 0;
  std::size_t tuples = 0;  // matched tuples
  std::optional<Divergence> divergence;
};

/// Renders a tuple the way join_emit records it: "slots=...;cf=0|1".
std::string describe_tuple(const JoinTuple& t);

/// Throws IncompleteLog when an event names a pipeline or topic the metadata
/// does not describe, or a logged join_emit lacks its slots.
ReplayResult replay(const std::vector<MetricEvent>& events, const ReplayMeta& meta);
/// Reads <dir>/*.log and <dir>/topics.json. An empty log replays to nothing.
ReplayResult replay_dir(const std::filesystem::path& dir);

}  // namespace edgestream
