#include "edgestream/replay.hpp"

#include "edgestream/join.hpp"

#include <set>

namespace edgestream {

ReplayMeta replay_meta_from_json(const Json& j) {
  ReplayMeta m;
  try {
    m.window_origin = ms_to_duration(j.value("window_origin_ms", 0.0));
    for (const auto& t : j.at("topics")) m.topics.push_back(topic_from_json(t));
    for (const auto& p : j.at("pipelines")) {
      m.pipelines.push_back({p.at("node").get<std::string>(), TopicId(p.at("topic").get<std::string>())});
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("replay metadata: ") + e.what());
  }
  return m;
}

Json replay_meta_to_json(const ReplayMeta& m) {
  Json j;
  j["window_origin_ms"] = duration_to_ms(m.window_origin);
  j["topics"] = Json::array();
  for (const auto& t : m.topics) j["topics"].push_back(topic_to_json(t));
  j["pipelines"] = Json::array();
  for (const auto& p : m.pipelines) j["pipelines"].push_back({{"node", p.node}, {"topic", p.topic.str()}});
  return j;
}

std::string describe_tuple(const JoinTuple& t) {
  std::string slots;
  for (const auto& s : t.slots) {
    if (!slots.empty()) slots += ',';
    slots += escape_field(s.header.stream.str()) + "@" + std::to_string(s.header.event_ts.micros);
  }
  return "slots=" + slots + ";cf=" + (t.carried_forward ? "1" : "0");
}

namespace {

std::string logged_tuple(const MetricEvent& e) {
  const auto kv = parse_extra(e.extra);
  const auto slots = kv.find("slots");
  const auto cf = kv.find("cf");
  if (slots == kv.end() || cf == kv.end()) {
    throw IncompleteLog(e.node + ": join_emit without slots for topic '" + e.topic + "'");
  }
  // Re-escape so both sides use the logged spelling.
  std::string out;
  std::size_t start = 0;
  const auto& v = slots->second;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto piece = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto at = piece.rfind('@');
    if (!out.empty()) out += ',';
    out += at == std::string::npos ? piece : escape_field(unescape_field(piece.substr(0, at))) + piece.substr(at);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return "slots=" + out + ";cf=" + cf->second;
}

struct Track {
  std::unique_ptr<Joiner> joiner;
  std::optional<Timestamp> next_boundary;
  std::vector<std::string> replayed;
  std::vector<std::string> logged;
};

void close_through(Track& t, Timestamp upto) {
  const auto w = t.joiner->window();
  if (!w || !t.next_boundary) return;
  while (*t.next_boundary <= upto) {
    if (auto tuple = t.joiner->on_window(*t.next_boundary)) t.replayed.push_back(describe_tuple(*tuple));
    *t.next_boundary = *t.next_boundary + *w;
  }
}

}  // namespace

ReplayResult replay(const std::vector<MetricEvent>& events, const ReplayMeta& meta) {
  std::map<TopicId, const TopicConfig*> topics;
  for (const auto& t : meta.topics) topics.emplace(t.topic, &t);
  std::map<std::pair<std::string, std::string>, Track> tracks;
  for (const auto& p : meta.pipelines) {
    const auto it = topics.find(p.topic);
    if (it == topics.end()) throw IncompleteLog("pipeline on '" + p.node + "' consumes undescribed topic '" + p.topic.str() + "'");
    Track t;
    t.joiner = std::make_unique<Joiner>(*it->second);
    if (const auto w = t.joiner->window()) t.next_boundary = Timestamp{} + meta.window_origin + *w;
    tracks.emplace(std::pair{p.node, p.topic.str()}, std::move(t));
  }

  auto track_of = [&](const MetricEvent& e) -> Track& {
    const auto it = tracks.find({e.node, e.topic});
    if (it == tracks.end()) {
      throw IncompleteLog("no pipeline metadata for node '" + e.node + "' topic '" + e.topic + "'");
    }
    return it->second;
  };

  // Events of one node keep their record order under the stable merge.
  for (const auto& e : events) {
    if (e.kind == EventKind::broker_deliver) {
      auto& t = track_of(e);
      const auto kv = parse_extra(e.extra);
      const auto join = kv.find("join");
      if (join == kv.end() || join->second != "1") continue;
      const auto publish = kv.find("publish_ts");
      if (!e.event_ts || publish == kv.end()) throw IncompleteLog(e.node + ": broker_deliver without timestamps");
      Header h{TopicId(e.topic), StreamId(e.stream), Timestamp{*e.event_ts},
               Timestamp{std::stoull(publish->second)}, InlinePayload{}};
      close_through(t, e.at);
      if (auto tuple = t.joiner->on_header(h, e.at).tuple) t.replayed.push_back(describe_tuple(*tuple));
    } else if (e.kind == EventKind::join_emit) {
      auto& t = track_of(e);
      close_through(t, e.at);
      t.logged.push_back(logged_tuple(e));
    }
  }

  ReplayResult r;
  r.pipelines = tracks.size();
  for (auto& [key, t] : tracks) {
    const auto n = std::max(t.replayed.size(), t.logged.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto expected = i < t.logged.size() ? t.logged[i] : "<none>";
      const auto actual = i < t.replayed.size() ? t.replayed[i] : "<none>";
      if (expected != actual) {
        r.divergence = Divergence{key.first, key.second, i, expected, actual};
        return r;
      }
      ++r.tuples;
    }
  }
  return r;
}

ReplayResult replay_dir(const std::filesystem::path& dir) {
  const auto events = read_log_dir(dir);
  if (events.empty()) return {};
  const auto meta_path = dir / "topics.json";
  if (!std::filesystem::exists(meta_path)) throw IncompleteLog(meta_path.string() + ": missing");
  return replay(events, replay_meta_from_json(load_json(meta_path)));
}

}  // namespace edgestream
