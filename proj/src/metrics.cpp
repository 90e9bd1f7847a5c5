#include "edgestream/metrics.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace edgestream {

namespace {

constexpr std::string_view kKindNames[] = {
    "produce_begin", "produce_end", "broker_deliver",  "fetch_begin", "fetch_end", "join_emit",
    "model_begin",   "model_end",   "predict_publish", "skip",        "shutdown",
};

std::uint64_t parse_u64(std::string_view s, const std::string& file, std::size_t line, const char* what) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw LogParseError(file, line, std::string("bad ") + what + " '" + std::string(s) + "'");
  }
  return v;
}

std::optional<std::uint64_t> extra_u64(const Extra& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) return std::nullopt;
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc{}) return std::nullopt;
  return v;
}

}  // namespace

std::string_view to_string(EventKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kKindNames); ++i) {
    if (kKindNames[i] == s) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

std::string escape_field(std::string_view s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (c == '%' || c == '\t' || c == '\n' || c == '\r' || c == ';' || c == '=' || c == ',' || c == '@' ||
        (c == '-' && s.size() == 1)) {
      out += '%';
      out += hex[u >> 4];
      out += hex[u & 15];
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      unsigned v = 0;
      std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
      out += static_cast<char>(v);
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::string format_event(const MetricEvent& e) {
  auto field = [](const std::string& s) { return s.empty() ? std::string("-") : escape_field(s); };
  auto num = [](const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : std::string("-"); };
  std::string line = std::to_string(e.at.micros);
  line += '\t';
  line += field(e.node);
  line += '\t';
  line += to_string(e.kind);
  line += '\t';
  line += field(e.topic);
  line += '\t';
  line += field(e.stream);
  line += '\t';
  line += num(e.event_ts);
  line += '\t';
  line += num(e.seq);
  line += '\t';
  line += e.extra.empty() ? "-" : e.extra;
  return line;
}

MetricEvent parse_event(std::string_view line, const std::string& file, std::size_t line_no) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      f.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  if (f.size() != 8) {
    throw LogParseError(file, line_no, "expected 8 tab-separated fields, found " + std::to_string(f.size()));
  }
  auto text = [](std::string_view s) { return s == "-" ? std::string() : unescape_field(s); };
  auto num = [&](std::string_view s, const char* what) -> std::optional<std::uint64_t> {
    if (s == "-") return std::nullopt;
    return parse_u64(s, file, line_no, what);
  };
  MetricEvent e;
  e.at = Timestamp{parse_u64(f[0], file, line_no, "timestamp")};
  e.node = text(f[1]);
  const auto kind = parse_event_kind(f[2]);
  if (!kind) throw LogParseError(file, line_no, "unknown event kind '" + std::string(f[2]) + "'");
  e.kind = *kind;
  e.topic = text(f[3]);
  e.stream = text(f[4]);
  e.event_ts = num(f[5], "event_ts");
  e.seq = num(f[6], "seq");
  e.extra = f[7] == "-" ? std::string() : std::string(f[7]);
  return e;
}

Extra parse_extra(std::string_view extra) {
  Extra kv;
  std::size_t start = 0;
  while (start < extra.size()) {
    auto end = extra.find(';', start);
    if (end == std::string_view::npos) end = extra.size();
    const auto item = extra.substr(start, end - start);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      kv[unescape_field(item)] = "";
    } else {
      kv[unescape_field(item.substr(0, eq))] = std::string(item.substr(eq + 1));
    }
    start = end + 1;
  }
  return kv;
}

std::string format_extra(const Extra& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (!out.empty()) out += ';';
    out += escape_field(k);
    out += '=';
    out += v;
  }
  return out;
}

void EventLog::record(MetricEvent e) {
  std::lock_guard lock(mu_);
  by_node_[e.node].push_back(e);
  all_.push_back(std::move(e));
}

std::vector<MetricEvent> EventLog::events() const {
  std::lock_guard lock(mu_);
  return all_;
}

std::vector<std::string> EventLog::nodes() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [n, _] : by_node_) out.push_back(n);
  return out;
}

void EventLog::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::lock_guard lock(mu_);
  for (const auto& [node, events] : by_node_) {
    std::ofstream out(dir / (node + ".log"), std::ios::trunc);
    for (const auto& e : events) out << format_event(e) << '\n';
    if (!out) throw Error("failed to write log for node '" + node + "'");
  }
}

FileEventLog::FileEventLog(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

void FileEventLog::record(MetricEvent e) {
  std::lock_guard lock(mu_);
  auto it = files_.find(e.node);
  if (it == files_.end()) {
    it = files_.emplace(e.node, std::ofstream(dir_ / (e.node + ".log"), std::ios::app)).first;
  }
  it->second << format_event(e) << '\n';
  it->second.flush();
}

void FileEventLog::flush() {
  std::lock_guard lock(mu_);
  for (auto& [_, f] : files_) f.flush();
}

std::vector<MetricEvent> read_log_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("log directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".log") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricEvent> all;
  for (const auto& path : files) {
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      all.push_back(parse_event(line, path.filename().string(), n));
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const MetricEvent& a, const MetricEvent& b) { return a.at < b.at; });
  return all;
}

Duration nearest_rank(const std::vector<Duration>& sorted, double p) {
  if (sorted.empty()) throw ContractViolation("percentile of an empty sample");
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

Distribution distribution(std::vector<Duration> sample) {
  Distribution d;
  d.count = sample.size();
  if (sample.empty()) return d;
  std::sort(sample.begin(), sample.end());
  d.min = sample.front();
  d.max = sample.back();
  long double sum = 0;
  for (const auto& s : sample) sum += static_cast<long double>(s.count());
  d.mean = Duration(static_cast<std::int64_t>(std::llround(sum / static_cast<long double>(sample.size()))));
  d.median = nearest_rank(sample, 50);
  d.p95 = nearest_rank(sample, 95);
  d.p99 = nearest_rank(sample, 99);
  return d;
}

namespace {

struct TupleRef {
  std::string node;
  std::string topic;
  std::uint64_t seq = 0;
  auto operator<=>(const TupleRef&) const = default;
};

struct TupleInfo {
  Timestamp emitted;
  std::vector<ItemKey> slots;
  ItemKey trigger;
  bool skew_rejected = false;
  std::optional<Timestamp> model_begin;
  std::optional<Timestamp> model_end;
  std::optional<ItemKey> output;
};

std::vector<ItemKey> parse_slots(const std::string& topic, const std::string& text) {
  std::vector<ItemKey> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const auto item = std::string_view(text).substr(start, end - start);
    const auto at = item.rfind('@');
    if (at != std::string_view::npos) {
      std::uint64_t ts = 0;
      std::from_chars(item.data() + at + 1, item.data() + item.size(), ts);
      out.push_back(ItemKey{topic, unescape_field(item.substr(0, at)), ts});
    }
    start = end + 1;
  }
  return out;
}

struct Index {
  std::map<ItemKey, Timestamp> produce_begin, produce_end, first_deliver;
  std::map<TupleRef, TupleInfo> tuples;
  std::map<ItemKey, std::vector<TupleRef>> tuples_of_item;  // in emission order
  // First delivery that entered a joiner: (node, log position).
  std::map<ItemKey, std::pair<std::string, std::size_t>> joined_delivery;
  // join_emit positions and times per (node, topic), in log order.
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::size_t, Timestamp>>> emits;
  std::map<ItemKey, std::string> item_skip;
  std::set<std::string> consumed_topics;
  std::uint64_t broker_frame_bytes = 0, broker_payload_bytes = 0, p2p = 0, predictions = 0;
  std::optional<Timestamp> first_produce, last_model_end;
};

Index build_index(const std::vector<MetricEvent>& log) {
  Index ix;
  for (std::size_t pos = 0; pos < log.size(); ++pos) {
    const auto& e = log[pos];
    const ItemKey key{e.topic, e.stream, e.event_ts.value_or(0)};
    switch (e.kind) {
      case EventKind::produce_begin:
        ix.produce_begin.try_emplace(key, e.at);
        if (!ix.first_produce || e.at < *ix.first_produce) ix.first_produce = e.at;
        break;
      case EventKind::produce_end:
        ix.produce_end.try_emplace(key, e.at);
        break;
      case EventKind::broker_deliver: {
        ix.first_deliver.try_emplace(key, e.at);
        const auto kv = parse_extra(e.extra);
        if (const auto j = kv.find("join"); j == kv.end() || j->second == "1") {
          ix.joined_delivery.try_emplace(key, e.node, pos);
        }
        ix.broker_frame_bytes += extra_u64(kv, "frame").value_or(0);
        ix.broker_payload_bytes += extra_u64(kv, "payload").value_or(0);
        break;
      }
      case EventKind::fetch_end: {
        const auto kv = parse_extra(e.extra);
        if (kv.count("cache") && kv.at("cache") == "1") break;
        ix.p2p += extra_u64(kv, "bytes").value_or(0);
        break;
      }
      case EventKind::join_emit: {
        const TupleRef ref{e.node, e.topic, e.seq.value_or(0)};
        auto& t = ix.tuples[ref];
        t.emitted = e.at;
        t.trigger = key;
        const auto kv = parse_extra(e.extra);
        if (const auto it = kv.find("slots"); it != kv.end()) t.slots = parse_slots(e.topic, it->second);
        for (const auto& s : t.slots) ix.tuples_of_item[s].push_back(ref);
        ix.consumed_topics.insert(e.topic);
        ix.emits[{e.node, e.topic}].emplace_back(pos, e.at);
        break;
      }
      case EventKind::model_begin:
        ix.tuples[TupleRef{e.node, e.topic, e.seq.value_or(0)}].model_begin = e.at;
        break;
      case EventKind::model_end:
        ix.tuples[TupleRef{e.node, e.topic, e.seq.value_or(0)}].model_end = e.at;
        if (!ix.last_model_end || e.at > *ix.last_model_end) ix.last_model_end = e.at;
        break;
      case EventKind::predict_publish: {
        const auto kv = parse_extra(e.extra);
        const auto in = kv.count("in") ? unescape_field(kv.at("in")) : std::string();
        ix.tuples[TupleRef{e.node, in, e.seq.value_or(0)}].output = key;
        ++ix.predictions;
        break;
      }
      case EventKind::skip: {
        const auto kv = parse_extra(e.extra);
        const auto reason = kv.count("reason") ? kv.at("reason") : std::string("unknown");
        const auto scope = kv.count("scope") ? kv.at("scope") : std::string("item");
        if (scope == "tuple") {
          if (reason == skip_reason::skew) ix.tuples[TupleRef{e.node, e.topic, e.seq.value_or(0)}].skew_rejected = true;
        } else {
          ix.item_skip[key] = reason;
        }
        break;
      }
      case EventKind::fetch_begin:
      case EventKind::shutdown:
        break;
    }
  }
  return ix;
}

struct Resolution {
  ItemStatus status = ItemStatus::unaccounted;
  std::optional<Timestamp> done;  // terminal model_end, when predicted
  std::optional<Duration> processing;  // of the first-level tuple that led to done
  std::string reason;
};

class Resolver {
 public:
  explicit Resolver(const Index& ix) : ix_(ix) {}

  Resolution resolve(const ItemKey& item) {
    if (const auto it = memo_.find(item); it != memo_.end()) return it->second;
    if (!visiting_.insert(item).second) return {};
    Resolution r;
    std::string downstream_reason;
    if (const auto it = ix_.tuples_of_item.find(item); it != ix_.tuples_of_item.end()) {
      for (const auto& ref : it->second) {
        const auto& t = ix_.tuples.at(ref);
        if (!t.model_end) continue;
        std::optional<Timestamp> done;
        if (!t.output || !ix_.consumed_topics.contains(t.output->topic)) {
          done = t.model_end;
        } else {
          const auto sub = resolve(*t.output);
          if (sub.status == ItemStatus::predicted) {
            done = sub.done;
          } else if (downstream_reason.empty()) {
            downstream_reason = sub.reason;
          }
        }
        if (done && (!r.done || *done < *r.done)) {
          r.status = ItemStatus::predicted;
          r.done = done;
          if (t.model_begin) r.processing = *t.model_end - *t.model_begin;
        }
      }
    }
    if (r.status != ItemStatus::predicted) {
      if (const auto s = ix_.item_skip.find(item); s != ix_.item_skip.end()) {
        r.status = ItemStatus::skipped;
        r.reason = s->second;
      } else if (!downstream_reason.empty()) {
        r.status = ItemStatus::skipped;
        r.reason = downstream_reason;
      }
    }
    visiting_.erase(item);
    memo_[item] = r;
    return r;
  }

 private:
  const Index& ix_;
  std::map<ItemKey, Resolution> memo_;
  std::set<ItemKey> visiting_;
};

}  // namespace

MetricReport report(const std::vector<MetricEvent>& log) {
  const auto ix = build_index(log);
  MetricReport r;
  r.broker_frame_bytes = ix.broker_frame_bytes;
  r.broker_payload_bytes = ix.broker_payload_bytes;
  r.p2p_payload_bytes = ix.p2p;
  r.predictions = ix.predictions;

  Resolver resolver(ix);
  std::vector<Duration> ps, cr, tc, react, e2e, proc, queue;
  std::optional<std::pair<Timestamp, Duration>> last_predicted;
  for (const auto& [key, begin] : ix.produce_begin) {
    ItemMetrics m;
    m.key = key;
    m.produced = begin;
    const auto pe = ix.produce_end.find(key);
    const auto bd = ix.first_deliver.find(key);
    if (pe != ix.produce_end.end()) m.producer_sending = pe->second - begin;
    if (pe != ix.produce_end.end() && bd != ix.first_deliver.end()) {
      m.consumer_receiving = bd->second - pe->second;
      m.total_communication = *m.producer_sending + *m.consumer_receiving;
    }
    // Reaction: the first tuple the consumer emits once the item is in its joiner.
    if (const auto d = ix.joined_delivery.find(key); d != ix.joined_delivery.end()) {
      if (const auto em = ix.emits.find({d->second.first, key.topic}); em != ix.emits.end()) {
        const auto next = std::upper_bound(em->second.begin(), em->second.end(), d->second.second,
                                           [](std::size_t pos, const auto& x) { return pos < x.first; });
        if (next != em->second.end()) m.reaction = next->second - begin;
      }
    }
    const auto res = resolver.resolve(key);
    m.status = res.status;
    m.skip_reason = res.reason;
    if (res.status == ItemStatus::predicted) {
      m.end_to_end = *res.done - begin;
      m.processing = res.processing;
      if (!last_predicted || begin >= last_predicted->first) last_predicted = {begin, *m.end_to_end};
      ++r.predicted;
    } else if (res.status == ItemStatus::skipped) {
      ++r.skipped_by_reason[res.reason];
    } else {
      ++r.unaccounted;
    }
    if (m.producer_sending) ps.push_back(*m.producer_sending);
    if (m.consumer_receiving) cr.push_back(*m.consumer_receiving);
    if (m.total_communication) tc.push_back(*m.total_communication);
    if (m.reaction) react.push_back(*m.reaction);
    if (m.end_to_end) e2e.push_back(*m.end_to_end);
    r.per_item.push_back(std::move(m));
  }
  r.items = r.per_item.size();

  for (const auto& [ref, t] : ix.tuples) {
    if (t.model_begin && t.model_end) proc.push_back(*t.model_end - *t.model_begin);
    if (!t.model_end || !t.output || !ix.consumed_topics.contains(t.output->topic)) continue;
    // Queueing: local prediction done until its first combining join.
    const auto it = ix.tuples_of_item.find(*t.output);
    if (it == ix.tuples_of_item.end()) continue;
    for (const auto& jref : it->second) {
      const auto& j = ix.tuples.at(jref);
      if (j.skew_rejected) continue;
      const auto q = j.emitted - *t.model_end;
      r.queueing.try_emplace(*t.output, q);
      break;
    }
  }
  r.processing = proc;
  for (const auto& [_, q] : r.queueing) queue.push_back(q);

  r.distributions["producer_sending_latency"] = distribution(ps);
  r.distributions["consumer_receiving_latency"] = distribution(cr);
  r.distributions["total_communication_latency"] = distribution(tc);
  r.distributions["reaction_time"] = distribution(react);
  r.distributions["processing_latency"] = distribution(proc);
  r.distributions["end_to_end_latency"] = distribution(e2e);
  r.distributions["queueing_time"] = distribution(queue);
  if (ix.first_produce && ix.last_model_end) r.total_working_duration = *ix.last_model_end - *ix.first_produce;
  if (last_predicted) r.backlog = last_predicted->second;
  return r;
}

void write_csv(const MetricReport& r, std::ostream& out) {
  out << "metric,statistic,value,unit\n";
  for (const auto& [name, d] : r.distributions) {
    out << name << ",count," << d.count << ",samples\n";
    if (d.count == 0) continue;
    out << name << ",min," << d.min.count() << ",us\n";
    out << name << ",max," << d.max.count() << ",us\n";
    out << name << ",mean," << d.mean.count() << ",us\n";
    out << name << ",median," << d.median.count() << ",us\n";
    out << name << ",p95," << d.p95.count() << ",us\n";
    out << name << ",p99," << d.p99.count() << ",us\n";
  }
  if (r.total_working_duration) out << "total_working_duration,value," << r.total_working_duration->count() << ",us\n";
  if (r.backlog) out << "backlog,value," << r.backlog->count() << ",us\n";
  out << "items,total," << r.items << ",items\n";
  out << "items,predicted," << r.predicted << ",items\n";
  out << "items,unaccounted," << r.unaccounted << ",items\n";
  for (const auto& [reason, n] : r.skipped_by_reason) out << "items_skipped," << reason << "," << n << ",items\n";
  out << "predictions,total," << r.predictions << ",predictions\n";
  out << "broker_frame_bytes,total," << r.broker_frame_bytes << ",bytes\n";
  out << "broker_payload_bytes,total," << r.broker_payload_bytes << ",bytes\n";
  out << "p2p_payload_bytes,total," << r.p2p_payload_bytes << ",bytes\n";
}

Duration reaction_time(const std::vector<MetricEvent>& log, const std::string& node, const std::string& topic,
                       std::uint64_t tuple_seq) {
  const MetricEvent* join = nullptr;
  for (const auto& e : log) {
    if (e.kind == EventKind::join_emit && e.node == node && e.topic == topic && e.seq == tuple_seq) {
      join = &e;
      break;
    }
  }
  if (!join) throw IncompleteLog("no join_emit for tuple " + std::to_string(tuple_seq) + " of '" + topic + "'");
  for (const auto& e : log) {
    if (e.kind == EventKind::produce_begin && e.topic == topic && e.stream == join->stream &&
        e.event_ts == join->event_ts) {
      return join->at - e.at;
    }
  }
  throw IncompleteLog("no produce_begin for trigger item " + join->stream + "@" +
                      std::to_string(join->event_ts.value_or(0)));
}

Duration backlog(const std::vector<MetricEvent>& log) {
  if (log.empty()) throw IncompleteLog("empty log");
  const auto r = report(log);
  if (!r.backlog) throw IncompleteLog("no predicted item in log");
  return *r.backlog;
}

void LabelTimeline::add(Timestamp from, std::int64_t label) {
  if (!steps_.empty() && from < steps_.back().first) throw ContractViolation("label steps must be added in time order");
  if (!steps_.empty() && from == steps_.back().first) {
    steps_.back().second = label;
    return;
  }
  steps_.emplace_back(from, label);
}

std::optional<std::int64_t> LabelTimeline::at(Timestamp t) const {
  const auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                                   [](Timestamp v, const auto& step) { return v < step.first; });
  if (it == steps_.begin()) return std::nullopt;
  return std::prev(it)->second;
}

AccuracyResult real_time_accuracy(const std::vector<std::pair<Timestamp, std::int64_t>>& predictions,
                                  const LabelTimeline& labels) {
  AccuracyResult r;
  std::map<std::int64_t, std::array<std::size_t, 3>> per_class;  // tp, fp, fn
  std::size_t correct = 0;
  for (const auto& [at, predicted] : predictions) {
    const auto truth = labels.at(at);
    if (!truth) {
      ++r.excluded;
      continue;
    }
    ++r.evaluated;
    if (predicted == *truth) {
      ++correct;
      ++per_class[predicted][0];
    } else {
      ++per_class[predicted][1];
      ++per_class[*truth][2];
    }
  }
  if (r.evaluated == 0) throw ContractViolation("real-time accuracy is undefined without evaluable predictions");
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.evaluated);
  double f1_sum = 0;
  for (const auto& [_, c] : per_class) {
    const auto denom = 2 * c[0] + c[1] + c[2];
    f1_sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(c[0]) / static_cast<double>(denom);
  }
  r.macro_f1 = f1_sum / static_cast<double>(per_class.size());
  return r;
}

}  // namespace edgestream
