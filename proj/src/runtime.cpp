#include "edgestream/runtime.hpp"

#include <algorithm>
#include <cmath>

namespace edgestream {

void ModelOperator::validate() const {
  if (id.empty()) throw ContractViolation("model id must not be empty");
  if (cost < Duration::zero()) throw ContractViolation("model '" + id + "' has a negative cost");
  if (!apply) throw ContractViolation("model '" + id + "' has no apply function");
}

namespace models {

namespace {

std::int64_t value_of(const Slot& s) {
  if (!s.payload) throw ModelError("slot for '" + s.header.stream.str() + "' has no payload");
  const auto v = decode_i64_prefix(*s.payload);
  if (!v) throw ModelError("payload of '" + s.header.stream.str() + "' is not an 8-byte integer");
  return *v;
}

std::int64_t total(const std::vector<Slot>& slots) {
  std::int64_t sum = 0;
  for (const auto& s : slots) {
    if (!s.excluded) sum += value_of(s);
  }
  return sum;
}

}  // namespace

ModelFn identity() {
  return [](const std::vector<Slot>& slots) {
    Bytes out;
    for (const auto& s : slots) {
      if (s.excluded) continue;
      if (!s.payload) throw ModelError("slot for '" + s.header.stream.str() + "' has no payload");
      out.insert(out.end(), s.payload->begin(), s.payload->end());
    }
    return out;
  };
}

ModelFn sum() {
  return [](const std::vector<Slot>& slots) { return encode_i64(total(slots)); };
}

ModelFn threshold_label(std::int64_t threshold) {
  return [threshold](const std::vector<Slot>& slots) { return encode_i64(total(slots) >= threshold ? 1 : 0); };
}

ModelFn table_lookup(std::map<std::int64_t, std::int64_t> table) {
  return [table = std::move(table)](const std::vector<Slot>& slots) {
    for (const auto& s : slots) {
      if (s.excluded) continue;
      const auto v = value_of(s);
      const auto it = table.find(v);
      if (it == table.end()) throw ModelError("no table entry for " + std::to_string(v));
      return encode_i64(it->second);
    }
    throw ModelError("table lookup needs at least one slot");
  };
}

ModelFn majority_vote() {
  return [](const std::vector<Slot>& slots) {
    std::vector<std::pair<std::int64_t, std::size_t>> counts;  // first-seen order
    for (const auto& s : slots) {
      if (s.excluded) continue;
      if (!s.payload || s.payload->size() != 8) {
        throw ModelError("majority vote needs 8-byte labels, got a non-label payload from '" +
                         s.header.stream.str() + "'");
      }
      const auto label = *decode_i64_prefix(*s.payload);
      auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& c) { return c.first == label; });
      if (it == counts.end()) {
        counts.emplace_back(label, 1);
      } else {
        ++it->second;
      }
    }
    if (counts.empty()) throw ModelError("majority vote over no labels");
    // max_element keeps the first maximum, i.e. the label seen at the lowest slot.
    const auto best = std::max_element(counts.begin(), counts.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    return encode_i64(best->first);
  };
}

}  // namespace models

ModelFn make_model_fn(const ModelSpec& spec) {
  if (spec.kind == "identity") return models::identity();
  if (spec.kind == "sum") return models::sum();
  if (spec.kind == "threshold_label") return models::threshold_label(spec.threshold);
  if (spec.kind == "table_lookup") return models::table_lookup(spec.table);
  if (spec.kind == "majority_vote") return models::majority_vote();
  throw ContractViolation("unknown model kind '" + spec.kind + "'");
}

bool model_accepts_partial(const ModelSpec& spec) { return spec.kind == "majority_vote"; }

Pipeline::Pipeline(std::string node, TopicConfig topic, ModelOperator model, PipelineOptions options, EventSink& log)
    : node_(std::move(node)),
      topic_(std::move(topic)),
      model_(std::move(model)),
      options_(options),
      log_(log),
      joiner_(topic_),
      fifo_(std::holds_alternative<DataTriggered>(topic_.join_mode) && !topic_.min_emit_interval()) {
  model_.validate();
  if (model_.consumes != topic_.topic) {
    throw ContractViolation("model '" + model_.id + "' consumes '" + model_.consumes.str() + "', not '" +
                            topic_.topic.str() + "'");
  }
  if (options_.skew_policy == SkewPolicy::exclude_slots && !model_.accepts_partial) {
    throw ContractViolation("slot exclusion needs a model that accepts partial input");
  }
  if (!(options_.skip_fraction >= 0 && options_.skip_fraction < 1)) {
    throw ContractViolation("skip fraction must be in [0, 1)");
  }
}

void Pipeline::log(Timestamp at, EventKind kind, const std::string& topic, const std::string& stream,
                   std::optional<std::uint64_t> event_ts, std::optional<std::uint64_t> seq, std::string extra) {
  log_.record(MetricEvent{at, node_, kind, topic, stream, event_ts, seq, std::move(extra)});
}

ItemKey Pipeline::key_of(const Header& h) const { return ItemKey{h.topic.str(), h.stream.str(), h.event_ts.micros}; }

void Pipeline::note(const ItemKey& k, std::string_view reason) { reasons_[k] = std::string(reason); }

Timestamp Pipeline::trigger_event_ts(const JoinTuple& t) const {
  for (const auto& s : t.slots) {
    if (s.header.stream == t.trigger_stream && topic_.basis_ts(s.header) == t.trigger_ts) return s.header.event_ts;
  }
  return t.slot(t.trigger_stream).header.event_ts;
}

void Pipeline::on_header(const Header& h, Timestamp now, std::uint64_t broker_seq, std::uint64_t frame_bytes) {
  ++stats_.headers;
  const auto key = key_of(h);
  std::string_view skip;
  if (!is_fresh(h, now, topic_.freshness_threshold)) {
    skip = skip_reason::stale;
  } else if (options_.skip_fraction > 0) {
    // Evenly spaced downsampling: after k headers, floor(k * f) were skipped.
    const auto k = static_cast<double>(received_++);
    if (std::floor((k + 1) * options_.skip_fraction) > std::floor(k * options_.skip_fraction)) {
      skip = skip_reason::downsampled;
    }
  }
  const auto payload = h.is_lazy() ? 0 : h.inline_bytes().size();
  log(now, EventKind::broker_deliver, h.topic.str(), h.stream.str(), h.event_ts.micros, broker_seq,
      "frame=" + std::to_string(frame_bytes) + ";payload=" + std::to_string(payload) +
          ";publish_ts=" + std::to_string(h.publish_ts.micros) + ";join=" + (skip.empty() ? "1" : "0"));
  if (seen_.insert(key).second) {
    arrivals_.push_back(key);
    if (!any_emitted_) before_first_emit_.insert(key);
  }
  if (!skip.empty()) {
    note(key, skip);
    return;
  }
  auto arrival = joiner_.on_header(h, now);
  if (arrival.late_dropped) note(key, skip_reason::late);
  if (arrival.tuple) emit(std::move(*arrival.tuple));
}

void Pipeline::on_window(Timestamp end) {
  if (auto t = joiner_.on_window(end)) emit(std::move(*t));
}

void Pipeline::emit(JoinTuple tuple) {
  Work w{next_tuple_++, std::move(tuple), {}, {}};
  ++stats_.tuples;
  any_emitted_ = true;
  std::string slots;
  for (const auto& s : w.tuple.slots) {
    if (!slots.empty()) slots += ',';
    slots += escape_field(s.header.stream.str()) + "@" + std::to_string(s.header.event_ts.micros);
    joined_.insert(key_of(s.header));
  }
  log(w.tuple.emit_ts, EventKind::join_emit, topic_.topic.str(), w.tuple.trigger_stream.str(),
      trigger_event_ts(w.tuple).micros, w.id,
      "slots=" + slots + ";cf=" + (w.tuple.carried_forward ? "1" : "0"));
  if (!fifo_ && !queue_.empty()) {
    const auto reason = std::holds_alternative<TimeTriggered>(topic_.join_mode) ? skip_reason::superseded_by_window
                                                                                : skip_reason::superseded_by_hybrid;
    drop(queue_.front(), reason, w.tuple.emit_ts);
    queue_.pop_front();
  }
  queue_.push_back(std::move(w));
}

void Pipeline::drop(const Work& w, std::string_view reason, Timestamp now) {
  log(now, EventKind::skip, topic_.topic.str(), w.tuple.trigger_stream.str(), trigger_event_ts(w.tuple).micros, w.id,
      "reason=" + std::string(reason) + ";scope=tuple");
  for (const auto& s : w.tuple.slots) {
    if (!s.excluded) note(key_of(s.header), reason);
  }
  ++stats_.dropped_tuples[std::string(reason)];
}

std::optional<Work> Pipeline::start(Timestamp now) {
  while (!queue_.empty()) {
    Work w = std::move(queue_.front());
    queue_.pop_front();
    auto& slots = w.tuple.slots;

    if (topic_.max_skew) {
      if (options_.skew_policy == SkewPolicy::reject_tuple) {
        if (!skew_filter(w.tuple, topic_.max_skew, topic_.time_basis).accepted) {
          drop(w, skip_reason::skew, now);
          continue;
        }
      } else {
        Timestamp newest{0};
        for (const auto& s : slots) newest = std::max(newest, topic_.basis_ts(s.header));
        bool trigger_out = false;
        for (auto& s : slots) {
          if (newest - topic_.basis_ts(s.header) > *topic_.max_skew) {
            s.excluded = true;
            note(key_of(s.header), skip_reason::skew);
            if (s.header.stream == w.tuple.trigger_stream) trigger_out = true;
          }
        }
        if (trigger_out) {
          drop(w, skip_reason::skew, now);
          continue;
        }
      }
    }

    const bool stale = std::any_of(slots.begin(), slots.end(), [&](const Slot& s) {
      return !s.excluded && !is_fresh(s.header, now, topic_.freshness_threshold);
    });
    if (stale) {
      drop(w, skip_reason::stale, now);
      continue;
    }

    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].excluded) continue;
      if (slots[i].header.is_lazy()) {
        w.fetches.push_back(i);
      } else {
        slots[i].payload = slots[i].header.inline_bytes();
      }
    }
    busy_ = true;
    return w;
  }
  return std::nullopt;
}

void Pipeline::fetch_begin(const Work& w, std::size_t slot, Timestamp now) {
  const auto& h = w.tuple.slots.at(slot).header;
  log(now, EventKind::fetch_begin, h.topic.str(), h.stream.str(), h.event_ts.micros, w.id,
      "length=" + std::to_string(h.payload_length()));
}

void Pipeline::fetch_end(Work& w, std::size_t slot, const FetchOutcome& outcome, Timestamp now) {
  auto& s = w.tuple.slots.at(slot);
  log(now, EventKind::fetch_end, s.header.topic.str(), s.header.stream.str(), s.header.event_ts.micros, w.id,
      "bytes=" + std::to_string(outcome.network_bytes) + ";status=" + std::string(wire::to_string(outcome.status)) +
          ";cache=" + (outcome.cache_hit ? "1" : "0"));
  if (outcome.status == wire::FetchStatus::ok) {
    s.payload = outcome.payload;
    last_good_[s.header.stream] = outcome.payload;
  } else {
    w.failed.emplace_back(slot, outcome.status);
  }
}

bool Pipeline::assemble(Work& w, Timestamp now) {
  auto& slots = w.tuple.slots;
  for (const auto& [slot, status] : w.failed) {
    auto& s = slots[slot];
    if (status == wire::FetchStatus::stale_rejected) {
      drop(w, skip_reason::stale, now);
      busy_ = false;
      return false;
    }
    const auto good = last_good_.find(s.header.stream);
    if (options_.fail_soft == FailSoftPolicy::last_known_good && good != last_good_.end()) {
      s.payload = good->second;
      s.substituted = true;
      ++stats_.substitutions;
      note(key_of(s.header), skip_reason::failed_fetch);
      continue;
    }
    drop(w, skip_reason::failed_fetch, now);
    busy_ = false;
    return false;
  }
  // Fetching takes time; an item may have aged past the threshold meanwhile.
  const bool stale = std::any_of(slots.begin(), slots.end(), [&](const Slot& s) {
    return !s.excluded && !is_fresh(s.header, now, topic_.freshness_threshold);
  });
  if (stale) {
    drop(w, skip_reason::stale, now);
    busy_ = false;
    return false;
  }
  return true;
}

std::optional<Prediction> Pipeline::invoke(Work& w, Timestamp begin, Timestamp end) {
  const auto trigger_ts = trigger_event_ts(w.tuple);
  const auto topic = topic_.topic.str();
  const auto trigger = w.tuple.trigger_stream.str();
  log(begin, EventKind::model_begin, topic, trigger, trigger_ts.micros, w.id, "model=" + escape_field(model_.id));
  busy_ = false;
  Bytes value;
  try {
    value = model_.apply(w.tuple.slots);
  } catch (const ModelError&) {
    drop(w, skip_reason::model_error, end);
    return std::nullopt;
  }
  log(end, EventKind::model_end, topic, trigger, trigger_ts.micros, w.id, "model=" + escape_field(model_.id));
  for (const auto& s : w.tuple.slots) {
    if (!s.excluded && !s.substituted) covered_.insert(key_of(s.header));
  }
  ++stats_.predictions;

  Prediction p{value, model_.id, trigger_ts, end, w.id,
               Header{model_.output_topic, model_.produces, trigger_ts, end, InlinePayload{value}}};
  const auto shown = value.size() == 8 ? "value=" + std::to_string(*decode_i64_prefix(value))
                                       : "length=" + std::to_string(value.size());
  log(end, EventKind::predict_publish, model_.output_topic.str(), model_.produces.str(), trigger_ts.micros, w.id,
      "in=" + escape_field(topic) + ";" + shown + ";model=" + escape_field(model_.id));
  return p;
}

void Pipeline::finalize(Timestamp now) {
  const bool time_triggered = std::holds_alternative<TimeTriggered>(topic_.join_mode);
  for (const auto& key : arrivals_) {
    if (covered_.contains(key)) continue;
    std::string reason;
    if (const auto it = reasons_.find(key); it != reasons_.end()) {
      reason = it->second;
    } else if (!joined_.contains(key) && !before_first_emit_.contains(key)) {
      reason = time_triggered         ? skip_reason::superseded_by_window
               : topic_.min_emit_interval() ? skip_reason::superseded_by_hybrid
                                            : skip_reason::unjoined;
    } else {
      reason = skip_reason::unjoined;
    }
    log(now, EventKind::skip, key.topic, key.stream, key.event_ts, std::nullopt,
        "reason=" + reason + ";scope=item");
  }
}

std::vector<Prediction> drain(Pipeline& p, FetchClient* client, const Clock& clock,
                              const std::function<void(Duration)>& wait) {
  std::vector<Prediction> out;
  while (auto w = p.start(clock.now())) {
    for (const auto slot : w->fetches) {
      const auto& h = w->tuple.slots[slot].header;
      p.fetch_begin(*w, slot, clock.now());
      FetchOutcome outcome{wire::FetchStatus::transport_failure, {}, false, 0};
      if (client) {
        outcome = client->fetch(h.locator(), FreshnessGate{clock.now(), p.topic().freshness_threshold, h.event_ts});
      }
      p.fetch_end(*w, slot, outcome, clock.now());
    }
    if (!p.assemble(*w, clock.now())) continue;
    const auto begin = clock.now();
    wait(p.model().cost);
    if (auto pred = p.invoke(*w, begin, clock.now())) out.push_back(std::move(*pred));
  }
  return out;
}

}  // namespace edgestream
