#include "edgestream/join.hpp"

#include <algorithm>

namespace edgestream {

DataTriggeredJoiner::DataTriggeredJoiner(TopicConfig config) : config_(std::move(config)) {
  config_.validate();
  state_.resize(config_.streams.size());
}

std::size_t DataTriggeredJoiner::slot_or_throw(const Header& item) const {
  const auto slot = config_.slot_of(item.stream);
  if (!slot) {
    throw JoinError("stream '" + item.stream.str() + "' is not part of topic '" + config_.topic.str() + "'");
  }
  return *slot;
}

bool DataTriggeredJoiner::warm() const noexcept {
  return std::all_of(state_.begin(), state_.end(), [](const StreamState& s) { return s.latest.has_value(); });
}

bool DataTriggeredJoiner::others_present(std::size_t slot) const {
  for (std::size_t i = 0; i < state_.size(); ++i) {
    if (i != slot && !state_[i].latest) return false;
  }
  return true;
}

JoinTuple DataTriggeredJoiner::make_tuple(std::size_t trigger_slot, const Header& trigger, Timestamp t,
                                          Timestamp now) const {
  JoinTuple tuple{config_.topic, {}, trigger.stream, t, now};
  tuple.slots.reserve(state_.size());
  for (std::size_t i = 0; i < state_.size(); ++i) {
    tuple.slots.push_back(Slot{i == trigger_slot ? trigger : *state_[i].latest, std::nullopt});
  }
  return tuple;
}

void DataTriggeredJoiner::update(std::size_t slot, const Header& item, Timestamp t) {
  auto& s = state_[slot];
  if (!s.latest_ts || t > *s.latest_ts) {
    s.latest = item;
    s.latest_ts = t;
  }
}

Arrival DataTriggeredJoiner::on_arrival(const Header& item, Timestamp t, Timestamp now) {
  const auto slot = slot_or_throw(item);
  Arrival out;
  if (others_present(slot)) out.tuple = make_tuple(slot, item, t, now);
  update(slot, item, t);
  return out;
}

HybridJoiner::HybridJoiner(TopicConfig config, Duration min_interval)
    : DataTriggeredJoiner(std::move(config)), min_interval_(min_interval) {
  if (min_interval_ < Duration::zero()) throw ContractViolation("hybrid min_interval must be non-negative");
}

Arrival HybridJoiner::on_arrival(const Header& item, Timestamp t, Timestamp now) {
  const auto slot = slot_or_throw(item);
  Arrival out;
  if (others_present(slot)) {
    if (last_emit_ && now - *last_emit_ < min_interval_) {
      out.suppressed = true;
    } else {
      out.tuple = make_tuple(slot, item, t, now);
      last_emit_ = now;
    }
  }
  update(slot, item, t);
  return out;
}

TimeTriggeredJoiner::TimeTriggeredJoiner(TopicConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto* tt = std::get_if<TimeTriggered>(&config_.join_mode);
  if (!tt) throw ContractViolation("topic '" + config_.topic.str() + "' is not time-triggered");
  window_ = tt->window;
  state_.resize(config_.streams.size());
  changed_.assign(config_.streams.size(), false);
}

Arrival TimeTriggeredJoiner::on_arrival(const Header& item, Timestamp t, Timestamp /*now*/) {
  const auto slot = config_.slot_of(item.stream);
  if (!slot) {
    throw JoinError("stream '" + item.stream.str() + "' is not part of topic '" + config_.topic.str() + "'");
  }
  Arrival out;
  if (config_.time_basis == TimeBasis::processing_time) {
    auto& s = state_[*slot];
    if (!s.latest_ts || t > *s.latest_ts) {
      s.latest = item;
      s.latest_ts = t;
      changed_[*slot] = true;
    }
    return out;
  }
  // Event time: hold until the window containing t closes. Items more than
  // one window older than the last boundary are dropped.
  if (last_close_ && t < *last_close_ - window_) {
    out.late_dropped = true;
    return out;
  }
  buffer_.push_back(Pending{*slot, item, t});
  return out;
}

std::optional<JoinTuple> TimeTriggeredJoiner::close_window(Timestamp window_end) {
  if (last_close_ && window_end <= *last_close_) {
    throw ContractViolation("window boundaries must increase");
  }
  last_close_ = window_end;
  if (config_.time_basis == TimeBasis::event_time) {
    std::vector<Pending> keep;
    for (auto& p : buffer_) {
      if (p.t >= window_end) {
        keep.push_back(std::move(p));
        continue;
      }
      auto& s = state_[p.slot];
      if (!s.latest_ts || p.t > *s.latest_ts) {
        s.latest = std::move(p.item);
        s.latest_ts = p.t;
        changed_[p.slot] = true;
      }
    }
    buffer_ = std::move(keep);
  }

  const bool complete =
      std::all_of(state_.begin(), state_.end(), [](const StreamState& s) { return s.latest.has_value(); });
  if (!complete) return std::nullopt;

  // The trigger is the newest item that changed this window; with nothing
  // new, the tuple repeats the previous one and is flagged as carried forward.
  std::optional<std::size_t> trigger;
  bool any_changed = false;
  for (std::size_t i = 0; i < state_.size(); ++i) {
    if (!changed_[i]) continue;
    any_changed = true;
    if (!trigger || *state_[i].latest_ts > *state_[*trigger].latest_ts) trigger = i;
  }
  if (!trigger) {
    trigger = 0;
    for (std::size_t i = 1; i < state_.size(); ++i) {
      if (*state_[i].latest_ts > *state_[*trigger].latest_ts) trigger = i;
    }
  }
  JoinTuple tuple{config_.topic, {}, state_[*trigger].latest->stream, *state_[*trigger].latest_ts, window_end};
  tuple.carried_forward = !any_changed;
  for (const auto& s : state_) tuple.slots.push_back(Slot{*s.latest, std::nullopt});
  std::fill(changed_.begin(), changed_.end(), false);
  return tuple;
}

SkewVerdict skew_filter(const JoinTuple& tuple, Bound max_skew, TimeBasis basis) {
  if (tuple.slots.empty()) throw ContractViolation("skew_filter needs a populated tuple");
  std::vector<Timestamp> ts;
  ts.reserve(tuple.slots.size());
  for (const auto& s : tuple.slots) {
    ts.push_back(basis == TimeBasis::event_time ? s.header.event_ts : s.header.publish_ts);
  }
  const auto skew = compute_skew(ts);
  return SkewVerdict{!max_skew || skew <= *max_skew, skew};
}

namespace {

std::variant<DataTriggeredJoiner, HybridJoiner, TimeTriggeredJoiner> make_impl(const TopicConfig& config) {
  if (std::holds_alternative<TimeTriggered>(config.join_mode)) return TimeTriggeredJoiner(config);
  if (const auto interval = config.min_emit_interval()) return HybridJoiner(config, *interval);
  return DataTriggeredJoiner(config);
}

}  // namespace

Joiner::Joiner(const TopicConfig& config) : config_(config), impl_(make_impl(config)) {}

Arrival Joiner::on_header(const Header& item, Timestamp now) {
  const auto t = config_.basis_ts(item);
  return std::visit([&](auto& j) { return j.on_arrival(item, t, now); }, impl_);
}

std::optional<JoinTuple> Joiner::on_window(Timestamp window_end) {
  auto* tt = std::get_if<TimeTriggeredJoiner>(&impl_);
  if (!tt) throw ContractViolation("on_window called on a topic that is not time-triggered");
  return tt->close_window(window_end);
}

std::optional<Duration> Joiner::window() const {
  if (const auto* tt = std::get_if<TimeTriggeredJoiner>(&impl_)) return tt->window();
  return std::nullopt;
}

}  // namespace edgestream
