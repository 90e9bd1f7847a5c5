#include "edgestream/broker.hpp"

#include <algorithm>

namespace edgestream {

std::string_view to_string(BrokerErrc e) {
  switch (e) {
    case BrokerErrc::duplicate_topic: return "duplicate_topic";
    case BrokerErrc::unknown_topic: return "unknown_topic";
    case BrokerErrc::unknown_stream: return "unknown_stream";
    case BrokerErrc::duplicate_consumer: return "duplicate_consumer";
    case BrokerErrc::unknown_consumer: return "unknown_consumer";
    case BrokerErrc::malformed_config: return "malformed_config";
    case BrokerErrc::frame_too_large: return "frame_too_large";
  }
  return "unknown";
}

wire::ErrorCode to_wire(BrokerErrc e) {
  switch (e) {
    case BrokerErrc::duplicate_topic: return wire::ErrorCode::duplicate_topic;
    case BrokerErrc::unknown_topic: return wire::ErrorCode::unknown_topic;
    case BrokerErrc::unknown_stream: return wire::ErrorCode::unknown_stream;
    case BrokerErrc::duplicate_consumer: return wire::ErrorCode::duplicate_consumer;
    case BrokerErrc::malformed_config: return wire::ErrorCode::malformed;
    case BrokerErrc::frame_too_large: return wire::ErrorCode::frame_too_large;
    case BrokerErrc::unknown_consumer: break;
  }
  return wire::ErrorCode::internal;
}

Broker::Broker(BrokerOptions options) : options_(options) {
  if (options_.retention == 0) throw ContractViolation("broker retention must be positive");
  if (options_.shared_window == 0) throw ContractViolation("shared window must be positive");
}

Broker::~Broker() { close(); }

void Broker::create_topic(const TopicConfig& config) {
  try {
    config.validate();
  } catch (const ContractViolation& e) {
    throw BrokerError(BrokerErrc::malformed_config, e.what());
  }
  auto topic = std::make_shared<Topic>(config);
  std::unique_lock lock(topics_mu_);
  if (!topics_.emplace(config.topic, std::move(topic)).second) {
    throw BrokerError(BrokerErrc::duplicate_topic, "topic '" + config.topic.str() + "' already exists");
  }
}

bool Broker::has_topic(const TopicId& topic) const {
  std::shared_lock lock(topics_mu_);
  return topics_.contains(topic);
}

std::shared_ptr<Broker::Topic> Broker::find(const TopicId& topic) const {
  std::shared_lock lock(topics_mu_);
  const auto it = topics_.find(topic);
  if (it == topics_.end()) throw BrokerError(BrokerErrc::unknown_topic, "unknown topic '" + topic.str() + "'");
  return it->second;
}

TopicConfig Broker::topic_config(const TopicId& topic) const {
  auto t = find(topic);
  std::lock_guard lock(t->mu);
  return t->config;
}

Broker::Consumer& Broker::consumer_of(Topic& t, const std::string& consumer) const {
  const auto it = t.consumers.find(consumer);
  if (it == t.consumers.end()) {
    throw BrokerError(BrokerErrc::unknown_consumer,
                      "consumer '" + consumer + "' is not subscribed to '" + t.config.topic.str() + "'");
  }
  return it->second;
}

std::uint64_t Broker::publish(const Header& header) {
  const auto frame = wire::encoded_size(wire::PublishHeader{header});
  if (frame > options_.max_frame_bytes) {
    throw BrokerError(BrokerErrc::frame_too_large, "publish frame of " + std::to_string(frame) + " bytes");
  }
  auto t = find(header.topic);
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(t->mu);
    if (!t->config.slot_of(header.stream)) {
      throw BrokerError(BrokerErrc::unknown_stream,
                        "stream '" + header.stream.str() + "' is not part of topic '" + header.topic.str() + "'");
    }
    seq = t->next_sequence++;
    t->log.push_back(Delivery{seq, header});
    while (t->log.size() > options_.retention) t->log.pop_front();
    dispatch_shared(*t);
  }
  t->cv.notify_all();
  frames_in_ += 1;
  frame_bytes_in_ += frame;
  if (!header.is_lazy()) payload_bytes_ += header.payload_length();
  return seq;
}

void Broker::subscribe(const TopicId& topic, const std::string& consumer, bool shared) {
  auto t = find(topic);
  std::lock_guard lock(t->mu);
  if (t->consumers.contains(consumer)) {
    throw BrokerError(BrokerErrc::duplicate_consumer,
                      "consumer '" + consumer + "' already subscribed to '" + topic.str() + "'");
  }
  Consumer c;
  c.shared = shared;
  c.cursor = t->next_sequence;
  t->consumers.emplace(consumer, std::move(c));
  if (shared) {
    if (!t->shared_started) {
      t->shared_started = true;
      t->shared_cursor = t->next_sequence;
    }
    t->shared_order.push_back(consumer);
    dispatch_shared(*t);
  }
}

void Broker::unsubscribe(const TopicId& topic, const std::string& consumer) {
  auto t = find(topic);
  {
    std::lock_guard lock(t->mu);
    auto& c = consumer_of(*t, consumer);
    if (c.shared) {
      std::vector<Delivery> back(c.in_flight.begin(), c.in_flight.end());
      back.insert(back.end(), c.outbox.begin(), c.outbox.end());
      back.insert(back.end(), t->redeliver.begin(), t->redeliver.end());
      std::sort(back.begin(), back.end(), [](const Delivery& a, const Delivery& b) { return a.sequence < b.sequence; });
      t->redeliver.assign(back.begin(), back.end());
      std::erase(t->shared_order, consumer);
      if (t->rr >= t->shared_order.size()) t->rr = 0;
    }
    t->consumers.erase(consumer);
    dispatch_shared(*t);
  }
  t->cv.notify_all();
}

// Round-robin over shared consumers, skipping any whose window is full.
// Redelivered headers go out before new ones.
void Broker::dispatch_shared(Topic& t) {
  if (t.shared_order.empty()) return;
  const std::uint64_t first_retained = t.log.empty() ? t.next_sequence : t.log.front().sequence;
  for (;;) {
    const Delivery* next = nullptr;
    if (!t.redeliver.empty()) {
      next = &t.redeliver.front();
    } else {
      if (t.shared_cursor < first_retained) t.shared_cursor = first_retained;
      if (t.shared_cursor >= t.next_sequence) return;
      next = &t.log[static_cast<std::size_t>(t.shared_cursor - first_retained)];
    }
    Consumer* target = nullptr;
    for (std::size_t tries = 0; tries < t.shared_order.size(); ++tries) {
      auto& c = t.consumers.at(t.shared_order[t.rr]);
      t.rr = (t.rr + 1) % t.shared_order.size();
      if (c.outbox.size() + c.in_flight.size() < options_.shared_window) {
        target = &c;
        break;
      }
    }
    if (!target) return;
    target->outbox.push_back(*next);
    if (!t.redeliver.empty()) {
      t.redeliver.pop_front();
    } else {
      ++t.shared_cursor;
    }
  }
}

std::size_t Broker::pending_locked(const Topic& t, const Consumer& c) const {
  if (c.shared) return c.outbox.size();
  const std::uint64_t first_retained = t.log.empty() ? t.next_sequence : t.log.front().sequence;
  const std::uint64_t gap = c.cursor < first_retained ? 1 : 0;
  return static_cast<std::size_t>(t.next_sequence - std::max(c.cursor, first_retained) + gap);
}

std::vector<BrokerEvent> Broker::take(Topic& t, Consumer& c, std::size_t max) {
  std::vector<BrokerEvent> out;
  if (c.shared) {
    while (!c.outbox.empty() && out.size() < max) {
      c.in_flight.push_back(c.outbox.front());
      out.emplace_back(std::move(c.outbox.front()));
      c.outbox.pop_front();
    }
  } else {
    const std::uint64_t first_retained = t.log.empty() ? t.next_sequence : t.log.front().sequence;
    if (c.cursor < first_retained && max > 0) {
      out.emplace_back(Gap{c.cursor, first_retained});
      c.cursor = first_retained;
    }
    while (c.cursor < t.next_sequence && out.size() < max) {
      out.emplace_back(t.log[static_cast<std::size_t>(c.cursor - first_retained)]);
      ++c.cursor;
    }
  }
  for (const auto& e : out) {
    if (std::holds_alternative<Delivery>(e)) ++c.delivered;
  }
  return out;
}

void Broker::count_out(const std::vector<BrokerEvent>& events) {
  for (const auto& e : events) {
    if (const auto* d = std::get_if<Delivery>(&e)) {
      frames_out_ += 1;
      frame_bytes_out_ += wire::encoded_size(wire::Deliver{d->header});
      if (!d->header.is_lazy()) payload_bytes_ += d->header.payload_length();
    }
  }
}

std::vector<BrokerEvent> Broker::poll(const TopicId& topic, const std::string& consumer, std::size_t max) {
  auto t = find(topic);
  std::vector<BrokerEvent> out;
  {
    std::lock_guard lock(t->mu);
    out = take(*t, consumer_of(*t, consumer), max);
  }
  count_out(out);
  return out;
}

std::vector<BrokerEvent> Broker::wait(const TopicId& topic, const std::string& consumer, std::size_t max,
                                      Duration timeout) {
  auto t = find(topic);
  std::vector<BrokerEvent> out;
  {
    std::unique_lock lock(t->mu);
    t->cv.wait_for(lock, timeout, [&] {
      if (closed_) return true;
      const auto it = t->consumers.find(consumer);
      return it == t->consumers.end() || pending_locked(*t, it->second) > 0;
    });
    out = take(*t, consumer_of(*t, consumer), max);
  }
  count_out(out);
  return out;
}

void Broker::ack(const TopicId& topic, const std::string& consumer, std::uint64_t processed) {
  auto t = find(topic);
  {
    std::lock_guard lock(t->mu);
    auto& c = consumer_of(*t, consumer);
    if (!c.shared) return;
    if (processed > c.delivered) {
      throw ContractViolation("consumer '" + consumer + "' acked more deliveries than it received");
    }
    while (c.acked < processed) {
      c.in_flight.pop_front();
      ++c.acked;
    }
    dispatch_shared(*t);
  }
  t->cv.notify_all();
}

std::size_t Broker::pending(const TopicId& topic, const std::string& consumer) const {
  auto t = find(topic);
  std::lock_guard lock(t->mu);
  return pending_locked(*t, consumer_of(*t, consumer));
}

std::vector<Delivery> Broker::log(const TopicId& topic) const {
  auto t = find(topic);
  std::lock_guard lock(t->mu);
  return {t->log.begin(), t->log.end()};
}

BrokerStats Broker::stats() const {
  return BrokerStats{frames_in_, frame_bytes_in_, frames_out_, frame_bytes_out_, payload_bytes_};
}

void Broker::close() {
  closed_ = true;
  std::shared_lock lock(topics_mu_);
  for (auto& [_, t] : topics_) {
    std::lock_guard tl(t->mu);
    t->cv.notify_all();
  }
}

}  // namespace edgestream
