#pragma once

// Leader-side pub/sub. Topics hold an append-only, bounded log of headers.
// Exclusive subscribers read the log at their own cursor; shared subscribers
// split it between them with a bounded in-flight window each.

#include "edgestream/core.hpp"
#include "edgestream/wire.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>

namespace edgestream {

enum class BrokerErrc {
  duplicate_topic,
  unknown_topic,
  unknown_stream,
  duplicate_consumer,
  unknown_consumer,
  malformed_config,
  frame_too_large,
};

std::string_view to_string(BrokerErrc e);
wire::ErrorCode to_wire(BrokerErrc e);

class BrokerError : public Error {
 public:
  BrokerError(BrokerErrc code, const std::string& what) : Error(what), code_(code) {}
  [[nodiscard]] BrokerErrc code() const noexcept { return code_; }

 private:
  BrokerErrc code_;
};

struct BrokerOptions {
  std::size_t retention = 65536;  // headers kept per topic
  std::size_t shared_window = 16;  // undelivered + unacked headers per shared consumer
  std::size_t max_frame_bytes = wire::kDefaultMaxPayload + 64 * 1024;
};

struct Delivery {
  std::uint64_t sequence = 0;
  Header header;
};

/// Sequences [first_missing, resume_at) fell out of retention before delivery.
struct Gap {
  std::uint64_t first_missing = 0;
  std::uint64_t resume_at = 0;
};

using BrokerEvent = std::variant<Delivery, Gap>;

struct BrokerStats {
  std::uint64_t frames_in = 0;
  std::uint64_t frame_bytes_in = 0;
  std::uint64_t frames_out = 0;
  std::uint64_t frame_bytes_out = 0;
  // Inline payload bytes carried through the broker; zero under lazy routing.
  std::uint64_t payload_bytes = 0;
};

class Broker {
 public:
  explicit Broker(BrokerOptions options = {});
  ~Broker();
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  void create_topic(const TopicConfig& config);
  [[nodiscard]] bool has_topic(const TopicId& topic) const;
  [[nodiscard]] TopicConfig topic_config(const TopicId& topic) const;

  /// Appends the header and returns its sequence number.
  std::uint64_t publish(const Header& header);

  void subscribe(const TopicId& topic, const std::string& consumer, bool shared);
  /// Shared consumers' undelivered and unacked headers go back to the queue.
  void unsubscribe(const TopicId& topic, const std::string& consumer);

  /// Up to max pending events for the consumer, without blocking.
  std::vector<BrokerEvent> poll(const TopicId& topic, const std::string& consumer, std::size_t max = SIZE_MAX);
  /// Like poll, but blocks up to timeout for at least one event.
  std::vector<BrokerEvent> wait(const TopicId& topic, const std::string& consumer, std::size_t max,
                                Duration timeout);
  /// Cumulative count of deliveries the consumer has finished. Frees window
  /// slots of shared consumers; ignored for exclusive ones.
  void ack(const TopicId& topic, const std::string& consumer, std::uint64_t processed);

  /// Number of events poll() would currently return.
  [[nodiscard]] std::size_t pending(const TopicId& topic, const std::string& consumer) const;
  [[nodiscard]] std::vector<Delivery> log(const TopicId& topic) const;
  [[nodiscard]] BrokerStats stats() const;
  [[nodiscard]] const BrokerOptions& options() const noexcept { return options_; }

  /// Wakes all waiters; later waits return immediately.
  void close();

 private:
  struct Consumer {
    bool shared = false;
    std::uint64_t cursor = 0;          // exclusive: next sequence to read
    std::deque<Delivery> outbox;       // shared: dispatched, not yet polled
    std::deque<Delivery> in_flight;    // shared: polled, not yet acked
    std::uint64_t acked = 0;
    std::uint64_t delivered = 0;
  };

  struct Topic {
    explicit Topic(TopicConfig c) : config(std::move(c)) {}
    TopicConfig config;
    std::deque<Delivery> log;
    std::uint64_t next_sequence = 0;
    std::map<std::string, Consumer> consumers;
    std::vector<std::string> shared_order;
    std::size_t rr = 0;
    std::uint64_t shared_cursor = 0;
    bool shared_started = false;
    std::deque<Delivery> redeliver;
    mutable std::mutex mu;
    std::condition_variable cv;
  };

  std::shared_ptr<Topic> find(const TopicId& topic) const;
  Consumer& consumer_of(Topic& t, const std::string& consumer) const;
  void dispatch_shared(Topic& t);
  std::vector<BrokerEvent> take(Topic& t, Consumer& c, std::size_t max);
  std::size_t pending_locked(const Topic& t, const Consumer& c) const;
  void count_out(const std::vector<BrokerEvent>& events);

  BrokerOptions options_;
  mutable std::shared_mutex topics_mu_;
  std::unordered_map<TopicId, std::shared_ptr<Topic>> topics_;
  std::atomic<bool> closed_{false};
  std::atomic<std::uint64_t> frames_in_{0}, frame_bytes_in_{0}, frames_out_{0}, frame_bytes_out_{0},
      payload_bytes_{0};
};

}  // namespace edgestream
