#pragma once

// Live-mode TCP plumbing: framed connections, the broker server and client,
// and the peer-to-peer fetch server and transport. Conversations follow
// docs/wire.md.

#include "edgestream/broker.hpp"
#include "edgestream/store.hpp"
#include "edgestream/wire.hpp"

#include <atomic>
#include <list>
#include <thread>

namespace edgestream::net {

class NetError : public Error {
 public:
  using Error::Error;
};

/// One framed TCP connection. send() is safe from several threads; receive()
/// must be called from one thread at a time.
class Connection {
 public:
  explicit Connection(int fd);
  ~Connection();
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  void send(const wire::WireMessage& m);
  /// Next message; nullopt on timeout. Throws NetError when the peer closes.
  std::optional<wire::WireMessage> receive(std::optional<Duration> timeout = std::nullopt);
  /// Unblocks a pending receive in another thread.
  void shutdown() noexcept;

 private:
  int fd_;
  std::mutex send_mu_;
  wire::FrameReader reader_;
};

std::unique_ptr<Connection> connect(const NodeAddress& address, Duration timeout = std::chrono::seconds(5));

class Listener {
 public:
  /// Port 0 picks a free port; address() reports it.
  explicit Listener(const NodeAddress& address);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  [[nodiscard]] const NodeAddress& address() const noexcept { return address_; }
  /// Next connection, or nullptr once closed.
  std::unique_ptr<Connection> accept();
  void close() noexcept;

 private:
  int fd_;
  NodeAddress address_;
  std::atomic<bool> closed_{false};
};

/// Accepts connections and runs one thread per connection.
class Server {
 public:
  using Handler = std::function<void(Connection&)>;
  Server(const NodeAddress& address, Handler handler);
  ~Server();
  [[nodiscard]] const NodeAddress& address() const noexcept { return listener_.address(); }
  void stop();

 private:
  struct Session {
    std::unique_ptr<Connection> conn;
    std::thread thread;
  };
  Listener listener_;
  Handler handler_;
  std::mutex mu_;
  std::list<Session> sessions_;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
};

class BrokerServer {
 public:
  BrokerServer(Broker& broker, const NodeAddress& address);
  [[nodiscard]] const NodeAddress& address() const noexcept { return server_.address(); }
  void stop() { server_.stop(); }

 private:
  void serve(Connection& c);
  void pump(Connection& c, const TopicId& topic, const std::string& consumer, const std::atomic<bool>& done);

  Broker& broker_;
  Server server_;
};

class FetchServer {
 public:
  FetchServer(PayloadStore& store, const NodeAddress& address, const Clock& clock);
  [[nodiscard]] const NodeAddress& address() const noexcept { return server_.address(); }
  void stop() { server_.stop(); }

 private:
  PayloadStore& store_;
  const Clock& clock_;
  Server server_;
};

/// Fetches over TCP, keeping one connection per peer.
class TcpTransport final : public FetchTransport {
 public:
  explicit TcpTransport(Duration timeout = std::chrono::seconds(5)) : timeout_(timeout) {}
  wire::FetchResponse exchange(const wire::FetchRequest& request) override;

 private:
  Duration timeout_;
  std::mutex mu_;
  std::map<NodeAddress, std::unique_ptr<Connection>> peers_;
};

/// Publisher side of the broker conversation.
class BrokerClient {
 public:
  explicit BrokerClient(const NodeAddress& broker);
  /// Returns false if the topic already exists.
  bool create_topic(const TopicConfig& config);
  std::uint64_t publish(const Header& header);

 private:
  wire::WireMessage call(const wire::WireMessage& request);
  std::unique_ptr<Connection> conn_;
};

/// Consumer side: subscribe, receive deliveries, acknowledge.
class Subscription {
 public:
  Subscription(const NodeAddress& broker, const TopicId& topic, const std::string& consumer, bool shared);
  [[nodiscard]] const TopicConfig& config() const noexcept { return config_; }
  /// A delivered header or a gap; nullopt on timeout.
  std::optional<std::variant<Header, Gap>> next(Duration timeout);
  void ack(std::uint64_t processed);
  void close() noexcept { conn_->shutdown(); }

 private:
  std::unique_ptr<Connection> conn_;
  TopicConfig config_;
};

}  // namespace edgestream::net
