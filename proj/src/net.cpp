#include "edgestream/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace edgestream::net {

namespace {

std::string errno_text() { return std::strerror(errno); }

addrinfo* resolve(const NodeAddress& a, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* out = nullptr;
  const auto port = std::to_string(a.port);
  if (const int rc = ::getaddrinfo(a.host.empty() ? nullptr : a.host.c_str(), port.c_str(), &hints, &out); rc != 0) {
    throw NetError("cannot resolve " + a.to_string() + ": " + ::gai_strerror(rc));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Connection::Connection(int fd) : fd_(fd) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Connection::~Connection() { ::close(fd_); }

void Connection::send(const wire::WireMessage& m) {
  const auto frame = wire::encode(m);
  std::lock_guard lock(send_mu_);
  std::size_t sent = 0;
  while (sent < frame.size()) {
    const auto n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw NetError("send failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<wire::WireMessage> Connection::receive(std::optional<Duration> timeout) {
  const auto deadline = timeout ? std::chrono::steady_clock::now() + *timeout : std::chrono::steady_clock::time_point::max();
  std::uint8_t buf[64 * 1024];
  while (true) {
    if (auto m = reader_.next()) return m;
    int wait_ms = -1;
    if (timeout) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      wait_ms = static_cast<int>(left.count());
    }
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw NetError("poll failed: " + errno_text());
    }
    if (rc == 0) return std::nullopt;
    const auto n = ::recv(fd_, buf, sizeof buf, 0);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw NetError("receive failed: " + errno_text());
    }
    if (n == 0) throw NetError("connection closed by peer");
    reader_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
  }
}

void Connection::shutdown() noexcept { ::shutdown(fd_, SHUT_RDWR); }

std::unique_ptr<Connection> connect(const NodeAddress& address, Duration timeout) {
  auto* info = resolve(address, false);
  const int fd = ::socket(info->ai_family, info->ai_socktype, info->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(info);
    throw NetError("socket: " + errno_text());
  }
  timeval tv{static_cast<time_t>(timeout.count() / 1'000'000), static_cast<suseconds_t>(timeout.count() % 1'000'000)};
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  const int rc = ::connect(fd, info->ai_addr, info->ai_addrlen);
  ::freeaddrinfo(info);
  if (rc != 0) {
    const auto why = errno_text();
    ::close(fd);
    throw NetError("cannot connect to " + address.to_string() + ": " + why);
  }
  return std::make_unique<Connection>(fd);
}

// ---------------------------------------------------------------------------

Listener::Listener(const NodeAddress& address) : address_(address) {
  auto* info = resolve(address, true);
  fd_ = ::socket(info->ai_family, info->ai_socktype, info->ai_protocol);
  if (fd_ < 0) {
    ::freeaddrinfo(info);
    throw NetError("socket: " + errno_text());
  }
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const int rc = ::bind(fd_, info->ai_addr, info->ai_addrlen);
  ::freeaddrinfo(info);
  if (rc != 0 || ::listen(fd_, 64) != 0) {
    const auto why = errno_text();
    ::close(fd_);
    throw NetError("cannot listen on " + address.to_string() + ": " + why);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  address_.port = ntohs(bound.sin_port);
}

Listener::~Listener() {
  close();
  ::close(fd_);
}

std::unique_ptr<Connection> Listener::accept() {
  while (!closed_) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<Connection>(fd);
    if (errno != EINTR && errno != ECONNABORTED) break;
  }
  return nullptr;
}

void Listener::close() noexcept {
  if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
}

// ---------------------------------------------------------------------------

Server::Server(const NodeAddress& address, Handler handler) : listener_(address), handler_(std::move(handler)) {
  acceptor_ = std::thread([this] {
    while (auto conn = listener_.accept()) {
      std::lock_guard lock(mu_);
      if (stopping_) break;
      auto& s = sessions_.emplace_back(Session{std::move(conn), {}});
      s.thread = std::thread([this, c = s.conn.get()] {
        try {
          handler_(*c);
        } catch (const std::exception&) {
          // A broken session only affects its own peer.
        }
        c->shutdown();
      });
    }
  });
}

Server::~Server() { stop(); }

void Server::stop() {
  if (stopping_.exchange(true)) return;
  listener_.close();
  if (acceptor_.joinable()) acceptor_.join();
  std::lock_guard lock(mu_);
  for (auto& s : sessions_) s.conn->shutdown();
  for (auto& s : sessions_) {
    if (s.thread.joinable()) s.thread.join();
  }
  sessions_.clear();
}

// ---------------------------------------------------------------------------

BrokerServer::BrokerServer(Broker& broker, const NodeAddress& address)
    : broker_(broker), server_(address, [this](Connection& c) { serve(c); }) {}

void BrokerServer::pump(Connection& c, const TopicId& topic, const std::string& consumer,
                        const std::atomic<bool>& done) {
  try {
    while (!done) {
      for (auto& ev : broker_.wait(topic, consumer, 64, std::chrono::milliseconds(100))) {
        if (auto* d = std::get_if<Delivery>(&ev)) {
          c.send(wire::Deliver{std::move(d->header)});
        } else {
          const auto& g = std::get<Gap>(ev);
          c.send(wire::ErrorReply{wire::ErrorCode::gap,
                                  std::to_string(g.first_missing) + ":" + std::to_string(g.resume_at)});
        }
      }
    }
  } catch (const NetError&) {
    c.shutdown();
  } catch (const BrokerError&) {
    c.shutdown();
  }
}

void BrokerServer::serve(Connection& c) {
  std::optional<std::pair<TopicId, std::string>> sub;
  std::atomic<bool> done{false};
  std::thread pumper;
  auto reply_error = [&](const BrokerError& e) { c.send(wire::ErrorReply{to_wire(e.code()), e.what()}); };
  try {
    while (true) {
      auto m = c.receive();
      if (!m) continue;
      if (auto* ct = std::get_if<wire::CreateTopic>(&*m)) {
        try {
          broker_.create_topic(ct->config);
          c.send(wire::Ack{0});
        } catch (const BrokerError& e) {
          reply_error(e);
        }
      } else if (auto* ph = std::get_if<wire::PublishHeader>(&*m)) {
        try {
          c.send(wire::Ack{broker_.publish(ph->header)});
        } catch (const BrokerError& e) {
          reply_error(e);
        }
      } else if (auto* s = std::get_if<wire::Subscribe>(&*m)) {
        if (sub) {
          c.send(wire::ErrorReply{wire::ErrorCode::malformed, "connection already subscribed"});
          continue;
        }
        try {
          broker_.subscribe(s->topic, s->consumer_id, s->shared);
          sub = {s->topic, s->consumer_id};
          c.send(wire::CreateTopic{broker_.topic_config(s->topic)});
          pumper = std::thread([&, topic = s->topic, consumer = s->consumer_id] { pump(c, topic, consumer, done); });
        } catch (const BrokerError& e) {
          reply_error(e);
        }
      } else if (auto* a = std::get_if<wire::Ack>(&*m)) {
        if (!sub) {
          c.send(wire::ErrorReply{wire::ErrorCode::malformed, "ack without subscription"});
          continue;
        }
        broker_.ack(sub->first, sub->second, a->sequence);
      } else {
        c.send(wire::ErrorReply{wire::ErrorCode::malformed, "unexpected message for the broker"});
      }
    }
  } catch (const wire::DecodeError& e) {
    try {
      c.send(wire::ErrorReply{wire::ErrorCode::malformed, e.what()});
    } catch (const NetError&) {
    }
  } catch (const NetError&) {
  }
  done = true;
  if (pumper.joinable()) pumper.join();
  if (sub) broker_.unsubscribe(sub->first, sub->second);
}

// ---------------------------------------------------------------------------

FetchServer::FetchServer(PayloadStore& store, const NodeAddress& address, const Clock& clock)
    : store_(store), clock_(clock), server_(address, [this](Connection& c) {
        while (true) {
          auto m = c.receive();
          if (!m) continue;
          if (const auto* req = std::get_if<wire::FetchRequest>(&*m)) {
            c.send(store_.serve(*req, clock_.now()));
          } else {
            c.send(wire::ErrorReply{wire::ErrorCode::malformed, "fetch servers only answer FetchRequest"});
          }
        }
      }) {}

wire::FetchResponse TcpTransport::exchange(const wire::FetchRequest& request) {
  std::lock_guard lock(mu_);
  const auto& peer = request.locator.node;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      auto& conn = peers_[peer];
      if (!conn) conn = connect(peer, timeout_);
      conn->send(request);
      auto reply = conn->receive(timeout_);
      if (!reply) throw NetError("timed out waiting for " + peer.to_string());
      if (auto* r = std::get_if<wire::FetchResponse>(&*reply)) return std::move(*r);
      peers_.erase(peer);
      throw TransportError("unexpected reply from " + peer.to_string());
    } catch (const NetError& e) {
      peers_.erase(peer);
      if (attempt == 1) throw TransportError(e.what());
    }
  }
  throw TransportError("unreachable");
}

// ---------------------------------------------------------------------------

BrokerClient::BrokerClient(const NodeAddress& broker) : conn_(connect(broker)) {}

wire::WireMessage BrokerClient::call(const wire::WireMessage& request) {
  conn_->send(request);
  auto reply = conn_->receive(std::chrono::seconds(10));
  if (!reply) throw NetError("broker did not answer");
  return std::move(*reply);
}

bool BrokerClient::create_topic(const TopicConfig& config) {
  const auto reply = call(wire::CreateTopic{config});
  if (std::holds_alternative<wire::Ack>(reply)) return true;
  if (const auto* e = std::get_if<wire::ErrorReply>(&reply); e && e->code == wire::ErrorCode::duplicate_topic) {
    return false;
  }
  const auto* e = std::get_if<wire::ErrorReply>(&reply);
  throw NetError("create_topic '" + config.topic.str() + "' failed: " + (e ? e->detail : "unexpected reply"));
}

std::uint64_t BrokerClient::publish(const Header& header) {
  const auto reply = call(wire::PublishHeader{header});
  if (const auto* a = std::get_if<wire::Ack>(&reply)) return a->sequence;
  const auto* e = std::get_if<wire::ErrorReply>(&reply);
  throw NetError("publish to '" + header.topic.str() + "' failed: " + (e ? e->detail : "unexpected reply"));
}

namespace {

TopicConfig subscribe(Connection& c, const TopicId& topic, const std::string& consumer, bool shared) {
  c.send(wire::Subscribe{topic, consumer, shared});
  auto reply = c.receive(std::chrono::seconds(10));
  if (!reply) throw NetError("broker did not answer the subscription");
  if (auto* ct = std::get_if<wire::CreateTopic>(&*reply)) return std::move(ct->config);
  const auto* e = std::get_if<wire::ErrorReply>(&*reply);
  throw NetError("subscribe to '" + topic.str() + "' failed: " + (e ? e->detail : "unexpected reply"));
}

}  // namespace

Subscription::Subscription(const NodeAddress& broker, const TopicId& topic, const std::string& consumer, bool shared)
    : conn_(connect(broker)), config_(subscribe(*conn_, topic, consumer, shared)) {}

std::optional<std::variant<Header, Gap>> Subscription::next(Duration timeout) {
  auto m = conn_->receive(timeout);
  if (!m) return std::nullopt;
  if (auto* d = std::get_if<wire::Deliver>(&*m)) return std::move(d->header);
  if (const auto* e = std::get_if<wire::ErrorReply>(&*m); e && e->code == wire::ErrorCode::gap) {
    const auto colon = e->detail.find(':');
    return Gap{std::stoull(e->detail.substr(0, colon)), std::stoull(e->detail.substr(colon + 1))};
  }
  throw NetError("unexpected message on subscription");
}

void Subscription::ack(std::uint64_t processed) { conn_->send(wire::Ack{processed}); }

}  // namespace edgestream::net
