#include "echo_backend.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>

#include "citta/external_backend.hpp"
#include "json.hpp"

namespace citta::echo {

namespace {

bool write_all(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const ssize_t n = ::write(fd, s.data() + off, s.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 100);
        continue;
      }
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

std::string respond(const std::string& line, const Options& opts) {
  const auto req = nlohmann::json::parse(line);
  const auto id = req.at("id").get<std::uint64_t>();
  switch (opts.mode) {
    case Mode::malformed: return "{not json at all\n";
    case Mode::error: return nlohmann::json{{"id", id}, {"error", "model refused input"}}.dump() + "\n";
    case Mode::wrong_id: return nlohmann::json{{"id", id + 1000000007ull}, {"logits", {0.0, 1.0}}}.dump() + "\n";
    case Mode::echo: break;
  }
  const auto bytes = base64_decode(req.at("data").get<std::string>());
  if (bytes.size() < static_cast<std::size_t>(opts.k) * 4) {
    return nlohmann::json{{"id", id}, {"error", "image smaller than K"}}.dump() + "\n";
  }
  std::vector<double> logits(opts.k);
  for (int i = 0; i < opts.k; ++i) {
    std::uint32_t w = 0;
    for (int b = 0; b < 4; ++b) w |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    logits[i] = std::bit_cast<float>(w);
  }
  return nlohmann::json{{"id", id}, {"logits", logits}}.dump() + "\n";
}

}  // namespace

std::uint64_t serve(int read_fd, int write_fd, const Options& opts) {
  std::mt19937_64 rng(opts.seed);
  std::string inbox;
  std::vector<std::string> pending;
  std::uint64_t answered = 0;
  char buf[65536];

  auto flush = [&] {
    if (opts.shuffle) std::shuffle(pending.begin(), pending.end(), rng);
    for (const auto& r : pending) {
      if (!write_all(write_fd, r)) return false;
    }
    answered += pending.size();
    pending.clear();
    return true;
  };

  for (;;) {
    pollfd p{read_fd, POLLIN, 0};
    // Flush once the client pauses; otherwise keep batching up to flush_every.
    const int rc = ::poll(&p, 1, pending.empty() ? -1 : 1);
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) {
      if (!flush()) return answered;
      continue;
    }
    const ssize_t n = ::read(read_fd, buf, sizeof buf);
    if (n < 0 && (errno == EINTR || errno == EAGAIN)) continue;
    if (n <= 0) {
      flush();
      return answered;
    }
    inbox.append(buf, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = inbox.find('\n', start)) != std::string::npos; start = nl + 1) {
      const std::string line = inbox.substr(start, nl - start);
      if (line.empty()) continue;
      try {
        pending.push_back(respond(line, opts));
      } catch (const std::exception& e) {
        pending.push_back(nlohmann::json{{"id", 0}, {"error", std::string("bad request: ") + e.what()}}.dump() +
                          "\n");
      }
      if (static_cast<int>(pending.size()) >= opts.flush_every && !flush()) return answered;
    }
    inbox.erase(0, start);
  }
}

TcpServer::TcpServer(Options opts) : opts_(opts) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw std::runtime_error("socket failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error("bind/listen failed");
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() {
  stop_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  acceptor_.join();
  for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  for (auto& t : workers_) t.join();
  for (int fd : client_fds_) ::close(fd);
}

void TcpServer::accept_loop() {
  while (!stop_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    client_fds_.push_back(fd);
    Options per = opts_;
    per.seed = opts_.seed + client_fds_.size();
    workers_.emplace_back([fd, per] { serve(fd, fd, per); });
  }
}

}  // namespace citta::echo
