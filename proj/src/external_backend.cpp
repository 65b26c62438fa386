#include "citta/external_backend.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>
#include <unordered_map>

#include "citta/io.hpp"
#include "json.hpp"

namespace citta {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_sextet(char ch) {
  if (ch >= 'A' && ch <= 'Z') return ch - 'A';
  if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
  if (ch >= '0' && ch <= '9') return ch - '0' + 52;
  if (ch == '+') return 62;
  if (ch == '/') return 63;
  return -1;
}

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL, 0);
  if (flags < 0 || fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) {
    throw BackendFailure(std::string("fcntl failed: ") + std::strerror(errno));
  }
}

class SocketChannel final : public Channel {
 public:
  explicit SocketChannel(int fd) : fd_(fd) {}
  ~SocketChannel() override { ::close(fd_); }
  int read_fd() const override { return fd_; }
  int write_fd() const override { return fd_; }

 private:
  int fd_;
};

class ProcessChannel final : public Channel {
 public:
  ProcessChannel(pid_t pid, int to_child, int from_child) : pid_(pid), to_child_(to_child), from_child_(from_child) {}

  ~ProcessChannel() override {
    ::close(to_child_);
    ::close(from_child_);
    // Closing stdin is the shutdown signal; give the child a moment before forcing it.
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }

  int read_fd() const override { return from_child_; }
  int write_fd() const override { return to_child_; }

 private:
  pid_t pid_;
  int to_child_;
  int from_child_;
};

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InvalidArgument("base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int s[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      if (ch == '=' && i + 4 == text.size() && k >= 2) {
        s[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw InvalidArgument("base64 padding in the middle");
        s[k] = decode_sextet(ch);
        if (s[k] < 0) throw InvalidArgument("invalid base64 character");
      }
    }
    const std::uint32_t v = (s[0] << 18) | (s[1] << 12) | (s[2] << 6) | s[3];
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

std::string encode_request(std::uint64_t id, const Image& img) {
  std::vector<std::uint8_t> raw;
  raw.reserve(img.size() * 4);
  for (double v : img.data()) io::put_f32(raw, static_cast<float>(v));
  nlohmann::json j;
  j["id"] = id;
  j["shape"] = {img.height(), img.width(), img.channels()};
  j["data"] = base64_encode(raw);
  return j.dump();
}

std::unique_ptr<Channel> connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) throw BackendFailure("cannot resolve " + host + ": " + gai_strerror(rc));
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw BackendFailure("cannot connect to " + host + ":" + std::to_string(port));
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  auto ch = std::make_unique<SocketChannel>(fd);
  set_nonblocking(fd);
  return ch;
}

std::unique_ptr<Channel> spawn_process(const std::string& command) {
  int to_child[2];
  int from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw BackendFailure("pipe failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw BackendFailure("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    throw BackendFailure("fork failed");
  }
  if (pid == 0) {
    // Own process group, so shutdown reaches anything the shell started.
    ::setpgid(0, 0);
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  auto ch = std::make_unique<ProcessChannel>(pid, to_child[1], from_child[0]);
  set_nonblocking(to_child[1]);
  set_nonblocking(from_child[0]);
  return ch;
}

ExternalBackend::ExternalBackend(ChannelFactory factory, Normalization norm, ExternalOptions opts)
    : factory_(std::move(factory)), norm_(std::move(norm)), opts_(opts) {
  norm_.validate();
  if (opts_.pool_size < 1) throw InvalidArgument("pool size must be >= 1");
  if (opts_.timeout.count() <= 0) throw InvalidArgument("timeout must be positive");
  // A dead peer must surface as EPIPE, not terminate the process.
  ::signal(SIGPIPE, SIG_IGN);
}

ExternalBackend::~ExternalBackend() = default;

std::unique_ptr<ExternalBackend::Slot> ExternalBackend::acquire() const {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return !idle_.empty() || live_ < opts_.pool_size; });
  if (!idle_.empty()) {
    auto slot = std::move(idle_.back());
    idle_.pop_back();
    return slot;
  }
  ++live_;
  lock.unlock();
  try {
    auto slot = std::make_unique<Slot>();
    slot->channel = factory_();
    return slot;
  } catch (...) {
    lock.lock();
    --live_;
    cv_.notify_one();
    throw;
  }
}

void ExternalBackend::release(std::unique_ptr<Slot> slot) const {
  std::lock_guard lock(mutex_);
  if (slot) {
    idle_.push_back(std::move(slot));
  } else {
    --live_;
  }
  cv_.notify_one();
}

LogitVector ExternalBackend::predict(const Image& img) const { return predict_batch({img}).front(); }

std::vector<LogitVector> ExternalBackend::predict_batch(const std::vector<Image>& imgs) const {
  std::vector<LogitVector> out(imgs.size());
  if (imgs.empty()) return out;
  for (const auto& img : imgs) {
    if (!img.same_shape(imgs.front())) throw InvalidArgument("batch images must share one shape");
  }
  auto slot = acquire();
  const std::size_t chunk = opts_.chunk_size > 0 ? static_cast<std::size_t>(opts_.chunk_size) : imgs.size();
  try {
    for (std::size_t begin = 0; begin < imgs.size(); begin += chunk) {
      exchange(*slot, imgs, begin, std::min(imgs.size(), begin + chunk), out);
    }
  } catch (...) {
    // The stream position is unknown after a failure; drop the connection.
    slot.reset();
    release(nullptr);
    throw;
  }
  release(std::move(slot));
  return out;
}

void ExternalBackend::exchange(Slot& slot, const std::vector<Image>& imgs, std::size_t begin, std::size_t end,
                               std::vector<LogitVector>& out) const {
  std::unordered_map<std::uint64_t, std::size_t> pending;
  std::string outbuf;
  for (std::size_t i = begin; i < end; ++i) {
    const std::uint64_t id = next_id_.fetch_add(1);
    pending.emplace(id, i);
    outbuf += encode_request(id, norm_.apply(imgs[i]));
    outbuf += '\n';
  }

  const int rfd = slot.channel->read_fd();
  const int wfd = slot.channel->write_fd();
  std::size_t written = 0;
  auto deadline = std::chrono::steady_clock::now() + opts_.timeout;
  std::array<char, 65536> buf{};

  auto handle_line = [&](std::string_view line) {
    if (line.empty()) return;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw BackendFailure(std::string("malformed backend response: ") + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned()) {
      throw BackendFailure("backend response lacks a valid id");
    }
    const auto id = j["id"].get<std::uint64_t>();
    const auto it = pending.find(id);
    if (it == pending.end()) throw BackendFailure("backend response for unknown id " + std::to_string(id));
    if (j.contains("error")) {
      throw BackendFailure("backend error for id " + std::to_string(id) + ": " +
                           (j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump()));
    }
    if (!j.contains("logits") || !j["logits"].is_array()) throw BackendFailure("backend response lacks logits");
    const auto& arr = j["logits"];
    if (arr.size() < 2) throw BackendFailure("backend returned fewer than 2 logits");
    LogitVector z(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t k = 0; k < arr.size(); ++k) {
      if (!arr[k].is_number()) throw BackendFailure("non-numeric logit");
      z(static_cast<Eigen::Index>(k)) = arr[k].get<double>();
    }
    if (!z.allFinite()) throw BackendFailure("non-finite logit");
    int expected = 0;
    const int k = static_cast<int>(z.size());
    if (!num_classes_.compare_exchange_strong(expected, k) && expected != k) {
      throw BackendFailure("backend changed its class count from " + std::to_string(expected) + " to " +
                           std::to_string(k));
    }
    out[it->second] = std::move(z);
    pending.erase(it);
  };

  auto drain_inbox = [&] {
    std::size_t start = 0;
    for (std::size_t nl; (nl = slot.inbox.find('\n', start)) != std::string::npos; start = nl + 1) {
      handle_line(std::string_view(slot.inbox).substr(start, nl - start));
    }
    slot.inbox.erase(0, start);
  };

  drain_inbox();
  while (!pending.empty()) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) throw BackendFailure("backend timed out");
    const int wait_ms = static_cast<int>(
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1);

    pollfd fds[2];
    int nfds = 0;
    const bool want_write = written < outbuf.size();
    if (rfd == wfd) {
      fds[nfds++] = {rfd, static_cast<short>(POLLIN | (want_write ? POLLOUT : 0)), 0};
    } else {
      fds[nfds++] = {rfd, POLLIN, 0};
      if (want_write) fds[nfds++] = {wfd, POLLOUT, 0};
    }
    const int rc = ::poll(fds, nfds, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw BackendFailure(std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) continue;

    for (int i = 0; i < nfds; ++i) {
      if (want_write && fds[i].fd == wfd && (fds[i].revents & (POLLOUT | POLLERR))) {
        const ssize_t n = ::write(wfd, outbuf.data() + written, outbuf.size() - written);
        if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
          throw BackendFailure(std::string("write to backend failed: ") + std::strerror(errno));
        }
        if (n > 0) written += static_cast<std::size_t>(n);
      }
      if (fds[i].fd == rfd && (fds[i].revents & (POLLIN | POLLHUP | POLLERR))) {
        const ssize_t n = ::read(rfd, buf.data(), buf.size());
        if (n == 0) throw BackendFailure("backend closed the connection");
        if (n < 0) {
          if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
          throw BackendFailure(std::string("read from backend failed: ") + std::strerror(errno));
        }
        slot.inbox.append(buf.data(), static_cast<std::size_t>(n));
        const std::size_t before = pending.size();
        drain_inbox();
        if (pending.size() != before) deadline = std::chrono::steady_clock::now() + opts_.timeout;
      }
    }
  }
}

}  // namespace citta
