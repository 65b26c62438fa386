#pragma once

// Loopback model double for the line protocol: answers each request with its
// first K pixel values as logits. Responses are buffered and shuffled so
// clients must correlate by id.

#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace citta::echo {

enum class Mode {
  echo,       // {"id":..,"logits":[first K pixels]}
  error,      // {"id":..,"error":"..."}
  malformed,  // a line that is not JSON
  wrong_id,   // a well-formed response for an id that was never sent
};

struct Options {
  int k = 3;
  bool shuffle = true;
  Mode mode = Mode::echo;
  std::uint64_t seed = 1;
  int flush_every = 64;  // max buffered responses before a forced flush
};

/// Serves until EOF on read_fd. Returns the number of requests answered.
std::uint64_t serve(int read_fd, int write_fd, const Options& opts);

/// In-process TCP echo server on 127.0.0.1, one thread per connection.
class TcpServer {
 public:
  explicit TcpServer(Options opts);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  int port() const { return port_; }

 private:
  void accept_loop();

  Options opts_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread acceptor_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
};

}  // namespace citta::echo
