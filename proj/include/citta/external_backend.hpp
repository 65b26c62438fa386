#pragma once

// Newline-delimited JSON model protocol over a socket or a child's stdio.
//   request : {"id":<u64>,"shape":[H,W,C],"data":"<base64 float32 LE>"}
//   response: {"id":<u64>,"logits":[...]} | {"id":<u64>,"error":"..."}
// Responses may arrive in any order; id is the correlator.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "citta/inference.hpp"

namespace citta {

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string encode_request(std::uint64_t id, const Image& img);

/// Bidirectional line transport. Implementations own their file descriptors.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual int read_fd() const = 0;
  virtual int write_fd() const = 0;
};

std::unique_ptr<Channel> connect_tcp(const std::string& host, int port);
std::unique_ptr<Channel> spawn_process(const std::string& command);

class ExternalBackend final : public Backend {
 public:
  using ChannelFactory = std::function<std::unique_ptr<Channel>()>;

  ExternalBackend(ChannelFactory factory, Normalization norm, ExternalOptions opts = {});
  ~ExternalBackend() override;

  LogitVector predict(const Image& img) const override;
  std::vector<LogitVector> predict_batch(const std::vector<Image>& imgs) const override;
  int num_classes() const override { return num_classes_.load(); }

 private:
  struct Slot {
    std::unique_ptr<Channel> channel;
    std::string inbox;  // bytes read past the last complete line
  };

  std::unique_ptr<Slot> acquire() const;
  void release(std::unique_ptr<Slot> slot) const;
  void exchange(Slot& slot, const std::vector<Image>& imgs, std::size_t begin, std::size_t end,
                std::vector<LogitVector>& out) const;

  ChannelFactory factory_;
  Normalization norm_;
  ExternalOptions opts_;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  mutable std::vector<std::unique_ptr<Slot>> idle_;
  mutable int live_ = 0;
  mutable std::atomic<std::uint64_t> next_id_{1};
  mutable std::atomic<int> num_classes_{0};
};

}  // namespace citta
