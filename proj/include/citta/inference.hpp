#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "citta/imgcore.hpp"

namespace citta {

using LogitVector = Eigen::VectorXd;

/// Per-channel (v - mean) / std, applied to a warped image right before the
/// model sees it. Empty vectors mean identity for any channel count.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;

  static Normalization identity(int channels = 0);
  static Normalization imagenet();

  void validate() const;
  Image apply(const Image& img) const;
  bool is_identity() const;
};

/// Classifier M: image -> K logits.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual LogitVector predict(const Image& img) const = 0;

  /// Element i equals predict(imgs[i]); a failure anywhere aborts the call.
  virtual std::vector<LogitVector> predict_batch(const std::vector<Image>& imgs) const;

  /// K, or 0 when not known until the first response (external backends).
  virtual int num_classes() const = 0;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out_dim x in_dim
  Eigen::VectorXd bias;     // out_dim
};

/// Affine layers with ReLU between them (none after the last), applied to
/// the flattened normalized image.
class BuiltinBackend final : public Backend {
 public:
  BuiltinBackend(std::vector<DenseLayer> layers, Normalization norm);

  LogitVector predict(const Image& img) const override;
  int num_classes() const override { return static_cast<int>(layers_.back().bias.size()); }

  int input_dim() const { return static_cast<int>(layers_.front().weights.cols()); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  const Normalization& normalization() const { return norm_; }

  /// Forward pass on an already-normalized flat input.
  LogitVector forward(const Eigen::VectorXd& x) const;

 private:
  std::vector<DenseLayer> layers_;
  Normalization norm_;
};

// CITM: "CITM", u32 LE layer count, then per layer u32 in_dim, u32 out_dim,
// out_dim*in_dim float32 row-major weights, out_dim float32 biases.
std::vector<DenseLayer> decode_citm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_citm(const std::vector<DenseLayer>& layers);

std::unique_ptr<BuiltinBackend> load_builtin_model(const std::filesystem::path& path, Normalization norm);
void save_builtin_model(const std::filesystem::path& path, const std::vector<DenseLayer>& layers);

struct ExternalOptions {
  std::chrono::milliseconds timeout{30000};
  int pool_size = 1;
  // Requests in flight per predict_batch round; 0 = whole batch.
  int chunk_size = 0;
};

/// Backend descriptor as accepted on the command line:
///   tcp:host:port | exec:<shell command> | <path to .citm>
std::unique_ptr<Backend> open_backend(const std::string& spec, const Normalization& norm,
                                      const ExternalOptions& ext = {});

}  // namespace citta
