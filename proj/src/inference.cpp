#include "citta/inference.hpp"

#include <cstring>

#include "citta/external_backend.hpp"
#include "citta/io.hpp"

namespace citta {

Normalization Normalization::identity(int channels) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

Normalization Normalization::imagenet() { return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}}; }

void Normalization::validate() const {
  if (mean.size() != std.size()) throw InvalidArgument("normalization mean and std must have equal length");
  for (double s : std) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("normalization std entries must be > 0");
  }
  for (double m : mean) {
    if (!std::isfinite(m)) throw InvalidArgument("normalization mean must be finite");
  }
}

bool Normalization::is_identity() const {
  for (std::size_t c = 0; c < mean.size(); ++c) {
    if (mean[c] != 0.0 || std[c] != 1.0) return false;
  }
  return true;
}

Image Normalization::apply(const Image& img) const {
  if (mean.empty()) return img;
  if (static_cast<int>(mean.size()) != img.channels()) {
    throw InvalidArgument("normalization has " + std::to_string(mean.size()) + " channels, image has " +
                          std::to_string(img.channels()));
  }
  if (is_identity()) return img;
  Image out = img;
  auto d = out.data();
  const std::size_t c = mean.size();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (d[i] - mean[i % c]) / std[i % c];
  return out;
}

std::vector<LogitVector> Backend::predict_batch(const std::vector<Image>& imgs) const {
  std::vector<LogitVector> out;
  out.reserve(imgs.size());
  for (const auto& img : imgs) {
    if (!img.same_shape(imgs.front())) throw InvalidArgument("batch images must share one shape");
    out.push_back(predict(img));
  }
  return out;
}

BuiltinBackend::BuiltinBackend(std::vector<DenseLayer> layers, Normalization norm)
    : layers_(std::move(layers)), norm_(std::move(norm)) {
  norm_.validate();
  if (layers_.empty()) throw CorruptModel("model has no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weights.rows() != l.bias.size() || l.weights.rows() < 1 || l.weights.cols() < 1) {
      throw CorruptModel("layer " + std::to_string(i) + " weight/bias shapes disagree");
    }
    if (i > 0 && l.weights.cols() != layers_[i - 1].weights.rows()) {
      throw CorruptModel("layer " + std::to_string(i) + " input dim does not match previous output dim");
    }
    if (!l.weights.allFinite() || !l.bias.allFinite()) throw CorruptModel("non-finite model parameters");
  }
  if (layers_.back().bias.size() < 2) throw CorruptModel("model must produce at least 2 logits");
}

LogitVector BuiltinBackend::forward(const Eigen::VectorXd& x) const {
  Eigen::VectorXd a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::VectorXd z = layers_[i].weights * a + layers_[i].bias;
    if (i + 1 < layers_.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

LogitVector BuiltinBackend::predict(const Image& img) const {
  if (static_cast<int>(img.size()) != input_dim()) {
    throw InvalidArgument("image has " + std::to_string(img.size()) + " values; model expects " +
                          std::to_string(input_dim()));
  }
  return forward(norm_.apply(img).flat());
}

std::vector<DenseLayer> decode_citm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "CITM", 4) != 0) throw CorruptModel("bad CITM magic");
  io::ByteReader r(bytes.subspan(4));
  std::vector<DenseLayer> layers;
  try {
    const std::uint32_t count = r.u32();
    if (count == 0 || count > 64) throw CorruptModel("implausible CITM layer count");
    for (std::uint32_t l = 0; l < count; ++l) {
      const std::uint32_t in = r.u32();
      const std::uint32_t out = r.u32();
      if (in == 0 || out == 0) throw CorruptModel("zero-sized CITM layer");
      const std::uint64_t need = (static_cast<std::uint64_t>(in) * out + out) * 4;
      if (r.remaining() < need) throw CorruptModel("truncated CITM layer");
      DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
      for (std::uint32_t i = 0; i < out; ++i)
        for (std::uint32_t j = 0; j < in; ++j) layer.weights(i, j) = r.f32();
      for (std::uint32_t i = 0; i < out; ++i) layer.bias(i) = r.f32();
      layers.push_back(std::move(layer));
    }
  } catch (const IoError&) {
    throw CorruptModel("truncated CITM file");
  }
  if (r.remaining() != 0) throw CorruptModel("trailing bytes after CITM layers");
  return layers;
}

std::vector<std::uint8_t> encode_citm(const std::vector<DenseLayer>& layers) {
  std::vector<std::uint8_t> out{'C', 'I', 'T', 'M'};
  io::put_u32(out, static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    io::put_u32(out, static_cast<std::uint32_t>(l.weights.cols()));
    io::put_u32(out, static_cast<std::uint32_t>(l.weights.rows()));
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) io::put_f32(out, static_cast<float>(l.weights(i, j)));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) io::put_f32(out, static_cast<float>(l.bias(i)));
  }
  return out;
}

std::unique_ptr<BuiltinBackend> load_builtin_model(const std::filesystem::path& path, Normalization norm) {
  return std::make_unique<BuiltinBackend>(decode_citm(io::read_file(path)), std::move(norm));
}

void save_builtin_model(const std::filesystem::path& path, const std::vector<DenseLayer>& layers) {
  io::write_file(path, encode_citm(layers));
}

std::unique_ptr<Backend> open_backend(const std::string& spec, const Normalization& norm,
                                      const ExternalOptions& ext) {
  if (spec.starts_with("tcp:")) {
    const std::string rest = spec.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0) throw InvalidArgument("expected tcp:host:port");
    const std::string host = rest.substr(0, colon);
    int port = 0;
    try {
      port = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception&) {
      throw InvalidArgument("bad port in " + spec);
    }
    if (port < 1 || port > 65535) throw InvalidArgument("port out of range in " + spec);
    return std::make_unique<ExternalBackend>([host, port] { return connect_tcp(host, port); }, norm, ext);
  }
  if (spec.starts_with("exec:")) {
    const std::string cmd = spec.substr(5);
    if (cmd.empty()) throw InvalidArgument("exec: needs a command");
    return std::make_unique<ExternalBackend>([cmd] { return spawn_process(cmd); }, norm, ext);
  }
  return load_builtin_model(spec, norm);
}

}  // namespace citta
