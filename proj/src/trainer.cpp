#include "citta/harness.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "citta/ensemble.hpp"
#include "citta/io.hpp"
#include "citta/rng.hpp"

namespace citta {

namespace {

std::uint64_t draw_bits(const std::array<std::uint32_t, 2>& key, std::uint32_t tag, std::uint64_t counter) {
  const auto r = philox4x32(
      {static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32), tag, 0x7124u}, key);
  return (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
}

std::array<std::uint32_t, 2> key_of(std::uint64_t seed) {
  const std::uint64_t k = splitmix64(seed ^ 0x3C6EF372FE94F82Bull);
  return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

// Stored parameters are float32; training keeps them float-representable
// so the reloaded model is the trained model.
void round_to_float(std::vector<DenseLayer>& layers) {
  for (auto& l : layers) {
    l.weights = l.weights.cast<float>().cast<double>();
    l.bias = l.bias.cast<float>().cast<double>();
  }
}

double dataset_loss(const BuiltinBackend& model, const std::vector<Eigen::VectorXd>& inputs,
                    const std::vector<int>& labels, double* accuracy) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Eigen::VectorXd z = model.forward(inputs[i]);
    const double shift = z.maxCoeff();
    const double lse = shift + std::log((z.array() - shift).exp().sum());
    loss += lse - z(labels[i]);
    if (argmax(z) == labels[i]) ++correct;
  }
  if (accuracy) *accuracy = static_cast<double>(correct) / static_cast<double>(inputs.size());
  return loss / static_cast<double>(inputs.size());
}

}  // namespace

std::vector<DenseLayer> init_layers(int input_dim, const std::vector<int>& hidden, int num_classes,
                                    std::uint64_t seed) {
  if (input_dim < 1) throw InvalidArgument("input_dim must be >= 1");
  if (num_classes < 2) throw InvalidArgument("need at least 2 classes");
  std::vector<int> dims{input_dim};
  for (int h : hidden) {
    if (h < 1) throw InvalidArgument("hidden widths must be >= 1");
    dims.push_back(h);
  }
  dims.push_back(num_classes);

  const auto key = key_of(seed);
  std::vector<DenseLayer> layers;
  std::uint64_t counter = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    const double limit = std::sqrt(6.0 / in);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j)
        layer.weights(i, j) = limit * (2.0 * unit_open_closed(draw_bits(key, 1, counter++)) - 1.0);
    layers.push_back(std::move(layer));
  }
  round_to_float(layers);
  return layers;
}

TrainResult train_tiny_model(const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels,
                             int num_classes, const TrainOptions& opts) {
  if (inputs.empty()) throw InvalidArgument("training set is empty");
  if (inputs.size() != labels.size()) throw InvalidArgument("inputs and labels differ in length");
  if (opts.epochs < 0 || opts.batch_size < 1) throw InvalidArgument("epochs must be >= 0 and batch size >= 1");
  if (!(opts.lr >= 0.0) || !std::isfinite(opts.lr)) throw InvalidArgument("learning rate must be finite and >= 0");
  const int dim = static_cast<int>(inputs.front().size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != dim) throw InvalidArgument("training inputs differ in length");
    if (labels[i] < 0 || labels[i] >= num_classes) throw InvalidArgument("training label out of range");
  }

  std::vector<DenseLayer> layers = init_layers(dim, opts.hidden, num_classes, opts.seed);
  const std::size_t depth = layers.size();
  const auto key = key_of(opts.seed);
  const std::size_t n = inputs.size();
  std::vector<std::size_t> order(n);

  for (int epoch = 0; epoch < opts.epochs && opts.lr > 0.0; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = draw_bits(key, 2, (static_cast<std::uint64_t>(epoch) << 32) | i) % (i + 1);
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(opts.batch_size));
      const Eigen::Index b = static_cast<Eigen::Index>(end - begin);
      Eigen::MatrixXd x(dim, b);
      for (Eigen::Index k = 0; k < b; ++k) x.col(k) = inputs[order[begin + k]];

      std::vector<Eigen::MatrixXd> acts{x};
      for (std::size_t l = 0; l < depth; ++l) {
        Eigen::MatrixXd z = (layers[l].weights * acts.back()).colwise() + layers[l].bias;
        if (l + 1 < depth) z = z.cwiseMax(0.0);
        acts.push_back(std::move(z));
      }

      // dL/dz for softmax cross-entropy, averaged over the batch.
      Eigen::MatrixXd delta = acts.back();
      for (Eigen::Index k = 0; k < b; ++k) {
        const int y = labels[order[begin + k]];
        const double shift = delta.col(k).maxCoeff();
        Eigen::VectorXd e = (delta.col(k).array() - shift).exp().matrix();
        const double sum = e.sum();
        epoch_loss += shift + std::log(sum) - acts.back()(y, k);
        delta.col(k) = e / sum;
        delta(y, k) -= 1.0;
      }
      delta /= static_cast<double>(b);

      for (std::size_t l = depth; l-- > 0;) {
        const Eigen::MatrixXd grad_w = delta * acts[l].transpose();
        const Eigen::VectorXd grad_b = delta.rowwise().sum();
        if (l > 0) {
          delta = (layers[l].weights.transpose() * delta).cwiseProduct(
              (acts[l].array() > 0.0).cast<double>().matrix());
        }
        layers[l].weights -= opts.lr * grad_w;
        layers[l].bias -= opts.lr * grad_b;
      }
    }
    if (!std::isfinite(epoch_loss)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << " (loss " << epoch_loss / n << ", lr " << opts.lr
          << "); try a smaller learning rate";
      throw TrainingFailure(msg.str());
    }
  }

  round_to_float(layers);
  TrainResult result;
  const BuiltinBackend model(layers, Normalization{});
  result.final_loss = dataset_loss(model, inputs, labels, &result.train_accuracy);
  if (!std::isfinite(result.final_loss)) throw TrainingFailure("final training loss is not finite");
  result.layers = std::move(layers);
  return result;
}

TrainResult train_tiny_model(const Manifest& manifest, int num_classes, const TrainOptions& opts) {
  if (manifest.entries.empty()) throw InvalidArgument("training manifest is empty");
  validate_manifest(manifest, num_classes);
  std::vector<Eigen::VectorXd> inputs;
  std::vector<int> labels;
  inputs.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const Image img = io::read_image(manifest.resolve(e));
    if (!inputs.empty() && static_cast<Eigen::Index>(img.size()) != inputs.front().size()) {
      throw InvalidArgument("training images differ in shape: " + e.path);
    }
    inputs.push_back(opts.norm.apply(img).flat());
    labels.push_back(e.label);
  }
  return train_tiny_model(inputs, labels, num_classes, opts);
}

}  // namespace citta
