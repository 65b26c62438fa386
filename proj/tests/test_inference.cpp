#include <filesystem>
#include <random>

#include "citta/inference.hpp"
#include "citta/io.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace citta;

namespace {

DenseLayer layer(Eigen::MatrixXd w, Eigen::VectorXd b) { return {std::move(w), std::move(b)}; }

// Float-representable random parameters, so CITM round trips are exact.
std::vector<DenseLayer> random_layers(std::mt19937_64& rng, std::vector<int> dims) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<DenseLayer> out;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer d{Eigen::MatrixXd(dims[l + 1], dims[l]), Eigen::VectorXd(dims[l + 1])};
    for (Eigen::Index i = 0; i < d.weights.size(); ++i) d.weights.data()[i] = static_cast<float>(u(rng));
    for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias(i) = static_cast<float>(u(rng));
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

TEST_CASE("Normalization") {
  const Image img(1, 2, 3, std::vector<double>{0.5, 0.5, 0.5, 1.0, 0.0, 0.25});
  const Normalization n{{0.5, 0.25, 0.0}, {0.5, 0.25, 0.5}};
  const Image out = n.apply(img);
  CHECK(out(0, 0, 0) == 0.0);
  CHECK(out(0, 0, 1) == 1.0);
  CHECK(out(0, 1, 0) == 1.0);
  CHECK(out(0, 1, 1) == -1.0);
  CHECK(out(0, 1, 2) == 0.5);
  CHECK(Normalization{}.apply(img) == img);
  CHECK_THROWS_AS(Normalization::identity(2).apply(img), InvalidArgument);
  CHECK_THROWS_AS((Normalization{{0.0}, {0.0}}.validate()), InvalidArgument);
  CHECK(Normalization::imagenet().mean.size() == 3);
}

TEST_CASE("builtin backend") {
  std::mt19937_64 rng(23);
  SUBCASE("zero weights and bias give zero logits") {
    const BuiltinBackend m({layer(Eigen::MatrixXd::Zero(4, 12), Eigen::VectorXd::Zero(4))}, {});
    const Image img = oracle::random_image(rng, 2, 2, 3);
    CHECK(m.predict(img).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero weights give the bias") {
    Eigen::VectorXd b(3);
    b << 0.5, -1.0, 2.0;
    const BuiltinBackend m({layer(Eigen::MatrixXd::Zero(3, 8), b)}, {});
    CHECK(m.predict(oracle::random_image(rng, 2, 4, 1)) == b);
  }
  SUBCASE("identity model returns the normalized pixels") {
    const Normalization n{{0.1, 0.2, 0.3, 0.4}, {0.5, 0.5, 2.0, 1.0}};
    const BuiltinBackend m({layer(Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4))}, n);
    const Image img(1, 1, 4, std::vector<double>{0.6, 0.2, 0.9, 0.0});
    const LogitVector z = m.predict(img);
    for (int k = 0; k < 4; ++k) CHECK(z(k) == doctest::Approx((img(0, 0, k) - n.mean[k]) / n.std[k]).epsilon(1e-15));
  }
  SUBCASE("two-class margin is 2 w.x") {
    Eigen::RowVectorXd w(6);
    w << 0.3, -0.2, 0.7, 0.1, -0.9, 0.4;
    Eigen::MatrixXd W(2, 6);
    W.row(0) = w;
    W.row(1) = -w;
    const Normalization n{{0.5}, {0.25}};
    const BuiltinBackend m({layer(W, Eigen::VectorXd::Zero(2))}, n);
    const Image img = oracle::random_image(rng, 2, 3, 1);
    double dot = 0;
    for (int i = 0; i < 6; ++i) dot += w(i) * (img.data()[i] - 0.5) / 0.25;
    const LogitVector z = m.predict(img);
    CHECK(std::abs((z(0) - z(1)) - 2 * dot) < 1e-6);
  }
  SUBCASE("forward pass matches straight-line oracle on random small models") {
    std::uniform_int_distribution<int> dim(2, 32), depth(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> dims{dim(rng)};
      const int hidden = depth(rng);
      for (int h = 0; h < hidden; ++h) dims.push_back(dim(rng));
      dims.push_back(std::max(2, dim(rng) / 4));
      const auto layers = random_layers(rng, dims);
      const BuiltinBackend m(layers, {});
      std::vector<std::vector<std::vector<double>>> w;
      std::vector<std::vector<double>> b;
      for (const auto& l : layers) {
        std::vector<std::vector<double>> rows(l.weights.rows(), std::vector<double>(l.weights.cols()));
        for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
          for (Eigen::Index j = 0; j < l.weights.cols(); ++j) rows[i][j] = l.weights(i, j);
        w.push_back(rows);
        b.emplace_back(l.bias.data(), l.bias.data() + l.bias.size());
      }
      const Image img = oracle::random_image(rng, 1, dims[0], 1);
      const auto ref = oracle::mlp(w, b, std::vector<double>(img.data().begin(), img.data().end()));
      const LogitVector z = m.predict(img);
      REQUIRE(z.size() == static_cast<Eigen::Index>(ref.size()));
      for (std::size_t k = 0; k < ref.size(); ++k) CHECK(std::abs(z(k) - ref[k]) < 1e-6);
      CHECK(m.predict(img) == z);  // bitwise repeatable
    }
  }
  SUBCASE("shape mismatch") {
    const BuiltinBackend m({layer(Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Zero(2))}, {});
    CHECK_THROWS_AS(m.predict(Image(3, 3, 1)), InvalidArgument);
  }
  SUBCASE("predict_batch") {
    const BuiltinBackend m(random_layers(rng, {12, 8, 3}), {});
    CHECK(m.predict_batch({}).empty());
    std::vector<Image> imgs;
    for (int i = 0; i < 9; ++i) imgs.push_back(oracle::random_image(rng, 2, 2, 3));
    const auto single = m.predict_batch({imgs[4]});
    REQUIRE(single.size() == 1);
    CHECK(single[0] == m.predict(imgs[4]));
    const auto all = m.predict_batch(imgs);
    std::vector<int> perm{3, 0, 8, 5, 1, 7, 2, 6, 4};
    std::vector<Image> shuffled;
    for (int p : perm) shuffled.push_back(imgs[p]);
    const auto out = m.predict_batch(shuffled);
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(out[i] == all[perm[i]]);
    imgs.push_back(Image(3, 2, 2));
    CHECK_THROWS_AS(m.predict_batch(imgs), InvalidArgument);
  }
}

TEST_CASE("CITM format") {
  std::mt19937_64 rng(29);
  const auto layers = random_layers(rng, {6, 4, 3});
  const auto bytes = encode_citm(layers);
  SUBCASE("layout") {
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CITM");
    CHECK(bytes[4] == 2);
    CHECK(bytes[8] == 6);   // in_dim
    CHECK(bytes[12] == 4);  // out_dim
    CHECK(bytes.size() == 8 + (8 + 4 * (24 + 4)) + (8 + 4 * (12 + 3)));
  }
  SUBCASE("round trip") {
    const auto back = decode_citm(bytes);
    REQUIRE(back.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(back[l].weights == layers[l].weights);
      CHECK(back[l].bias == layers[l].bias);
    }
  }
  SUBCASE("corrupt files") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_citm(bad), CorruptModel);
    bad = bytes;
    bad.resize(bad.size() - 3);
    CHECK_THROWS_AS(decode_citm(bad), CorruptModel);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_citm(bad), CorruptModel);
    // Second layer claims in_dim 5 but the first produces 4.
    bad = bytes;
    bad[8 + 8 + 4 * 28] = 5;
    bad.resize(8 + 8 + 4 * 28 + 8 + 4 * (15 + 3));
    CHECK_THROWS_AS(BuiltinBackend(decode_citm(bad), {}), CorruptModel);
  }
  SUBCASE("load from disk") {
    const auto path = std::filesystem::temp_directory_path() / "citta_model_test.citm";
    save_builtin_model(path, layers);
    const auto m = load_builtin_model(path, {});
    CHECK(m->num_classes() == 3);
    CHECK(m->input_dim() == 6);
    const auto via_spec = open_backend(path.string(), {});
    const Image img = oracle::random_image(rng, 1, 3, 2);
    CHECK(via_spec->predict(img) == m->predict(img));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_builtin_model(path, {}), IoError);
  }
}
