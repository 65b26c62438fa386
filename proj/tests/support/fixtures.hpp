#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "citta/harness.hpp"

namespace fixture {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("citta_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Small synthetic dataset plus a quickly trained model.
struct SmallWorld {
  TempDir dir{"world"};
  citta::Manifest source;
  citta::Manifest shifted;
  std::filesystem::path model_path;
  std::unique_ptr<citta::BuiltinBackend> model;

  explicit SmallWorld(int per_domain = 30, int epochs = 40) {
    citta::SyntheticOptions o;
    o.per_domain = per_domain;
    o.seed = 99;
    const auto ds = citta::generate_synthetic_dg(dir.path(), o);
    source = citta::read_manifest(ds.source_manifest);
    shifted = citta::read_manifest(ds.shifted_manifest);
    citta::TrainOptions t;
    t.hidden = {16};
    t.epochs = epochs;
    t.lr = 0.05;
    t.seed = 5;
    const auto r = citta::train_tiny_model(source, 3, t);
    model_path = dir.path() / "model.citm";
    citta::save_builtin_model(model_path, r.layers);
    model = citta::load_builtin_model(model_path, {});
  }
};

}  // namespace fixture
