#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "citta/deform.hpp"
#include "citta/ensemble.hpp"
#include "citta/inference.hpp"

namespace citta {

struct PipelineConfig {
  int n_variants = 100;
  DeformationConfig deform;
  double tau = 0.7;
  bool filtering_enabled = true;
  std::uint64_t seed = 0;
  // Views sent to the backend per predict_batch call; 0 = all N+1 at once.
  int chunk_size = 0;

  void validate() const;
};

/// Predictions for the original (index 0) and every variant of one image.
/// Independent of tau and of the filtering switch.
struct ViewPredictions {
  std::vector<ScoredPrediction> views;
};

struct ImageResult {
  std::uint64_t image_id = 0;
  EnsembleDecision decision;
  std::vector<double> per_view_confidences;  // [0] is the original image
  std::vector<int> per_view_classes;
  std::chrono::nanoseconds elapsed{0};
};

ViewPredictions predict_views(const Image& img, const Backend& backend, const PipelineConfig& cfg,
                              std::uint64_t image_id);

/// Filter (when enabled) and aggregate already-scored views.
ImageResult decide(const ViewPredictions& views, const PipelineConfig& cfg, std::uint64_t image_id);

ImageResult infer_one(const Image& img, const Backend& backend, const PipelineConfig& cfg,
                      std::uint64_t image_id);

struct ManifestEntry {
  std::string path;
  int label = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // relative paths resolve against this

  std::string resolve(const ManifestEntry& e) const;
};

enum class ImageKeying {
  index,    // image_id = position in the manifest
  content,  // image_id = FNV-1a of the decoded pixel bytes
};

struct DatasetOptions {
  int workers = 1;
  ImageKeying keying = ImageKeying::index;
};

struct ImageOutcome {
  std::size_t index = 0;
  int label = 0;
  std::optional<ImageResult> result;
  std::string error;  // set when result is empty
  bool backend_error = false;
};

struct DatasetSummary {
  std::size_t total = 0;
  std::size_t evaluated = 0;
  std::size_t correct = 0;
  std::size_t skipped = 0;
  std::optional<double> accuracy;  // correct / evaluated; empty when nothing was evaluated
  double mean_retained = 0.0;
  double fallback_rate = 0.0;
  std::chrono::nanoseconds elapsed{0};
};

struct DatasetRun {
  std::vector<ImageOutcome> outcomes;  // manifest order
  DatasetSummary summary;
};

std::uint64_t content_key(const Image& img);

DatasetRun infer_dataset(const Manifest& manifest, const Backend& backend, const PipelineConfig& cfg,
                         const DatasetOptions& opts = {});

DatasetSummary summarize(const std::vector<ImageOutcome>& outcomes);

/// Runs fn(i) for i in [0, n) across `workers` threads. Exceptions propagate
/// (the first one thrown is rethrown after all workers finish).
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace citta
