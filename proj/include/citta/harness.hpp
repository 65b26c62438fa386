#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "citta/pipeline.hpp"

namespace citta {

// Manifest CSV: one "path,label" per line, UTF-8, no header. Relative paths
// resolve against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Labels must be in [0, k) and paths unique.
void validate_manifest(const Manifest& manifest, int num_classes);

nlohmann::json to_json(const DeformationConfig& cfg);
nlohmann::json to_json(const PipelineConfig& cfg);
nlohmann::json to_json(const EnsembleDecision& d);
/// Per-image record; timing is omitted so records are reproducible byte-for-byte.
nlohmann::json to_json(const ImageOutcome& outcome);
nlohmann::json to_json(const DatasetSummary& s);

std::string to_jsonl(const std::vector<ImageOutcome>& outcomes);

enum class SweepKind { sigma, tau, cf_onoff };

SweepKind parse_sweep_kind(const std::string& s);
std::string to_string(SweepKind k);

struct SweepSpec {
  SweepKind kind = SweepKind::tau;
  std::vector<double> values;  // ignored for cf_onoff (always {0, 1})
  PipelineConfig fixed;

  void validate() const;
};

struct SweepRow {
  double param = 0.0;
  std::optional<double> accuracy;
  double mean_retained = 0.0;
  double fallback_rate = 0.0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepReport {
  SweepKind kind = SweepKind::tau;
  PipelineConfig fixed;
  std::vector<SweepRow> rows;
  // Per-point image outcomes, parallel to rows; used for histograms.
  std::vector<std::vector<ImageOutcome>> runs;
};

struct SweepOptions {
  DatasetOptions dataset;
  // Run sweep points concurrently (each point still uses dataset.workers).
  bool parallel_points = false;
  // Reuse tau-independent view predictions across tau values.
  bool cache_views = true;
};

SweepReport run_sweep(const SweepSpec& spec, const Manifest& manifest, const Backend& backend,
                      const SweepOptions& opts = {});

// CSV header: param,accuracy,mean_retained,fallback_rate. An undefined
// accuracy is written as an empty field.
std::string report_csv(const SweepReport& report);
nlohmann::json report_json(const SweepReport& report);
std::vector<SweepRow> parse_report_csv(const std::string& csv);
std::vector<SweepRow> parse_report_json(const nlohmann::json& j);

struct ConfidenceHistogram {
  std::vector<double> edges;  // bins + 1 uniform edges on [1/K, 1]
  std::vector<long> correct;
  std::vector<long> incorrect;
};

/// Per-view confidences split by whether the view's own argmax equals the label.
ConfidenceHistogram export_confidence_histograms(const std::vector<ImageOutcome>& results,
                                                 const Manifest& manifest, int num_classes, int bins);

std::string histogram_csv(const std::vector<std::pair<double, ConfidenceHistogram>>& tables);

// Synthetic shape-vs-texture domain pair.

struct SyntheticOptions {
  int classes = 3;
  int per_domain = 300;
  std::uint64_t seed = 0;
  int size = 32;
};

struct SyntheticDataset {
  std::filesystem::path source_manifest;
  std::filesystem::path shifted_manifest;
};

/// Writes out_dir/{source,shifted}/NNNN.imgf and out_dir/{source,shifted}.csv.
SyntheticDataset generate_synthetic_dg(const std::filesystem::path& out_dir, const SyntheticOptions& opts);

enum class SyntheticDomain { source, shifted };

/// One rendered sample; pure function of (seed, domain, index).
Image render_synthetic(int shape_class, SyntheticDomain domain, std::uint64_t seed, std::uint64_t index,
                       int size);

// Tiny trainer for the builtin architecture.

struct TrainOptions {
  std::vector<int> hidden = {64};
  int epochs = 60;
  double lr = 0.05;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Normalization norm;
};

struct TrainResult {
  std::vector<DenseLayer> layers;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
};

/// He-uniform initialization; deterministic from seed.
std::vector<DenseLayer> init_layers(int input_dim, const std::vector<int>& hidden, int num_classes,
                                    std::uint64_t seed);

/// Minibatch SGD on softmax cross-entropy. Inputs are flattened normalized images.
TrainResult train_tiny_model(const std::vector<Eigen::VectorXd>& inputs, const std::vector<int>& labels,
                             int num_classes, const TrainOptions& opts);

TrainResult train_tiny_model(const Manifest& manifest, int num_classes, const TrainOptions& opts);

}  // namespace citta
