// ci-tta: class-invariant test-time augmentation driver.
//
// Exit codes: 0 success, 2 invalid arguments, 3 backend failure, 4 I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "citta/harness.hpp"
#include "citta/io.hpp"
#include "json.hpp"

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitBackend = 3;
constexpr int kExitIo = 4;

struct CommonFlags {
  std::string model;
  double sigma = 0.01;
  double tau = 0.7;
  int n_variants = 100;
  std::string grid = "4x4";
  double elastic_fraction = 0.5;
  int kappa = 0;
  std::uint64_t seed = 0;
  bool no_filter = false;
  bool no_rescale = false;
  int workers = 1;
  int chunk = 0;
  std::string mean;
  std::string std_dev;
  bool imagenet = false;
  int timeout_ms = 30000;
  int pool = 1;
  std::string keying = "index";
};

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || *end != '\0') throw citta::InvalidArgument(std::string("bad number in ") + what + ": " + tok);
    out.push_back(v);
  }
  return out;
}

void add_model_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--model", f.model, "CITM path | tcp:host:port | exec:<command>")->required();
  cmd->add_option("--mean", f.mean, "Per-channel normalization mean, comma separated");
  cmd->add_option("--std", f.std_dev, "Per-channel normalization std, comma separated");
  cmd->add_flag("--imagenet-norm", f.imagenet, "Use ImageNet mean/std normalization");
  cmd->add_option("--timeout-ms", f.timeout_ms, "External backend per-request timeout")->check(CLI::PositiveNumber);
  cmd->add_option("--pool", f.pool, "External backend connection pool size")->check(CLI::PositiveNumber);
}

void add_pipeline_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--sigma", f.sigma, "Deformation strength, fraction of min(H,W)");
  cmd->add_option("--tau", f.tau, "Confidence threshold");
  cmd->add_option("--n-variants", f.n_variants, "Number of deformed variants N");
  cmd->add_option("--grid", f.grid, "Control grid RxC");
  cmd->add_option("--elastic-fraction", f.elastic_fraction, "Share of elastic variants");
  cmd->add_option("--kappa", f.kappa, "Elastic smoothing kernel size (odd; 0 = auto)");
  cmd->add_option("--seed", f.seed, "Deformation seed");
  cmd->add_flag("--no-filter", f.no_filter, "Average all views without confidence filtering");
  cmd->add_flag("--no-rescale", f.no_rescale, "Skip rescaling smoothed elastic noise to sigma");
  cmd->add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--chunk", f.chunk, "Views per backend batch (0 = all)");
  cmd->add_option("--keying", f.keying, "Per-image RNG key: index | content")
      ->check(CLI::IsMember({"index", "content"}));
}

citta::Normalization make_norm(const CommonFlags& f) {
  if (f.imagenet) return citta::Normalization::imagenet();
  citta::Normalization n{parse_list(f.mean, "--mean"), parse_list(f.std_dev, "--std")};
  if (n.mean.empty() != n.std.empty()) throw citta::InvalidArgument("--mean and --std must be given together");
  n.validate();
  return n;
}

citta::PipelineConfig make_config(const CommonFlags& f) {
  citta::PipelineConfig cfg;
  cfg.n_variants = f.n_variants;
  cfg.tau = f.tau;
  cfg.filtering_enabled = !f.no_filter;
  cfg.seed = f.seed;
  cfg.chunk_size = f.chunk;
  cfg.deform.sigma = f.sigma;
  cfg.deform.elastic_fraction = f.elastic_fraction;
  cfg.deform.rescale_after_smoothing = !f.no_rescale;
  if (f.kappa != 0) cfg.deform.kappa = f.kappa;
  int rows = 0, cols = 0;
  char sep = 0;
  std::istringstream g(f.grid);
  if (!(g >> rows >> sep >> cols) || (sep != 'x' && sep != 'X') || !g.eof()) {
    throw citta::InvalidArgument("--grid must look like 4x4");
  }
  cfg.deform.grid_rows = rows;
  cfg.deform.grid_cols = cols;
  cfg.validate();
  return cfg;
}

std::unique_ptr<citta::Backend> make_backend(const CommonFlags& f) {
  citta::ExternalOptions ext;
  ext.timeout = std::chrono::milliseconds(f.timeout_ms);
  ext.pool_size = std::max(f.pool, f.workers);
  return citta::open_backend(f.model, make_norm(f), ext);
}

citta::DatasetOptions dataset_options(const CommonFlags& f) {
  citta::DatasetOptions o;
  o.workers = f.workers;
  o.keying = f.keying == "content" ? citta::ImageKeying::content : citta::ImageKeying::index;
  return o;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw citta::IoError("cannot write " + path);
}

int cmd_predict(const CommonFlags& f, const std::string& input) {
  const auto cfg = make_config(f);
  const auto backend = make_backend(f);
  const citta::Image img = citta::io::read_image(input);
  const std::uint64_t id = f.keying == "content" ? citta::content_key(img) : 0;
  const auto r = citta::infer_one(img, *backend, cfg, id);
  nlohmann::json j{{"input", input},
                   {"image_id", r.image_id},
                   {"decision", citta::to_json(r.decision)},
                   {"per_view_confidences", r.per_view_confidences},
                   {"elapsed_ms", std::chrono::duration<double, std::milli>(r.elapsed).count()},
                   {"config", citta::to_json(cfg)}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& manifest_path, const std::string& summary_path) {
  const auto cfg = make_config(f);
  const auto backend = make_backend(f);
  const auto manifest = citta::read_manifest(manifest_path);
  if (backend->num_classes() > 0) citta::validate_manifest(manifest, backend->num_classes());
  const auto run = citta::infer_dataset(manifest, *backend, cfg, dataset_options(f));
  std::cout << citta::to_jsonl(run.outcomes) << std::flush;
  nlohmann::json summary = citta::to_json(run.summary);
  summary["config"] = citta::to_json(cfg);
  if (!summary_path.empty()) write_text(summary_path, summary.dump(2) + "\n");
  std::cerr << summary.dump() << '\n';
  for (const auto& o : run.outcomes) {
    if (o.backend_error) return kExitBackend;
  }
  return 0;
}

int cmd_sweep(const CommonFlags& f, const std::string& manifest_path, const std::string& kind,
              const std::string& values, const std::string& out_prefix, int hist_bins, bool parallel_points) {
  citta::SweepSpec spec;
  spec.kind = citta::parse_sweep_kind(kind);
  spec.values = parse_list(values, "--values");
  spec.fixed = make_config(f);
  spec.validate();
  const auto backend = make_backend(f);
  const auto manifest = citta::read_manifest(manifest_path);
  citta::SweepOptions opts;
  opts.dataset = dataset_options(f);
  opts.parallel_points = parallel_points;
  const auto report = citta::run_sweep(spec, manifest, *backend, opts);

  const std::string csv = citta::report_csv(report);
  std::cout << csv;
  if (!out_prefix.empty()) {
    write_text(out_prefix + ".csv", csv);
    write_text(out_prefix + ".json", citta::report_json(report).dump(2) + "\n");
  }
  if (hist_bins > 0) {
    std::vector<std::pair<double, citta::ConfidenceHistogram>> tables;
    for (std::size_t p = 0; p < report.rows.size(); ++p) {
      tables.emplace_back(report.rows[p].param, citta::export_confidence_histograms(
                                                    report.runs[p], manifest, backend->num_classes(), hist_bins));
    }
    const std::string hist = citta::histogram_csv(tables);
    if (!out_prefix.empty()) {
      write_text(out_prefix + "_hist.csv", hist);
    } else {
      std::cout << '\n' << hist;
    }
  }
  for (const auto& run : report.runs) {
    for (const auto& o : run) {
      if (o.backend_error) return kExitBackend;
    }
  }
  return 0;
}

std::vector<int> parse_layers(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_list(s, "--layers")) {
    if (v < 0 || v != static_cast<int>(v)) throw citta::InvalidArgument("--layers takes non-negative integers");
    if (v > 0) out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-invariant test-time augmentation"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string input, manifest, summary_path, kind, values, out, out_dir, layers = "64", norm_mean, norm_std;
  int hist_bins = 0, per_domain = 300, classes = 3, epochs = 60, batch = 32, num_classes = 0;
  double lr = 0.05;
  std::uint64_t seed = 0;
  bool parallel_points = false;

  auto* predict = app.add_subcommand("predict", "Classify one image with CI-TTA");
  add_model_flags(predict, f);
  add_pipeline_flags(predict, f);
  predict->add_option("--input", input, "IMGF or binary PPM image")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a manifest; per-image JSONL to stdout, summary to stderr");
  add_model_flags(eval, f);
  add_pipeline_flags(eval, f);
  eval->add_option("--manifest", manifest, "path,label CSV")->required();
  eval->add_option("--summary", summary_path, "Also write the summary JSON here");

  auto* sweep = app.add_subcommand("sweep", "Ablation sweep over sigma, tau or filtering on/off");
  add_model_flags(sweep, f);
  add_pipeline_flags(sweep, f);
  sweep->add_option("--manifest", manifest, "path,label CSV")->required();
  sweep->add_option("--kind", kind, "sigma | tau | cf")->required();
  sweep->add_option("--values", values, "Comma-separated parameter values (not needed for cf)");
  sweep->add_option("--out", out, "Write <out>.csv, <out>.json (and <out>_hist.csv)");
  sweep->add_option("--hist", hist_bins, "Also emit per-view confidence histograms with this many bins")
      ->check(CLI::Range(2, 100000));
  sweep->add_flag("--parallel-points", parallel_points, "Run sweep points concurrently");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic shape/texture domain pair");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--per-domain", per_domain, "Images per domain")->check(CLI::PositiveNumber);
  synth->add_option("--classes", classes, "Shape classes (1-3)")->check(CLI::Range(1, 3));
  synth->add_option("--seed", seed, "Generator seed");

  auto* train = app.add_subcommand("train", "Fit a small builtin model with minibatch SGD");
  train->add_option("--manifest", manifest, "Training manifest")->required();
  train->add_option("--layers", layers, "Hidden layer widths, comma separated (0 = none)");
  train->add_option("--epochs", epochs, "Epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", lr, "Learning rate")->check(CLI::NonNegativeNumber);
  train->add_option("--batch", batch, "Minibatch size")->check(CLI::PositiveNumber);
  train->add_option("--seed", seed, "Initialization and shuffling seed");
  train->add_option("--classes", num_classes, "Number of classes (default: max label + 1)");
  train->add_option("--mean", norm_mean, "Per-channel normalization mean");
  train->add_option("--std", norm_std, "Per-channel normalization std");
  train->add_option("--out", out, "Output CITM path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*predict) return cmd_predict(f, input);
    if (*eval) return cmd_eval(f, manifest, summary_path);
    if (*sweep) return cmd_sweep(f, manifest, kind, values, out, hist_bins, parallel_points);
    if (*synth) {
      citta::SyntheticOptions o;
      o.per_domain = per_domain;
      o.classes = classes;
      o.seed = seed;
      const auto ds = citta::generate_synthetic_dg(out_dir, o);
      std::cout << nlohmann::json{{"source", ds.source_manifest.string()}, {"shifted", ds.shifted_manifest.string()}}
                       .dump()
                << '\n';
      return 0;
    }
    if (*train) {
      const auto m = citta::read_manifest(manifest);
      int k = num_classes;
      if (k <= 0) {
        for (const auto& e : m.entries) k = std::max(k, e.label + 1);
        k = std::max(k, 2);
      }
      citta::TrainOptions o;
      o.hidden = parse_layers(layers);
      o.epochs = epochs;
      o.lr = lr;
      o.batch_size = batch;
      o.seed = seed;
      o.norm = {parse_list(norm_mean, "--mean"), parse_list(norm_std, "--std")};
      o.norm.validate();
      const auto r = citta::train_tiny_model(m, k, o);
      citta::save_builtin_model(out, r.layers);
      std::cout << nlohmann::json{{"model", out}, {"final_loss", r.final_loss}, {"train_accuracy", r.train_accuracy}}
                       .dump()
                << '\n';
      return 0;
    }
  } catch (const citta::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const citta::BackendFailure& e) {
    std::cerr << "backend failure: " << e.what() << '\n';
    return kExitBackend;
  } catch (const citta::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const citta::CorruptModel& e) {
    std::cerr << "corrupt model: " << e.what() << '\n';
    return kExitIo;
  } catch (const citta::TrainingFailure& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
