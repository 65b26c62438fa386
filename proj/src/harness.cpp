#include "citta/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "citta/io.hpp"

namespace citta {

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path().string();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) {
      throw InvalidArgument("manifest line " + std::to_string(line_no) + ": expected path,label");
    }
    ManifestEntry e;
    e.path = line.substr(0, comma);
    const std::string label = line.substr(comma + 1);
    std::size_t used = 0;
    try {
      e.label = std::stoi(label, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != label.size() || e.label < 0) {
      throw InvalidArgument("manifest line " + std::to_string(line_no) + ": bad label '" + label + "'");
    }
    m.entries.push_back(std::move(e));
  }
  validate_manifest(m, 0);
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& e : manifest.entries) out << e.path << ',' << e.label << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void validate_manifest(const Manifest& manifest, int num_classes) {
  std::set<std::string> seen;
  for (const auto& e : manifest.entries) {
    if (!seen.insert(e.path).second) throw InvalidArgument("duplicate manifest path " + e.path);
    if (e.label < 0 || (num_classes > 0 && e.label >= num_classes)) {
      throw InvalidArgument("label " + std::to_string(e.label) + " out of range for " + e.path);
    }
  }
}

nlohmann::json to_json(const DeformationConfig& cfg) {
  return {{"sigma", cfg.sigma},
          {"kappa", cfg.kappa ? nlohmann::json(*cfg.kappa) : nlohmann::json(nullptr)},
          {"grid_rows", cfg.grid_rows},
          {"grid_cols", cfg.grid_cols},
          {"elastic_fraction", cfg.elastic_fraction},
          {"rescale_after_smoothing", cfg.rescale_after_smoothing}};
}

nlohmann::json to_json(const PipelineConfig& cfg) {
  return {{"n_variants", cfg.n_variants},
          {"deform", to_json(cfg.deform)},
          {"tau", cfg.tau},
          {"filtering_enabled", cfg.filtering_enabled},
          {"seed", cfg.seed},
          {"chunk_size", cfg.chunk_size}};
}

nlohmann::json to_json(const EnsembleDecision& d) {
  return {{"final_probs", std::vector<double>(d.final_probs.data(), d.final_probs.data() + d.final_probs.size())},
          {"predicted_class", d.predicted_class},
          {"retained_count", d.retained_count},
          {"fallback_used", d.fallback_used}};
}

nlohmann::json to_json(const ImageOutcome& o) {
  nlohmann::json j{{"index", o.index}, {"label", o.label}};
  if (!o.result) {
    j["error"] = o.error;
    if (o.backend_error) j["backend_error"] = true;
    return j;
  }
  j["image_id"] = o.result->image_id;
  j["decision"] = to_json(o.result->decision);
  j["correct"] = o.result->decision.predicted_class == o.label;
  j["per_view_confidences"] = o.result->per_view_confidences;
  return j;
}

nlohmann::json to_json(const DatasetSummary& s) {
  return {{"total", s.total},
          {"evaluated", s.evaluated},
          {"correct", s.correct},
          {"skipped", s.skipped},
          {"accuracy", s.accuracy ? nlohmann::json(*s.accuracy) : nlohmann::json(nullptr)},
          {"mean_retained", s.mean_retained},
          {"fallback_rate", s.fallback_rate},
          {"elapsed_ms", std::chrono::duration<double, std::milli>(s.elapsed).count()}};
}

std::string to_jsonl(const std::vector<ImageOutcome>& outcomes) {
  std::string out;
  for (const auto& o : outcomes) {
    out += to_json(o).dump();
    out += '\n';
  }
  return out;
}

SweepKind parse_sweep_kind(const std::string& s) {
  if (s == "sigma") return SweepKind::sigma;
  if (s == "tau") return SweepKind::tau;
  if (s == "cf" || s == "cf_onoff") return SweepKind::cf_onoff;
  throw InvalidArgument("unknown sweep kind '" + s + "' (expected sigma, tau or cf)");
}

std::string to_string(SweepKind k) {
  switch (k) {
    case SweepKind::sigma: return "sigma";
    case SweepKind::tau: return "tau";
    case SweepKind::cf_onoff: return "cf_onoff";
  }
  return "?";
}

void SweepSpec::validate() const {
  fixed.validate();
  if (kind == SweepKind::cf_onoff) return;
  if (values.empty()) throw InvalidArgument("sweep needs at least one value");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("sweep values must be finite");
    if (kind == SweepKind::sigma && v < 0.0) throw InvalidArgument("sigma values must be >= 0");
    if (kind == SweepKind::tau && !(v >= 0.0 && v <= 1.0)) throw InvalidArgument("tau values must be in [0, 1]");
  }
}

namespace {

PipelineConfig config_for(const SweepSpec& spec, double v) {
  PipelineConfig cfg = spec.fixed;
  switch (spec.kind) {
    case SweepKind::sigma: cfg.deform.sigma = v; break;
    case SweepKind::tau: cfg.tau = v; break;
    case SweepKind::cf_onoff: cfg.filtering_enabled = v != 0.0; break;
  }
  return cfg;
}

SweepRow row_from(double param, const DatasetSummary& s) {
  return {param, s.accuracy, s.mean_retained, s.fallback_rate};
}

struct CachedViews {
  std::vector<std::optional<ViewPredictions>> views;
  std::vector<std::uint64_t> ids;
  std::vector<ImageOutcome> failures;  // error-only outcomes, indexed like the manifest
};

CachedViews predict_all_views(const Manifest& manifest, const Backend& backend, const PipelineConfig& cfg,
                              const DatasetOptions& opts) {
  CachedViews c;
  const std::size_t n = manifest.entries.size();
  c.views.resize(n);
  c.ids.resize(n);
  c.failures.resize(n);
  parallel_for(n, opts.workers, [&](std::size_t i) {
    ImageOutcome& o = c.failures[i];
    o.index = i;
    o.label = manifest.entries[i].label;
    try {
      const Image img = io::read_image(manifest.resolve(manifest.entries[i]));
      c.ids[i] = opts.keying == ImageKeying::content ? content_key(img) : i;
      c.views[i] = predict_views(img, backend, cfg, c.ids[i]);
    } catch (const BackendFailure& e) {
      o.error = e.what();
      o.backend_error = true;
    } catch (const std::exception& e) {
      o.error = e.what();
    }
  });
  return c;
}

std::vector<ImageOutcome> decide_all(const CachedViews& c, const PipelineConfig& cfg) {
  std::vector<ImageOutcome> out = c.failures;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (c.views[i]) out[i].result = decide(*c.views[i], cfg, c.ids[i]);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SweepReport run_sweep(const SweepSpec& spec, const Manifest& manifest, const Backend& backend,
                      const SweepOptions& opts) {
  spec.validate();
  std::vector<double> values = spec.kind == SweepKind::cf_onoff ? std::vector<double>{0.0, 1.0} : spec.values;
  std::sort(values.begin(), values.end());

  SweepReport report;
  report.kind = spec.kind;
  report.fixed = spec.fixed;
  report.rows.resize(values.size());
  report.runs.resize(values.size());

  // Logits do not depend on tau or on the filter switch; predict once and re-decide.
  const bool reuse = opts.cache_views && spec.kind != SweepKind::sigma;
  std::optional<CachedViews> cache;
  if (reuse) cache = predict_all_views(manifest, backend, spec.fixed, opts.dataset);

  parallel_for(values.size(), opts.parallel_points ? static_cast<int>(values.size()) : 1, [&](std::size_t p) {
    const PipelineConfig cfg = config_for(spec, values[p]);
    if (reuse) {
      report.runs[p] = decide_all(*cache, cfg);
    } else {
      report.runs[p] = infer_dataset(manifest, backend, cfg, opts.dataset).outcomes;
    }
    report.rows[p] = row_from(values[p], summarize(report.runs[p]));
  });
  return report;
}

std::string report_csv(const SweepReport& report) {
  std::string out = "param,accuracy,mean_retained,fallback_rate\n";
  for (const auto& r : report.rows) {
    out += fmt_double(r.param) + ',' + (r.accuracy ? fmt_double(*r.accuracy) : std::string()) + ',' +
           fmt_double(r.mean_retained) + ',' + fmt_double(r.fallback_rate) + '\n';
  }
  return out;
}

nlohmann::json report_json(const SweepReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"param", r.param},
                    {"accuracy", r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr)},
                    {"mean_retained", r.mean_retained},
                    {"fallback_rate", r.fallback_rate}});
  }
  return {{"kind", to_string(report.kind)}, {"config", to_json(report.fixed)}, {"rows", rows}};
}

std::vector<SweepRow> parse_report_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "param,accuracy,mean_retained,fallback_rate") {
    throw InvalidArgument("unexpected report header");
  }
  auto num = [](const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw InvalidArgument("bad number '" + s + "' in report");
    return v;
  };
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 4) throw InvalidArgument("report row needs 4 fields: " + line);
    SweepRow r;
    r.param = num(f[0]);
    if (!f[1].empty()) r.accuracy = num(f[1]);
    r.mean_retained = num(f[2]);
    r.fallback_rate = num(f[3]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<SweepRow> parse_report_json(const nlohmann::json& j) {
  std::vector<SweepRow> rows;
  for (const auto& r : j.at("rows")) {
    SweepRow row;
    row.param = r.at("param").get<double>();
    if (!r.at("accuracy").is_null()) row.accuracy = r.at("accuracy").get<double>();
    row.mean_retained = r.at("mean_retained").get<double>();
    row.fallback_rate = r.at("fallback_rate").get<double>();
    rows.push_back(row);
  }
  return rows;
}

ConfidenceHistogram export_confidence_histograms(const std::vector<ImageOutcome>& results,
                                                 const Manifest& manifest, int num_classes, int bins) {
  if (bins < 2) throw InvalidArgument("histogram needs at least 2 bins");
  if (num_classes < 2) throw InvalidArgument("histogram needs K >= 2");
  ConfidenceHistogram h;
  const double lo = 1.0 / num_classes;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.edges[b] = lo + (1.0 - lo) * b / bins;
  h.edges.back() = 1.0;
  h.correct.assign(bins, 0);
  h.incorrect.assign(bins, 0);
  for (const auto& o : results) {
    if (!o.result) continue;
    const int label = o.index < manifest.entries.size() ? manifest.entries[o.index].label : o.label;
    const auto& conf = o.result->per_view_confidences;
    const auto& cls = o.result->per_view_classes;
    for (std::size_t v = 0; v < conf.size(); ++v) {
      const int b = std::clamp(static_cast<int>(std::floor((conf[v] - lo) / (1.0 - lo) * bins)), 0, bins - 1);
      (cls[v] == label ? h.correct : h.incorrect)[b] += 1;
    }
  }
  return h;
}

std::string histogram_csv(const std::vector<std::pair<double, ConfidenceHistogram>>& tables) {
  std::string out = "param,bin_lo,bin_hi,correct,incorrect\n";
  for (const auto& [param, h] : tables) {
    for (std::size_t b = 0; b < h.correct.size(); ++b) {
      out += fmt_double(param) + ',' + fmt_double(h.edges[b]) + ',' + fmt_double(h.edges[b + 1]) + ',' +
             std::to_string(h.correct[b]) + ',' + std::to_string(h.incorrect[b]) + '\n';
    }
  }
  return out;
}

}  // namespace citta
