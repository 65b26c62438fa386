#include "citta/pipeline.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

#include "citta/io.hpp"

namespace citta {

void PipelineConfig::validate() const {
  if (n_variants < 0) throw InvalidArgument("n_variants must be >= 0");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("tau must be in [0, 1]");
  if (chunk_size < 0) throw InvalidArgument("chunk_size must be >= 0");
  deform.validate();
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          next.store(n);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

ViewPredictions predict_views(const Image& img, const Backend& backend, const PipelineConfig& cfg,
                              std::uint64_t image_id) {
  cfg.validate();
  std::vector<Image> views;
  views.reserve(static_cast<std::size_t>(cfg.n_variants) + 1);
  views.push_back(img);
  for (auto& v : make_variants(img, cfg.n_variants, cfg.deform, cfg.seed, image_id)) views.push_back(std::move(v));

  std::vector<LogitVector> logits;
  logits.reserve(views.size());
  const std::size_t chunk = cfg.chunk_size > 0 ? static_cast<std::size_t>(cfg.chunk_size) : views.size();
  for (std::size_t begin = 0; begin < views.size(); begin += chunk) {
    const std::size_t end = std::min(views.size(), begin + chunk);
    std::vector<Image> part(std::make_move_iterator(views.begin() + begin),
                            std::make_move_iterator(views.begin() + end));
    for (auto& z : backend.predict_batch(part)) logits.push_back(std::move(z));
  }

  ViewPredictions out;
  out.views.reserve(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out.views.push_back(score(logits[j], static_cast<int>(j)));
  return out;
}

ImageResult decide(const ViewPredictions& views, const PipelineConfig& cfg, std::uint64_t image_id) {
  if (views.views.empty()) throw InvalidArgument("no views to decide on");
  ImageResult r;
  r.image_id = image_id;
  const auto& original = views.views.front();
  r.decision = cfg.filtering_enabled ? aggregate(filter_by_confidence(views.views, cfg.tau), original)
                                     : aggregate(views.views, original);
  r.per_view_confidences.reserve(views.views.size());
  r.per_view_classes.reserve(views.views.size());
  for (const auto& v : views.views) {
    r.per_view_confidences.push_back(v.confidence);
    r.per_view_classes.push_back(argmax(v.probs));
  }
  return r;
}

ImageResult infer_one(const Image& img, const Backend& backend, const PipelineConfig& cfg, std::uint64_t image_id) {
  const auto start = std::chrono::steady_clock::now();
  ImageResult r = decide(predict_views(img, backend, cfg, image_id), cfg, image_id);
  r.elapsed = std::chrono::steady_clock::now() - start;
  return r;
}

std::string Manifest::resolve(const ManifestEntry& e) const {
  const std::filesystem::path p(e.path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (std::filesystem::path(base_dir) / p).string();
}

std::uint64_t content_key(const Image& img) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001B3ull;
  };
  for (std::uint8_t b : io::encode_imgf(img)) mix(b);
  return h;
}

DatasetSummary summarize(const std::vector<ImageOutcome>& outcomes) {
  DatasetSummary s;
  s.total = outcomes.size();
  std::size_t retained = 0;
  std::size_t fallbacks = 0;
  for (const auto& o : outcomes) {
    if (!o.result) {
      ++s.skipped;
      continue;
    }
    ++s.evaluated;
    if (o.result->decision.predicted_class == o.label) ++s.correct;
    retained += static_cast<std::size_t>(o.result->decision.retained_count);
    if (o.result->decision.fallback_used) ++fallbacks;
    s.elapsed += o.result->elapsed;
  }
  if (s.evaluated > 0) {
    s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.evaluated);
    s.mean_retained = static_cast<double>(retained) / static_cast<double>(s.evaluated);
    s.fallback_rate = static_cast<double>(fallbacks) / static_cast<double>(s.evaluated);
  }
  return s;
}

DatasetRun infer_dataset(const Manifest& manifest, const Backend& backend, const PipelineConfig& cfg,
                         const DatasetOptions& opts) {
  cfg.validate();
  DatasetRun run;
  run.outcomes.resize(manifest.entries.size());
  parallel_for(manifest.entries.size(), opts.workers, [&](std::size_t i) {
    ImageOutcome& o = run.outcomes[i];
    o.index = i;
    o.label = manifest.entries[i].label;
    Image img;
    try {
      img = io::read_image(manifest.resolve(manifest.entries[i]));
    } catch (const std::exception& e) {
      o.error = e.what();
      return;
    }
    const std::uint64_t id = opts.keying == ImageKeying::content ? content_key(img) : i;
    try {
      o.result = infer_one(img, backend, cfg, id);
    } catch (const BackendFailure& e) {
      o.error = e.what();
      o.backend_error = true;
    } catch (const InvalidArgument& e) {
      o.error = e.what();
    }
  });
  run.summary = summarize(run.outcomes);
  return run;
}

}  // namespace citta
