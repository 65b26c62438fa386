#include <fstream>
#include <sstream>

#include "citta/harness.hpp"
#include "citta/io.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace citta;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return io::read_file(p); }

}  // namespace

TEST_CASE("manifest parsing") {
  fixture::TempDir dir("manifest");
  const fs::path p = dir.path() / "m.csv";

  write_text(p, "a.imgf,0\nsub/b,with,comma.imgf,2\n\n");
  const Manifest m = read_manifest(p);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[1].path == "sub/b,with,comma.imgf");
  CHECK(m.entries[1].label == 2);
  CHECK(m.resolve(m.entries[0]) == dir.path() / "a.imgf");
  CHECK_NOTHROW(validate_manifest(m, 3));
  CHECK_THROWS_AS(validate_manifest(m, 2), InvalidArgument);

  write_text(p, "a.imgf,-1\n");
  CHECK_THROWS_AS(read_manifest(p), InvalidArgument);
  write_text(p, "a.imgf,x\n");
  CHECK_THROWS_AS(read_manifest(p), InvalidArgument);
  write_text(p, "a.imgf\n");
  CHECK_THROWS_AS(read_manifest(p), InvalidArgument);
  CHECK_THROWS_AS(read_manifest(dir.path() / "none.csv"), IoError);

  Manifest w;
  w.entries = {{"x.imgf", 1}, {"y.imgf", 0}};
  write_manifest(p, w);
  const Manifest back = read_manifest(p);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].path == "x.imgf");
  CHECK(back.entries[1].label == 0);
}

TEST_CASE("report round trip") {
  SweepReport r;
  r.kind = SweepKind::sigma;
  r.rows = {{0.0, 0.1 + 0.2, 12.0 / 7.0, 1.0 / 3.0}, {0.005, std::nullopt, 0.0, 0.0},
            {0.1, 1.0, 101.0, 0.0}};
  CHECK(parse_report_csv(report_csv(r)) == r.rows);
  CHECK(parse_report_json(nlohmann::json::parse(report_json(r).dump())) == r.rows);
  CHECK(report_csv(r).rfind("param,accuracy,mean_retained,fallback_rate\n", 0) == 0);
  CHECK(report_json(r)["kind"] == "sigma");
  CHECK(parse_sweep_kind("cf") == SweepKind::cf_onoff);
  CHECK(parse_sweep_kind("tau") == SweepKind::tau);
  CHECK_THROWS_AS(parse_sweep_kind("kappa"), InvalidArgument);
  CHECK_THROWS_AS(parse_report_csv("param,accuracy\n1,2\n"), InvalidArgument);
}

TEST_CASE("sweeps") {
  fixture::SmallWorld world(30, 20);
  Manifest m = world.shifted;
  m.entries.resize(24);
  PipelineConfig fixed;
  fixed.n_variants = 10;

  SUBCASE("cached tau sweep equals independent runs") {
    SweepSpec spec{SweepKind::tau, {0.9, 0.5, 0.0, 1.0, 0.7}, fixed};
    SweepOptions cached;
    SweepOptions naive;
    naive.cache_views = false;
    naive.dataset.workers = 3;
    const auto a = run_sweep(spec, m, *world.model, cached);
    const auto b = run_sweep(spec, m, *world.model, naive);
    REQUIRE(a.rows.size() == 5);
    CHECK(a.rows == b.rows);
    CHECK(a.rows.front().param == 0.0);
    CHECK(a.rows.back().param == 1.0);
    for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(to_jsonl(a.runs[i]) == to_jsonl(b.runs[i]));
    CHECK(a.rows.front().fallback_rate == 0.0);
    CHECK(a.rows.front().mean_retained == 11.0);
    for (std::size_t i = 1; i < a.rows.size(); ++i) CHECK(a.rows[i].mean_retained <= a.rows[i - 1].mean_retained);
  }
  SUBCASE("sigma sweep: zero reproduces the raw model") {
    fixed.filtering_enabled = false;
    SweepSpec spec{SweepKind::sigma, {0.0, 0.02}, fixed};
    SweepOptions opts;
    opts.parallel_points = true;
    const auto r = run_sweep(spec, m, *world.model, opts);
    REQUIRE(r.rows.size() == 2);
    std::size_t correct = 0;
    for (const auto& e : m.entries) correct += argmax(world.model->predict(io::read_image(m.resolve(e)))) == e.label;
    CHECK(*r.rows[0].accuracy == static_cast<double>(correct) / m.entries.size());
  }
  SUBCASE("cf on/off") {
    SweepSpec spec{SweepKind::cf_onoff, {}, fixed};
    const auto r = run_sweep(spec, m, *world.model);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].param == 0.0);
    CHECK(r.rows[1].param == 1.0);
    CHECK(r.rows[0].mean_retained == 11.0);
    CHECK(r.rows[0].fallback_rate == 0.0);
    PipelineConfig off = fixed;
    off.filtering_enabled = false;
    CHECK(to_jsonl(r.runs[0]) == to_jsonl(infer_dataset(m, *world.model, off).outcomes));
  }
  SUBCASE("invalid specs") {
    CHECK_THROWS_AS(run_sweep(SweepSpec{SweepKind::tau, {}, fixed}, m, *world.model), InvalidArgument);
    CHECK_THROWS_AS(run_sweep(SweepSpec{SweepKind::tau, {1.5}, fixed}, m, *world.model), InvalidArgument);
    CHECK_THROWS_AS(run_sweep(SweepSpec{SweepKind::sigma, {-0.1}, fixed}, m, *world.model), InvalidArgument);
  }
}

namespace {

ImageOutcome outcome_with(std::size_t index, int label, std::vector<double> conf, std::vector<int> cls) {
  ImageOutcome o;
  o.index = index;
  o.label = label;
  ImageResult r;
  r.per_view_confidences = std::move(conf);
  r.per_view_classes = std::move(cls);
  o.result = r;
  return o;
}

}  // namespace

TEST_CASE("confidence histograms") {
  Manifest m;
  m.entries = {{"a", 1}, {"b", 0}};

  SUBCASE("two bins, two classes") {
    const auto h = export_confidence_histograms({outcome_with(0, 1, {0.55, 0.95}, {1, 1})}, m, 2, 2);
    CHECK(h.edges == std::vector<double>{0.5, 0.75, 1.0});
    CHECK(h.correct == std::vector<long>{1, 1});
    CHECK(h.incorrect == std::vector<long>{0, 0});
  }
  SUBCASE("all correct leaves the incorrect histogram empty") {
    const auto h =
        export_confidence_histograms({outcome_with(0, 1, {0.4, 0.6, 1.0}, {1, 1, 1}),
                                      outcome_with(1, 0, {0.9}, {0})},
                                     m, 3, 4);
    long total = 0;
    for (long c : h.correct) total += c;
    CHECK(total == 4);
    for (long c : h.incorrect) CHECK(c == 0);
  }
  SUBCASE("misclassified views and skipped images") {
    ImageOutcome skipped;
    skipped.index = 1;
    skipped.error = "gone";
    const auto h = export_confidence_histograms({outcome_with(0, 1, {0.6, 0.8}, {0, 1}), skipped}, m, 2, 2);
    CHECK(h.correct == std::vector<long>{0, 1});
    CHECK(h.incorrect == std::vector<long>{1, 0});
  }
  CHECK_THROWS_AS(export_confidence_histograms({}, m, 2, 0), InvalidArgument);
  const auto csv = histogram_csv({{0.7, export_confidence_histograms({}, m, 2, 2)}});
  CHECK(csv.rfind("param,bin_lo,bin_hi,correct,incorrect\n", 0) == 0);
}

TEST_CASE("synthetic generator") {
  fixture::TempDir a("synth_a");
  fixture::TempDir b("synth_b");
  SyntheticOptions o;
  o.per_domain = 30;
  o.seed = 3;
  const auto da = generate_synthetic_dg(a.path(), o);
  const auto db = generate_synthetic_dg(b.path(), o);
  const Manifest ma = read_manifest(da.source_manifest);
  const Manifest sa = read_manifest(da.shifted_manifest);
  REQUIRE(ma.entries.size() == 30);
  REQUIRE(sa.entries.size() == 30);
  std::array<int, 3> per_class{};
  for (const auto& e : ma.entries) per_class.at(e.label) += 1;
  CHECK(per_class == std::array<int, 3>{10, 10, 10});
  CHECK(bytes_of(da.source_manifest) == bytes_of(db.source_manifest));
  for (const auto& e : sa.entries) {
    REQUIRE(bytes_of(a.path() / e.path) == bytes_of(b.path() / e.path));
  }
  const Image img = io::read_image(ma.resolve(ma.entries[0]));
  CHECK(img.height() == 32);
  CHECK(img.channels() == 1);
  for (double v : img.data()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
  CHECK_FALSE(render_synthetic(0, SyntheticDomain::source, 3, 0, 32) ==
              render_synthetic(0, SyntheticDomain::shifted, 3, 0, 32));
}

TEST_CASE("trainer") {
  std::vector<Eigen::VectorXd> x;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    const int c = i % 2;
    Eigen::VectorXd v(2);
    v << (c ? 1.0 : -1.0) + 0.1 * std::sin(i), 0.1 * std::cos(3 * i);
    x.push_back(v);
    y.push_back(c);
  }
  TrainOptions o;
  o.hidden = {8};
  o.seed = 2;

  SUBCASE("zero learning rate keeps the initialization") {
    o.lr = 0.0;
    o.epochs = 5;
    const auto r = train_tiny_model(x, y, 2, o);
    const auto init = init_layers(2, {8}, 2, 2);
    REQUIRE(r.layers.size() == init.size());
    for (std::size_t i = 0; i < init.size(); ++i) {
      CHECK(r.layers[i].weights == init[i].weights);
      CHECK(r.layers[i].bias == init[i].bias);
    }
  }
  SUBCASE("separable data is fit") {
    o.epochs = 200;
    const auto r = train_tiny_model(x, y, 2, o);
    CHECK(r.train_accuracy == 1.0);
    CHECK(r.final_loss < 0.1);
  }
  SUBCASE("fixed seed gives identical model bytes") {
    o.epochs = 10;
    CHECK(encode_citm(train_tiny_model(x, y, 2, o).layers) == encode_citm(train_tiny_model(x, y, 2, o).layers));
  }
  SUBCASE("divergence is reported") {
    o.lr = 1e300;
    o.epochs = 5;
    CHECK_THROWS_AS(train_tiny_model(x, y, 2, o), TrainingFailure);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS_AS(train_tiny_model({}, {}, 2, o), InvalidArgument);
    std::vector<int> bad = y;
    bad[0] = 5;
    CHECK_THROWS_AS(train_tiny_model(x, bad, 2, o), InvalidArgument);
  }
}

#ifdef CITTA_CLI
namespace {

int run(const std::string& args, const fs::path& out) {
  const std::string cmd = std::string(CITTA_CLI) + " " + args + " >" + out.string() + " 2>" + out.string() + ".err";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("command line") {
  fixture::TempDir dir("cli");
  const fs::path log = dir.path() / "log.txt";
  const std::string d = dir.path().string();

  REQUIRE(run("synth --out " + d + "/data --per-domain 12 --seed 4", log) == 0);
  REQUIRE(run("train --manifest " + d + "/data/source.csv --layers 8 --epochs 5 --out " + d + "/m.citm", log) == 0);
  const std::string model = " --model " + d + "/m.citm";

  CHECK(run("predict --input " + d + "/data/source/00000.imgf --n-variants 4" + model, log) == 0);
  const auto j = nlohmann::json::parse(slurp(log));
  CHECK(j["decision"].contains("predicted_class"));

  CHECK(run("eval --manifest " + d + "/data/shifted.csv --n-variants 3" + model, log) == 0);
  CHECK(run("sweep --manifest " + d + "/data/shifted.csv --kind tau --values 0.5,0.9 --n-variants 3 --hist 4 --out " +
                d + "/sw" + model,
            log) == 0);
  CHECK(parse_report_csv(slurp(dir.path() / "sw.csv")).size() == 2);
  CHECK(fs::exists(dir.path() / "sw.json"));
  CHECK(fs::exists(dir.path() / "sw_hist.csv"));

  CHECK(run("predict --tau 2 --input " + d + "/data/source/00000.imgf" + model, log) == 2);
  CHECK(run("predict --bogus", log) == 2);
  CHECK(run("predict --input " + d + "/nothing.imgf" + model, log) == 4);
  CHECK(run("predict --input " + d + "/data/source/00000.imgf --model " + d + "/nothing.citm", log) == 4);
#ifdef CITTA_ECHO_BACKEND
  CHECK(run("predict --input " + d + "/data/source/00000.imgf --n-variants 2 --model 'exec:" +
                std::string(CITTA_ECHO_BACKEND) + " --mode malformed'",
            log) == 3);
  CHECK(run("eval --manifest " + d + "/data/source.csv --n-variants 2 --model 'exec:" +
                std::string(CITTA_ECHO_BACKEND) + " --mode error'",
            log) == 3);
#endif
}
#endif
