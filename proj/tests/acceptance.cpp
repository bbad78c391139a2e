// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"
#include "rsnet/check.hpp"
#include "rsnet/checkpoint.hpp"
#include "rsnet/data.hpp"
#include "rsnet/model.hpp"
#include "rsnet/wavelet.hpp"
#include "rsnet/workflow.hpp"

using namespace rsnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1. synthesis(analysis(x)) == x and energy preserved, errors measured here.
template <typename T>
std::pair<double, double> reconstruction_errors(int trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst_rec = 0, worst_energy = 0;
  for (int i = 0; i < trials; ++i) {
    const Shape s{rng.uniform_int(1, 2), rng.uniform_int(1, 4), 2 * rng.uniform_int(1, 12), 2 * rng.uniform_int(1, 12)};
    Tensor<T> x(s);
    rng.fill_normal(x.data(), 0.0, 1.0);
    Tape<T> t(false);
    const auto bands = haar_analysis(t.constant(x)).bands;
    const auto y = haar_synthesis(bands).value();
    long double num = 0, den = 0, ex = 0, eb = 0;
    for (std::int64_t k = 0; k < x.numel(); ++k) {
      num += (long double)(y[k] - x[k]) * (y[k] - x[k]);
      den += (long double)x[k] * x[k];
    }
    ex = den;
    for (std::int64_t k = 0; k < bands.value().numel(); ++k) eb += (long double)bands.value()[k] * bands.value()[k];
    worst_rec = std::max(worst_rec, double(std::sqrt(num / den)));
    worst_energy = std::max(worst_energy, double(std::fabs(ex - eb) / ex));
  }
  return {worst_rec, worst_energy};
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  const auto [f_rec, f_en] = reconstruction_errors<float>(100, 1);
  const auto [d_rec, d_en] = reconstruction_errors<double>(100, 2);
  const double secs = seconds_since(t0);
  const bool ok = f_rec <= 1e-6 && f_en <= 1e-6 && d_rec <= 1e-12 && d_en <= 1e-12 && secs < 10;
  return {ok, "f32 rec " + fmt("%.2e", f_rec) + " energy " + fmt("%.2e", f_en) + ", f64 rec " + fmt("%.2e", d_rec) +
                  " energy " + fmt("%.2e", d_en) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome criterion2() {
  const auto& k = WaveletFilterBank::haar().kernels;
  bool exact = true;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double g = 0;
      for (int t = 0; t < 4; ++t) g += k[i][t] * k[j][t];
      exact = exact && g == (i == j ? 1.0 : 0.0);
    }
  const bool fault_seen = !corrupted_haar().orthonormal();
  return {exact && fault_seen, std::string("Gram matrix ") + (exact ? "is exactly I" : "differs from I") +
                                   (fault_seen ? "; perturbed bank detected" : "; perturbed bank NOT detected")};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  std::string worst_name;
  std::size_t cases = 0;
  for (const auto& c : gradient_cases()) {
    for (int s = 0; s < 5; ++s) {
      Rng shape_rng = rng.split(c.name).split(static_cast<std::uint64_t>(s));
      const auto r = c.run(shape_rng);
      if (r.max_rel_error > worst || !std::isfinite(r.max_rel_error)) {
        worst = r.max_rel_error;
        worst_name = c.name + " " + r.worst;
      }
    }
    ++cases;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 180, std::to_string(cases) + " ops/blocks x 5 shapes, worst " + fmt("%.2e", worst) +
                                          " (" + worst_name + "), " + fmt("%.1f", secs) + " s"};
}

Outcome criterion4() {
  bool ok = true;
  std::ostringstream d;
  for (const auto& name : ArchConfig::preset_names()) {
    Model<float> m(ArchConfig::preset(name), 1);
    std::int64_t enumerated = 0;
    for (const auto& p : m.params())
      if (p->trainable) enumerated += p->value.numel();
    const auto report = m.count();
    ok = ok && enumerated == m.analytic_params() && enumerated == report.total_params();
    for (const auto& row : report.rows)
      if (row.kind == "wavelet_unpool") ok = ok && row.params == 0;
  }
  auto shared_cfg = ArchConfig::preset("rsnet-ref");
  auto unshared_cfg = shared_cfg;
  unshared_cfg.head_shared = false;
  const std::int64_t shared = Model<float>(shared_cfg, 1).params().trainable_count();
  const std::int64_t unshared = Model<float>(unshared_cfg, 1).params().trainable_count();
  ok = ok && shared < unshared;
  const auto ref = Model<float>(shared_cfg, 1).count(640, 640);
  const double p = double(ref.total_params()), f = double(ref.total_flops());
  const bool budget = std::fabs(p / 1.49e6 - 1) <= 0.25 && std::fabs(f / 5.1e9 - 1) <= 0.25;
  d << "enumeration == closed form == rows for all presets; head shared " << shared << " < unshared " << unshared
    << "; rsnet-ref " << ref.total_params() << " params (" << fmt("%+.1f%%", 100 * (p / 1.49e6 - 1)) << "), "
    << fmt("%.3f", f / 1e9) << " GFLOPs (" << fmt("%+.1f%%", 100 * (f / 5.1e9 - 1)) << ")";
  return {ok && budget, d.str()};
}

Outcome criterion5() {
  std::int64_t previous = INT64_MAX;
  bool ok = true;
  std::string detail;
  for (const char* name : {"ablation-baseline", "ablation-wcg", "ablation-wcg-wsf", "rsnet-ref"}) {
    const std::int64_t n = Model<float>(ArchConfig::preset(name), 1).params().trainable_count();
    ok = ok && n < previous;
    previous = n;
    detail += (detail.empty() ? "" : " > ") + std::string(name) + " " + fmt("%.3fM", double(n) / 1e6);
  }
  return {ok, detail};
}

struct DeskRun {
  std::uint64_t seed;
  double map50 = 0, map50_95 = 0, seconds = 0;
};

Outcome criterion6(const fs::path& work, int epochs, const std::vector<std::uint64_t>& seeds, std::ostream& log) {
  auto spec = SyntheticSceneSpec::load(std::string(RSNET_SOURCE_DIR) + "/configs/scene-desk.txt");
  generate_dataset(spec, 256, (work / "train").string(), true);
  auto test_spec = spec;
  test_spec.seed = spec.seed + 1000;
  generate_dataset(test_spec, 64, (work / "test").string(), true);
  const auto train_set = load_dataset((work / "train").string());
  const auto test_set = load_dataset((work / "test").string());

  bool ok = true;
  std::string detail;
  for (auto seed : seeds) {
    const auto t0 = Clock::now();
    Model<float> m(ArchConfig::preset("rsnet-desk"), seed);
    AdamW<float> opt(m.params(), AdamWOptions{});
    TrainOptions o;
    o.epochs = epochs;
    o.seed = seed;
    train(m, opt, train_set, o);
    const auto r = evaluate_model(m, test_set, DetectOptions{});
    const double secs = seconds_since(t0);
    const bool pass = r.map50 >= 0.80 && r.map50_95 >= 0.45 && r.map50_95 <= r.map50 && secs < 1800;
    ok = ok && pass;
    log << "  seed " << seed << ": mAP50 " << fmt("%.3f", r.map50) << " mAP50:95 " << fmt("%.3f", r.map50_95) << " in "
        << fmt("%.0f", secs) << " s" << (pass ? "" : "  <- below target") << std::endl;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " " + fmt("%.3f", r.map50) +
              "/" + fmt("%.3f", r.map50_95) + " " + fmt("%.0fs", secs);
  }
  return {ok, "mAP50/mAP50:95 " + detail};
}

std::vector<EvalImage> random_case(Rng& rng) {
  const auto box = [&]() {
    const double w = rng.uniform(0.05, 0.4), h = rng.uniform(0.05, 0.4);
    return Box{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
  };
  std::vector<EvalImage> images;
  const auto n_images = rng.uniform_int(1, 5);
  for (std::int64_t i = 0; i < n_images; ++i) {
    EvalImage im;
    im.id = std::to_string(i);
    for (std::int64_t g = rng.uniform_int(0, 3); g > 0; --g) {
      const Box b = box();
      im.gt.push_back({0, b});
      if (rng.uniform() < 0.75) {
        Box d = b;
        d.cx += rng.uniform(-0.2, 0.2) * b.w;
        d.w *= rng.uniform(0.8, 1.25);
        im.detections.push_back({0, rng.uniform(), d});
      }
    }
    for (std::int64_t k = rng.uniform_int(0, 2); k > 0; --k) im.detections.push_back({0, rng.uniform(), box()});
    images.push_back(im);
  }
  return images;
}

Outcome criterion7() {
  Rng rng(77);
  double worst = 0;
  bool ordered = true;
  int compared = 0;
  while (compared < 50) {
    const auto images = random_case(rng);
    const auto r = evaluate(images);
    if (r.classes.empty()) continue;
    for (std::size_t k = 0; k < kIouThresholds.size(); ++k)
      worst = std::max(worst, std::fabs(r.classes[0].ap[k] - oracle::cutoff_ap(images, 0, kIouThresholds[k])));
    ordered = ordered && r.map50_95 <= r.map50;
    ++compared;
  }
  // TP, FP, TP, FP over three images with three ground truth boxes.
  const Box g1 = Box::from_corners(0.1, 0.1, 0.3, 0.3), g2 = Box::from_corners(0.5, 0.5, 0.7, 0.7),
            g3 = Box::from_corners(0.1, 0.6, 0.2, 0.9), away = Box::from_corners(0.8, 0.1, 0.9, 0.2);
  const std::vector<EvalImage> hand{{"a", {{0, 0.9, g1}, {0, 0.8, away}}, {{0, g1}}},
                                    {"b", {{0, 0.7, g2}}, {{0, g2}, {0, g3}}},
                                    {"c", {{0, 0.6, away}}, {}}};
  const auto h = evaluate(hand);
  const double hand_err = std::max(std::fabs(h.map50 - 5.0 / 9.0), std::fabs(h.map50 - oracle::cutoff_ap(hand, 0, 0.5)));
  ordered = ordered && h.map50_95 <= h.map50;
  return {worst <= 1e-9 && hand_err <= 1e-9 && ordered,
          "50 random cases max |AP - oracle| " + fmt("%.1e", worst) + "; hand case " + fmt("%.6f", h.map50) +
              " (expect 5/9); mAP50:95 <= mAP50 " + (ordered ? "always" : "VIOLATED")};
}

Outcome criterion8(const fs::path& work) {
  Model<float> m(ArchConfig::preset("rsnet-desk"), 8);
  const auto path = (work / "model.rsnt").string();
  save_checkpoint(m, path);
  const auto back = load_checkpoint<float>(path);
  Tensor<float> x(Shape{2, 1, 128, 128});
  Rng rng(8);
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  const auto a = m.predict(x), b = back.predict(x);
  bool same = true;
  for (std::size_t l = 0; l < a.size(); ++l) same = same && th::bit_equal(a[l].box, b[l].box) && th::bit_equal(a[l].cls, b[l].cls);
  const auto bytes = th::read_bytes(path);
  int rejected = 0, tried = 0;
  for (std::size_t pos : {std::size_t{0}, std::size_t{9}, bytes.size() / 3, bytes.size() / 2, bytes.size() - 2}) {
    auto bad = bytes;
    bad[pos] ^= 0x10;
    ++tried;
    try {
      decode_checkpoint(bad);
    } catch (const DataError&) {
      ++rejected;
    }
  }
  ++tried;
  try {
    decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 100));
  } catch (const DataError&) {
    ++rejected;
  }
  return {same && rejected == tried, std::string("predict ") + (same ? "bit-identical" : "DIFFERS") + " after reload; " +
                                         std::to_string(rejected) + "/" + std::to_string(tried) + " corrupted files rejected"};
}

Outcome criterion9(const fs::path& work) {
  auto spec = SyntheticSceneSpec::load(std::string(RSNET_SOURCE_DIR) + "/configs/scene-desk.txt");
  bool data_same = true;
  const auto files = generate_dataset(spec, 6, (work / "a").string(), true);
  generate_dataset(spec, 6, (work / "b").string(), true);
  for (const auto& f : files) {
    const auto rel = fs::relative(f, work / "a");
    data_same = data_same && th::read_bytes(work / "a" / rel) == th::read_bytes(work / "b" / rel);
  }

  Model<float> m1(ArchConfig::preset("rsnet-desk"), 9), m2(ArchConfig::preset("rsnet-desk"), 9);
  bool init_same = true;
  for (std::size_t i = 0; i < m1.params().size(); ++i) init_same = init_same && th::bit_equal(m1.params()[i].value, m2.params()[i].value);

  const auto data = load_dataset((work / "a").string());
  std::string logs[2];
  for (auto& log : logs) {
    Model<float> m(ArchConfig::preset("rsnet-desk"), 9);
    AdamW<float> opt(m.params(), AdamWOptions{});
    TrainOptions o;
    o.epochs = 2;
    o.batch_size = 3;
    o.seed = 9;
    for (const auto& row : train(m, opt, data, o)) log += loss_csv_row(row);
  }
  const bool logs_same = logs[0] == logs[1] && !logs[0].empty();
  return {data_same && init_same && logs_same, std::string("dataset bytes ") + (data_same ? "identical" : "DIFFER") +
                                                   ", initialization " + (init_same ? "identical" : "DIFFERS") +
                                                   ", loss logs " + (logs_same ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-9"};
  int epochs = 30;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool skip_training = false;
  std::string report;
  app.add_option("--epochs", epochs, "training epochs for criterion 6");
  app.add_option("--seeds", seeds, "training seeds for criterion 6");
  app.add_flag("--skip-training", skip_training, "report criterion 6 as skipped (counts as FAIL)");
  app.add_option("--report", report, "also write the PASS/FAIL lines here");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = th::scratch("acceptance");
  std::vector<std::string> lines;
  bool all = true;
  const auto emit = [&](int n, const char* title, const Outcome& o) {
    char head[96];
    std::snprintf(head, sizeof head, "%s %d %-28s ", o.pass ? "PASS" : "FAIL", n, title);
    lines.push_back(head + o.detail);
    std::cout << lines.back() << std::endl;
    all = all && o.pass;
  };
  const auto guarded = [&](auto&& fn) -> Outcome {
    try {
      return fn();
    } catch (const std::exception& e) {
      return {false, std::string("error: ") + e.what()};
    }
  };

  emit(1, "wavelet reconstruction", guarded(criterion1));
  emit(2, "filter orthonormality", guarded(criterion2));
  emit(3, "gradient suite", guarded(criterion3));
  emit(4, "parameter accounting", guarded(criterion4));
  emit(5, "ablation direction", guarded(criterion5));
  if (skip_training) {
    emit(6, "desk-scale learning", Outcome{false, "skipped"});
  } else {
    emit(6, "desk-scale learning", guarded([&] { return criterion6(work / "desk", epochs, seeds, std::cout); }));
  }
  emit(7, "evaluator correctness", guarded(criterion7));
  emit(8, "checkpoint round trip", guarded([&] { return criterion8(work); }));
  emit(9, "determinism", guarded([&] { return criterion9(work / "det"); }));

  if (!report.empty()) {
    std::ofstream out(report);
    for (const auto& l : lines) out << l << "\n";
  }
  return all ? 0 : 1;
}
