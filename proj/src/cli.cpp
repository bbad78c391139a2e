#include "rsnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rsnet/check.hpp"
#include "rsnet/checkpoint.hpp"
#include "rsnet/data.hpp"
#include "rsnet/error.hpp"
#include "rsnet/model.hpp"
#include "rsnet/workflow.hpp"

#ifndef RSNET_SOURCE_DIGEST
#define RSNET_SOURCE_DIGEST "unknown"
#endif

namespace rsnet {

std::string source_digest() { return RSNET_SOURCE_DIGEST; }

namespace {

namespace fs = std::filesystem;

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

// One manifest per run, next to the outputs.
struct Manifest {
  std::vector<std::string> args;
  std::string config;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::time_t started = std::time(nullptr);

  void write(const fs::path& dir) {
    const fs::path path = dir / "run_manifest.txt";
    outputs.push_back(path.string());
    char when[32];
    std::strftime(when, sizeof when, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&started));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ostringstream os;
    os << "command = rsnet " << join(args, " ") << "\n"
       << "config = " << config << "\n"
       << "seed = " << seed << "\n"
       << "source_digest = " << source_digest() << "\n"
       << "started_utc = " << when << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", secs);
    os << "wall_clock_seconds = " << buf << "\n"
       << "outputs = " << join(outputs, ", ") << "\n";
    write_text(path, os.str());
  }
};

Model<float> model_from(const std::string& ckpt, const std::string& config) {
  if (ckpt.empty()) throw UsageError("--ckpt is required");
  Model<float> model = load_checkpoint<float>(ckpt);
  if (!config.empty() && ArchConfig::resolve(config).digest() != model.config().digest()) {
    throw DataError("config " + config + " does not match the architecture stored in " + ckpt);
  }
  return model;
}

struct Args {
  // shared
  std::string config, data, out, ckpt;
  std::uint64_t seed = 1;
  bool seed_set = false;
  // summarize
  std::vector<std::int64_t> input_size;
  // gendata
  std::string spec;
  std::int64_t n = 0;
  bool force = false;
  // train
  int epochs = 30;
  int batch = 8;
  double lr = 0.002;
  std::int64_t max_steps = 0;
  std::string resume;
  // eval / detect
  double conf = -1;
  double nms_iou = 0.6;
  std::string image, heatmap;
  // check
  bool inject_fault = false;
  int shapes = 5;
  // tune
  std::int64_t target_params = 1490000;
  double target_flops = 5.1e9;
  double tolerance = 0.25;
};

int cmd_summarize(const Args& a, Manifest& m, std::ostream& out) {
  const std::string name = a.config.empty() ? "rsnet-ref" : a.config;
  const ArchConfig cfg = ArchConfig::resolve(name);
  std::int64_t h = cfg.input_h, w = cfg.input_w;
  if (!a.input_size.empty()) {
    if (a.input_size.size() > 2) throw UsageError("--input-size takes one or two values");
    h = a.input_size[0];
    w = a.input_size.back();
    if (h <= 0 || w <= 0 || h % 32 || w % 32) throw UsageError("--input-size must be positive multiples of 32");
  }
  const Model<float> model(cfg, a.seed);
  const CountReport r = model.count(h, w);
  out << "# config " << cfg.name << "\n" << r.table();
  if (!a.out.empty()) {
    ensure_dir(a.out);
    const fs::path csv = fs::path(a.out) / "summary.csv";
    write_text(csv, r.csv());
    write_text(fs::path(a.out) / "graph.txt", model.graph().text());
    m.outputs = {csv.string(), (fs::path(a.out) / "graph.txt").string()};
    m.config = name;
    m.write(a.out);
  } else {
    out << "\n" << r.csv();
  }
  return kExitOk;
}

int cmd_gendata(const Args& a, Manifest& m, std::ostream& out) {
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.n <= 0) throw UsageError("--n must be positive");
  SyntheticSceneSpec spec = a.spec.empty() ? SyntheticSceneSpec{} : SyntheticSceneSpec::load(a.spec);
  if (a.seed_set) spec.seed = a.seed;
  spec.validate();
  m.outputs = generate_dataset(spec, a.n, a.out, a.force);
  m.config = a.spec.empty() ? "(default scene spec)" : a.spec;
  m.seed = spec.seed;
  out << "wrote " << a.n << " scenes to " << a.out << " (seed " << spec.seed << ")\n";
  m.write(a.out);
  return kExitOk;
}

int cmd_train(const Args& a, Manifest& m, std::ostream& out, std::ostream& err) {
  if (a.data.empty() || a.out.empty()) throw UsageError("--data and --out are required");
  const Dataset data = load_dataset(a.data);
  ensure_dir(a.out);

  Model<float> model = [&] {
    if (a.resume.empty()) return Model<float>(ArchConfig::resolve(a.config.empty() ? "rsnet-desk" : a.config), a.seed);
    return model_from(a.resume, a.config);
  }();
  if (model.config().input_channels != 1 && model.config().input_channels != 3) {
    throw UsageError("training data is grayscale; input_channels must be 1 or 3");
  }
  AdamWOptions ao;
  ao.lr = a.lr;
  AdamW<float> opt(model.params(), ao);
  if (!a.resume.empty()) load_into(model, read_checkpoint_file(a.resume), &opt);

  TrainOptions to;
  to.epochs = a.epochs;
  to.batch_size = a.batch;
  to.lr = a.lr;
  to.max_steps = a.max_steps;
  to.seed = a.seed;

  const fs::path ckpt = fs::path(a.out) / "model.rsnt";
  const fs::path log = fs::path(a.out) / "loss.csv";
  const bool append = !a.resume.empty() && fs::exists(log);
  std::ofstream csv(log, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("cannot write " + log.string());
  if (!append) csv << loss_csv_header();

  const std::int64_t per_epoch = steps_per_epoch(static_cast<std::int64_t>(data.samples.size()), a.batch);
  const std::int64_t total = total_steps(to, static_cast<std::int64_t>(data.samples.size()));
  err << "training " << model.config().name << " on " << data.samples.size() << " images, steps "
      << opt.step_count() << ".." << total << "\n";
  double epoch_loss = 0;
  std::int64_t epoch_rows = 0;
  train(model, opt, data, to, [&](const LossLogRow& row) {
    csv << loss_csv_row(row);
    epoch_loss += row.total;
    ++epoch_rows;
    const std::int64_t done = row.step + 1;
    if (done % per_epoch == 0 || done == total) {
      csv.flush();
      save_checkpoint(model, ckpt.string(), &opt);
      char line[128];
      std::snprintf(line, sizeof line, "epoch %lld step %lld loss %.4f lr %.6f\n",
                    static_cast<long long>((done + per_epoch - 1) / per_epoch), static_cast<long long>(done),
                    epoch_loss / double(std::max<std::int64_t>(1, epoch_rows)), row.lr);
      err << line << std::flush;
      epoch_loss = 0;
      epoch_rows = 0;
    }
  });
  save_checkpoint(model, ckpt.string(), &opt);
  m.config = !a.resume.empty() ? a.resume : a.config.empty() ? "rsnet-desk" : a.config;
  m.outputs = {ckpt.string(), log.string()};
  m.write(a.out);
  out << "checkpoint " << ckpt.string() << "\nloss log " << log.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Args& a, Manifest& m, std::ostream& out) {
  if (a.data.empty()) throw UsageError("--data is required");
  const Model<float> model = model_from(a.ckpt, a.config);
  const Dataset data = load_dataset(a.data);
  DetectOptions o;
  o.conf = a.conf < 0 ? 0.001 : a.conf;
  o.nms_iou = a.nms_iou;
  const APResult r = evaluate_model(model, data, o);
  out << r.table();
  if (!a.out.empty()) {
    ensure_dir(a.out);
    const fs::path csv = fs::path(a.out) / "ap.csv";
    write_text(csv, r.csv());
    m.config = a.ckpt;
    m.outputs = {csv.string()};
    m.write(a.out);
  } else {
    out << "\n" << r.csv();
  }
  return kExitOk;
}

int cmd_detect(const Args& a, Manifest& m, std::ostream& out) {
  if (a.image.empty()) throw UsageError("--image is required");
  const Model<float> model = model_from(a.ckpt, "");
  const GrayImage image = read_pgm(a.image);
  DetectOptions o;
  o.conf = a.conf < 0 ? 0.25 : a.conf;
  o.nms_iou = a.nms_iou;
  const auto dets = predict(model, {&image}, o).front();
  const std::string text = format_detections(dets);
  out << text;
  if (a.out.empty()) {
    if (!a.heatmap.empty()) throw UsageError("--heatmap needs --out");
    return kExitOk;
  }
  ensure_dir(a.out);
  const std::string stem = fs::path(a.image).stem().string();
  const fs::path txt = fs::path(a.out) / (stem + ".txt");
  const fs::path pgm = fs::path(a.out) / (stem + "_det.pgm");
  write_text(txt, text);
  write_pgm(pgm.string(), annotate(image, dets));
  m.outputs = {txt.string(), pgm.string()};
  if (!a.heatmap.empty()) {
    const fs::path hm = fs::path(a.out) / (stem + "_heat_" + a.heatmap + ".pgm");
    export_heatmap(model, image_tensor(image, model.config().input_channels), a.heatmap, hm.string());
    m.outputs.push_back(hm.string());
  }
  m.config = a.ckpt;
  m.write(a.out);
  return kExitOk;
}

int cmd_check(const Args& a, Manifest& m, std::ostream& out) {
  CheckOptions o;
  o.corrupt_filter = a.inject_fault;
  o.gradient_shapes = a.shapes;
  o.seed = a.seed;
  if (!a.out.empty()) {
    ensure_dir(a.out);
    o.scratch_dir = a.out;
  }
  int failed = 0;
  std::ostringstream report;
  const auto results = run_checks(o, [&](const CheckResult& r) {
    char line[96];
    std::snprintf(line, sizeof line, "%-4s %-28s ", r.ok ? "ok" : "FAIL", r.name.c_str());
    out << line << r.detail << "\n" << std::flush;
    report << line << r.detail << "\n";
    failed += !r.ok;
  });
  out << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " checks passed\n";
  if (!a.out.empty()) {
    const fs::path path = fs::path(a.out) / "check_report.txt";
    write_text(path, report.str());
    m.outputs = {path.string()};
    m.config = a.inject_fault ? "corrupted filter bank" : "built-in";
    m.write(a.out);
  }
  return failed ? kExitFailure : kExitOk;
}

int cmd_tune(const Args& a, std::ostream& out) {
  const auto cands = tune_widths(ArchConfig::resolve(a.config.empty() ? "rsnet-ref" : a.config), a.target_params,
                                 static_cast<std::int64_t>(a.target_flops), a.tolerance);
  char line[160];
  std::snprintf(line, sizeof line, "%10s %9s %6s  %-8s %-12s %5s %5s\n", "params", "GFLOPs", "in", "stem", "stages",
                "neck", "head");
  out << line;
  for (std::size_t i = 0; i < std::min<std::size_t>(10, cands.size()); ++i) {
    const auto& c = cands[i].config;
    const std::string stem = std::to_string(c.stem_widths[0]) + "," + std::to_string(c.stem_widths[1]);
    const std::string stages = std::to_string(c.stage_widths[0]) + "," + std::to_string(c.stage_widths[1]) + "," +
                               std::to_string(c.stage_widths[2]);
    std::snprintf(line, sizeof line, "%10lld %9.3f %6s  %-8s %-12s %5lld %5lld\n",
                  static_cast<long long>(cands[i].params), double(cands[i].flops) / 1e9,
                  cands[i].within_flops ? "yes" : "no", stem.c_str(), stages.c_str(),
                  static_cast<long long>(c.neck_width), static_cast<long long>(c.head_width));
    out << line;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SAR ship detector: data synthesis, training, evaluation and checks", "rsnet"};
  app.require_subcommand(1);
  Args a;
  const auto seed_opt = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& s) {
          a.seed = s;
          a.seed_set = true;
        },
        "random seed (default 1)");
  };

  auto* summarize = app.add_subcommand("summarize", "per-layer parameter and FLOPs table");
  summarize->add_option("--config", a.config, "preset name or config file (default rsnet-ref)");
  summarize->add_option("--input-size", a.input_size, "H [W], multiples of 32");
  summarize->add_option("--out", a.out, "directory for summary.csv, graph.txt and the run manifest");
  seed_opt(summarize);

  auto* gendata = app.add_subcommand("gendata", "write a synthetic SAR dataset");
  gendata->add_option("--spec", a.spec, "scene spec file (key = value)")->check(CLI::ExistingFile);
  gendata->add_option("--n", a.n, "number of images")->required();
  gendata->add_option("--out", a.out, "output directory")->required();
  gendata->add_flag("--force", a.force, "write into a non-empty directory");
  seed_opt(gendata);

  auto* train_cmd = app.add_subcommand("train", "train a detector");
  train_cmd->add_option("--config", a.config, "preset name or config file (default rsnet-desk)");
  train_cmd->add_option("--data", a.data, "dataset directory")->required();
  train_cmd->add_option("--out", a.out, "output directory")->required();
  train_cmd->add_option("--epochs", a.epochs, "epochs")->default_val(30)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", a.batch, "batch size")->default_val(8)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", a.lr, "peak learning rate")->default_val(0.002)->check(CLI::PositiveNumber);
  train_cmd->add_option("--max-steps", a.max_steps, "stop after this many optimizer steps")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--resume", a.resume, "checkpoint to continue from");
  seed_opt(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "mAP of a checkpoint on a dataset");
  eval_cmd->add_option("--config", a.config, "expected architecture (checked against the checkpoint)");
  eval_cmd->add_option("--ckpt", a.ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", a.data, "dataset directory")->required();
  eval_cmd->add_option("--conf", a.conf, "confidence threshold (default 0.001)");
  eval_cmd->add_option("--nms-iou", a.nms_iou, "NMS IoU threshold")->default_val(0.6);
  eval_cmd->add_option("--out", a.out, "directory for ap.csv and the run manifest");

  auto* detect = app.add_subcommand("detect", "detect ships in one PGM image");
  detect->add_option("--ckpt", a.ckpt, "checkpoint")->required();
  detect->add_option("--image", a.image, "binary PGM image")->required();
  detect->add_option("--out", a.out, "directory for detections, annotated image and heat map");
  detect->add_option("--heatmap", a.heatmap, "also export the heat map of this layer tap");
  detect->add_option("--conf", a.conf, "confidence threshold (default 0.25)");
  detect->add_option("--nms-iou", a.nms_iou, "NMS IoU threshold")->default_val(0.6);

  auto* check = app.add_subcommand("check", "run the invariant self-check suite");
  check->add_flag("--inject-filter-fault", a.inject_fault, "test hook: perturb one wavelet filter tap");
  check->add_option("--shapes", a.shapes, "random shapes per gradient case")->default_val(5)->check(CLI::PositiveNumber);
  check->add_option("--out", a.out, "directory for the report and the run manifest");
  seed_opt(check);

  auto* tune = app.add_subcommand("tune", "grid search of widths toward a parameter/FLOPs budget");
  tune->add_option("--config", a.config, "base preset or config file (default rsnet-ref)");
  tune->add_option("--target-params", a.target_params, "parameter target")->default_val(1490000);
  tune->add_option("--target-flops", a.target_flops, "FLOPs target (2 x MACs)")->default_val(5.1e9);
  tune->add_option("--tolerance", a.tolerance, "relative FLOPs window")->default_val(0.25);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  Manifest manifest;
  manifest.args = args;
  manifest.seed = a.seed;
  manifest.config = a.config;
  try {
    if (*summarize) return cmd_summarize(a, manifest, out);
    if (*gendata) return cmd_gendata(a, manifest, out);
    if (*train_cmd) return cmd_train(a, manifest, out, err);
    if (*eval_cmd) return cmd_eval(a, manifest, out);
    if (*detect) return cmd_detect(a, manifest, out);
    if (*check) return cmd_check(a, manifest, out);
    if (*tune) return cmd_tune(a, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace rsnet
