// hierspx: batch command line for hierarchical superpixel clustering,
// cluster decoding, metrics, gradient checks, toy-network training and
// decode benchmarks.
//
// Exit codes: 0 success, 1 gradcheck above threshold, 2 invalid usage,
// invalid input or I/O failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hierspx/bench.hpp"
#include "hierspx/clustering.hpp"
#include "hierspx/gradcheck.hpp"
#include "hierspx/io.hpp"
#include "hierspx/metrics.hpp"
#include "hierspx/parallel.hpp"
#include "hierspx/superpixel.hpp"
#include "hierspx/toy_fcn.hpp"

namespace fs = std::filesystem;
using namespace hierspx;

namespace {

constexpr int kExitGradcheck = 1;
constexpr int kExitInvalid = 2;

void emit(const Json& report, const std::string& path) {
  if (!path.empty()) write_report(report, path);
  std::cout << report.dump(2) << "\n";
}

struct SegmentArgs {
  std::string input;
  std::size_t levels = 3;
  double tau = kDefaultTau;
  double pos_weight = 0.5;
  std::string similarity = "nse";
  std::string color = "lab";
  std::string labels_out;
  std::string overlay_out;
  std::string per_level_dir;
  std::string report;
  std::uint64_t seed = 42;
};

int run_segment(const SegmentArgs& a) {
  PipelineConfig cfg;
  cfg.levels = a.levels;
  cfg.tau = a.tau;
  cfg.pos_weight = a.pos_weight;
  cfg.similarity = a.similarity == "cosine" ? Similarity::cosine
                                            : Similarity::neg_sq_euclidean;
  cfg.color = a.color == "rgb" ? ColorSpace::rgb : ColorSpace::lab;
  if (!fs::exists(a.input)) throw IoError("input file not found: " + a.input);
  FeatureMap image = read_image(a.input);
  if (image.channels() != 3)
    throw InvalidInput("segment: " + a.input + " is not a colour (P6) image");
  auto levels = hierarchical_superpixels(image, cfg, default_threads());
  const LabelMap& finest = levels.front().labels;
  if (!a.labels_out.empty()) write_labels(finest, a.labels_out);
  if (!a.overlay_out.empty()) write_image(overlay_boundaries(image, finest), a.overlay_out);

  Json report;
  report["input"] = a.input;
  report["height"] = image.height();
  report["width"] = image.width();
  report["levels"] = a.levels;
  report["tau"] = a.tau;
  report["pos_weight"] = a.pos_weight;
  report["similarity"] = a.similarity;
  report["color"] = a.color;
  Json per_level = Json::array();
  if (!a.per_level_dir.empty()) fs::create_directories(a.per_level_dir);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    std::size_t stride = std::size_t{2} << l;
    Json e;
    e["stride"] = stride;
    e["labels"] = levels[l].labels.distinct_labels();
    e["seeds"] = levels[l].field.seed_dims().pixels();
    if (!a.per_level_dir.empty()) {
      fs::path dir(a.per_level_dir);
      std::string tag = "s" + std::to_string(stride);
      write_labels(levels[l].labels, dir / ("labels_" + tag + ".csv"));
      write_image(overlay_boundaries(image, levels[l].labels),
                  dir / ("overlay_" + tag + ".ppm"));
      write_atomically(dir / ("field_" + tag + ".asf"), [&](std::ostream& os) {
        write_assignment_field(os, levels[l].field);
      });
    }
    per_level.push_back(e);
  }
  report["per_level"] = per_level;
  emit(report, a.report);
  return 0;
}

struct MetricsArgs {
  std::string pred;
  std::string gt;
  std::size_t br_tolerance = 2;
  std::string leakage_out;
  std::string report;
  std::uint64_t seed = 42;
};

int run_metrics(const MetricsArgs& a) {
  for (const auto& p : {a.pred, a.gt})
    if (!fs::exists(p)) throw IoError("label file not found: " + p);
  LabelMap pred = read_labels(a.pred);
  LabelMap gt = read_labels(a.gt);
  MetricReport m = evaluate_labels(pred, gt, a.br_tolerance);
  if (!a.leakage_out.empty()) {
    LabelMap mask(pred.dims());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = m.leakage[i];
    write_labels(mask, a.leakage_out);
  }
  std::size_t leaked = 0;
  for (auto v : m.leakage) leaked += v;
  Json report;
  report["pred"] = a.pred;
  report["gt"] = a.gt;
  report["br_tolerance"] = a.br_tolerance;
  report["asa"] = m.asa;
  report["br"] = m.br;
  report["ue"] = m.ue;
  report["leakage_pixels"] = leaked;
  report["miou"] = m.miou;
  report["pixel_acc"] = m.pixel_acc;
  emit(report, a.report);
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 42;
  double eps = 1e-6;
  std::string report;
};

int run_gradcheck(const GradcheckArgs& a) {
  auto entries = gradcheck::run_all(a.seed, a.eps);
  Json report = gradcheck::to_json(entries, a.seed, a.eps);
  emit(report, a.report);
  int status = 0;
  for (const auto& e : entries)
    if (!(e.max_rel_error < gradcheck::kThreshold)) {
      std::cerr << "gradcheck: " << e.operation << " max rel err "
                << e.max_rel_error << " exceeds " << gradcheck::kThreshold << "\n";
      status = kExitGradcheck;
    }
  return status;
}

struct TrainArgs {
  std::string decoder = "both";
  std::size_t iters = 2000;
  std::size_t batch = 8;
  double lr = 0.1;
  std::uint64_t seed = 42;
  std::size_t train_count = 256;
  std::size_t test_count = 64;
  std::size_t size = 64;
  std::size_t k_dim = 16;
  double tau = kDefaultTau;
  std::string report;
  std::string checkpoint_dir;
};

Json metrics_json(const toy::EvalMetrics& m) {
  Json j;
  j["miou"] = m.miou;
  j["pixel_acc"] = m.pixel_acc;
  j["boundary_f"] = m.boundary_f;
  j["class_iou"] = m.class_iou;
  return j;
}

int run_train(const TrainArgs& a) {
  toy::SyntheticOptions data_opts;
  data_opts.size = a.size;
  auto train_set = toy::gen_synthetic(a.seed, a.train_count, data_opts);
  auto test_set = toy::gen_synthetic(a.seed + 1'000'003, a.test_count, data_opts);
  std::vector<toy::Decoder> modes;
  if (a.decoder == "cluster" || a.decoder == "both") modes.push_back(toy::Decoder::cluster);
  if (a.decoder == "bilinear" || a.decoder == "both") modes.push_back(toy::Decoder::bilinear);

  Json report;
  Json config;
  config["decoder"] = a.decoder;
  config["iterations"] = a.iters;
  config["batch_size"] = a.batch;
  config["base_lr"] = a.lr;
  config["momentum"] = 0.9;
  config["poly_power"] = 0.9;
  config["seed"] = a.seed;
  config["train_count"] = a.train_count;
  config["test_count"] = a.test_count;
  config["size"] = a.size;
  config["k_dim"] = a.k_dim;
  config["tau"] = a.tau;
  report["config"] = config;
  Json runs = Json::array();
  Json miou;
  if (!a.checkpoint_dir.empty()) fs::create_directories(a.checkpoint_dir);
  for (toy::Decoder mode : modes) {
    toy::TrainConfig tc;
    tc.iterations = a.iters;
    tc.batch_size = a.batch;
    tc.base_lr = a.lr;
    tc.decoder = mode;
    tc.seed = a.seed;
    tc.shape.k_dim = a.k_dim;
    tc.tau = a.tau;
    tc.threads = default_threads();
    toy::TrainResult result = toy::train(tc, train_set);
    toy::EvalMetrics m = toy::evaluate(result.params, test_set, mode);
    Json run;
    run["decoder"] = toy::to_string(mode);
    run["metrics"] = metrics_json(m);
    run["loss_curve"] = result.loss_curve;
    runs.push_back(run);
    miou[toy::to_string(mode)] = m.miou;
    std::cerr << std::fixed << std::setprecision(4) << toy::to_string(mode)
              << ": mIoU " << m.miou << "  pixel acc " << m.pixel_acc
              << "  boundary F " << m.boundary_f << "\n";
    if (!a.checkpoint_dir.empty())
      toy::save_checkpoint(result.params, fs::path(a.checkpoint_dir) /
                                              (std::string(toy::to_string(mode)) + ".ckpt"));
  }
  report["runs"] = runs;
  report["final_miou"] = miou;
  if (!a.report.empty()) write_report(report, a.report);
  Json summary = report;
  for (auto& r : summary["runs"]) {
    Json curve = r["loss_curve"];
    r["initial_loss"] = curve.empty() ? Json(nullptr) : curve.front();
    r["final_loss"] = curve.empty() ? Json(nullptr) : curve.back();
    r.erase("loss_curve");
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct BenchArgs {
  bench::BenchConfig cfg;
  std::string report;
};

int run_bench(const BenchArgs& a) {
  bench::BenchReport r = bench::run_bench(a.cfg);
  Json report = bench::to_json(r);
  if (r.sparse_dense_max_diff && !(*r.sparse_dense_max_diff < 1e-9)) {
    emit(report, a.report);
    throw Error("bench: sparse and dense decode disagree by " +
                std::to_string(*r.sparse_dense_max_diff));
  }
  emit(report, a.report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical superpixel clustering and cluster decoding"};
  app.require_subcommand(1);

  const std::map<std::string, std::string> similarity_names{{"cosine", "cosine"},
                                                             {"nse", "nse"}};

  SegmentArgs seg;
  auto* segment = app.add_subcommand("segment", "Training-free hierarchical superpixels");
  segment->add_option("--input", seg.input, "Input P6 image")->required();
  segment->add_option("--levels", seg.levels, "Hierarchical levels (1-5)")
      ->capture_default_str()->check(CLI::Range(1, 5));
  segment->add_option("--tau", seg.tau, "Softmax temperature")->capture_default_str();
  segment->add_option("--pos-weight", seg.pos_weight, "Position feature weight")
      ->capture_default_str();
  segment->add_option("--similarity", seg.similarity, "cosine | nse")
      ->capture_default_str()->check(CLI::IsMember({"cosine", "nse"}));
  segment->add_option("--color", seg.color, "lab | rgb")
      ->capture_default_str()->check(CLI::IsMember({"lab", "rgb"}));
  segment->add_option("--labels-out", seg.labels_out, "Finest-level label CSV");
  segment->add_option("--overlay-out", seg.overlay_out, "Boundary overlay PPM");
  segment->add_option("--per-level-dir", seg.per_level_dir,
                      "Directory for per-level labels, overlays and fields");
  segment->add_option("--report", seg.report, "JSON report path");
  segment->add_option("--seed", seg.seed, "RNG seed")->capture_default_str();

  MetricsArgs met;
  auto* metrics = app.add_subcommand("metrics", "Superpixel / segmentation metrics");
  metrics->add_option("--pred", met.pred, "Predicted label CSV")->required();
  metrics->add_option("--gt", met.gt, "Ground-truth label CSV")->required();
  metrics->add_option("--br-tolerance", met.br_tolerance, "Boundary recall tolerance (px)")
      ->capture_default_str();
  metrics->add_option("--leakage-out", met.leakage_out, "Leakage mask CSV (0/1)");
  metrics->add_option("--report", met.report, "JSON report path");
  metrics->add_option("--seed", met.seed, "RNG seed")->capture_default_str();

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of all adjoints");
  grad->add_option("--seed", gc.seed, "RNG seed")->capture_default_str();
  grad->add_option("--eps", gc.eps, "Central-difference step")
      ->capture_default_str()->check(CLI::Range(1e-8, 1e-3));
  grad->add_option("--report", gc.report, "JSON report path");

  TrainArgs tr;
  auto* train = app.add_subcommand("train-toy", "Train the toy network on synthetic data");
  train->add_option("--decoder", tr.decoder, "cluster | bilinear | both")
      ->capture_default_str()->check(CLI::IsMember({"cluster", "bilinear", "both"}));
  train->add_option("--iters", tr.iters, "Training iterations")->capture_default_str();
  train->add_option("--batch", tr.batch, "Batch size")
      ->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--lr", tr.lr, "Base learning rate")
      ->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--seed", tr.seed, "RNG seed")->capture_default_str();
  train->add_option("--train-count", tr.train_count, "Training samples")
      ->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--test-count", tr.test_count, "Held-out samples")
      ->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--size", tr.size, "Image size (>= 32, multiple of 4)")
      ->capture_default_str();
  train->add_option("--k-dim", tr.k_dim, "Projection dimension")
      ->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--tau", tr.tau, "Softmax temperature")
      ->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--report", tr.report, "JSON report path");
  train->add_option("--checkpoint-dir", tr.checkpoint_dir, "Directory for checkpoints");

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Time sparse vs bilinear vs dense decode");
  bench_cmd->add_option("--height", bn.cfg.height, "Finest height")->capture_default_str();
  bench_cmd->add_option("--width", bn.cfg.width, "Finest width")->capture_default_str();
  bench_cmd->add_option("--levels", bn.cfg.levels, "Decode levels")->capture_default_str();
  bench_cmd->add_option("--trials", bn.cfg.trials, "Timed trials")
      ->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--channels", bn.cfg.channels, "Channels of the coarse map")
      ->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--threads", bn.cfg.threads,
                        "Threads for the parallel sparse path (1 = serial only)")
      ->capture_default_str();
  bench_cmd->add_option("--seed", bn.cfg.seed, "RNG seed")->capture_default_str();
  bench_cmd->add_option("--report", bn.report, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (*segment) return run_segment(seg);
    if (*metrics) return run_metrics(met);
    if (*grad) return run_gradcheck(gc);
    if (*train) {
      if (tr.size < 32 || tr.size % 4 != 0)
        throw InvalidInput("train-toy: --size must be >= 32 and a multiple of 4");
      return run_train(tr);
    }
    if (*bench_cmd) {
      bn.cfg.threads = bn.cfg.threads == 0 ? default_threads() : bn.cfg.threads;
      return run_bench(bn);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
