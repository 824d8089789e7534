// Command-line front end: simulate, track, evaluate, gradcheck.

#include "evtrack/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>

namespace {

evtrack::RunConfig load(const std::string& path, const std::vector<std::string>& overrides) {
  evtrack::RunConfig cfg;
  if (!path.empty()) cfg = evtrack::load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw evtrack::InvalidInputError("--set expects key=value, got " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-based non-rigid 3D tracking"};
  app.require_subcommand(1);

  std::string config_path, out_dir, in_dir, gt_dir, pred_dir, metrics_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  int frames = -1;
  bool quiet = false, joints = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a configuration key (key=value)");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
  };

  auto* sim = app.add_subcommand("simulate", "render a built-in scene and write its event stream");
  common(sim);
  sim->add_option("--output,-o", out_dir, "output directory")->required();

  auto* trk = app.add_subcommand("track", "reconstruct the surface for every event window");
  common(trk);
  trk->add_option("--input,-i", in_dir, "directory written by simulate")->required()->check(CLI::ExistingDirectory);
  trk->add_option("--output,-o", out_dir, "output directory")->required();
  trk->add_option("--frames", frames, "track only the first N windows");
  trk->add_flag("--quiet,-q", quiet, "suppress per-iteration progress");

  auto* ev = app.add_subcommand("evaluate", "aligned relative 3D error against ground truth");
  ev->add_option("--pred", pred_dir, "tracking output directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--gt", gt_dir, "ground-truth directory (e.g. <sim>/gt)")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--output,-o", metrics_path, "metric CSV path")->required();
  ev->add_flag("--joints", joints, "compare joints.csv instead of frame meshes");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  common(gc);

  CLI11_PARSE(app, argc, argv);

  try {
    auto configured = [&] {
      auto cfg = load(config_path, overrides);
      if (seed) cfg.seed = seed;
      return cfg;
    };
    if (*sim) {
      const auto cfg = configured();
      const auto run = evtrack::simulate(cfg);
      evtrack::write_simulation(out_dir, cfg, run);
      std::printf("rendered_frames=%zu events=%zu windows=%zu\n", run.sequence.step_times.size(),
                  run.sequence.stream.size(), run.frames.size());
    } else if (*trk) {
      auto cfg = configured();
      if (frames >= 0) cfg.frames = frames;
      const auto model = evtrack::model_for(cfg, in_dir);
      const auto stream = evtrack::read_events(evtrack::find_events(in_dir),
                                               evtrack::format_for(evtrack::find_events(in_dir)));
      const auto theta0 = evtrack::read_params(std::filesystem::path(in_dir) / "init_params.txt");
      const auto scene = evtrack::make_scene(cfg.scene, cfg.scene_options());
      const auto run = evtrack::track(cfg, model, stream, theta0, evtrack::resolve_window(cfg, scene),
                                      quiet ? nullptr : stderr);
      evtrack::write_tracking(out_dir, run);
      std::size_t failed = 0;
      for (bool f : run.result.failed) failed += f ? 1 : 0;
      std::printf("frames=%zu failed=%zu seconds=%.2f\n", run.result.size(), failed, run.result.wall_seconds);
    } else if (*ev) {
      const auto report = evtrack::evaluate_dirs(pred_dir, gt_dir, joints);
      evtrack::write_metric_csv(metrics_path, report, joints ? "ejoint3d" : "e3d");
      std::printf("mean=%.6f std=%.6f frames=%zu\n", report.mean, report.stddev, report.per_frame.size());
    } else if (*gc) {
      const auto cfg = configured();
      int worst = 0;
      for (const auto& row : evtrack::gradcheck(cfg)) {
        std::printf("%-9s max_abs_diff=%.3e max_abs_grad=%.3e rel=%.3e\n", row.term.c_str(), row.max_abs_diff,
                    row.max_abs_grad, row.rel_error);
        if (row.rel_error > 1e-4) worst = 1;
      }
      return worst;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
