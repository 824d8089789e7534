// Acceptance checks 1-8. Prints one PASS/FAIL line per criterion with the
// measured numbers. Exits nonzero if any criterion fails, except those named
// with --known-failure N, which are still reported as FAIL.

#include "../unit/fixtures.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace evtrack;
using namespace evtrack::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------------ 1

Outcome threshold_suite() {
  const auto t0 = Clock::now();
  const auto tp = ThresholdParams::for_contrast(10.0 / 255.0);
  bool ok = smooth_threshold(tp.C, tp) == 0.5;
  ok = ok && std::abs(smooth_threshold(0.0, tp) - 1.0 / (1.0 + std::exp(tp.w * tp.C))) < 1e-15;
  double last = smooth_threshold(0.0, tp);
  int odd_violations = 0, mono_violations = 0;
  for (int i = 1; i <= 1000; ++i) {
    const double x = 0.5 * i / 1000.0;
    const double gp = smooth_threshold(x, tp), gm = smooth_threshold(-x, tp);
    // equality holds once the sigmoid saturates; allow one rounding step
    if (std::abs(gp + gm) > 2 * tp.eps / (x + tp.eps) + 1e-15) ++odd_violations;
    if (gp < last) ++mono_violations;
    last = gp;
  }
  const double secs = seconds_since(t0);
  ok = ok && odd_violations == 0 && mono_violations == 0 && secs < 1.0;
  return {ok, fmt("odd violations %d, monotonicity violations %d, %.3f s", odd_violations, mono_violations, secs)};
}

// ------------------------------------------------------------------ 2

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, double>> rows;
  {
    SheetFixture fx;
    auto add = [&](const std::string& name, auto&& f) { rows.emplace_back(name, grad_rel_error(f, fx.theta)); };
    add("event", [&](std::span<const double> t, std::vector<double>* g) { return e_event(*fx.fc, t, g); });
    const auto assign = silhouette_assignment(*fx.fc, fx.theta);
    add("sil", [&](std::span<const double> t, std::vector<double>* g) { return e_sil(*fx.fc, t, g, 1.0, &assign); });
    const auto& seq = *fx.seq;
    const auto& tmpl = seq.model->template_mesh().template_vertices();
    auto vertex_term = [&](auto term) {
      return [&, term](std::span<const double> t, std::vector<double>* g) {
        const auto v = detail::free_vertices(t);
        std::vector<Vec3> gv(g ? v.size() : 0, Vec3::Zero());
        const double e = term(v, g ? &gv : nullptr);
        if (g) detail::vertex_grad_to_flat(gv, g, 1.0);
        return e;
      };
    };
    add("top", vertex_term([&](const std::vector<Vec3>& v, std::vector<Vec3>* g) { return e_top(v, tmpl, seq.adjacency, g); }));
    add("iso", vertex_term([&](const std::vector<Vec3>& v, std::vector<Vec3>* g) { return e_iso(v, tmpl, seq.adjacency, g); }));
    add("geo", vertex_term([&](const std::vector<Vec3>& v, std::vector<Vec3>* g) { return e_geo(v, seq.geodesics, g); }));
    add("reg", [&](std::span<const double> t, std::vector<double>* g) { return e_reg(t, fx.fc->prev_params, g); });
    // total with the assignment frozen at the evaluation point
    add("total_mesh", [&](std::span<const double> t, std::vector<double>* g) {
      ObjectiveWeights w = seq.weights;
      const double sil_w = w.lambda_sil;
      SequenceContext no_sil = seq;
      no_sil.weights.lambda_sil = 0.0;
      FrameContext fc = *fx.fc;
      fc.seq = &no_sil;
      std::vector<double> gs;
      if (g) gs.assign(t.size(), 0.0);
      const double rest = evaluate_objective(fc, t, g).total;
      const double sil = e_sil(*fx.fc, t, g ? &gs : nullptr, 1.0, &assign);
      if (g)
        for (std::size_t i = 0; i < t.size(); ++i) (*g)[i] += sil_w * gs[i];
      return rest + sil_w * sil;
    });
  }
  {
    ChainFixture fx;
    auto add = [&](const std::string& name, auto&& f) { rows.emplace_back(name, grad_rel_error(f, fx.theta)); };
    add("event_param", [&](std::span<const double> t, std::vector<double>* g) { return e_event(*fx.fc, t, g); });
    add("no_event", [&](std::span<const double> t, std::vector<double>* g) { return e_no_event(*fx.fc, t, g); });
    add("total_param", [&](std::span<const double> t, std::vector<double>* g) {
      return evaluate_objective(*fx.fc, t, g).total;
    });
  }
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string detail;
  for (const auto& [name, err] : rows) {
    worst = std::max(worst, err);
    detail += fmt("%s=%.1e ", name.c_str(), err);
  }
  detail += fmt("(%.1f s)", secs);
  return {worst < 1e-4 && secs < 120.0, detail};
}

// ------------------------------------------------------------------ 3

Outcome regularizer_analytics() {
  const TriMesh mesh = make_sheet(10, 10, 1.0);
  const Adjacency adj = build_adjacency(mesh);
  const auto& tmpl = mesh.template_vertices();
  double top_err = 0, iso_err = 0;
  for (int i : {0, 11, 45, 99}) {
    auto v = tmpl;
    const Vec3 d(0.02, -0.03, 0.04);
    v[i] += d;
    top_err = std::max(top_err, std::abs(e_top(v, tmpl, adj) - 2.0 * adj[i].size() * d.squaredNorm()));
  }
  for (double s : {0.7, 1.2}) {
    std::vector<Vec3> v;
    for (const auto& p : tmpl) v.push_back(s * p);
    double expect = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
      for (int j : adj[i]) expect += (s - 1) * (s - 1) * (tmpl[i] - tmpl[j]).squaredNorm();
    iso_err = std::max(iso_err, std::abs(e_iso(v, tmpl, adj) - expect));
  }
  const auto geo = geodesic_distances(mesh, subsample_vertices(mesh, 10));
  const double geo_rigid = e_geo(apply_rigid(tmpl, RigidTransform{Vec3(1, 2, 3), Vec3(0.5, -0.4, 0.3)}), geo);
  const bool ok = top_err <= 1e-9 && iso_err <= 1e-9 && std::abs(geo_rigid) <= 1e-9;
  return {ok, fmt("top err %.1e, iso err %.1e, geo on rigid motion %.1e", top_err, iso_err, geo_rigid)};
}

// ------------------------------------------------------------------ 4

Outcome closed_loop() {
  const auto t0 = Clock::now();
  RunConfig cfg = load_config(fs::path(EVTRACK_CONFIG_DIR) / "sheet.cfg");
  cfg.contrast = 10.0;
  cfg.window = 1200;
  cfg.frames = 50;
  const SimulationRun sim = simulate(cfg);
  if (sim.frames.size() < 50) return {false, fmt("only %zu event windows", sim.frames.size())};
  const auto run = track(cfg, sim.scene.model, sim.sequence.stream, sim.initial_params, sim.window);
  const auto gt_all = sim.gt_vertices();
  const std::vector<std::vector<Vec3>> gt(gt_all.begin(), gt_all.begin() + 50);
  const auto tracked = run.vertices();
  const std::vector<std::vector<Vec3>> baseline(50, sim.scene.model->world_vertices(sim.initial_params));
  const double e_tracked = e_3d(tracked, gt).mean;
  const double e_base = e_3d(baseline, gt).mean;
  int decreased = 0;
  for (std::size_t i = 0; i < run.result.size(); ++i)
    if (!run.result.failed[i] && run.result.final_objective[i] < run.result.initial_objective[i]) ++decreased;
  const double frac = decreased / 50.0;
  const double secs = seconds_since(t0);
  const bool a = frac >= 0.9, b = e_tracked * 2.0 <= e_base, c = secs <= 1800.0;
  return {a && b && c,
          fmt("(a) objective decreased on %.0f%% of frames [%s]; (b) e3d tracked %.4f vs static template %.4f, "
              "ratio %.2f, need <= 0.50 [%s]; %.0f s [%s]",
              100 * frac, a ? "ok" : "no", e_tracked, e_base, e_tracked / e_base, b ? "ok" : "no", secs,
              c ? "ok" : "no")};
}

// ------------------------------------------------------------------ 5

Outcome ablation() {
  double with_sum = 0, without_sum = 0;
  std::string detail;
  for (double amp : {1.0, 1.4}) {
    RunConfig cfg = load_config(fs::path(EVTRACK_CONFIG_DIR) / "chain.cfg");
    cfg.amplitude = amp;
    cfg.frames = 30;
    const SimulationRun sim = simulate(cfg);
    const auto gt_all = sim.gt_joints();
    double e[2];
    for (int k = 0; k < 2; ++k) {
      RunConfig c = cfg;
      c.weights.lambda1 = k == 0 ? 0.1 : 0.0;
      const auto run = track(c, sim.scene.model, sim.sequence.stream, sim.initial_params, sim.window);
      const std::vector<std::vector<Vec3>> gt(gt_all.begin(), gt_all.begin() + run.result.size());
      e[k] = e_joint3d(run.joints(), gt).mean;
    }
    with_sum += e[0];
    without_sum += e[1];
    detail += fmt("amp %.1f: all terms %.4f, no-event off %.4f; ", amp, e[0], e[1]);
  }
  detail += fmt("suite mean %.4f vs %.4f", with_sum / 2, without_sum / 2);
  return {without_sum > with_sum, detail};
}

// ------------------------------------------------------------------ 6

Outcome adaptive_sampling() {
  RunConfig cfg = load_config(fs::path(EVTRACK_CONFIG_DIR) / "translate_adaptive.cfg");
  cfg.adaptive = true;
  cfg.adaptive_lambda = 2.0;
  cfg.contrast = 10.0;
  const SimulationRun sim = simulate(cfg);
  const double lc = cfg.adaptive_lambda * cfg.contrast_unit();
  const auto& change = sim.sequence.max_step_change;
  // step 1 follows the fixed first interval; adaptive intervals start after it
  int inside = 0, total = 0;
  for (std::size_t k = 2; k < change.size(); ++k) {
    ++total;
    if (change[k] >= 0.5 * lc && change[k] <= 2.0 * lc) ++inside;
  }
  const double frac = total ? static_cast<double>(inside) / total : 0.0;
  return {total > 0 && frac >= 0.9,
          fmt("%d of %d adaptive steps within [%.4f, %.4f] (%.0f%%)", inside, total, 0.5 * lc, 2 * lc, 100 * frac)};
}

// ------------------------------------------------------------------ 7

std::string round_trip_csv(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig cfg = small_sheet_config();
  cfg.frames = 4;
  cfg.noise_per_step = 3;
  cfg.seed = 1234;
  const SimulationRun sim = simulate(cfg);
  write_simulation(dir / "sim", cfg, sim);
  const auto stream = read_events(find_events(dir / "sim"), format_for(find_events(dir / "sim")));
  const auto theta0 = read_params(dir / "sim" / "init_params.txt");
  const auto model = model_for(cfg, dir / "sim");
  const auto run = track(cfg, model, stream, theta0, sim.window);
  write_tracking(dir / "trk", run);
  fs::create_directories(dir / "gt");
  for (std::size_t i = 0; i < run.result.size(); ++i) fs::copy(dir / "sim" / "gt" / frame_name(i), dir / "gt");
  write_metric_csv(dir / "metrics.csv", evaluate_dirs(dir / "trk", dir / "gt", false));
  std::ifstream in(dir / "metrics.csv", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "evtrack_acceptance_det";
  const std::string a = round_trip_csv(base / "a");
  const std::string b = round_trip_csv(base / "b");
  fs::remove_all(base);
  return {!a.empty() && a == b, fmt("%zu-byte metric CSVs %s", a.size(), a == b ? "identical" : "differ")};
}

// ------------------------------------------------------------------ 8

Outcome event_io() {
  std::mt19937_64 rng(8);
  EventStream s;
  s.width = 1280;
  s.height = 720;
  s.events.reserve(1000000);
  std::uint64_t t = 0;
  for (int i = 0; i < 1000000; ++i) {
    t += rng() % 4;
    s.events.push_back({t, static_cast<std::uint16_t>(rng() % 1280), static_cast<std::uint16_t>(rng() % 720),
                        static_cast<std::int8_t>(rng() & 1 ? 1 : -1)});
  }
  const fs::path dir = fs::temp_directory_path();
  bool ok = true;
  for (auto [fmt_kind, name] : {std::pair{EventFormat::kText, "evtrack_acc.txt"}, {EventFormat::kBinary, "evtrack_acc.bin"}}) {
    write_events(dir / name, s, fmt_kind);
    const auto back = read_events(dir / name, fmt_kind);
    ok = ok && back.width == s.width && back.height == s.height && back.events == s.events;
    fs::remove(dir / name);
  }
  // normalization examples
  EventStream one{10, 10, {{1, 3, 4, 1}}};
  const auto f1 = accumulate(one, 0, 1);
  double others = 0;
  for (std::size_t i = 0; i < f1.values.size(); ++i)
    if (i != 4 * 10 + 3) others += std::abs(f1.values[i]);
  EventStream mixed{4, 4, {{1, 0, 0, 1}, {2, 0, 0, 1}, {3, 1, 1, -1}}};
  const auto f2 = accumulate(mixed, 0, 3);
  const bool norm = f1.at(3, 4) == 1.0 && others == 0.0 && f2.at(0, 0) == 1.0 && f2.at(1, 1) == -0.5 &&
                    f2.at(2, 2) == 0.0;
  return {ok && norm, fmt("1e6-event text and binary round trip %s; normalization examples %s",
                          ok ? "lossless" : "MISMATCH", norm ? "exact" : "WRONG")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::size_t> known;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--known-failure") known.insert(std::stoul(argv[++i]));

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"threshold function", threshold_suite},
      {"gradient correctness", gradient_suite},
      {"regularizer analytics", regularizer_analytics},
      {"closed-loop sheet recovery", closed_loop},
      {"no-event ablation direction", ablation},
      {"adaptive sampling", adaptive_sampling},
      {"round-trip determinism", determinism},
      {"event I/O", event_io},
  };
  int failed = 0, blocking = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool excused = known.contains(i + 1);
    failed += o.pass ? 0 : 1;
    blocking += o.pass || excused ? 0 : 1;
    std::printf("%s %zu %s: %s%s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                !o.pass && excused ? " (known failure)" : "");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return blocking == 0 ? 0 : 1;
}
