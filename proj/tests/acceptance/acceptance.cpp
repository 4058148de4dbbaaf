#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"
#include "gradcheck.hpp"
#include "iqa/attack.hpp"
#include "iqa/evaluation.hpp"
#include "iqa/graph.hpp"
#include "iqa/image_io.hpp"
#include "iqa/study.hpp"
#include "iqa/weight_set.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

// One PASS/FAIL line per acceptance criterion. The process exits 0 when every
// criterion ran to completion, whatever its verdict, and 1 when one of them
// could not be evaluated.

namespace fs = std::filesystem;
using namespace iqa;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const std::vector<std::string> kModels = {"nss", "codebook", "cnn"};
const std::vector<std::string> kMeasures = {"chebyshev", "neg-ssim"};

Outcome gradient_fidelity(const WeightSet& ws) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1601);
  const Shape shape{16, 16, 3};
  struct Target {
    std::string name;
    std::function<ad::Expr(ad::Graph&, ad::Expr)> build;
    bool from_initial_point = false;
  };
  std::vector<std::unique_ptr<QualityModel>> models;
  for (const auto& m : kModels) models.push_back(ws.model(parse_model(m)));
  const auto ssim = fidelity::FidelityMeasure::make_neg_ssim();
  const auto fl2 = ws.measure(fidelity::MeasureKind::feature_l2);
  const auto st = ws.measure(fidelity::MeasureKind::structure_texture);
  const auto x0 = oracle::random_image(16, 16, 3, rng);
  std::vector<Target> targets = {
      {"neg_ssim", [&](ad::Graph& g, ad::Expr x) { return ssim.build(x, g.constant(x0.tensor())); }},
      {"feature_l2", [&](ad::Graph& g, ad::Expr x) { return fl2.build(x, g.constant(x0.tensor())); }},
      {"structure_texture", [&](ad::Graph& g, ad::Expr x) { return st.build(x, g.constant(x0.tensor())); }},
      {"nss_score", [&](ad::Graph&, ad::Expr x) { return models[0]->calibrated(x); }},
      {"codebook_score", [&](ad::Graph&, ad::Expr x) { return models[1]->calibrated(x); }},
      {"cnn_score", [&](ad::Graph&, ad::Expr x) { return models[2]->calibrated(x); }},
      {"objective",
       [&](ad::Graph& g, ad::Expr x) {
         return attack::objective(x, g.constant(x0.tensor()), 4.0, *models[1], ssim, 0.7);
       },
       true},
  };
  bool pass = true;
  double worst_fraction = 1.0;
  std::ostringstream detail;
  for (const auto& t : targets) {
    ad::Graph g;
    const auto x = g.input(shape);
    const auto root = t.build(g, x);
    const auto point = t.from_initial_point ? attack::initial_point(x0, 5) : oracle::random_image(16, 16, 3, rng);
    const auto r = gradcheck::check(g, root, x, point.tensor(), 0, rng);
    const double f = r.pass_fraction();
    worst_fraction = std::min(worst_fraction, f);
    if (f < 0.95 || r.checked() == 0) pass = false;
    detail << t.name << " " << fmt("%.3f", f) << " (" << r.checked() << "/" << r.probes << ") ";
  }
  const double secs = seconds_since(t0);
  if (secs > 300.0) pass = false;
  return {pass, "worst pass fraction " + fmt("%.4f", worst_fraction) + " >= 0.95 required, " + fmt("%.1f", secs) +
                    " s <= 300 s; " + detail.str()};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(1602);
  const int n = 100;
  double e_ssim = 0.0, e_cheb = 0.0, e_conv = 0.0, e_srcc = 0.0, e_r = 0.0;
  const auto ssim = fidelity::FidelityMeasure::make_neg_ssim();
  const auto cheb = fidelity::FidelityMeasure::make_chebyshev();
  for (int t = 0; t < n; ++t) {
    const std::size_t c = t % 2 ? 3 : 1;
    const auto a = oracle::random_image(12 + t % 21, 11 + t % 17, c, rng);
    const auto b = oracle::random_image(a.height(), a.width(), c, rng);
    e_ssim = std::max(e_ssim, std::fabs(ssim(a, b) + oracle::ssim(a, b)));
    e_cheb = std::max(e_cheb, std::fabs(cheb(a, b) - oracle::chebyshev(a, b)));

    const std::size_t stride = 1 + static_cast<std::size_t>(t % 3);
    const bool same = t % 2 == 0;
    const std::size_t k = same ? 3 : 1 + 2 * static_cast<std::size_t>(t % 3);
    const auto xv = oracle::random_tensor(Shape{6 + static_cast<std::size_t>(t % 5), 7, 2}, rng);
    const auto kv = oracle::random_tensor(Shape{3, 2, k, k}, rng);
    ad::Graph g;
    const auto y = ad::conv2d(g.constant(xv), g.constant(kv), stride, same ? ad::Padding::same : ad::Padding::valid);
    const auto ref = oracle::conv2d(xv, kv, stride, same ? k / 2 : 0);
    const auto& got = g.evaluate(y);
    if (got.shape() != ref.shape()) return {false, "convolution output shape differs from the oracle"};
    for (std::size_t i = 0; i < ref.size(); ++i) e_conv = std::max(e_conv, std::fabs(got[i] - ref[i]));

    std::uniform_int_distribution<int> level(0, 6);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    const std::size_t m = 3 + rng() % 40;
    std::vector<double> p(m), q(m), before(m), after(m);
    for (std::size_t i = 0; i < m; ++i) {
      p[i] = t % 2 ? level(rng) : u(rng);
      q[i] = t % 2 ? level(rng) * 0.5 : u(rng);
      before[i] = u(rng);
      after[i] = u(rng);
    }
    p[0] = -1.0;
    q[0] = -1.0;
    e_srcc = std::max(e_srcc, std::fabs(evaluation::srcc(p, q) - oracle::srcc(p, q)));
    e_r = std::max(e_r, std::fabs(evaluation::stability_ratio(before, after).value -
                                  oracle::stability_ratio(before, after)));
  }
  const bool pass = e_ssim <= 1e-10 && e_cheb <= 1e-10 && e_r <= 1e-10 && e_conv <= 1e-12 && e_srcc <= 1e-12;
  std::ostringstream d;
  d << n << " instances each; max error ssim " << fmt("%.1e", e_ssim) << ", chebyshev " << fmt("%.1e", e_cheb)
    << ", R " << fmt("%.1e", e_r) << " (<= 1e-10); conv " << fmt("%.1e", e_conv) << ", srcc "
    << fmt("%.1e", e_srcc) << " (<= 1e-12)";
  return {pass, d.str()};
}

// Synthetic data, one attacked set per (model, measure, image), simulated
// screening and the transfer evaluation, all through the command layer.
struct DeskRun {
  fs::path data;
  std::vector<fs::path> sets;
  std::map<std::string, double> tau;  // per model_measure group
  evaluation::TransferReport report;
  double attack_seconds = 0.0;
};

DeskRun desk_run(const fs::path& work, const fs::path& weights) {
  DeskRun run;
  std::ostringstream sink;
  run.data = work / "data";
  cli::SynthOptions so;
  so.out = run.data;
  cli::cmd_synth(so, sink);
  const auto mos = evaluation::read_score_table(run.data / "proxy_mos.tsv");

  const auto t0 = Clock::now();
  for (const auto& model : kModels) {
    for (const auto& measure : kMeasures) {
      const auto group = model + "_" + measure;
      double tau = -std::numeric_limits<double>::infinity();
      for (const auto& [name, score] : mos) {
        cli::AttackOptions ao;
        ao.image = run.data / (name + ".png");
        ao.model = model;
        ao.measure = measure;
        ao.seed = 7;
        ao.out = work / "sets" / group / name;
        ao.proxy_mos = run.data / "proxy_mos.tsv";
        ao.weights = weights;
        const auto set = cli::cmd_attack(ao, sink);
        double lowest = std::numeric_limits<double>::infinity();
        for (const auto& c : set.candidates) {
          if (c.failed) continue;
          lowest = std::min(lowest, c.fidelity);
        }
        tau = std::max(tau, lowest);
        run.sets.push_back(ao.out);
        std::cerr << "  attacked " << group << " " << name << " (" << fmt("%.0f", seconds_since(t0)) << " s)\n";
      }
      run.tau[group] = tau;
    }
  }
  run.attack_seconds = seconds_since(t0);

  for (const auto& model : kModels) {
    for (const auto& measure : kMeasures) {
      const auto group = model + "_" + measure;
      cli::SimulateOptions sim;
      for (const auto& [name, score] : mos) sim.sets.push_back(work / "sets" / group / name);
      sim.tau = run.tau[group];
      sim.seed = 11;
      sim.weights = weights;
      cli::cmd_simulate(sim, sink);
    }
  }

  cli::EvaluateOptions eo;
  eo.sets = run.sets;
  eo.proxy_mos = run.data / "proxy_mos.tsv";
  eo.out = work / "evaluation";
  eo.weights = weights;
  run.report = cli::cmd_evaluate(eo, sink);
  return run;
}

Outcome attack_efficacy(const DeskRun& run) {
  std::map<std::string, double> initial;
  for (const auto& c : run.report.unattacked) initial[c.attacked] = c.srcc;
  bool pass = run.attack_seconds <= 1800.0;
  std::ostringstream d;
  for (const auto& c : run.report.cells) {
    if (!c.intra()) continue;
    const double drop = initial.at(c.attacked) - c.srcc;
    if (!c.present || drop < 0.3) pass = false;
    d << c.attacked << "/" << c.measure << " " << fmt("%.3f", initial.at(c.attacked)) << "->"
      << fmt("%.3f", c.srcc) << " (drop " << fmt("%.3f", drop) << ") ";
  }
  return {pass, "SRCC drop >= 0.3 required per model and measure, attacks took " + fmt("%.0f", run.attack_seconds) +
                    " s <= 1800 s; " + d.str()};
}

Outcome non_transferability(const DeskRun& run) {
  const double intra = evaluation::mean_delta(run.report, true), inter = evaluation::mean_delta(run.report, false);
  return {intra >= 3.0 * inter, "mean intra |dq| " + fmt("%.3f", intra) + ", mean inter |dq| " + fmt("%.3f", inter) +
                                    ", ratio " + fmt("%.2f", inter > 0.0 ? intra / inter : INFINITY) +
                                    " >= 3 required"};
}

Outcome perturbation_sanity(const DeskRun& run) {
  std::map<std::string, double> worst;
  std::size_t selected = 0;
  for (const auto& dir : run.sets) {
    const auto group = dir.parent_path().filename().string();
    if (!worst.count(group)) worst[group] = 1.0;
    const auto index = cli::read_selection(dir);
    if (!index) continue;
    ++selected;
    const auto set = attack::load_candidate_set(dir);
    const auto& y = set.candidates.at(*index).image;
    std::size_t small = 0;
    for (std::size_t i = 0; i < y.size(); ++i) small += std::fabs(y[i] - set.x0[i]) < 4.0 / 255.0 - 1e-9 ? 1 : 0;
    worst[group] = std::min(worst[group], static_cast<double>(small) / static_cast<double>(y.size()));
  }
  bool pass = selected == run.sets.size();
  std::ostringstream d;
  for (const auto& [group, w] : worst) {
    if (w < 0.9) pass = false;
    d << group << " " << fmt("%.3f", w) << " ";
  }
  return {pass, std::to_string(selected) + "/" + std::to_string(run.sets.size()) +
                    " images have a selection; smallest fraction of pixels below 4/255 (>= 0.90 required): " +
                    d.str()};
}

Outcome enhancement(const fs::path& work, const fs::path& data, const fs::path& weights) {
  const auto mos = evaluation::read_score_table(data / "proxy_mos.tsv");
  std::vector<std::pair<double, std::string>> by_mos;
  for (const auto& [name, score] : mos) by_mos.emplace_back(score, name);
  std::sort(by_mos.begin(), by_mos.end());
  by_mos.resize(std::min<std::size_t>(5, by_mos.size()));
  const auto ssim = fidelity::FidelityMeasure::make_neg_ssim();
  bool pass = by_mos.size() == 5;
  std::ostringstream d;
  std::ostringstream sink;
  for (const auto& model : kModels) {
    double min_gain = INFINITY, min_dist = INFINITY, max_start = -INFINITY, min_final = INFINITY;
    for (const auto& [score, name] : by_mos) {
      cli::EnhanceOptions eo;
      eo.image = data / (name + ".png");
      eo.model = model;
      eo.out = work / "enhance" / model / (name + ".png");
      eo.weights = weights;
      const auto r = cli::cmd_enhance(eo, sink);
      const double gain = r.final_quality - r.initial_quality;
      const double dist = ssim(io::read_image(eo.out), io::read_image(eo.image));
      min_gain = std::min(min_gain, gain);
      max_start = std::max(max_start, r.initial_quality);
      min_final = std::min(min_final, r.final_quality);
      min_dist = std::min(min_dist, dist);
      if (gain < 1.0 || !(dist > -0.99)) pass = false;
    }
    d << model << " min gain " << fmt("%.3f", min_gain) << " (highest start " << fmt("%.3f", max_start)
      << ", lowest end " << fmt("%.3f", min_final) << "), min neg_ssim " << fmt("%.4f", min_dist) << "; ";
  }
  std::string names;
  for (const auto& [score, name] : by_mos) names += (names.empty() ? "" : ",") + name;
  return {pass, "5 lowest-MOS images (" + names + "), 200 steps, gain >= 1.0 and neg_ssim > -0.99 required: " +
                    d.str()};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& work, const fs::path& data, const fs::path& weights) {
  const auto names = evaluation::read_score_table(data / "proxy_mos.tsv");
  std::ostringstream sink;
  cli::AttackOptions ao;
  ao.image = data / (names.begin()->first + ".png");
  ao.model = "codebook";
  ao.measure = "neg-ssim";
  ao.seed = 123;
  ao.iterations = 50;
  ao.proxy_mos = data / "proxy_mos.tsv";
  ao.weights = weights;
  ao.out = work / "determinism" / "a";
  cli::cmd_attack(ao, sink);
  ao.out = work / "determinism" / "b";
  cli::cmd_attack(ao, sink);
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(work / "determinism" / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), work / "determinism" / "a");
    const auto other = work / "determinism" / "b" / rel;
    if (fs::exists(other) && file_bytes(e.path()) == file_bytes(other)) ++same;
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(work / "determinism" / "b")) files_b += e.is_regular_file();
  return {files > 0 && same == files && files_b == files,
          std::to_string(same) + "/" + std::to_string(files) + " files byte-identical across two runs"};
}

Outcome jnd_logic() {
  using namespace iqa::study;
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  expect(below_jnd(12, 15), "12/15 is below");
  expect(!below_jnd(11, 15), "11/15 is not below");
  expect(below_jnd(3, 4) && !below_jnd(2, 4), "3/4 boundary");

  auto infos = [](std::vector<double> delta, std::vector<double> fidelity, std::vector<double> lambda) {
    std::vector<CandidateInfo> c;
    for (std::size_t i = 0; i < delta.size(); ++i) c.push_back({i, lambda[i], fidelity[i], delta[i], ""});
    return c;
  };
  auto verdict = [](std::size_t i, std::size_t identical, std::size_t total) {
    return JndVerdict{i, total, identical, static_cast<double>(identical) / static_cast<double>(total),
                      below_jnd(identical, total)};
  };
  const auto c = infos({2.1, -3.4, 5.0}, {0.1, 0.1, 0.1}, {1.0, 2.0, 3.0});
  expect(select_counterexample({verdict(0, 12, 15), verdict(1, 15, 15), verdict(2, 3, 15)}, c)->index == 1,
         "argmax |delta| among below-JND");
  expect(!select_counterexample({verdict(0, 1, 15), verdict(1, 11, 15), verdict(2, 3, 15)}, c).has_value(),
         "no selection without a below-JND candidate");
  auto tie = infos({1.0, -1.0, 1.0}, {0.5, 0.2, 0.2}, {1.0, 2.0, 3.0});
  const std::vector<JndVerdict> all = {verdict(0, 4, 4), verdict(1, 4, 4), verdict(2, 4, 4)};
  expect(select_counterexample(all, tie)->index == 1, "tie to the smaller distance");
  tie[1].lambda = 9.0;
  expect(select_counterexample(all, tie)->index == 2, "tie to the smaller lambda");

  const double eta = 0.1;
  const std::size_t reps = 15, sessions = 1000;
  const auto pair = infos({1.0, 2.0}, {0.0, 1.0}, {1.0, 2.0});
  std::size_t flipped_hidden = 0, flipped_visible = 0;
  for (std::size_t s = 0; s < sessions; ++s) {
    StudySession session("s", "set", pair, reps, s);
    simulate_observer(session, VisibilityModel{0.5, eta, s, {}});
    const auto v = session.verdicts();
    flipped_hidden += v[0].below_jnd ? 0 : 1;
    flipped_visible += v[1].below_jnd ? 1 : 0;
  }
  const double n = static_cast<double>(sessions);
  const double p_hidden = oracle::binomial_upper_tail(reps, 4, eta);
  const double p_visible = oracle::binomial_upper_tail(reps, 12, eta);
  const double sd_hidden = std::sqrt(n * p_hidden * (1 - p_hidden));
  const double sd_visible = std::max(std::sqrt(n * p_visible * (1 - p_visible)), 1.0);
  const double z_hidden = (static_cast<double>(flipped_hidden) - n * p_hidden) / sd_hidden;
  const double z_visible = (static_cast<double>(flipped_visible) - n * p_visible) / sd_visible;
  expect(std::fabs(z_hidden) <= 3.0 && std::fabs(z_visible) <= 3.0, "binomial flip rate");

  std::string detail = "flips " + std::to_string(flipped_hidden) + " vs expected " + fmt("%.1f", n * p_hidden) +
                       " (z " + fmt("%+.2f", z_hidden) + "), " + std::to_string(flipped_visible) + " vs " +
                       fmt("%.2f", n * p_visible) + " (z " + fmt("%+.2f", z_visible) + ")";
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string only;
  std::string work_arg;
  std::string weights_arg = IQA_WEIGHTS_DIR;
  std::string report_arg;
  app.add_option("--only", only, "run a single criterion");
  app.add_option("--work", work_arg, "keep intermediate files in this directory");
  app.add_option("--weights", weights_arg, "weight directory");
  app.add_option("--report", report_arg, "also write the result lines to this file");
  CLI11_PARSE(app, argc, argv);

  std::optional<TempDir> temp;
  fs::path work;
  if (work_arg.empty()) {
    temp.emplace();
    work = temp->path();
  } else {
    work = work_arg;
    fs::create_directories(work);
  }
  const fs::path weights = weights_arg;
  const WeightSet ws(weights);

  std::optional<DeskRun> run;
  auto desk = [&]() -> const DeskRun& {
    if (!run) run = desk_run(work, weights);
    return *run;
  };
  auto data = [&]() {
    const auto dir = work / "data";
    if (!fs::exists(dir / "proxy_mos.tsv")) {
      std::ostringstream sink;
      cli::SynthOptions so;
      so.out = dir;
      cli::cmd_synth(so, sink);
    }
    return dir;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-fidelity", [&] { return gradient_fidelity(ws); }},
      {"oracle-equivalence", [&] { return oracle_equivalence(); }},
      {"jnd-logic", [&] { return jnd_logic(); }},
      {"determinism", [&] { return determinism(work, data(), weights); }},
      {"enhancement", [&] { return enhancement(work, data(), weights); }},
      {"attack-efficacy", [&] { return attack_efficacy(desk()); }},
      {"non-transferability", [&] { return non_transferability(desk()); }},
      {"perturbation-sanity", [&] { return perturbation_sanity(desk()); }},
  };

  std::ofstream report;
  if (!report_arg.empty()) report.open(report_arg, std::ios::trunc);
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    if (report) report << line << std::endl;
  };
  int errors = 0, passed = 0, ran = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && only != name) continue;
    ++ran;
    try {
      const auto o = check();
      passed += o.pass ? 1 : 0;
      emit((o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail);
    } catch (const std::exception& e) {
      ++errors;
      emit("FAIL " + name + ": could not be evaluated: " + e.what());
    }
  }
  emit(std::to_string(passed) + "/" + std::to_string(ran) + " criteria passed");
  return errors == 0 ? 0 : 1;
}
