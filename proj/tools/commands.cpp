#include "commands.hpp"

#include <omp.h>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "iqa/calibration.hpp"
#include "iqa/default_weights.hpp"
#include "iqa/image_io.hpp"
#include "iqa/run_manifest.hpp"
#include "iqa/study.hpp"
#include "iqa/study_server.hpp"
#include "iqa/synth.hpp"
#include "iqa/weight_set.hpp"
#include "json.hpp"

#ifndef IQA_DEFAULT_WEIGHTS_DIR
#define IQA_DEFAULT_WEIGHTS_DIR "weights"
#endif
#ifndef IQA_VERSION
#define IQA_VERSION "0.0.0"
#endif

namespace iqa::cli {

using json = nlohmann::json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
  if (dynamic_cast<const io::ImageIoError*>(&e)) return kExitUsage;
  if (dynamic_cast<const attack::AttackError*>(&e)) return kExitUsage;
  if (dynamic_cast<const evaluation::EvaluationError*>(&e)) return kExitUsage;
  if (dynamic_cast<const study::StudyError*>(&e)) return kExitUsage;
  if (dynamic_cast<const EnvironmentError*>(&e)) return kExitEnvironment;
  if (dynamic_cast<const study::BindError*>(&e)) return kExitEnvironment;
  if (dynamic_cast<const WeightError*>(&e)) return kExitEnvironment;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitEnvironment;
  if (dynamic_cast<const attack::NumericalError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const CalibrationError*>(&e)) return kExitNumerical;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return kExitUsage;
  return kExitEnvironment;
}

std::filesystem::path default_weights_dir() { return IQA_DEFAULT_WEIGHTS_DIR; }

std::string tool_version() { return IQA_VERSION; }

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string exact(double v) { return fmt("%.17g", v); }

ModelKind model_kind(const std::string& id) {
  try {
    return parse_model(id);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

fidelity::MeasureKind measure_kind(const std::string& id) {
  try {
    return fidelity::parse_measure(id);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

fidelity::AscentNorm norm_kind(const std::string& id) {
  try {
    return fidelity::parse_norm(id);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

WeightSet open_weights(const std::filesystem::path& dir) {
  try {
    return WeightSet(dir);
  } catch (const std::exception& e) {
    throw EnvironmentError("cannot load weights from " + dir.string() + ": " + e.what());
  }
}

ImageTensor read_input(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError("cannot read image " + path.string());
  return io::read_image(path);
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw EnvironmentError("cannot create directory " + dir.string());
}

std::map<std::string, double> score_table(const std::filesystem::path& path) {
  try {
    return evaluation::read_score_table(path);
  } catch (const evaluation::EvaluationError& e) {
    throw UsageError(e.what());
  }
}

std::vector<double> read_numbers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw UsageError(path.string() + ": '" + tok + "' is not a number");
      out.push_back(v);
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw EnvironmentError("cannot write " + path.string());
  out << text;
}

json selection_json(const std::vector<study::JndVerdict>& verdicts, const std::optional<study::CandidateInfo>& sel) {
  json v = json::array();
  for (const auto& x : verdicts) {
    v.push_back({{"candidate", x.candidate},
                 {"responses", x.responses},
                 {"identical", x.identical},
                 {"identical_fraction", x.identical_fraction},
                 {"below_jnd", x.below_jnd}});
  }
  json out;
  out["verdicts"] = v;
  out["selected"] = sel ? json(sel->index) : json(nullptr);
  if (sel) {
    out["selected_lambda"] = sel->lambda;
    out["selected_fidelity"] = sel->fidelity;
    out["selected_delta"] = sel->delta;
  }
  return out;
}

}  // namespace

std::vector<double> parse_lambdas(const std::string& text) {
  if (text.empty() || text == "default") return attack::default_lambdas();
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size() || !(v >= 0.0)) throw UsageError("bad lambda value '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("empty lambda list");
  return out;
}

std::optional<std::size_t> read_selection(const std::filesystem::path& set_dir) {
  std::ifstream in(set_dir / kSelectionFile);
  if (!in) throw UsageError("no " + std::string(kSelectionFile) + " in " + set_dir.string());
  try {
    const json j = json::parse(in);
    if (j.at("selected").is_null()) return std::nullopt;
    return j.at("selected").get<std::size_t>();
  } catch (const json::exception& e) {
    throw UsageError("malformed " + (set_dir / kSelectionFile).string() + ": " + e.what());
  }
}

attack::CandidateSet cmd_attack(const AttackOptions& opt, std::ostream& log) {
  const ModelKind mk = model_kind(opt.model);
  const fidelity::MeasureKind dk = measure_kind(opt.measure);
  attack::AttackConfig config;
  config.lambdas = parse_lambdas(opt.lambdas);
  config.gamma = opt.gamma;
  config.max_iterations = opt.iterations;
  if (!opt.norm.empty()) config.norm = norm_kind(opt.norm);
  config.seed = opt.seed;
  try {
    config.scale = attack::parse_scale(opt.scale);
  } catch (const attack::AttackError& e) {
    throw UsageError(e.what());
  }
  if (opt.out.empty()) throw UsageError("--out is required");
  const ImageTensor x0 = read_input(opt.image);
  const std::string name = opt.name.empty() ? opt.image.stem().string() : opt.name;
  if (opt.target && opt.proxy_mos) throw UsageError("--target and --proxy-mos are mutually exclusive");
  if (opt.target) config.target = *opt.target;
  if (opt.proxy_mos) {
    const auto table = score_table(*opt.proxy_mos);
    const auto it = table.find(name);
    if (it == table.end()) throw UsageError("no proxy score for '" + name + "' in " + opt.proxy_mos->string());
    config.target = it->second;
  }
  try {
    config.validate();
  } catch (const attack::AttackError& e) {
    throw UsageError(e.what());
  }

  const WeightSet weights = open_weights(opt.weights);
  const auto model = weights.model(mk);
  const auto measure = weights.measure(dk);
  if (x0.height() < model->min_size() || x0.width() < model->min_size()) {
    throw UsageError("image is smaller than the " + std::to_string(model->min_size()) + " pixel minimum of model " +
                     opt.model);
  }

  auto set = attack::run_sweep(x0, config, *model, measure, name);
  ensure_dir(opt.out);
  attack::save_candidate_set(opt.out, set);

  RunManifest m;
  m.command = "attack";
  m.tool_version = tool_version();
  m.seed = opt.seed;
  m.config = {{"model", std::string(model->id())},
              {"measure", std::string(measure.id())},
              {"lambdas", opt.lambdas},
              {"gamma", exact(opt.gamma)},
              {"iterations", std::to_string(opt.iterations)},
              {"norm", std::string(fidelity::to_string(set.norm))},
              {"scale", opt.scale},
              {"name", name},
              {"target", exact(set.target)},
              {"target_source", opt.proxy_mos ? "proxy-mos" : (opt.target ? "given" : "model")}};
  m.add_input(opt.image);
  if (opt.proxy_mos) m.add_input(*opt.proxy_mos);
  for (const auto& f : weights.files_for(mk)) m.add_weight(f);
  m.add_output_tree(opt.out, "run_manifest.json");
  m.write(opt.out / "run_manifest.json");

  log << "image " << name << "  model " << model->id() << "  measure " << measure.id() << "  q(x0) "
      << fmt("%.4f", set.initial_quality) << "  target " << fmt("%.4f", set.target) << "\n";
  log << "  idx      lambda            D       q      dq  status\n";
  std::size_t failed = 0;
  for (const auto& c : set.candidates) {
    char line[160];
    std::snprintf(line, sizeof line, "  %3zu  %10.4g  %11.6f  %6.3f  %+6.3f  %s\n", c.index, c.lambda, c.fidelity,
                  c.quality, c.delta, c.failed ? c.stop_reason.c_str() : "ok");
    log << line;
    failed += c.failed ? 1 : 0;
  }
  if (failed == set.candidates.size()) throw attack::NumericalError("every candidate failed");
  return set;
}

attack::EnhanceResult cmd_enhance(const EnhanceOptions& opt, std::ostream& log) {
  const ModelKind mk = model_kind(opt.model);
  if (opt.steps < 1) throw UsageError("--steps must be at least 1");
  if (!(opt.gamma > 0.0)) throw UsageError("--gamma must be positive");
  if (opt.out.empty()) throw UsageError("--out is required");
  const auto norm = norm_kind(opt.norm);
  const ImageTensor x0 = read_input(opt.image);
  const WeightSet weights = open_weights(opt.weights);
  const auto model = weights.model(mk);
  if (x0.height() < model->min_size() || x0.width() < model->min_size()) {
    throw UsageError("image is smaller than the " + std::to_string(model->min_size()) + " pixel minimum of model " +
                     opt.model);
  }
  auto result = attack::enhance(x0, opt.steps, *model, opt.gamma, norm, opt.seed);

  const auto dir = opt.out.has_parent_path() ? opt.out.parent_path() : std::filesystem::path(".");
  ensure_dir(dir);
  const auto stem = opt.out.stem().string();
  const auto residual = dir / (stem + "_residual.png");
  io::write_png(opt.out, result.image);
  io::write_png(residual, evaluation::residual_map(x0, result.image));

  RunManifest m;
  m.command = "enhance";
  m.tool_version = tool_version();
  m.seed = opt.seed;
  m.config = {{"model", std::string(model->id())},
              {"steps", std::to_string(opt.steps)},
              {"gamma", exact(opt.gamma)},
              {"norm", opt.norm}};
  m.add_input(opt.image);
  for (const auto& f : weights.files_for(mk)) m.add_weight(f);
  m.add_output(dir, opt.out);
  m.add_output(dir, residual);
  m.write(dir / (stem + ".manifest.json"));

  const double d = fidelity::neg_ssim(result.image, x0);
  log << "model " << model->id() << "  q before " << fmt("%.4f", result.initial_quality) << "  q after "
      << fmt("%.4f", result.final_quality) << "  neg-ssim " << fmt("%.5f", d) << "  steps " << result.iterations
      << " (" << result.stop_reason << ")\n";
  return result;
}

void cmd_simulate(const SimulateOptions& opt, std::ostream& log) {
  if (opt.sets.empty()) throw UsageError("no candidate sets given");
  if (opt.repetitions < 1) throw UsageError("--repetitions must be at least 1");
  if (opt.observers < 1) throw UsageError("--observers must be at least 1");
  if (!(opt.noise >= 0.0 && opt.noise <= 1.0)) throw UsageError("--noise must be in [0, 1]");
  std::optional<fidelity::FidelityMeasure> visibility;
  if (!opt.visibility_measure.empty()) {
    const auto kind = measure_kind(opt.visibility_measure);
    if (kind == fidelity::MeasureKind::chebyshev || kind == fidelity::MeasureKind::neg_ssim) {
      visibility = kind == fidelity::MeasureKind::chebyshev ? fidelity::FidelityMeasure::make_chebyshev()
                                                            : fidelity::FidelityMeasure::make_neg_ssim();
    } else {
      visibility = open_weights(opt.weights).measure(kind);
    }
  }
  for (const auto& dir : opt.sets) {
    const auto set = attack::load_candidate_set(dir);
    study::StudySession session("sim", dir.filename().string(), study::candidate_infos(set), opt.repetitions,
                                opt.seed);
    study::VisibilityModel vm{opt.tau, opt.noise, opt.seed, {}};
    if (visibility) {
      for (const auto& c : set.candidates) vm.distances[c.index] = (*visibility)(c.image, set.x0);
    }
    for (std::size_t o = 0; o < opt.observers; ++o) {
      study::simulate_observer(session, vm, "sim" + std::to_string(o + 1));
    }
    session.close();
    const auto verdicts = session.verdicts();
    const auto sel = session.selection();
    json j = selection_json(verdicts, sel);
    j["source"] = "simulated";
    j["tau"] = opt.tau;
    j["noise"] = opt.noise;
    j["repetitions"] = opt.repetitions;
    j["observers"] = opt.observers;
    j["seed"] = opt.seed;
    j["visibility_measure"] = opt.visibility_measure.empty() ? set.measure : opt.visibility_measure;
    write_text(dir / kSelectionFile, j.dump(2) + "\n");
    std::size_t below = 0;
    for (const auto& v : verdicts) below += v.below_jnd ? 1 : 0;
    log << dir.filename().string() << ": " << below << "/" << verdicts.size() << " below JND, selected ";
    if (sel) log << "candidate " << sel->index << " (dq " << fmt("%+.4f", sel->delta) << ")\n";
    else log << "none\n";
  }
}

evaluation::TransferReport cmd_evaluate(const EvaluateOptions& opt, std::ostream& log) {
  if (opt.sets.empty()) throw UsageError("no candidate sets given");
  if (opt.out.empty()) throw UsageError("--out is required");
  if (opt.models.empty()) throw UsageError("no models given");
  std::vector<ModelKind> kinds;
  for (const auto& id : opt.models) kinds.push_back(model_kind(id));
  const auto mos = score_table(opt.proxy_mos);
  const WeightSet weights = open_weights(opt.weights);
  std::vector<std::unique_ptr<QualityModel>> models;
  std::vector<const QualityModel*> model_ptrs;
  for (auto k : kinds) {
    models.push_back(weights.model(k));
    model_ptrs.push_back(models.back().get());
  }

  std::map<std::string, evaluation::RatedInput> inputs;
  std::map<std::pair<std::string, std::string>, evaluation::CounterexampleSet> groups;
  std::vector<std::tuple<std::string, ImageTensor, ImageTensor>> residuals;
  for (const auto& dir : opt.sets) {
    const auto set = attack::load_candidate_set(dir);
    const std::string& name = set.image_name;
    const auto mit = mos.find(name);
    if (mit == mos.end()) throw UsageError("no proxy score for '" + name + "' in " + opt.proxy_mos.string());
    auto [it, fresh] = inputs.try_emplace(name, evaluation::RatedInput{name, set.x0, mit->second});
    if (!fresh && !(it->second.image == set.x0)) {
      throw UsageError("candidate sets disagree on the initial image '" + name + "'");
    }
    auto& group = groups[{set.model, set.measure}];
    group.source = set.model;
    group.measure = set.measure;
    std::optional<std::size_t> sel;
    if (std::filesystem::exists(dir / kSelectionFile)) sel = read_selection(dir);
    if (!sel) {
      log << "warning: no selected counterexample in " << dir.string() << "\n";
      continue;
    }
    if (*sel >= set.candidates.size()) throw UsageError("selection out of range in " + dir.string());
    if (!group.images.emplace(name, set.candidates[*sel].image).second) {
      throw UsageError("two candidate sets for image '" + name + "' under " + set.model + "/" + set.measure);
    }
    residuals.emplace_back(set.model + "_" + set.measure + "_" + name, set.x0, set.candidates[*sel].image);
  }
  std::vector<evaluation::RatedInput> input_list;
  for (auto& [name, in] : inputs) input_list.push_back(in);
  std::vector<evaluation::CounterexampleSet> set_list;
  for (auto& [key, g] : groups) set_list.push_back(g);

  auto report = evaluation::transfer_matrix(model_ptrs, input_list, set_list);
  ensure_dir(opt.out);
  ensure_dir(opt.out / "residuals");
  evaluation::write_report(opt.out / "report.tsv", report);
  for (const auto& [stem, x0, x] : residuals) {
    io::write_png(opt.out / "residuals" / (stem + ".png"), evaluation::residual_map(x0, x));
  }

  RunManifest m;
  m.command = "evaluate";
  m.tool_version = tool_version();
  std::string model_list;
  for (const auto& id : opt.models) model_list += (model_list.empty() ? "" : ",") + id;
  m.config = {{"models", model_list}, {"sets", std::to_string(opt.sets.size())}};
  m.add_input(opt.proxy_mos);
  for (const auto& dir : opt.sets) {
    m.add_input(dir / "manifest.json");
    if (std::filesystem::exists(dir / kSelectionFile)) m.add_input(dir / kSelectionFile);
  }
  for (auto k : kinds) {
    for (const auto& f : weights.files_for(k)) m.add_weight(f);
  }
  m.add_output_tree(opt.out, "run_manifest.json");
  m.write(opt.out / "run_manifest.json");

  log << evaluation::format_report(report);
  log << "mean |dq| intra " << fmt("%.4f", evaluation::mean_delta(report, true)) << "  inter "
      << fmt("%.4f", evaluation::mean_delta(report, false)) << "\n";
  return report;
}

namespace {

std::atomic<study::StudyServer*> g_server{nullptr};

extern "C" void handle_stop_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

void cmd_serve(const ServeOptions& opt, std::ostream& log) {
  if (opt.sets.empty()) throw UsageError("no candidate sets given");
  if (opt.port < 0 || opt.port > 65535) throw UsageError("--port must be in [0, 65535]");
  study::StudyService service;
  for (const auto& dir : opt.sets) {
    const std::string name = dir.filename().string();
    try {
      service.add_candidate_set(name, dir);
    } catch (const study::Conflict& e) {
      throw UsageError(e.what());
    }
  }
  try {
    service.attach_log(opt.log_file);
  } catch (const study::StudyError& e) {
    throw EnvironmentError(e.what());
  }
  service.set_close_hook([&service](const study::StudySession& s) {
    json j;
    try {
      j = selection_json(s.verdicts(), s.selection());
    } catch (const study::StudyError&) {
      return;
    }
    j["source"] = "study";
    j["session"] = s.id();
    j["partial"] = s.partial();
    std::ofstream out(service.candidate_set_dir(s.candidate_set()) / kSelectionFile, std::ios::trunc);
    out << j.dump(2) << "\n";
  });

  study::StudyServer server(service);
  const int port = server.bind(opt.host, opt.port);
  g_server.store(&server);
  std::signal(SIGINT, handle_stop_signal);
  std::signal(SIGTERM, handle_stop_signal);
  log << "serving " << opt.sets.size() << " candidate set(s) on http://" << opt.host << ":" << port << "\n";
  log.flush();
  server.run();
  g_server.store(nullptr);
  log << "stopped\n";
}

CalibrationParams cmd_calibrate(const CalibrateOptions& opt, std::ostream& log) {
  const ModelKind mk = model_kind(opt.model);
  if (opt.out.empty()) throw UsageError("--out is required");
  const auto raw = read_numbers(opt.raw);
  const auto targets = read_numbers(opt.targets);
  if (raw.size() != targets.size()) {
    throw UsageError("raw and target files hold " + std::to_string(raw.size()) + " and " +
                     std::to_string(targets.size()) + " values");
  }
  auto p = fit_calibration(raw, targets, std::string(to_string(mk)));
  if (opt.out.has_parent_path()) ensure_dir(opt.out.parent_path());
  save_calibration(opt.out, p);
  log << "model " << p.model << "  beta3 " << exact(p.beta3) << "  beta4 " << exact(p.beta4) << "  rmse "
      << fmt("%.6f", calibration_rmse(p, raw, targets)) << "\n";
  return p;
}

void cmd_score(const ScoreOptions& opt, std::ostream& out) {
  if (opt.images.empty()) throw UsageError("no images given");
  std::vector<ModelKind> kinds;
  for (const auto& id : opt.models) kinds.push_back(model_kind(id));
  const WeightSet weights = open_weights(opt.weights);
  std::vector<std::unique_ptr<QualityModel>> models;
  for (auto k : kinds) models.push_back(weights.model(k));
  out << "image\tmodel\traw\tquality\n";
  for (const auto& path : opt.images) {
    const auto img = read_input(path);
    for (const auto& m : models) {
      const double r = m->raw_score(img);
      out << path.string() << "\t" << m->id() << "\t" << exact(r) << "\t" << fmt("%.6f", calibrate(r, m->calibration()))
          << "\n";
    }
  }
}

void cmd_synth(const SynthOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw UsageError("--out is required");
  if (opt.per_distortion < 1) throw UsageError("--per-distortion must be at least 1");
  if (opt.size < 16) throw UsageError("--size must be at least 16");
  ensure_dir(opt.out);
  ensure_dir(opt.out / "pristine");
  const auto set = synth::rated_set(opt.seed, opt.per_distortion, opt.size);
  std::vector<std::pair<std::string, double>> rows;
  for (const auto& r : set) {
    io::write_png(opt.out / (r.name + ".png"), r.image);
    io::write_png(opt.out / "pristine" / (r.name + ".png"), r.pristine);
    rows.emplace_back(r.name, r.mos);
  }
  evaluation::write_score_table(opt.out / "proxy_mos.tsv", rows);
  log << "wrote " << set.size() << " images and proxy_mos.tsv to " << opt.out.string() << "\n";
}

void cmd_weights(const WeightsOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw UsageError("--out is required");
  WeightGenOptions wo;
  wo.seed = opt.seed;
  const auto w = generate_default_weights(wo);
  ensure_dir(opt.out);
  write_weight_set(opt.out, w);
  for (const auto& [kind, srcc] : w.training_srcc) {
    log << to_string(kind) << ": training SRCC " << fmt("%.4f", srcc) << "  beta3 "
        << fmt("%.6g", w.calibrations.at(kind).beta3) << "  beta4 " << fmt("%.6g", w.calibrations.at(kind).beta4)
        << "\n";
  }
}

}  // namespace iqa::cli
