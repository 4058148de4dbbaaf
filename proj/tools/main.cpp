#include <omp.h>

#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace cli = iqa::cli;

int main(int argc, char** argv) {
  CLI::App app{"Perceptual attack workbench for no-reference image quality models", "iqattack"};
  app.set_version_flag("--version", cli::tool_version());
  app.require_subcommand(1);

  std::filesystem::path weights = cli::default_weights_dir();
  int threads = 0;
  app.add_option("--weights", weights, "Weight directory (default.iqaw and <model>.calib)");
  app.add_option("--threads", threads, "OpenMP thread count (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);

  cli::AttackOptions attack;
  auto* a = app.add_subcommand("attack", "Run the lambda sweep for one image");
  a->add_option("--image", attack.image, "Input image (PNG, PPM or PGM)")->required();
  a->add_option("--model", attack.model, "nss, codebook or cnn")->capture_default_str();
  a->add_option("--measure", attack.measure, "chebyshev, neg-ssim, feature-l2 or structure-texture")
      ->capture_default_str();
  a->add_option("--lambdas", attack.lambdas, "\"default\", a number or a comma-separated list")->capture_default_str();
  a->add_option("--gamma", attack.gamma, "Step size")->capture_default_str();
  a->add_option("--iterations,--iters", attack.iterations, "Steps per candidate")->capture_default_str();
  a->add_option("--norm", attack.norm, "linf or l2 (default follows the measure)");
  a->add_option("--seed", attack.seed, "Seed")->capture_default_str();
  a->add_option("--out", attack.out, "Candidate set directory")->required();
  a->add_option("--proxy-mos", attack.proxy_mos, "Score table providing the target quality");
  a->add_option("--target", attack.target, "Target quality");
  a->add_option("--scale", attack.scale, "calibrated or raw")->capture_default_str();
  a->add_option("--name", attack.name, "Image name (default: file stem)");

  cli::EnhanceOptions enhance;
  auto* e = app.add_subcommand("enhance", "Raise predicted quality by plain ascent");
  e->add_option("--image", enhance.image, "Input image")->required();
  e->add_option("--model", enhance.model, "nss, codebook or cnn")->capture_default_str();
  e->add_option("--steps", enhance.steps, "Ascent steps")->capture_default_str();
  e->add_option("--gamma", enhance.gamma, "Step size")->capture_default_str();
  e->add_option("--norm", enhance.norm, "linf or l2")->capture_default_str();
  e->add_option("--seed", enhance.seed, "Seed")->capture_default_str();
  e->add_option("--out", enhance.out, "Output PNG")->required();

  cli::SimulateOptions simulate;
  auto* s = app.add_subcommand("simulate", "Screen candidate sets with a simulated observer");
  s->add_option("sets", simulate.sets, "Candidate set directories")->required();
  s->add_option("--tau", simulate.tau, "Visibility threshold")->required();
  s->add_option("--noise", simulate.noise, "Answer flip probability")->capture_default_str();
  s->add_option("--repetitions", simulate.repetitions, "Trials per candidate")->capture_default_str();
  s->add_option("--observers", simulate.observers, "Simulated observers")->capture_default_str();
  s->add_option("--seed", simulate.seed, "Seed")->capture_default_str();
  s->add_option("--visibility-measure", simulate.visibility_measure, "Measure compared with tau (default: the set's)");

  cli::EvaluateOptions evaluate;
  auto* v = app.add_subcommand("evaluate", "Transfer matrix over selected counterexamples");
  v->add_option("sets", evaluate.sets, "Candidate set directories")->required();
  v->add_option("--models", evaluate.models, "Models to evaluate")->delimiter(',');
  v->add_option("--proxy-mos", evaluate.proxy_mos, "Score table of the initial images")->required();
  v->add_option("--out", evaluate.out, "Report directory")->required();

  cli::ServeOptions serve;
  auto* sv = app.add_subcommand("serve", "Serve the observer study API");
  sv->add_option("sets", serve.sets, "Candidate set directories")->required();
  sv->add_option("--host", serve.host, "Bind address")->capture_default_str();
  sv->add_option("--port", serve.port, "Port (0 picks a free one)")->capture_default_str();
  sv->add_option("--log", serve.log_file, "Session log (JSON lines)")->capture_default_str();

  cli::CalibrateOptions calibrate;
  auto* c = app.add_subcommand("calibrate", "Fit a logistic calibration");
  c->add_option("--model", calibrate.model, "Model id recorded in the file")->capture_default_str();
  c->add_option("--raw", calibrate.raw, "Raw scores, whitespace separated")->required();
  c->add_option("--targets", calibrate.targets, "Target scores, whitespace separated")->required();
  c->add_option("--out", calibrate.out, "Calibration file")->required();

  cli::ScoreOptions score;
  auto* sc = app.add_subcommand("score", "Print raw and calibrated scores");
  sc->add_option("images", score.images, "Images")->required();
  sc->add_option("--models", score.models, "Models")->delimiter(',');

  cli::SynthOptions synth;
  auto* sy = app.add_subcommand("synth", "Write a synthetic rated image set");
  sy->add_option("--out", synth.out, "Output directory")->required();
  sy->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  sy->add_option("--per-distortion", synth.per_distortion, "Images per distortion family")->capture_default_str();
  sy->add_option("--size", synth.size, "Image side length")->capture_default_str();

  cli::WeightsOptions wopt;
  auto* w = app.add_subcommand("weights", "Regenerate the default weight set");
  w->add_option("--out", wopt.out, "Output directory")->required();
  w->add_option("--seed", wopt.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  if (threads > 0) omp_set_num_threads(threads);
  attack.weights = enhance.weights = simulate.weights = evaluate.weights = score.weights = weights;

  try {
    if (a->parsed()) cli::cmd_attack(attack, std::cout);
    else if (e->parsed()) cli::cmd_enhance(enhance, std::cout);
    else if (s->parsed()) cli::cmd_simulate(simulate, std::cout);
    else if (v->parsed()) cli::cmd_evaluate(evaluate, std::cout);
    else if (sv->parsed()) cli::cmd_serve(serve, std::cout);
    else if (c->parsed()) cli::cmd_calibrate(calibrate, std::cout);
    else if (sc->parsed()) cli::cmd_score(score, std::cout);
    else if (sy->parsed()) cli::cmd_synth(synth, std::cout);
    else if (w->parsed()) cli::cmd_weights(wopt, std::cout);
  } catch (const std::exception& ex) {
    std::cerr << "iqattack: " << ex.what() << "\n";
    return cli::exit_code_for(ex);
  }
  return cli::kExitOk;
}
