#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iqa/attack.hpp"
#include "iqa/evaluation.hpp"

// Implementations of the iqattack subcommands. Each takes a plain option
// struct, writes its outputs and a run manifest, and reports progress on `log`.

namespace iqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitEnvironment = 3;
inline constexpr int kExitNumerical = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

std::filesystem::path default_weights_dir();
std::string tool_version();

/// "default", a single number, or a comma-separated list.
std::vector<double> parse_lambdas(const std::string& text);

struct AttackOptions {
  std::filesystem::path image;
  std::string model = "nss";
  std::string measure = "chebyshev";
  std::string lambdas = "default";
  double gamma = 1e-3;
  std::size_t iterations = 200;
  std::string norm;  // empty: follow the measure
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::optional<std::filesystem::path> proxy_mos;
  std::optional<double> target;
  std::string scale = "calibrated";
  std::string name;  // key into the proxy score table; default is the file stem
  std::filesystem::path weights = default_weights_dir();
};
attack::CandidateSet cmd_attack(const AttackOptions& opt, std::ostream& log);

struct EnhanceOptions {
  std::filesystem::path image;
  std::string model = "nss";
  std::size_t steps = 200;
  double gamma = 1e-3;
  std::string norm = "linf";
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::filesystem::path weights = default_weights_dir();
};
attack::EnhanceResult cmd_enhance(const EnhanceOptions& opt, std::ostream& log);

struct SimulateOptions {
  std::vector<std::filesystem::path> sets;
  double tau = 0.0;
  double noise = 0.0;
  std::size_t repetitions = 15;
  std::size_t observers = 1;
  std::uint64_t seed = 0;
  std::string visibility_measure;  // empty: the set's own measure
  std::filesystem::path weights = default_weights_dir();
};
/// Runs a simulated study per set and writes selection.json into each.
void cmd_simulate(const SimulateOptions& opt, std::ostream& log);

struct EvaluateOptions {
  std::vector<std::filesystem::path> sets;
  std::vector<std::string> models = {"nss", "codebook", "cnn"};
  std::filesystem::path proxy_mos;
  std::filesystem::path out;
  std::filesystem::path weights = default_weights_dir();
};
evaluation::TransferReport cmd_evaluate(const EvaluateOptions& opt, std::ostream& log);

struct ServeOptions {
  std::vector<std::filesystem::path> sets;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path log_file = "iqattack_sessions.jsonl";
};
/// Blocks until SIGINT or SIGTERM.
void cmd_serve(const ServeOptions& opt, std::ostream& log);

struct CalibrateOptions {
  std::string model = "nss";
  std::filesystem::path raw;
  std::filesystem::path targets;
  std::filesystem::path out;
};
CalibrationParams cmd_calibrate(const CalibrateOptions& opt, std::ostream& log);

struct ScoreOptions {
  std::vector<std::filesystem::path> images;
  std::vector<std::string> models = {"nss", "codebook", "cnn"};
  std::filesystem::path weights = default_weights_dir();
};
void cmd_score(const ScoreOptions& opt, std::ostream& out);

struct SynthOptions {
  std::filesystem::path out;
  std::uint64_t seed = 77;
  std::size_t per_distortion = 3;
  std::size_t size = 64;
};
/// Writes distorted images, their pristine references and proxy_mos.tsv.
void cmd_synth(const SynthOptions& opt, std::ostream& log);

struct WeightsOptions {
  std::filesystem::path out;
  std::uint64_t seed = 20190611;
};
void cmd_weights(const WeightsOptions& opt, std::ostream& log);

/// Selection file written by simulate and by the study server.
inline constexpr const char* kSelectionFile = "selection.json";
/// Index of the selected candidate, or nullopt when the file says none.
/// Throws UsageError when the file is missing or malformed.
std::optional<std::size_t> read_selection(const std::filesystem::path& set_dir);

}  // namespace iqa::cli
