#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iqa/quality.hpp"
#include "iqa/tensor.hpp"

namespace iqa::evaluation {

class EvaluationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fractional ranks (1-based, ties get the average rank).
std::vector<double> fractional_ranks(const std::vector<double>& v);

/// Spearman rank-order correlation: Pearson correlation of fractional ranks.
double srcc(const std::vector<double>& a, const std::vector<double>& b);

struct StabilityRatio {
  double value = 0.0;         // mean natural-log ratio over the used items
  std::size_t used = 0;
  std::size_t excluded = 0;   // items with zero prediction change
  bool defined() const { return used > 0; }
};

/// R = mean_i ln( max(b1 - f(x_i), f(x_i) - b2) / |f(x_i) - f(x*_i)| ).
StabilityRatio stability_ratio(const std::vector<double>& initial, const std::vector<double>& attacked,
                               double beta1 = 10.0, double beta2 = 0.0);

struct RatedInput {
  std::string name;
  ImageTensor image;
  double mos = 0.0;
};

/// Selected counterexamples generated against `source` under `measure`,
/// keyed by initial-image name.
struct CounterexampleSet {
  std::string source;
  std::string measure;
  std::map<std::string, ImageTensor> images;
};

struct TransferCell {
  std::string attacked;
  std::string source;  // empty for the unattacked reference row
  std::string measure;
  bool present = false;
  double srcc = 0.0;
  StabilityRatio r;
  double mean_abs_delta = 0.0;
  std::size_t images = 0;

  bool intra() const { return attacked == source; }
};

struct TransferReport {
  std::vector<TransferCell> unattacked;  // one per model, SRCC on initial images only
  std::vector<TransferCell> cells;
};

/// For every (attacked model, source set) pair: score initial and
/// counterexample images with the attacked model, SRCC over the union against
/// MOS (a counterexample inherits the MOS of its initial image), R over the
/// counterexamples, and mean |delta q|. A set missing any image gives an
/// absent cell.
TransferReport transfer_matrix(const std::vector<const QualityModel*>& models, const std::vector<RatedInput>& inputs,
                               const std::vector<CounterexampleSet>& sets);

double mean_delta(const TransferReport& report, bool intra);

/// Tab-separated table; unattacked R is written as "∞".
std::string format_report(const TransferReport& report);
void write_report(const std::filesystem::path& path, const TransferReport& report);

/// Two-column text table "name<TAB or spaces>score"; '#' starts a comment.
std::map<std::string, double> read_score_table(const std::filesystem::path& path);
void write_score_table(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& rows);

/// Per-pixel max over channels of |x0 - x|, multiplied by `gain`.
ImageTensor residual_map(const ImageTensor& x0, const ImageTensor& x, double gain = 16.0);

}  // namespace iqa::evaluation
