#include "iqa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace iqa::evaluation {

std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srcc(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw EvaluationError("srcc: inputs differ in length");
  if (a.size() < 2) throw EvaluationError("srcc: at least two pairs are required");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw EvaluationError("srcc: non-finite input");
  }
  const auto ra = fractional_ranks(a), rb = fractional_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw EvaluationError("srcc: rank correlation of a constant vector is undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

StabilityRatio stability_ratio(const std::vector<double>& initial, const std::vector<double>& attacked, double beta1,
                               double beta2) {
  if (initial.size() != attacked.size()) throw EvaluationError("stability_ratio: inputs differ in length");
  if (initial.empty()) throw EvaluationError("stability_ratio: no items");
  StabilityRatio out;
  double acc = 0.0;
  for (std::size_t i = 0; i < initial.size(); ++i) {
    const double f = initial[i], g = attacked[i];
    if (f < beta2 || f > beta1 || g < beta2 || g > beta1) throw EvaluationError("stability_ratio: prediction outside [beta2, beta1]");
    const double delta = std::fabs(f - g);
    if (delta == 0.0) {
      ++out.excluded;
      continue;
    }
    acc += std::log(std::max(beta1 - f, f - beta2) / delta);
    ++out.used;
  }
  if (out.used > 0) out.value = acc / static_cast<double>(out.used);
  return out;
}

TransferReport transfer_matrix(const std::vector<const QualityModel*>& models, const std::vector<RatedInput>& inputs,
                               const std::vector<CounterexampleSet>& sets) {
  TransferReport report;
  std::vector<double> mos;
  for (const auto& in : inputs) mos.push_back(in.mos);
  for (const auto* model : models) {
    std::vector<double> q0;
    for (const auto& in : inputs) q0.push_back(model->score(in.image));
    TransferCell base;
    base.attacked = std::string(model->id());
    base.present = true;
    base.srcc = srcc(q0, mos);
    base.images = inputs.size();
    report.unattacked.push_back(base);

    for (const auto& set : sets) {
      TransferCell cell;
      cell.attacked = std::string(model->id());
      cell.source = set.source;
      cell.measure = set.measure;
      const bool complete = std::all_of(inputs.begin(), inputs.end(),
                                        [&set](const RatedInput& in) { return set.images.count(in.name) != 0; });
      if (complete && !inputs.empty()) {
        std::vector<double> q1, union_q = q0, union_mos = mos;
        double delta = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          const double q = model->score(set.images.at(inputs[i].name));
          q1.push_back(q);
          union_q.push_back(q);
          union_mos.push_back(mos[i]);
          delta += std::fabs(q - q0[i]);
        }
        cell.present = true;
        cell.srcc = srcc(union_q, union_mos);
        cell.r = stability_ratio(q0, q1);
        cell.mean_abs_delta = delta / static_cast<double>(inputs.size());
        cell.images = inputs.size();
      }
      report.cells.push_back(cell);
    }
  }
  return report;
}

double mean_delta(const TransferReport& report, bool intra) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& c : report.cells) {
    if (!c.present || c.intra() != intra) continue;
    acc += c.mean_abs_delta;
    ++n;
  }
  return n == 0 ? std::nan("") : acc / static_cast<double>(n);
}

std::string format_report(const TransferReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "# SRCC over initial and counterexample images; R uses the natural logarithm\n";
  os << "measure\tattacked\tsource\tkind\tsrcc\tR\tR_excluded\tmean_abs_dq\timages\n";
  for (const auto& c : report.unattacked) {
    os << "-\t" << c.attacked << "\t-\tunattacked\t" << c.srcc << "\t∞\t0\t0\t" << c.images << "\n";
  }
  for (const auto& c : report.cells) {
    os << c.measure << "\t" << c.attacked << "\t" << c.source << "\t" << (c.intra() ? "intra" : "inter") << "\t";
    if (!c.present) {
      os << "absent\tabsent\t-\tabsent\t0\n";
      continue;
    }
    os << c.srcc << "\t";
    if (c.r.defined()) os << c.r.value;
    else os << "undefined";
    os << "\t" << c.r.excluded << "\t" << c.mean_abs_delta << "\t" << c.images << "\n";
  }
  return os.str();
}

void write_report(const std::filesystem::path& path, const TransferReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << format_report(report);
}

std::map<std::string, double> read_score_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvaluationError("cannot read score table " + path.string());
  std::map<std::string, double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string name, value;
    if (!(ls >> name)) continue;
    std::string extra;
    if (!(ls >> value) || (ls >> extra)) {
      throw EvaluationError(path.string() + ":" + std::to_string(line_no) + ": expected 'name score'");
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || !std::isfinite(v)) {
      throw EvaluationError(path.string() + ":" + std::to_string(line_no) + ": '" + value + "' is not a finite number");
    }
    if (!out.emplace(name, v).second) {
      throw EvaluationError(path.string() + ":" + std::to_string(line_no) + ": duplicate name '" + name + "'");
    }
  }
  return out;
}

void write_score_table(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (const auto& [name, v] : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << name << '\t' << buf << '\n';
  }
}

ImageTensor residual_map(const ImageTensor& x0, const ImageTensor& x, double gain) {
  if (x0.shape() != x.shape()) throw ShapeError("residual_map", x0.shape(), x.shape());
  ImageTensor out(x0.height(), x0.width(), 1);
  for (std::size_t y = 0; y < x0.height(); ++y)
    for (std::size_t i = 0; i < x0.width(); ++i) {
      double m = 0.0;
      for (std::size_t c = 0; c < x0.channels(); ++c) m = std::max(m, std::fabs(x0.at(y, i, c) - x.at(y, i, c)));
      out.at(y, i, 0) = std::min(1.0, gain * m);
    }
  return out;
}

}  // namespace iqa::evaluation
