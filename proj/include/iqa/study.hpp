#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iqa/attack.hpp"

// Yes-no screening of candidates: each trial shows a candidate and its initial
// image in random order and asks whether they look identical. A candidate is
// below the just-noticeable difference when at least 75% of its pooled
// responses say "identical".

namespace iqa::study {

class StudyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lookup of something that does not exist (session, trial, image).
class NotFound : public StudyError {
 public:
  using StudyError::StudyError;
};

/// Request that conflicts with the current state (duplicate, closed session).
class Conflict : public StudyError {
 public:
  using StudyError::StudyError;
};

enum class Answer { identical, different };
std::string_view to_string(Answer a);
Answer parse_answer(std::string_view s);

inline constexpr double kJndFraction = 0.75;
inline constexpr int kDisplayMs = 1000;
inline constexpr int kBlankMs = 500;

/// identical / total >= 0.75, evaluated exactly in integers.
bool below_jnd(std::size_t identical, std::size_t total);

struct Trial {
  std::size_t id = 0;
  std::size_t candidate = 0;
  std::size_t repetition = 0;
  bool perturbed_first = false;
};

/// Every candidate `repetitions` times in a seeded shuffle, each trial with a
/// seeded presentation order.
std::vector<Trial> make_plan(std::size_t candidates, std::size_t repetitions, std::uint64_t seed);

struct TrialResponse {
  std::size_t trial = 0;
  std::string observer;
  Answer answer = Answer::identical;
  double response_ms = 0.0;
  std::string timestamp;
};

/// What selection needs to know about a candidate.
struct CandidateInfo {
  std::size_t index = 0;
  double lambda = 0.0;
  double fidelity = 0.0;
  double delta = 0.0;
  std::string file;
};

std::vector<CandidateInfo> candidate_infos(const attack::CandidateSet& set);

struct JndVerdict {
  std::size_t candidate = 0;
  std::size_t responses = 0;
  std::size_t identical = 0;
  double identical_fraction = 0.0;
  bool below_jnd = false;
};

/// Verdicts from a flat response list; candidates without responses are absent.
std::vector<JndVerdict> tally(const std::vector<Trial>& plan, const std::vector<TrialResponse>& responses);

/// Among below-JND candidates, the largest |delta|; ties go to the smaller
/// fidelity value, then the smaller lambda.
std::optional<CandidateInfo> select_counterexample(const std::vector<JndVerdict>& verdicts,
                                                   const std::vector<CandidateInfo>& candidates);

enum class SessionState { open, complete };

class StudySession {
 public:
  StudySession(std::string id, std::string candidate_set, std::vector<CandidateInfo> candidates,
               std::size_t repetitions, std::uint64_t seed);

  const std::string& id() const { return id_; }
  const std::string& candidate_set() const { return candidate_set_; }
  const std::vector<CandidateInfo>& candidates() const { return candidates_; }
  const std::vector<Trial>& plan() const { return plan_; }
  const std::vector<TrialResponse>& responses() const { return responses_; }
  std::size_t repetitions() const { return repetitions_; }
  std::uint64_t seed() const { return seed_; }
  SessionState state() const { return state_; }
  /// Closed before every trial had a response.
  bool partial() const { return state_ == SessionState::complete && !all_answered(); }

  /// First trial in plan order this observer has not answered.
  std::optional<Trial> next_trial(const std::string& observer) const;
  void record(TrialResponse r);
  void close();

  bool all_answered() const;
  /// Needs every trial answered, unless the session was closed; a closed
  /// session reports only candidates whose trials all have a response.
  std::vector<JndVerdict> verdicts() const;
  std::optional<CandidateInfo> selection() const;

 private:
  std::string id_;
  std::string candidate_set_;
  std::vector<CandidateInfo> candidates_;
  std::size_t repetitions_;
  std::uint64_t seed_;
  std::vector<Trial> plan_;
  std::vector<TrialResponse> responses_;
  std::vector<std::size_t> trial_response_count_;
  std::set<std::pair<std::size_t, std::string>> answered_;
  SessionState state_ = SessionState::open;
};

/// Deterministic stand-in for a human: "different" iff D(y, x0) > tau, then
/// each answer is flipped with probability `noise`.
struct VisibilityModel {
  double tau = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  /// Distance of each candidate under the designated measure; candidates not
  /// listed use their own fidelity value.
  std::map<std::size_t, double> distances;
};

/// Answers every trial of the session not yet answered by `observer`.
void simulate_observer(StudySession& session, const VisibilityModel& model, const std::string& observer = "sim");

/// Sessions plus an optional append-only JSON-lines log. Thread-safe.
class StudyService {
 public:
  StudyService() = default;

  /// Registers a candidate set under `name`.
  void add_candidate_set(const std::string& name, const std::filesystem::path& dir);
  std::vector<std::string> candidate_set_names() const;
  /// Directory of a registered set, or NotFound.
  std::filesystem::path candidate_set_dir(const std::string& name) const;
  /// Resolves an image name to a file of a registered set; only x0.png and
  /// candidate files are served.
  std::filesystem::path image_path(const std::string& set, const std::string& name) const;

  std::string create_session(const std::string& candidate_set, std::size_t repetitions, std::uint64_t seed);
  std::optional<Trial> next_trial(const std::string& session, const std::string& observer) const;
  void record(const std::string& session, TrialResponse r);
  void close(const std::string& session);
  std::vector<JndVerdict> verdicts(const std::string& session) const;
  std::optional<CandidateInfo> selection(const std::string& session) const;
  /// Copy of the session state.
  StudySession snapshot(const std::string& session) const;
  std::vector<std::string> session_ids() const;

  /// Replays `path` if it exists (candidate sets must be registered first),
  /// then appends every later mutation to it.
  void attach_log(const std::filesystem::path& path);
  /// Called with the session after every successful close().
  void set_close_hook(std::function<void(const StudySession&)> hook);

 private:
  struct SetEntry {
    std::filesystem::path dir;
    std::vector<CandidateInfo> candidates;
  };
  StudySession& find(const std::string& id);
  const StudySession& find(const std::string& id) const;
  void append(const std::string& line);
  std::string create_locked(const std::string& id, const std::string& candidate_set, std::size_t repetitions,
                            std::uint64_t seed);

  mutable std::mutex mu_;
  std::map<std::string, SetEntry> sets_;
  std::map<std::string, std::unique_ptr<StudySession>> sessions_;
  std::ofstream log_;
  std::function<void(const StudySession&)> close_hook_;
  std::size_t next_id_ = 1;
};

}  // namespace iqa::study
