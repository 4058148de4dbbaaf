#include "iqa/study.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "iqa/rng.hpp"
#include "json.hpp"

namespace iqa::study {

using json = nlohmann::json;

std::string_view to_string(Answer a) { return a == Answer::identical ? "identical" : "different"; }

Answer parse_answer(std::string_view s) {
  if (s == "identical") return Answer::identical;
  if (s == "different") return Answer::different;
  throw StudyError("answer must be 'identical' or 'different', got '" + std::string(s) + "'");
}

bool below_jnd(std::size_t identical, std::size_t total) { return total > 0 && 4 * identical >= 3 * total; }

std::vector<Trial> make_plan(std::size_t candidates, std::size_t repetitions, std::uint64_t seed) {
  if (candidates == 0) throw StudyError("cannot plan a session over an empty candidate set");
  if (repetitions == 0) throw StudyError("repetitions must be at least 1");
  std::vector<Trial> plan;
  plan.reserve(candidates * repetitions);
  for (std::size_t c = 0; c < candidates; ++c) {
    for (std::size_t r = 0; r < repetitions; ++r) plan.push_back(Trial{0, c, r, false});
  }
  // Fisher-Yates with a plain modulo reduction
  std::mt19937_64 rng(seed);
  for (std::size_t i = plan.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(plan[i - 1], plan[j]);
  }
  for (std::size_t i = 0; i < plan.size(); ++i) {
    plan[i].id = i;
    plan[i].perturbed_first = (rng() >> 63) != 0;
  }
  return plan;
}

std::vector<CandidateInfo> candidate_infos(const attack::CandidateSet& set) {
  std::vector<CandidateInfo> out;
  for (const auto& c : set.candidates) {
    if (c.failed) continue;
    out.push_back(CandidateInfo{c.index, c.lambda, c.fidelity, c.delta, attack::candidate_file_name(c.index)});
  }
  return out;
}

std::vector<JndVerdict> tally(const std::vector<Trial>& plan, const std::vector<TrialResponse>& responses) {
  std::map<std::size_t, JndVerdict> by_candidate;
  for (const auto& r : responses) {
    if (r.trial >= plan.size()) throw NotFound("unknown trial " + std::to_string(r.trial));
    auto& v = by_candidate[plan[r.trial].candidate];
    v.candidate = plan[r.trial].candidate;
    ++v.responses;
    if (r.answer == Answer::identical) ++v.identical;
  }
  std::vector<JndVerdict> out;
  for (auto& [c, v] : by_candidate) {
    v.identical_fraction = static_cast<double>(v.identical) / static_cast<double>(v.responses);
    v.below_jnd = below_jnd(v.identical, v.responses);
    out.push_back(v);
  }
  return out;
}

std::optional<CandidateInfo> select_counterexample(const std::vector<JndVerdict>& verdicts,
                                                   const std::vector<CandidateInfo>& candidates) {
  std::optional<CandidateInfo> best;
  for (const auto& v : verdicts) {
    if (!v.below_jnd) continue;
    const auto it = std::find_if(candidates.begin(), candidates.end(),
                                 [&v](const CandidateInfo& c) { return c.index == v.candidate; });
    if (it == candidates.end()) continue;
    if (!best) {
      best = *it;
      continue;
    }
    const double a = std::abs(it->delta), b = std::abs(best->delta);
    if (a > b || (a == b && (it->fidelity < best->fidelity ||
                             (it->fidelity == best->fidelity && it->lambda < best->lambda)))) {
      best = *it;
    }
  }
  return best;
}

StudySession::StudySession(std::string id, std::string candidate_set, std::vector<CandidateInfo> candidates,
                           std::size_t repetitions, std::uint64_t seed)
    : id_(std::move(id)),
      candidate_set_(std::move(candidate_set)),
      candidates_(std::move(candidates)),
      repetitions_(repetitions),
      seed_(seed),
      plan_(make_plan(candidates_.size(), repetitions, seed)),
      trial_response_count_(plan_.size(), 0) {
  // plan positions index into candidates_; store the candidate's own index instead
  for (auto& t : plan_) t.candidate = candidates_[t.candidate].index;
}

std::optional<Trial> StudySession::next_trial(const std::string& observer) const {
  if (state_ != SessionState::open) return std::nullopt;
  for (const auto& t : plan_) {
    if (!answered_.count({t.id, observer})) return t;
  }
  return std::nullopt;
}

void StudySession::record(TrialResponse r) {
  if (state_ != SessionState::open) throw Conflict("session " + id_ + " is closed");
  if (r.trial >= plan_.size()) throw NotFound("session " + id_ + " has no trial " + std::to_string(r.trial));
  if (r.observer.empty()) throw StudyError("observer id must not be empty");
  if (!answered_.insert({r.trial, r.observer}).second) {
    throw Conflict("observer '" + r.observer + "' already answered trial " + std::to_string(r.trial));
  }
  ++trial_response_count_[r.trial];
  responses_.push_back(std::move(r));
}

void StudySession::close() {
  if (state_ == SessionState::complete) throw Conflict("session " + id_ + " is already closed");
  state_ = SessionState::complete;
}

bool StudySession::all_answered() const {
  return std::all_of(trial_response_count_.begin(), trial_response_count_.end(), [](std::size_t n) { return n > 0; });
}

std::vector<JndVerdict> StudySession::verdicts() const {
  if (all_answered()) return tally(plan_, responses_);
  if (state_ == SessionState::open) throw Conflict("session " + id_ + " still has unanswered trials");
  std::map<std::size_t, bool> complete;
  for (const auto& t : plan_) {
    auto it = complete.try_emplace(t.candidate, true).first;
    it->second = it->second && trial_response_count_[t.id] > 0;
  }
  std::vector<TrialResponse> kept;
  for (const auto& r : responses_) {
    if (complete[plan_[r.trial].candidate]) kept.push_back(r);
  }
  return tally(plan_, kept);
}

std::optional<CandidateInfo> StudySession::selection() const { return select_counterexample(verdicts(), candidates_); }

void simulate_observer(StudySession& session, const VisibilityModel& model, const std::string& observer) {
  std::map<std::size_t, double> distance = model.distances;
  for (const auto& c : session.candidates()) distance.try_emplace(c.index, c.fidelity);
  // FNV-1a of the observer id
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : observer) h = (h ^ ch) * 0x100000001b3ULL;
  const std::uint64_t stream = mix_seed(model.seed, h);
  for (const auto& t : session.plan()) {
    bool different = distance.at(t.candidate) > model.tau;
    std::mt19937_64 rng(mix_seed(stream, t.id));
    // top 53 bits as a uniform double in [0, 1)
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u < model.noise) different = !different;
    TrialResponse r;
    r.trial = t.id;
    r.observer = observer;
    r.answer = different ? Answer::different : Answer::identical;
    try {
      session.record(std::move(r));
    } catch (const Conflict&) {
      // already answered by this observer
    }
  }
}

// ---- service ----

void StudyService::add_candidate_set(const std::string& name, const std::filesystem::path& dir) {
  auto set = attack::load_candidate_set(dir);
  std::lock_guard lock(mu_);
  if (sets_.count(name)) throw Conflict("candidate set '" + name + "' is already registered");
  sets_[name] = SetEntry{dir, candidate_infos(set)};
}

std::vector<std::string> StudyService::candidate_set_names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, e] : sets_) out.push_back(name);
  return out;
}

std::filesystem::path StudyService::candidate_set_dir(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = sets_.find(name);
  if (it == sets_.end()) throw NotFound("unknown candidate set '" + name + "'");
  return it->second.dir;
}

std::filesystem::path StudyService::image_path(const std::string& set, const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = sets_.find(set);
  if (it == sets_.end()) throw NotFound("unknown candidate set '" + set + "'");
  bool known = name == "x0.png";
  for (const auto& c : it->second.candidates) known = known || c.file == name;
  if (!known) throw NotFound("no image '" + name + "' in candidate set '" + set + "'");
  return it->second.dir / name;
}

std::string StudyService::create_locked(const std::string& id, const std::string& candidate_set,
                                        std::size_t repetitions, std::uint64_t seed) {
  auto it = sets_.find(candidate_set);
  if (it == sets_.end()) throw NotFound("unknown candidate set '" + candidate_set + "'");
  if (it->second.candidates.empty()) throw StudyError("candidate set '" + candidate_set + "' has no candidates");
  if (sessions_.count(id)) throw Conflict("session " + id + " already exists");
  sessions_[id] = std::make_unique<StudySession>(id, candidate_set, it->second.candidates, repetitions, seed);
  return id;
}

std::string StudyService::create_session(const std::string& candidate_set, std::size_t repetitions,
                                         std::uint64_t seed) {
  std::lock_guard lock(mu_);
  std::string id = "s" + std::to_string(next_id_);
  create_locked(id, candidate_set, repetitions, seed);
  ++next_id_;
  append(json{{"event", "create"}, {"session", id}, {"set", candidate_set}, {"repetitions", repetitions},
              {"seed", seed}}.dump());
  return id;
}

std::optional<Trial> StudyService::next_trial(const std::string& session, const std::string& observer) const {
  std::lock_guard lock(mu_);
  return find(session).next_trial(observer);
}

void StudyService::record(const std::string& session, TrialResponse r) {
  std::lock_guard lock(mu_);
  json line{{"event", "response"}, {"session", session}, {"trial", r.trial}, {"observer", r.observer},
            {"answer", std::string(to_string(r.answer))}, {"response_ms", r.response_ms},
            {"timestamp", r.timestamp}};
  find(session).record(std::move(r));
  append(line.dump());
}

void StudyService::close(const std::string& session) {
  std::lock_guard lock(mu_);
  auto& s = find(session);
  s.close();
  append(json{{"event", "close"}, {"session", session}}.dump());
  if (close_hook_) close_hook_(s);
}

void StudyService::set_close_hook(std::function<void(const StudySession&)> hook) {
  std::lock_guard lock(mu_);
  close_hook_ = std::move(hook);
}

std::vector<JndVerdict> StudyService::verdicts(const std::string& session) const {
  std::lock_guard lock(mu_);
  return find(session).verdicts();
}

std::optional<CandidateInfo> StudyService::selection(const std::string& session) const {
  std::lock_guard lock(mu_);
  return find(session).selection();
}

StudySession StudyService::snapshot(const std::string& session) const {
  std::lock_guard lock(mu_);
  return find(session);
}

std::vector<std::string> StudyService::session_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

StudySession& StudyService::find(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
  return *it->second;
}

const StudySession& StudyService::find(const std::string& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
  return *it->second;
}

void StudyService::append(const std::string& line) {
  if (!log_.is_open()) return;
  log_ << line << '\n';
  log_.flush();
}

void StudyService::attach_log(const std::filesystem::path& path) {
  std::lock_guard lock(mu_);
  if (log_.is_open()) throw Conflict("a log is already attached");
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        const std::string event = j.at("event").get<std::string>();
        const std::string session = j.at("session").get<std::string>();
        if (event == "create") {
          create_locked(session, j.at("set").get<std::string>(), j.at("repetitions").get<std::size_t>(),
                        j.at("seed").get<std::uint64_t>());
          if (session.size() > 1 && session[0] == 's') {
            next_id_ = std::max(next_id_, static_cast<std::size_t>(std::stoull(session.substr(1))) + 1);
          }
        } else if (event == "response") {
          TrialResponse r;
          r.trial = j.at("trial").get<std::size_t>();
          r.observer = j.at("observer").get<std::string>();
          r.answer = parse_answer(j.at("answer").get<std::string>());
          r.response_ms = j.at("response_ms").get<double>();
          r.timestamp = j.at("timestamp").get<std::string>();
          find(session).record(std::move(r));
        } else if (event == "close") {
          find(session).close();
        } else {
          throw StudyError("unknown event '" + event + "'");
        }
      } catch (const json::exception& e) {
        throw StudyError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      } catch (const StudyError& e) {
        throw StudyError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  log_.open(path, std::ios::app);
  if (!log_) throw StudyError("cannot open session log " + path.string());
}

}  // namespace iqa::study
