#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "iqa/study.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace iqa;
using namespace iqa::study;

namespace {

std::vector<CandidateInfo> infos(const std::vector<double>& deltas, const std::vector<double>& fidelity = {}) {
  std::vector<CandidateInfo> out;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    out.push_back({i, 0.1 * static_cast<double>(i + 1), fidelity.empty() ? 0.01 * static_cast<double>(i) : fidelity[i],
                   deltas[i], attack::candidate_file_name(i)});
  }
  return out;
}

JndVerdict verdict(std::size_t candidate, std::size_t identical, std::size_t total) {
  return {candidate, total, identical, static_cast<double>(identical) / static_cast<double>(total),
          below_jnd(identical, total)};
}

void answer_all(StudySession& s, const std::string& observer, const std::function<Answer(const Trial&)>& f) {
  for (const auto& t : s.plan()) s.record({t.id, observer, f(t), 500.0, ""});
}

attack::CandidateSet tiny_set(std::size_t k) {
  std::mt19937_64 rng(41);
  attack::CandidateSet set;
  set.image_name = "tiny";
  set.x0 = oracle::random_image(4, 4, 3, rng);
  set.x0.quantize();
  set.model = "nss";
  set.measure = "chebyshev";
  set.config.lambdas.clear();
  for (std::size_t i = 0; i < k; ++i) {
    attack::Candidate c;
    c.index = i;
    c.lambda = static_cast<double>(i + 1);
    c.image = oracle::random_image(4, 4, 3, rng);
    c.image.quantize();
    c.fidelity = 0.01 * static_cast<double>(i);
    c.delta = i % 2 ? -0.5 * static_cast<double>(i) : 0.25 * static_cast<double>(i);
    c.trace = {0.0};
    c.iterations = 1;
    c.stop_reason = "max-iterations";
    set.config.lambdas.push_back(c.lambda);
    set.candidates.push_back(c);
  }
  return set;
}

}  // namespace

TEST_CASE("the 75% rule at its boundary") {
  CHECK(below_jnd(12, 15));
  CHECK_FALSE(below_jnd(11, 15));
  CHECK(below_jnd(3, 4));
  CHECK_FALSE(below_jnd(2, 4));
  CHECK_FALSE(below_jnd(0, 0));
  CHECK(verdict(0, 12, 15).identical_fraction == doctest::Approx(0.8));
  CHECK(verdict(0, 11, 15).identical_fraction == doctest::Approx(0.7333).epsilon(1e-4));
}

TEST_CASE("adding an identical response never revokes a below-JND verdict") {
  for (std::size_t n = 1; n < 60; ++n) {
    for (std::size_t k = 0; k <= n; ++k) {
      if (below_jnd(k, n)) CHECK(below_jnd(k + 1, n + 1));
    }
  }
}

TEST_CASE("selection picks the largest change among below-JND candidates") {
  const auto c = infos({2.1, -3.4, 5.0});
  CHECK(select_counterexample({verdict(0, 12, 15), verdict(1, 15, 15), verdict(2, 3, 15)}, c)->index == 1);
  CHECK(select_counterexample({verdict(0, 12, 15), verdict(1, 11, 15), verdict(2, 3, 15)}, c)->index == 0);
  CHECK_FALSE(select_counterexample({verdict(0, 1, 15), verdict(1, 11, 15), verdict(2, 3, 15)}, c).has_value());
  CHECK_FALSE(select_counterexample({}, c).has_value());
}

TEST_CASE("selection ties go to the smaller distance, then the smaller lambda") {
  auto c = infos({1.0, -1.0, 1.0}, {0.5, 0.2, 0.2});
  const std::vector<JndVerdict> all = {verdict(0, 4, 4), verdict(1, 4, 4), verdict(2, 4, 4)};
  CHECK(select_counterexample(all, c)->index == 1);
  c[1].lambda = 9.0;
  CHECK(select_counterexample(all, c)->index == 2);
}

TEST_CASE("plans cover every candidate and repetition exactly once") {
  const auto p = make_plan(32, 1, 5);
  CHECK(p.size() == 32);
  std::vector<std::size_t> seen;
  for (const auto& t : p) seen.push_back(t.candidate);
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 32; ++i) CHECK(seen[i] == i);

  const auto q = make_plan(7, 3, 9);
  std::map<std::pair<std::size_t, std::size_t>, int> count;
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(q[i].id == i);
    ++count[{q[i].candidate, q[i].repetition}];
  }
  CHECK(count.size() == 21);
  for (const auto& [k, n] : count) CHECK(n == 1);

  const auto a = make_plan(7, 3, 9);
  CHECK(std::equal(a.begin(), a.end(), q.begin(), [](const Trial& x, const Trial& y) {
    return x.id == y.id && x.candidate == y.candidate && x.repetition == y.repetition &&
           x.perturbed_first == y.perturbed_first;
  }));
  CHECK_THROWS_AS(make_plan(0, 3, 1), StudyError);
  CHECK_THROWS_AS(make_plan(3, 0, 1), StudyError);
}

TEST_CASE("plan positions and presentation order are uniform over seeds") {
  const std::size_t k = 4, reps = 3, n = k * reps, seeds = 1000;
  std::vector<double> at(n, 0.0);
  std::size_t first = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto p = make_plan(k, reps, s);
    for (std::size_t i = 0; i < n; ++i) {
      if (p[i].candidate == 0) at[i] += 1.0;
      first += p[i].perturbed_first ? 1 : 0;
    }
  }
  const double expected = static_cast<double>(seeds * reps) / static_cast<double>(n);
  double chi2 = 0.0;
  for (double o : at) chi2 += (o - expected) * (o - expected) / expected;
  // 11 degrees of freedom, 0.999 quantile
  CHECK(chi2 < 31.26);
  const double total = static_cast<double>(seeds * n);
  CHECK(std::fabs(static_cast<double>(first) - total / 2) < 4.0 * std::sqrt(total / 4));
}

TEST_CASE("session recording rules") {
  StudySession s("s1", "set", infos({1.0, 2.0}), 2, 3);
  CHECK(s.plan().size() == 4);
  s.record({0, "ann", Answer::identical, 400, ""});
  CHECK_THROWS_AS(s.record({0, "ann", Answer::different, 400, ""}), Conflict);
  s.record({0, "bob", Answer::different, 400, ""});
  s.record({0, "cy", Answer::different, 400, ""});
  CHECK(s.responses().size() == 3);
  CHECK_THROWS_AS(s.record({4, "ann", Answer::identical, 400, ""}), NotFound);
  CHECK_THROWS_AS(s.record({1, "", Answer::identical, 400, ""}), StudyError);
  CHECK(s.next_trial("ann")->id == 1);
  CHECK(s.next_trial("dee")->id == 0);
  CHECK_THROWS_AS(s.verdicts(), Conflict);
  s.close();
  CHECK(s.state() == SessionState::complete);
  CHECK(s.partial());
  CHECK_FALSE(s.next_trial("ann").has_value());
  CHECK_THROWS_AS(s.record({2, "ann", Answer::identical, 400, ""}), Conflict);
  CHECK_THROWS_AS(s.close(), Conflict);
  CHECK(s.responses().size() == 3);
}

TEST_CASE("force-closed sessions report only fully answered candidates") {
  StudySession s("s1", "set", infos({1.0, 2.0, 3.0}), 2, 4);
  for (const auto& t : s.plan()) {
    if (t.candidate != 2) s.record({t.id, "ann", Answer::identical, 1, ""});
  }
  const auto c2 = std::find_if(s.plan().begin(), s.plan().end(), [](const Trial& t) { return t.candidate == 2; });
  s.record({c2->id, "ann", Answer::identical, 1, ""});
  s.close();
  const auto v = s.verdicts();
  REQUIRE(v.size() == 2);
  CHECK(v[0].candidate == 0);
  CHECK(v[1].candidate == 1);
  CHECK(s.selection()->index == 1);
}

TEST_CASE("pooled verdicts and selection ignore plan order") {
  const auto c = infos({0.5, -2.0, 1.5, 3.0});
  std::vector<std::optional<std::size_t>> picks;
  for (std::uint64_t seed : {1, 2, 3}) {
    StudySession s("s", "set", c, 4, seed);
    for (const std::string obs : {"a", "b"}) {
      answer_all(s, obs, [&](const Trial& t) {
        if (t.candidate == 3) return Answer::different;
        if (t.candidate == 1 && t.repetition == 0 && obs == "a") return Answer::different;
        return Answer::identical;
      });
    }
    const auto v = s.verdicts();
    CHECK(v.size() == 4);
    CHECK(v[1].responses == 8);
    CHECK(v[1].identical == 7);
    picks.push_back(s.selection() ? std::optional(s.selection()->index) : std::nullopt);
  }
  CHECK(picks[0] == std::optional<std::size_t>(1));
  CHECK(picks[1] == picks[0]);
  CHECK(picks[2] == picks[0]);
}

TEST_CASE("simulated observer without noise follows the threshold") {
  const auto c = infos({1.0, 2.0, 3.0}, {0.1, 0.2, 0.3});
  StudySession all("s", "set", c, 15, 1);
  simulate_observer(all, VisibilityModel{0.5, 0.0, 1, {}});
  for (const auto& v : all.verdicts()) CHECK(v.below_jnd);
  StudySession none("s", "set", c, 15, 1);
  simulate_observer(none, VisibilityModel{0.05, 0.0, 1, {}});
  for (const auto& v : none.verdicts()) CHECK_FALSE(v.below_jnd);
  CHECK_FALSE(none.selection().has_value());
  StudySession split("s", "set", c, 15, 1);
  simulate_observer(split, VisibilityModel{0.25, 0.0, 1, {}});
  CHECK(split.selection()->index == 1);
  StudySession over("s", "set", c, 15, 1);
  simulate_observer(over, VisibilityModel{0.25, 0.0, 1, {{2, 0.0}}});
  CHECK(over.selection()->index == 2);
}

TEST_CASE("simulated observer flip rate matches the binomial tail") {
  const double eta = 0.1;
  const std::size_t reps = 15, sessions = 1000;
  const auto c = infos({1.0, 2.0}, {0.0, 1.0});
  std::size_t flipped_visible = 0, flipped_hidden = 0;
  for (std::size_t s = 0; s < sessions; ++s) {
    StudySession session("s", "set", c, reps, s);
    simulate_observer(session, VisibilityModel{0.5, eta, s, {}});
    const auto v = session.verdicts();
    flipped_hidden += v[0].below_jnd ? 0 : 1;
    flipped_visible += v[1].below_jnd ? 1 : 0;
  }
  // candidate 0 is invisible: it loses its verdict with 4 or more "different" answers
  const double p_hidden = oracle::binomial_upper_tail(reps, 4, eta);
  // candidate 1 is visible: it gains the verdict with 12 or more "identical" answers
  const double p_visible = oracle::binomial_upper_tail(reps, 12, eta);
  const double n = static_cast<double>(sessions);
  const double sd_hidden = std::sqrt(n * p_hidden * (1 - p_hidden));
  const double sd_visible = std::max(std::sqrt(n * p_visible * (1 - p_visible)), 1.0);
  CHECK(std::fabs(static_cast<double>(flipped_hidden) - n * p_hidden) <= 3.0 * sd_hidden);
  CHECK(std::fabs(static_cast<double>(flipped_visible) - n * p_visible) <= 3.0 * sd_visible);
}

TEST_CASE("simulated observers differ by id and skip answered trials") {
  const auto c = infos({1.0}, {0.0});
  StudySession s("s", "set", c, 40, 1);
  simulate_observer(s, VisibilityModel{0.5, 0.5, 3, {}}, "a");
  simulate_observer(s, VisibilityModel{0.5, 0.5, 3, {}}, "b");
  simulate_observer(s, VisibilityModel{0.5, 0.5, 3, {}}, "a");
  CHECK(s.responses().size() == 80);
  std::size_t same = 0;
  for (std::size_t i = 0; i < 40; ++i) same += s.responses()[i].answer == s.responses()[40 + i].answer ? 1 : 0;
  CHECK(same < 40);
}

TEST_CASE("service: sets, images, sessions and close hook") {
  TempDir dir;
  attack::save_candidate_set(dir / "tiny", tiny_set(3));
  StudyService svc;
  svc.add_candidate_set("tiny", dir / "tiny");
  CHECK_THROWS_AS(svc.add_candidate_set("tiny", dir / "tiny"), Conflict);
  CHECK(svc.candidate_set_names() == std::vector<std::string>{"tiny"});
  CHECK(svc.image_path("tiny", "x0.png") == dir / "tiny" / "x0.png");
  CHECK(svc.image_path("tiny", "candidate_02.png") == dir / "tiny" / "candidate_02.png");
  CHECK_THROWS_AS(svc.image_path("tiny", "manifest.json"), NotFound);
  CHECK_THROWS_AS(svc.image_path("tiny", "../tiny/x0.png"), NotFound);
  CHECK_THROWS_AS(svc.image_path("other", "x0.png"), NotFound);

  std::vector<std::string> closed;
  svc.set_close_hook([&](const StudySession& s) { closed.push_back(s.id()); });
  const auto id = svc.create_session("tiny", 2, 7);
  CHECK(id == "s1");
  CHECK_THROWS_AS(svc.create_session("nope", 2, 7), NotFound);
  CHECK_THROWS_AS(svc.next_trial("s9", "a"), NotFound);
  while (auto t = svc.next_trial(id, "a")) {
    svc.record(id, {t->id, "a", t->candidate == 2 ? Answer::different : Answer::identical, 700, "t"});
  }
  const auto v = svc.verdicts(id);
  CHECK(v.size() == 3);
  CHECK(svc.selection(id)->index == 1);
  svc.close(id);
  CHECK(closed == std::vector<std::string>{"s1"});
  CHECK_THROWS_AS(svc.close(id), Conflict);
  CHECK(svc.snapshot(id).state() == SessionState::complete);
}

TEST_CASE("service: the session log replays to the same state") {
  TempDir dir;
  attack::save_candidate_set(dir / "tiny", tiny_set(4));
  const auto log = dir / "sessions.jsonl";
  std::vector<JndVerdict> before;
  {
    StudyService svc;
    svc.add_candidate_set("tiny", dir / "tiny");
    svc.attach_log(log);
    const auto a = svc.create_session("tiny", 3, 1);
    const auto b = svc.create_session("tiny", 1, 2);
    while (auto t = svc.next_trial(a, "x")) svc.record(a, {t->id, "x", Answer::identical, 321.5, "2026-01-01T00:00:00Z"});
    svc.record(b, {0, "y", Answer::different, 10, ""});
    svc.close(a);
    before = svc.verdicts(a);
  }
  StudyService again;
  again.add_candidate_set("tiny", dir / "tiny");
  again.attach_log(log);
  CHECK(again.session_ids() == std::vector<std::string>{"s1", "s2"});
  const auto a = again.snapshot("s1");
  CHECK(a.state() == SessionState::complete);
  CHECK(a.responses().size() == 12);
  CHECK(a.responses()[0].response_ms == 321.5);
  CHECK(a.responses()[0].timestamp == "2026-01-01T00:00:00Z");
  const auto after = again.verdicts("s1");
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].identical == before[i].identical);
  CHECK(again.snapshot("s2").state() == SessionState::open);
  CHECK(again.snapshot("s2").responses().size() == 1);
  CHECK(again.create_session("tiny", 1, 3) == "s3");
}

TEST_CASE("failed candidates are not screened") {
  auto set = tiny_set(3);
  set.candidates[1].failed = true;
  const auto c = candidate_infos(set);
  REQUIRE(c.size() == 2);
  CHECK(c[0].index == 0);
  CHECK(c[1].index == 2);
  StudySession s("s", "set", c, 2, 1);
  for (const auto& t : s.plan()) CHECK(t.candidate != 1);
}
