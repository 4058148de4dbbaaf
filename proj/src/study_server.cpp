#include "iqa/study_server.hpp"

#include <sys/socket.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>

#include "httplib.h"
#include "json.hpp"

namespace iqa::study {

using json = nlohmann::json;

namespace {

json verdict_json(const JndVerdict& v) {
  return {{"candidate", v.candidate},
          {"responses", v.responses},
          {"identical", v.identical},
          {"identical_fraction", v.identical_fraction},
          {"below_jnd", v.below_jnd}};
}

json candidate_json(const CandidateInfo& c) {
  return {{"index", c.index}, {"lambda", c.lambda}, {"fidelity", c.fidelity}, {"delta", c.delta}, {"file", c.file}};
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, json{{"error", message}});
}

// Maps service exceptions to HTTP status codes.
template <typename F>
void guarded(httplib::Response& res, F f) {
  try {
    f();
  } catch (const NotFound& e) {
    reply_error(res, 404, e.what());
  } catch (const Conflict& e) {
    reply_error(res, 409, e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, std::string("malformed request body: ") + e.what());
  } catch (const StudyError& e) {
    reply_error(res, 400, e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, e.what());
  }
}

}  // namespace

struct StudyServer::Impl {
  StudyService& service;
  httplib::Server server;
  bool bound = false;

  explicit Impl(StudyService& s) : service(s) {
    // SO_REUSEADDR only, without SO_REUSEPORT
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
  }

  void routes() {
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        const std::string set = body.at("candidate_set").get<std::string>();
        const auto reps = body.value("repetitions", std::size_t{15});
        const auto seed = body.value("seed", std::uint64_t{0});
        const std::string id = service.create_session(set, reps, seed);
        reply(res, 201, json{{"session", id}, {"trials", service.snapshot(id).plan().size()}});
      });
    });

    server.Get(R"(/sessions/([^/]+)/next-trial)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const std::string observer = req.get_param_value("observer");
        if (observer.empty()) throw StudyError("missing 'observer' query parameter");
        const auto trial = service.next_trial(id, observer);
        if (!trial) {
          reply(res, 200, json{{"done", true}});
          return;
        }
        const auto session = service.snapshot(id);
        std::string file;
        for (const auto& c : session.candidates()) {
          if (c.index == trial->candidate) file = c.file;
        }
        const std::string base = "/images/" + session.candidate_set() + "/";
        const std::string perturbed = base + file, initial = base + "x0.png";
        reply(res, 200,
              json{{"done", false},
                   {"trial_id", trial->id},
                   {"image_a", trial->perturbed_first ? perturbed : initial},
                   {"image_b", trial->perturbed_first ? initial : perturbed},
                   {"display_ms", kDisplayMs},
                   {"blank_ms", kBlankMs}});
      });
    });

    server.Get(R"(/images/([^/]+)/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto path = service.image_path(req.matches[1], req.matches[2]);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw NotFound("cannot read " + path.filename().string());
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        res.status = 200;
        res.set_content(std::move(bytes), "image/png");
      });
    });

    server.Post(R"(/sessions/([^/]+)/responses)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        TrialResponse r;
        r.trial = body.at("trial_id").get<std::size_t>();
        r.observer = body.at("observer").get<std::string>();
        r.answer = parse_answer(body.at("answer").get<std::string>());
        r.response_ms = body.value("response_ms", 0.0);
        r.timestamp = body.value("timestamp", utc_now());
        service.record(req.matches[1], std::move(r));
        reply(res, 201, json{{"recorded", true}});
      });
    });

    server.Get(R"(/sessions/([^/]+)/verdicts)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const auto session = service.snapshot(id);
        json verdicts = json::array();
        for (const auto& v : session.verdicts()) verdicts.push_back(verdict_json(v));
        const auto sel = session.selection();
        reply(res, 200,
              json{{"session", id},
                   {"state", session.state() == SessionState::open ? "open" : "complete"},
                   {"partial", session.partial()},
                   {"verdicts", verdicts},
                   {"selected", sel ? candidate_json(*sel) : json(nullptr)}});
      });
    });

    server.Post(R"(/sessions/([^/]+)/close)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        service.close(req.matches[1]);
        reply(res, 200, json{{"closed", true}});
      });
    });

    server.Get("/sets", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, json{{"candidate_sets", service.candidate_set_names()}}); });
    });
  }
};

StudyServer::StudyServer(StudyService& service) : impl_(std::make_unique<Impl>(service)) {}

StudyServer::~StudyServer() {
  if (impl_->server.is_running()) impl_->server.stop();
}

int StudyServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw BindError("cannot bind " + host + " to any port");
    impl_->bound = true;
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw BindError("cannot bind " + host + ":" + std::to_string(port) + " (address in use or unavailable)");
  }
  impl_->bound = true;
  return port;
}

void StudyServer::run() {
  if (!impl_->bound) throw BindError("run() before bind()");
  impl_->server.listen_after_bind();
}

void StudyServer::stop() { impl_->server.stop(); }

void StudyServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace iqa::study
