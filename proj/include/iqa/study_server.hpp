#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "iqa/study.hpp"

// HTTP front of a StudyService. All bodies are JSON except image bytes.
//
//   POST /sessions                        {"candidate_set", "repetitions", "seed"}
//   GET  /sessions/{id}/next-trial?observer=NAME
//   GET  /images/{set}/{name}
//   POST /sessions/{id}/responses         {"trial_id", "observer", "answer", "response_ms"}
//   GET  /sessions/{id}/verdicts
//   POST /sessions/{id}/close
//   GET  /sets

namespace iqa::study {

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StudyServer {
 public:
  explicit StudyServer(StudyService& service);
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  /// Binds the listening socket; port 0 picks a free port. Returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. Requires a successful bind().
  void run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace iqa::study
