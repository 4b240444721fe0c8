#pragma once

#include <memory>
#include <mutex>
#include <string>

#include "paln/eval/report.hpp"
#include "paln/service/jobs.hpp"
#include "paln/service/store.hpp"

namespace httplib {
class Server;
}

namespace paln::service {

struct ChatReply {
  std::string answer;
  eval::Strategy strategy = eval::Strategy::reward;
  std::optional<double> score;
  double latency_ms = 0.0;
};

/// Answers one chat request {question, strategy?, params?} from `models`.
/// InvalidInput for a bad request; Unavailable when nothing servable is
/// loaded, the model fails the alignment guard, or the reward strategy is
/// asked for without a reward net.
ChatReply answer_chat(const ModelBundle& models, const nlohmann::json& request);

/// JSON-over-HTTP front end under /v1/.
///
///   GET  /v1/health
///   POST /v1/chat                         {question, strategy?, params?}
///   GET  /v1/annotations                  list with counts
///   GET  /v1/annotations/next             204 when the queue is drained
///   GET  /v1/annotations/{id}
///   POST /v1/annotations/{id}/rating      {rating, note?}
///   GET  /v1/preferences                  merged rated + gold dataset
///   POST /v1/preferences/export           writes exports/preferences.jsonl
///   POST /v1/jobs                         {kind, config?}
///   GET  /v1/jobs, /v1/jobs/{id}
///   POST /v1/models/reload
class Service {
 public:
  explicit Service(DataLayout layout);
  ~Service();

  /// Binds to host:port (port 0 picks a free one) and returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

  ChatReply chat(const nlohmann::json& request) const;
  void reload_models();
  std::shared_ptr<const ModelBundle> models() const;

  AnnotationStore& annotations() { return annotations_; }
  JobRunner& jobs() { return *jobs_; }
  const DataLayout& layout() const { return layout_; }

 private:
  void routes();

  DataLayout layout_;
  AnnotationStore annotations_;
  mutable std::mutex models_mutex_;
  std::shared_ptr<const ModelBundle> models_;
  std::unique_ptr<JobRunner> jobs_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace paln::service
