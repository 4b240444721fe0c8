#include "paln/service/server.hpp"

#include <chrono>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "paln/error.hpp"
#include "paln/service/config.hpp"

namespace paln::service {
namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

/// Runs a handler, mapping exceptions onto status codes.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const InvalidInput& e) {
      send_error(res, 400, e.what());
    } catch (const NotFound& e) {
      send_error(res, 404, e.what());
    } catch (const Conflict& e) {
      send_error(res, 409, e.what());
    } catch (const Unavailable& e) {
      send_error(res, 503, e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_error(res, 500, e.what());
    }
  };
}

json body_object(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body);
  if (!j.is_object()) throw InvalidInput("request body must be a JSON object");
  return j;
}

std::uint64_t path_id(const httplib::Request& req) {
  try {
    return std::stoull(req.matches[1].str());
  } catch (const std::out_of_range&) {
    throw NotFound("id out of range");
  }
}

json task_list(const AnnotationStore& store) {
  json tasks = json::array();
  for (const auto& t : store.list()) tasks.push_back(t.to_json());
  const auto rated = store.rated_count();
  return {{"tasks", tasks}, {"total", tasks.size()}, {"rated", rated}, {"pending", tasks.size() - rated}};
}

json preferences_json(std::span<const train::PreferenceExample> examples) {
  json out = json::array();
  for (const auto& e : examples) out.push_back({{"question", e.question}, {"answer", e.answer}, {"score", e.score}});
  return out;
}

}  // namespace

Service::Service(DataLayout layout) : layout_(std::move(layout)), annotations_((layout_.create_directories(), layout_)) {
  models_ = load_bundle(layout_);
  jobs_ = std::make_unique<JobRunner>(layout_, annotations_, [this] { reload_models(); });
  http_ = std::make_unique<httplib::Server>();
  routes();
}

Service::~Service() {
  stop();
  jobs_.reset();
}

void Service::reload_models() {
  auto fresh = load_bundle(layout_);
  std::lock_guard lock(models_mutex_);
  models_ = std::move(fresh);
}

std::shared_ptr<const ModelBundle> Service::models() const {
  std::lock_guard lock(models_mutex_);
  return models_;
}

ChatReply Service::chat(const json& request) const { return answer_chat(*models(), request); }

ChatReply answer_chat(const ModelBundle& bundle, const json& request) {
  const auto start = std::chrono::steady_clock::now();
  if (!request.is_object()) throw InvalidInput("request body must be a JSON object");
  require_known_keys(request, {"question", "strategy", "params"}, "chat request");
  if (!request.contains("question") || !request.at("question").is_string()) {
    throw InvalidInput("'question' must be a string");
  }
  const auto question = request.at("question").get<std::string>();
  if (question.find_first_not_of(" \t\r\n") == std::string::npos) throw InvalidInput("question is empty");
  auto strategy = eval::Strategy::reward;
  if (request.contains("strategy")) {
    if (!request.at("strategy").is_string()) throw InvalidInput("'strategy' must be a string");
    strategy = eval::parse_strategy(request.at("strategy").get<std::string>());
  }
  const auto params =
      decode_params_from_json(request.contains("params") ? request.at("params") : json::object(), decode::DecodeParams{});

  if (!bundle.lm || !bundle.vocab) throw Unavailable("no model checkpoint loaded");
  if (!is_aligned(*bundle.lm)) {
    throw Unavailable("loaded model has not been through both fine-tuning phases; refusing to serve it");
  }
  if (strategy == eval::Strategy::reward && !bundle.reward) {
    throw Unavailable("strategy 'reward' needs a trained reward net");
  }
  const auto answer = eval::answer_question(*bundle.lm, *bundle.vocab, bundle.reward.get(), question, strategy, params);
  ChatReply reply;
  reply.answer = answer.text;
  reply.strategy = strategy;
  reply.score = answer.reward_score;
  reply.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return reply;
}

void Service::routes() {
  auto& s = *http_;

  s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info("{} {} -> {}", req.method, req.path, res.status);
  });

  s.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
    const auto bundle = models();
    const bool servable = bundle->lm && is_aligned(*bundle->lm);
    send_json(res, 200,
              {{"status", "ok"},
               {"servable", servable},
               {"models", {{"vocab", bundle->files.vocab}, {"lm", bundle->files.lm}, {"reward", bundle->files.reward}}},
               {"annotations", {{"total", annotations_.size()}, {"rated", annotations_.rated_count()}}}});
  }));

  s.Post("/v1/chat", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto reply = chat(body_object(req));
    const auto bundle = models();
    send_json(res, 200,
              {{"answer", reply.answer},
               {"strategy", eval::to_string(reply.strategy)},
               {"score", reply.score ? json(*reply.score) : json(nullptr)},
               {"latency_ms", reply.latency_ms},
               {"model", bundle->files.lm}});
  }));

  s.Get("/v1/annotations", guarded([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, task_list(annotations_));
  }));

  s.Get("/v1/annotations/next", guarded([this](const httplib::Request&, httplib::Response& res) {
    const auto task = annotations_.next_pending();
    if (!task) {
      res.status = 204;
      return;
    }
    send_json(res, 200, task->to_json());
  }));

  s.Get(R"(/v1/annotations/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, annotations_.get(path_id(req)).to_json());
  }));

  s.Post(R"(/v1/annotations/(\d+)/rating)", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto id = path_id(req);
    const auto body = body_object(req);
    require_known_keys(body, {"rating", "note"}, "rating request");
    annotations_.get(id);  // unknown id is 404 before any body check
    if (!body.contains("rating") || !body.at("rating").is_number()) throw InvalidInput("'rating' must be a number");
    std::string note;
    if (body.contains("note")) {
      if (!body.at("note").is_string()) throw InvalidInput("'note' must be a string");
      note = body.at("note").get<std::string>();
    }
    send_json(res, 200, annotations_.rate(id, body.at("rating").get<double>(), note).to_json());
  }));

  s.Get("/v1/preferences", guarded([this](const httplib::Request&, httplib::Response& res) {
    std::vector<train::DialogPair> gold;
    if (std::filesystem::exists(layout_.gold())) gold = train::load_dialogs(layout_.gold());
    const auto merged = train::merge_gold(annotations_.rated_examples(), gold);
    send_json(res, 200, {{"count", merged.size()}, {"examples", preferences_json(merged)}});
  }));

  s.Post("/v1/preferences/export", guarded([this](const httplib::Request&, httplib::Response& res) {
    const auto merged = export_preferences(annotations_, layout_);
    send_json(res, 200, {{"count", merged.size()}, {"path", layout_.preferences().string()}});
  }));

  s.Post("/v1/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = body_object(req);
    require_known_keys(body, {"kind", "config"}, "job request");
    if (!body.contains("kind") || !body.at("kind").is_string()) throw InvalidInput("'kind' must be a string");
    const auto kind = parse_job_kind(body.at("kind").get<std::string>());
    auto config = body.contains("config") ? body.at("config") : json::object();
    if (!config.is_object()) throw InvalidInput("'config' must be an object");
    send_json(res, 202, jobs_->submit(kind, std::move(config)).to_json());
  }));

  s.Get("/v1/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& job : jobs_->list()) out.push_back(job.to_json());
    send_json(res, 200, {{"jobs", out}});
  }));

  s.Get(R"(/v1/jobs/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, jobs_->get(path_id(req)).to_json());
  }));

  s.Post("/v1/models/reload", guarded([this](const httplib::Request&, httplib::Response& res) {
    reload_models();
    const auto bundle = models();
    send_json(res, 200, {{"vocab", bundle->files.vocab}, {"lm", bundle->files.lm}, {"reward", bundle->files.reward}});
  }));

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "no such route" : "request failed");
  });
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = http_->bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!http_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Service::listen() { http_->listen_after_bind(); }

void Service::stop() {
  if (http_) http_->stop();
}

}  // namespace paln::service
