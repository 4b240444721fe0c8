#include "paln/service/jobs.hpp"

#include <algorithm>
#include <array>
#include <chrono>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "paln/error.hpp"
#include "paln/eval/report.hpp"
#include "paln/nn/checkpoint.hpp"
#include "paln/service/config.hpp"
#include "paln/train/finetune.hpp"

namespace paln::service {
namespace {

using nlohmann::json;

constexpr std::array kKindNames{"finetune-phase1", "finetune-phase2", "gen-candidates", "train-reward", "evaluate"};
constexpr std::array kStatusNames{"queued", "running", "done", "failed"};

json object_or_empty(const json& config, const char* key) {
  return config.contains(key) ? config.at(key) : json::object();
}

std::filesystem::path path_or(const json& config, const char* key, const std::filesystem::path& fallback) {
  if (!config.contains(key)) return fallback;
  if (!config.at(key).is_string() || config.at(key).get<std::string>().empty()) {
    throw InvalidInput(std::string("'") + key + "' must be a non-empty path string");
  }
  return config.at(key).get<std::string>();
}

std::size_t size_or(const json& config, const char* key, std::size_t fallback) {
  if (!config.contains(key)) return fallback;
  if (!config.at(key).is_number_unsigned()) throw InvalidInput(std::string("'") + key + "' must be a non-negative integer");
  return config.at(key).get<std::size_t>();
}

std::string string_or(const json& config, const char* key, std::string fallback) {
  if (!config.contains(key)) return fallback;
  if (!config.at(key).is_string()) throw InvalidInput(std::string("'") + key + "' must be a string");
  return config.at(key).get<std::string>();
}

// Parsed job configs. Parsing is also the validation step.

struct Phase1Job {
  std::filesystem::path corpus;
  std::size_t vocab_size = 512;
  lm::LmConfig model;
  std::uint64_t model_seed = 0;
  train::TrainConfig train = train::TrainConfig::base_corpus_defaults();
};

Phase1Job parse_phase1(const json& c, const DataLayout& layout) {
  require_known_keys(c, {"corpus", "vocab_size", "model", "model_seed", "train"}, "finetune-phase1 config");
  Phase1Job job;
  job.corpus = path_or(c, "corpus", layout.base_corpus());
  job.vocab_size = size_or(c, "vocab_size", job.vocab_size);
  if (job.vocab_size < text::Vocabulary::kByteTokens + text::Vocabulary::kSpecialTokens) {
    throw InvalidInput("vocab_size must be >= 259");
  }
  job.model = lm_config_from_json(object_or_empty(c, "model"), job.model);
  job.model_seed = size_or(c, "model_seed", 0);
  job.train = train_config_from_json(object_or_empty(c, "train"), job.train);
  return job;
}

struct Phase2Job {
  std::filesystem::path data;
  train::TrainConfig train = train::TrainConfig::closed_domain_defaults();
};

Phase2Job parse_phase2(const json& c, const DataLayout& layout) {
  require_known_keys(c, {"data", "train"}, "finetune-phase2 config");
  return {path_or(c, "data", layout.gold()),
          train_config_from_json(object_or_empty(c, "train"), train::TrainConfig::closed_domain_defaults())};
}

struct CandidatesJob {
  std::filesystem::path questions;
  std::size_t k = 5;
  decode::DecodeParams params;
};

CandidatesJob parse_candidates(const json& c, const DataLayout& layout) {
  require_known_keys(c, {"questions", "k", "seed", "temperature", "max_length"}, "gen-candidates config");
  CandidatesJob job;
  job.questions = path_or(c, "questions", layout.gold());
  job.k = size_or(c, "k", job.k);
  if (job.k < 1) throw InvalidInput("k must be >= 1");
  json decode = json::object();
  for (const char* key : {"seed", "temperature", "max_length"}) {
    if (c.contains(key)) decode[key] = c.at(key);
  }
  job.params = decode_params_from_json(decode, {});
  return job;
}

struct RewardJob {
  reward::RewardTrainConfig train;
  reward::RewardConfig net;
  std::uint64_t net_seed = 0;
  std::optional<std::filesystem::path> preferences;
};

RewardJob parse_reward(const json& c) {
  require_known_keys(c, {"epochs", "learning_rate", "batch_size", "seed", "hidden1", "hidden2", "net_seed", "preferences"},
                     "train-reward config");
  RewardJob job;
  json train = json::object();
  for (const char* key : {"epochs", "learning_rate", "batch_size", "seed"}) {
    if (c.contains(key)) train[key] = c.at(key);
  }
  job.train = reward_config_from_json(train, {});
  job.net.hidden1 = size_or(c, "hidden1", job.net.hidden1);
  job.net.hidden2 = size_or(c, "hidden2", job.net.hidden2);
  if (job.net.hidden1 < 1 || job.net.hidden2 < 1) throw InvalidInput("hidden widths must be >= 1");
  job.net_seed = size_or(c, "net_seed", 0);
  if (c.contains("preferences")) job.preferences = path_or(c, "preferences", {});
  return job;
}

struct EvaluateJob {
  std::filesystem::path data;
  decode::DecodeParams params;
  eval::EvalOptions options;
};

EvaluateJob parse_evaluate(const json& c, const DataLayout& layout) {
  require_known_keys(c, {"data", "strategies", "decode", "bleu", "perplexity"}, "evaluate config");
  EvaluateJob job;
  job.data = path_or(c, "data", layout.gold());
  job.params = decode_params_from_json(object_or_empty(c, "decode"), {});
  job.options.strategies = eval::parse_strategies(string_or(c, "strategies", "sampling,reward,beam"));
  const auto bleu = string_or(c, "bleu", "corpus");
  if (bleu != "corpus" && bleu != "sentence_mean") throw InvalidInput("bleu must be corpus|sentence_mean");
  job.options.bleu_mode = bleu == "corpus" ? eval::BleuMode::corpus : eval::BleuMode::sentence_mean;
  const auto ppl = string_or(c, "perplexity", "generated");
  if (ppl != "generated" && ppl != "reference") throw InvalidInput("perplexity must be generated|reference");
  job.options.perplexity_mode = ppl == "generated" ? eval::PerplexityMode::generated : eval::PerplexityMode::reference;
  return job;
}

std::vector<std::string> dialog_documents(std::span<const train::DialogPair> pairs) {
  std::vector<std::string> docs;
  for (const auto& p : pairs) {
    docs.push_back(p.context);
    docs.push_back(p.response);
  }
  return docs;
}

std::string artifact_name(const char* stem, std::uint64_t job, const char* ext) {
  return std::string(stem) + "-" + std::to_string(job) + ext;
}

/// The live vocabulary and language model; UsageError when absent.
std::pair<text::Vocabulary, lm::LmModel> load_live_lm(const DataLayout& layout, const CurrentArtifacts& current) {
  if (current.vocab.empty() || current.lm.empty()) {
    throw UsageError("no language model yet; run finetune-phase1 first");
  }
  return {text::Vocabulary::load(layout.models() / current.vocab), lm::LmModel::load(layout.models() / current.lm)};
}

void run_phase1(JobRecord& job, const DataLayout& layout, const ProgressFn& progress) {
  const auto cfg = parse_phase1(job.config, layout);
  const auto corpus = train::load_dialogs(cfg.corpus);
  auto docs = dialog_documents(corpus);
  if (std::filesystem::exists(layout.gold())) {
    const auto gold = train::load_dialogs(layout.gold());
    const auto more = dialog_documents(gold);
    docs.insert(docs.end(), more.begin(), more.end());
  }
  const auto vocab = text::Vocabulary::train(docs, cfg.vocab_size);
  auto lm_config = cfg.model;
  lm_config.vocab_size = vocab.size();
  lm::LmModel model(lm_config, cfg.model_seed);
  const auto curve = train::finetune_lm(model, vocab, corpus, cfg.train, train::Phase::base_corpus,
                                        [&](const train::LossPoint& p, std::size_t total) {
                                          progress(double(p.step) / double(std::max<std::size_t>(total, 1)));
                                        });

  const auto vocab_file = artifact_name("vocab", job.id, ".txt");
  const auto lm_file = artifact_name("lm", job.id, ".bin");
  vocab.save(layout.models() / vocab_file);
  model.save(layout.models() / lm_file, vocab_file);
  const auto loss_path = layout.jobs() / std::to_string(job.id) / "loss.csv";
  std::filesystem::create_directories(loss_path.parent_path());
  nn::write_file_atomic(loss_path, train::loss_csv(curve));
  // A new language model invalidates the reward net trained on the old embeddings.
  write_current(layout, {vocab_file, lm_file, ""});

  job.artifacts = {{"vocab", (layout.models() / vocab_file).string()},
                   {"model", (layout.models() / lm_file).string()},
                   {"loss", loss_path.string()}};
  job.summary = {{"steps", curve.size()},
                 {"vocab_size", vocab.size()},
                 {"final_loss", curve.empty() ? 0.0 : curve.back().loss}};
}

void run_phase2(JobRecord& job, const DataLayout& layout, const ProgressFn& progress) {
  const auto cfg = parse_phase2(job.config, layout);
  const auto current = read_current(layout);
  auto [vocab, model] = load_live_lm(layout, current);
  const auto data = train::load_dialogs(cfg.data);
  const auto curve = train::finetune_lm(model, vocab, data, cfg.train, train::Phase::closed_domain,
                                        [&](const train::LossPoint& p, std::size_t total) {
                                          progress(double(p.step) / double(std::max<std::size_t>(total, 1)));
                                        });
  const auto lm_file = artifact_name("lm", job.id, ".bin");
  model.save(layout.models() / lm_file, current.vocab);
  const auto loss_path = layout.jobs() / std::to_string(job.id) / "loss.csv";
  std::filesystem::create_directories(loss_path.parent_path());
  nn::write_file_atomic(loss_path, train::loss_csv(curve));
  write_current(layout, {current.vocab, lm_file, ""});

  job.artifacts = {{"model", (layout.models() / lm_file).string()}, {"loss", loss_path.string()}};
  job.summary = {{"steps", curve.size()}, {"final_loss", curve.empty() ? 0.0 : curve.back().loss}};
}

void run_candidates(JobRecord& job, const DataLayout& layout, AnnotationStore& annotations) {
  const auto cfg = parse_candidates(job.config, layout);
  const auto [vocab, model] = load_live_lm(layout, read_current(layout));
  const auto pairs = train::load_dialogs(cfg.questions);
  std::vector<std::string> questions, references;
  for (const auto& p : pairs) {
    questions.push_back(p.context);
    references.push_back(p.response);
  }
  const auto candidates = train::generate_preference_candidates(model, vocab, questions, cfg.k, cfg.params, references);
  const auto added = annotations.add_tasks(candidates);
  job.artifacts = {{"tasks", layout.tasks().string()}};
  job.summary = {{"questions", questions.size()},
                 {"tasks_added", added.size()},
                 {"first_task", added.empty() ? 0 : added.front().id},
                 {"last_task", added.empty() ? 0 : added.back().id}};
}

void run_reward(JobRecord& job, const DataLayout& layout, AnnotationStore& annotations, const ProgressFn& progress) {
  const auto cfg = parse_reward(job.config);
  const auto current = read_current(layout);
  const auto [vocab, model] = load_live_lm(layout, current);
  const auto examples =
      cfg.preferences ? train::load_preferences(*cfg.preferences) : export_preferences(annotations, layout);
  std::vector<train::DialogPair> gold;
  if (std::filesystem::exists(layout.gold())) gold = train::load_dialogs(layout.gold());

  const auto train_set = reward::embed_examples(model, vocab, examples);
  const auto val_set = reward::embed_examples(model, vocab, std::span<const train::DialogPair>(gold));
  auto net_config = cfg.net;
  net_config.embedding_width = model.config().d_model;
  reward::RewardNet net(net_config, cfg.net_seed);
  const auto curve = reward::train_reward(net, train_set, val_set, cfg.train, [&](const reward::PrecisionPoint& p) {
    progress(double(p.epoch) / double(cfg.train.epochs));
  });

  const auto file = artifact_name("reward", job.id, ".bin");
  net.save(layout.models() / file);
  const auto curve_path = layout.jobs() / std::to_string(job.id) / "precision.csv";
  std::filesystem::create_directories(curve_path.parent_path());
  nn::write_file_atomic(curve_path, reward::precision_csv(curve));
  write_current(layout, {current.vocab, current.lm, file});

  job.artifacts = {{"reward", (layout.models() / file).string()}, {"precision", curve_path.string()}};
  if (!cfg.preferences) job.artifacts["preferences"] = layout.preferences().string();
  job.summary = {{"examples", examples.size()},
                 {"epochs", curve.size()},
                 {"train_precision", curve.back().train_precision},
                 {"val_precision", curve.back().val_precision ? json(*curve.back().val_precision) : json(nullptr)}};
}

void run_evaluate(JobRecord& job, const DataLayout& layout) {
  const auto cfg = parse_evaluate(job.config, layout);
  const auto current = read_current(layout);
  auto [vocab, model] = load_live_lm(layout, current);
  std::optional<reward::RewardNet> net;
  if (!current.reward.empty()) net = reward::RewardNet::load(layout.models() / current.reward);
  const auto data = train::load_dialogs(cfg.data);
  std::vector<std::string> questions;
  std::vector<std::vector<std::string>> refs;
  for (const auto& p : data) {
    questions.push_back(p.context);
    refs.push_back({p.response});
  }
  auto options = cfg.options;
  options.model_id = current.lm;
  options.reward_id = current.reward;
  const auto report =
      eval::compare_decoders(model, vocab, net ? &*net : nullptr, questions, refs, cfg.params, options);
  auto j = report.to_json();
  j["table"] = report.table();
  const auto path = layout.reports() / (std::to_string(job.id) + ".json");
  std::filesystem::create_directories(path.parent_path());
  nn::write_file_atomic(path, j.dump(2) + "\n");
  auto csv_path = path;
  csv_path.replace_extension(".csv");
  nn::write_file_atomic(csv_path, report.per_question_csv());
  job.artifacts = {{"report", path.string()}, {"per_question", csv_path.string()}};
  json metrics = json::object();
  for (const auto& r : report.results) {
    metrics[std::string(eval::to_string(r.strategy))] = {{"bleu", r.bleu}, {"perplexity", r.perplexity}};
  }
  job.summary = {{"questions", questions.size()}, {"metrics", metrics}};
}

}  // namespace

std::string_view to_string(JobKind k) { return kKindNames[std::size_t(k)]; }
std::string_view to_string(JobStatus s) { return kStatusNames[std::size_t(s)]; }

JobKind parse_job_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (name == kKindNames[i]) return JobKind(i);
  }
  throw InvalidInput("unknown job kind '" + std::string(name) +
                     "' (expected finetune-phase1|finetune-phase2|gen-candidates|train-reward|evaluate)");
}

JobStatus parse_job_status(std::string_view name) {
  for (std::size_t i = 0; i < kStatusNames.size(); ++i) {
    if (name == kStatusNames[i]) return JobStatus(i);
  }
  throw FormatError("unknown job status '" + std::string(name) + "'");
}

json JobRecord::to_json() const {
  json j = {{"id", id},
            {"kind", to_string(kind)},
            {"status", to_string(status)},
            {"progress", progress},
            {"config", config},
            {"artifacts", artifacts},
            {"summary", summary},
            {"created_at", created_at}};
  if (!started_at.empty()) j["started_at"] = started_at;
  if (!finished_at.empty()) j["finished_at"] = finished_at;
  if (!error.empty()) j["error"] = error;
  return j;
}

JobRecord JobRecord::from_json(const json& j) {
  JobRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  r.kind = parse_job_kind(j.at("kind").get<std::string>());
  r.status = parse_job_status(j.at("status").get<std::string>());
  r.progress = j.value("progress", 0.0);
  r.config = j.value("config", json::object());
  r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  r.summary = j.value("summary", json::object());
  r.error = j.value("error", "");
  r.created_at = j.value("created_at", "");
  r.started_at = j.value("started_at", "");
  r.finished_at = j.value("finished_at", "");
  return r;
}

void validate_job_config(JobKind kind, const json& config) {
  const DataLayout placeholder("");
  switch (kind) {
    case JobKind::finetune_phase1: parse_phase1(config, placeholder); break;
    case JobKind::finetune_phase2: parse_phase2(config, placeholder); break;
    case JobKind::gen_candidates: parse_candidates(config, placeholder); break;
    case JobKind::train_reward: parse_reward(config); break;
    case JobKind::evaluate: parse_evaluate(config, placeholder); break;
  }
}

void run_job(JobRecord& job, const DataLayout& layout, AnnotationStore& annotations, const ProgressFn& progress) {
  layout.create_directories();
  switch (job.kind) {
    case JobKind::finetune_phase1: run_phase1(job, layout, progress); break;
    case JobKind::finetune_phase2: run_phase2(job, layout, progress); break;
    case JobKind::gen_candidates: run_candidates(job, layout, annotations); break;
    case JobKind::train_reward: run_reward(job, layout, annotations, progress); break;
    case JobKind::evaluate: run_evaluate(job, layout); break;
  }
  progress(1.0);
}

JobRunner::JobRunner(DataLayout layout, AnnotationStore& annotations, std::function<void()> on_finished)
    : layout_(std::move(layout)), annotations_(annotations), on_finished_(std::move(on_finished)) {
  layout_.create_directories();
  lock_fd_ = ::open((layout_.jobs() / ".lock").c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) throw std::runtime_error("cannot open " + (layout_.jobs() / ".lock").string());
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd_);
    throw Conflict("data directory " + layout_.root.string() + " is in use by another process");
  }
  // Temp files left by a killed writer were never renamed into place.
  for (const auto& dir : {layout_.models(), layout_.jobs(), layout_.reports()}) {
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".tmp") std::filesystem::remove(entry.path());
    }
  }
  for (const auto& entry : std::filesystem::directory_iterator(layout_.jobs())) {
    if (entry.path().extension() != ".json") continue;
    auto job = JobRecord::from_json(json::parse(nn::read_file(entry.path())));
    if (job.status == JobStatus::queued || job.status == JobStatus::running) {
      job.status = JobStatus::failed;
      job.error = "interrupted by a service restart";
      job.finished_at = utc_timestamp();
      persist(job);
    }
    next_id_ = std::max(next_id_, job.id + 1);
    jobs_.emplace(job.id, std::move(job));
  }
}

JobRunner::~JobRunner() {
  if (worker_.joinable()) worker_.join();
  ::close(lock_fd_);  // releases the flock
}

void JobRunner::persist(const JobRecord& job) const {
  nn::write_file_atomic(layout_.jobs() / (std::to_string(job.id) + ".json"), job.to_json().dump(2) + "\n");
}

JobRecord JobRunner::submit(JobKind kind, json config) {
  if (config.is_null()) config = json::object();
  validate_job_config(kind, config);
  std::lock_guard lock(mutex_);
  if (active_) throw Conflict("job " + std::to_string(*active_) + " is still running");
  JobRecord job;
  job.id = next_id_++;
  job.kind = kind;
  job.config = std::move(config);
  job.created_at = utc_timestamp();
  persist(job);
  jobs_[job.id] = job;
  active_ = job.id;
  if (worker_.joinable()) worker_.join();  // the previous job has already released active_
  worker_ = std::thread(&JobRunner::work, this, job.id);
  return job;
}

void JobRunner::work(std::uint64_t id) {
  JobRecord job;
  {
    std::lock_guard lock(mutex_);
    auto& j = jobs_.at(id);
    j.status = JobStatus::running;
    j.started_at = utc_timestamp();
    persist(j);
    job = j;
  }
  changed_.notify_all();
  try {
    run_job(job, layout_, annotations_, [&](double p) {
      std::lock_guard lock(mutex_);
      jobs_.at(id).progress = p;
    });
    if (on_finished_) on_finished_();
    job.status = JobStatus::done;
    job.progress = 1.0;
  } catch (const std::exception& e) {
    job.status = JobStatus::failed;
    job.error = e.what();
  }
  job.finished_at = utc_timestamp();
  {
    std::lock_guard lock(mutex_);
    if (job.status == JobStatus::failed) job.progress = jobs_.at(id).progress;
    jobs_[id] = job;
    persist(job);
    active_.reset();
  }
  changed_.notify_all();
}

JobRecord JobRunner::get(std::uint64_t id) const {
  std::lock_guard lock(mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFound("no job " + std::to_string(id));
  return it->second;
}

std::vector<JobRecord> JobRunner::list() const {
  std::lock_guard lock(mutex_);
  std::vector<JobRecord> out;
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

JobRecord JobRunner::wait(std::uint64_t id) {
  std::unique_lock lock(mutex_);
  if (jobs_.find(id) == jobs_.end()) throw NotFound("no job " + std::to_string(id));
  changed_.wait(lock, [&] {
    const auto s = jobs_.at(id).status;
    return s == JobStatus::done || s == JobStatus::failed;
  });
  return jobs_.at(id);
}

}  // namespace paln::service
