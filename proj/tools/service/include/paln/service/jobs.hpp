#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "paln/service/store.hpp"

namespace paln::service {

enum class JobKind { finetune_phase1, finetune_phase2, gen_candidates, train_reward, evaluate };
enum class JobStatus { queued, running, done, failed };

std::string_view to_string(JobKind k);
std::string_view to_string(JobStatus s);
JobKind parse_job_kind(std::string_view name);
JobStatus parse_job_status(std::string_view name);

struct JobRecord {
  std::uint64_t id = 0;
  JobKind kind = JobKind::evaluate;
  JobStatus status = JobStatus::queued;
  double progress = 0.0;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> artifacts;  ///< role -> path
  nlohmann::json summary = nlohmann::json::object();
  std::string error;
  std::string created_at, started_at, finished_at;

  nlohmann::json to_json() const;
  static JobRecord from_json(const nlohmann::json& j);
};

/// Validates a job config without running anything; throws InvalidInput.
void validate_job_config(JobKind kind, const nlohmann::json& config);

using ProgressFn = std::function<void(double)>;

/// Runs one job to completion against the data layout, filling artifacts
/// and summary. Artifacts become live only through write_current.
void run_job(JobRecord& job, const DataLayout& layout, AnnotationStore& annotations, const ProgressFn& progress);

/// Single-writer job queue: at most one job is queued or running. Records
/// live in jobs/<id>.json; on construction any record left queued or
/// running by a previous process is marked failed. The runner holds an
/// exclusive lock on jobs/.lock for its lifetime; a second runner on the
/// same data directory gets Conflict.
class JobRunner {
 public:
  JobRunner(DataLayout layout, AnnotationStore& annotations, std::function<void()> on_finished = {});
  ~JobRunner();
  JobRunner(const JobRunner&) = delete;
  JobRunner& operator=(const JobRunner&) = delete;

  /// Conflict if another job is active, InvalidInput for a bad config.
  JobRecord submit(JobKind kind, nlohmann::json config);
  JobRecord get(std::uint64_t id) const;
  std::vector<JobRecord> list() const;
  /// Blocks until job `id` is done or failed.
  JobRecord wait(std::uint64_t id);

 private:
  void persist(const JobRecord& job) const;
  void work(std::uint64_t id);

  DataLayout layout_;
  AnnotationStore& annotations_;
  std::function<void()> on_finished_;
  mutable std::mutex mutex_;
  std::condition_variable changed_;
  std::map<std::uint64_t, JobRecord> jobs_;
  std::uint64_t next_id_ = 1;
  std::optional<std::uint64_t> active_;
  std::thread worker_;
  int lock_fd_ = -1;
};

}  // namespace paln::service
