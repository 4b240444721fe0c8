#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paln/lm/model.hpp"
#include "paln/reward/reward_net.hpp"
#include "paln/text/vocabulary.hpp"
#include "paln/train/dataset.hpp"

namespace paln::service {

/// A referenced task, job or artifact does not exist.
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The request conflicts with current state (already rated, job running).
class Conflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Nothing servable is loaded, or the loaded model fails the alignment guard.
class Unavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

/// File layout under the data root.
///
///   data/base.jsonl, data/gold.jsonl       dialogue corpora (user supplied)
///   models/current.json                    which vocab/lm/reward files are live
///   models/<name>-<job>.{bin,txt}          immutable artifacts
///   annotations/tasks.jsonl                annotation queue
///   annotations/ratings.jsonl              append-only rating log
///   exports/preferences.jsonl              rated + gold merge
///   jobs/<id>.json, jobs/<id>/...          job records and their side files
///   reports/<id>.json                      evaluation reports
struct DataLayout {
  std::filesystem::path root;

  explicit DataLayout(std::filesystem::path r) : root(std::move(r)) {}
  /// $PALN_DATA_DIR, else ./paln-data.
  static DataLayout from_environment();

  std::filesystem::path base_corpus() const { return root / "data" / "base.jsonl"; }
  std::filesystem::path gold() const { return root / "data" / "gold.jsonl"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path current() const { return models() / "current.json"; }
  std::filesystem::path tasks() const { return root / "annotations" / "tasks.jsonl"; }
  std::filesystem::path ratings() const { return root / "annotations" / "ratings.jsonl"; }
  std::filesystem::path preferences() const { return root / "exports" / "preferences.jsonl"; }
  std::filesystem::path jobs() const { return root / "jobs"; }
  std::filesystem::path reports() const { return root / "reports"; }

  void create_directories() const;
};

/// File names (relative to models/) of the live artifacts.
struct CurrentArtifacts {
  std::string vocab;
  std::string lm;
  std::string reward;
};
CurrentArtifacts read_current(const DataLayout& layout);
/// Atomically replaces models/current.json.
void write_current(const DataLayout& layout, const CurrentArtifacts& current);

/// Live models. Shared read-only between request threads.
struct ModelBundle {
  CurrentArtifacts files;
  std::optional<text::Vocabulary> vocab;
  std::shared_ptr<const lm::LmModel> lm;
  std::shared_ptr<const reward::RewardNet> reward;
};
std::shared_ptr<const ModelBundle> load_bundle(const DataLayout& layout);

/// Lineage carries both fine-tuning phases, in order.
bool is_aligned(const lm::LmModel& model);

struct AnnotationTask {
  std::uint64_t id = 0;
  std::string question;
  std::string answer;
  std::optional<double> rating;
  std::string note;
  std::string created_at;
  std::string rated_at;

  bool rated() const { return rating.has_value(); }
  nlohmann::json to_json() const;
};

/// Annotation queue backed by tasks.jsonl plus the append-only ratings log.
/// Both files are replayed on construction; a torn last line (no trailing
/// newline) is ignored.
class AnnotationStore {
 public:
  explicit AnnotationStore(DataLayout layout);

  std::vector<AnnotationTask> add_tasks(std::span<const train::DialogPair> candidates);
  /// Lowest-id pending task.
  std::optional<AnnotationTask> next_pending() const;
  AnnotationTask get(std::uint64_t id) const;
  /// pending -> rated exactly once. NotFound, Conflict, InvalidInput.
  AnnotationTask rate(std::uint64_t id, double rating, std::string note = {});
  std::vector<AnnotationTask> list() const;
  std::size_t size() const;
  std::size_t rated_count() const;
  /// Rated tasks as preference examples, in task order.
  std::vector<train::PreferenceExample> rated_examples() const;

 private:
  DataLayout layout_;
  mutable std::mutex mutex_;
  std::vector<AnnotationTask> tasks_;
};

/// merge_gold(rated tasks, gold) written atomically to exports/preferences.jsonl.
std::vector<train::PreferenceExample> export_preferences(const AnnotationStore& store, const DataLayout& layout);

}  // namespace paln::service
