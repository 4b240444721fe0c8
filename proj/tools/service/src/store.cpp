#include "paln/service/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>

#include "paln/error.hpp"
#include "paln/nn/checkpoint.hpp"
#include "paln/train/finetune.hpp"

namespace paln::service {
namespace {

using nlohmann::json;

/// Complete lines of a JSONL file. A trailing fragment without a newline is
/// a torn append and is cut off the file so later appends start clean.
std::vector<std::string> read_complete_lines(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  const std::string contents = nn::read_file(path);
  const std::size_t end = contents.rfind('\n');
  const std::size_t complete = end == std::string::npos ? 0 : end + 1;
  if (complete < contents.size()) std::filesystem::resize_file(path, complete);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < complete) {
    const std::size_t nl = contents.find('\n', start);
    if (nl > start) lines.push_back(contents.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

void append_durably(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw FormatError("cannot open " + path.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw FormatError("cannot append to " + path.string() + ": " + std::strerror(err));
    }
    done += std::size_t(n);
  }
  ::fsync(fd);
  ::close(fd);
}

json parse_line(const std::string& line, const std::filesystem::path& path) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError("malformed line in " + path.string() + ": " + e.what());
  }
}

}  // namespace

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

DataLayout DataLayout::from_environment() {
  const char* env = std::getenv("PALN_DATA_DIR");
  return DataLayout(env && *env ? env : "paln-data");
}

void DataLayout::create_directories() const {
  for (const auto& dir : {root / "data", models(), tasks().parent_path(), preferences().parent_path(), jobs(),
                          reports()}) {
    std::filesystem::create_directories(dir);
  }
}

CurrentArtifacts read_current(const DataLayout& layout) {
  if (!std::filesystem::exists(layout.current())) return {};
  try {
    const auto j = json::parse(nn::read_file(layout.current()));
    return {j.value("vocab", ""), j.value("lm", ""), j.value("reward", "")};
  } catch (const json::exception& e) {
    throw FormatError("bad " + layout.current().string() + ": " + e.what());
  }
}

void write_current(const DataLayout& layout, const CurrentArtifacts& c) {
  std::filesystem::create_directories(layout.models());
  const json j = {{"vocab", c.vocab}, {"lm", c.lm}, {"reward", c.reward}};
  nn::write_file_atomic(layout.current(), j.dump(2) + "\n");
}

std::shared_ptr<const ModelBundle> load_bundle(const DataLayout& layout) {
  auto bundle = std::make_shared<ModelBundle>();
  bundle->files = read_current(layout);
  if (!bundle->files.vocab.empty()) bundle->vocab = text::Vocabulary::load(layout.models() / bundle->files.vocab);
  if (!bundle->files.lm.empty()) {
    bundle->lm = std::make_shared<const lm::LmModel>(lm::LmModel::load(layout.models() / bundle->files.lm));
  }
  if (!bundle->files.reward.empty()) {
    bundle->reward =
        std::make_shared<const reward::RewardNet>(reward::RewardNet::load(layout.models() / bundle->files.reward));
  }
  return bundle;
}

bool is_aligned(const lm::LmModel& model) {
  const auto& tags = model.lineage();
  const auto p1 = std::find(tags.begin(), tags.end(), train::lineage_tag(train::Phase::base_corpus));
  return p1 != tags.end() && std::find(p1, tags.end(), train::lineage_tag(train::Phase::closed_domain)) != tags.end();
}

json AnnotationTask::to_json() const {
  json j = {{"id", id},
            {"question", question},
            {"answer", answer},
            {"status", rated() ? "rated" : "pending"},
            {"created_at", created_at}};
  if (rating) {
    j["rating"] = *rating;
    j["rated_at"] = rated_at;
    if (!note.empty()) j["note"] = note;
  }
  return j;
}

AnnotationStore::AnnotationStore(DataLayout layout) : layout_(std::move(layout)) {
  for (const auto& line : read_complete_lines(layout_.tasks())) {
    const auto j = parse_line(line, layout_.tasks());
    AnnotationTask t;
    t.id = j.at("id").get<std::uint64_t>();
    t.question = j.at("question").get<std::string>();
    t.answer = j.at("answer").get<std::string>();
    t.created_at = j.value("created_at", "");
    tasks_.push_back(std::move(t));
  }
  std::sort(tasks_.begin(), tasks_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& line : read_complete_lines(layout_.ratings())) {
    const auto j = parse_line(line, layout_.ratings());
    const auto id = j.at("task").get<std::uint64_t>();
    auto it = std::find_if(tasks_.begin(), tasks_.end(), [&](const auto& t) { return t.id == id; });
    if (it == tasks_.end()) throw FormatError("rating log refers to unknown task " + std::to_string(id));
    if (it->rated()) continue;  // the first rating is the one that counts
    it->rating = j.at("rating").get<double>();
    it->note = j.value("note", "");
    it->rated_at = j.value("rated_at", "");
  }
}

std::vector<AnnotationTask> AnnotationStore::add_tasks(std::span<const train::DialogPair> candidates) {
  std::lock_guard lock(mutex_);
  std::uint64_t next = tasks_.empty() ? 1 : tasks_.back().id + 1;
  const std::string now = utc_timestamp();
  std::vector<AnnotationTask> added;
  std::string lines;
  for (const auto& c : candidates) {
    AnnotationTask t{next++, c.context, c.response, std::nullopt, {}, now, {}};
    lines += json{{"id", t.id}, {"question", t.question}, {"answer", t.answer}, {"created_at", now}}.dump() + "\n";
    added.push_back(std::move(t));
  }
  append_durably(layout_.tasks(), lines);
  tasks_.insert(tasks_.end(), added.begin(), added.end());
  return added;
}

std::optional<AnnotationTask> AnnotationStore::next_pending() const {
  std::lock_guard lock(mutex_);
  for (const auto& t : tasks_) {
    if (!t.rated()) return t;
  }
  return std::nullopt;
}

AnnotationTask AnnotationStore::get(std::uint64_t id) const {
  std::lock_guard lock(mutex_);
  for (const auto& t : tasks_) {
    if (t.id == id) return t;
  }
  throw NotFound("no annotation task " + std::to_string(id));
}

AnnotationTask AnnotationStore::rate(std::uint64_t id, double rating, std::string note) {
  std::lock_guard lock(mutex_);
  auto it = std::find_if(tasks_.begin(), tasks_.end(), [&](const auto& t) { return t.id == id; });
  if (it == tasks_.end()) throw NotFound("no annotation task " + std::to_string(id));
  if (!std::isfinite(rating) || rating < 0.0 || rating > 1.0) throw InvalidInput("rating must be in [0, 1]");
  if (it->rated()) throw Conflict("task " + std::to_string(id) + " is already rated");
  const std::string now = utc_timestamp();
  json line = {{"task", id}, {"rating", rating}, {"rated_at", now}};
  if (!note.empty()) line["note"] = note;
  append_durably(layout_.ratings(), line.dump() + "\n");
  it->rating = rating;
  it->note = std::move(note);
  it->rated_at = now;
  return *it;
}

std::vector<AnnotationTask> AnnotationStore::list() const {
  std::lock_guard lock(mutex_);
  return tasks_;
}

std::size_t AnnotationStore::size() const {
  std::lock_guard lock(mutex_);
  return tasks_.size();
}

std::size_t AnnotationStore::rated_count() const {
  std::lock_guard lock(mutex_);
  return std::size_t(std::count_if(tasks_.begin(), tasks_.end(), [](const auto& t) { return t.rated(); }));
}

std::vector<train::PreferenceExample> AnnotationStore::rated_examples() const {
  std::lock_guard lock(mutex_);
  std::vector<train::PreferenceExample> out;
  for (const auto& t : tasks_) {
    if (t.rated()) out.push_back({t.question, t.answer, *t.rating});
  }
  return out;
}

std::vector<train::PreferenceExample> export_preferences(const AnnotationStore& store, const DataLayout& layout) {
  std::vector<train::DialogPair> gold;
  if (std::filesystem::exists(layout.gold())) gold = train::load_dialogs(layout.gold());
  auto merged = train::merge_gold(store.rated_examples(), gold);
  std::filesystem::create_directories(layout.preferences().parent_path());
  train::save_preferences(layout.preferences(), merged);
  return merged;
}

}  // namespace paln::service
