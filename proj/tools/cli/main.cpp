// paln: batch pipeline and service entry point.

#include <csignal>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <unistd.h>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "paln/error.hpp"
#include "paln/nn/checkpoint.hpp"
#include "paln/service/jobs.hpp"
#include "paln/service/server.hpp"

namespace {

using nlohmann::json;
using paln::service::DataLayout;
using paln::service::JobKind;

/// Optional flags that land in a job config only when given on the command
/// line, so the job's own defaults stay authoritative.
class ConfigFlags {
 public:
  template <class T>
  void add(CLI::App* app, const std::string& flag, std::string key, const std::string& help,
           std::string section = {}) {
    auto& slot = storage<T>().emplace_back();
    app->add_option(flag, slot, help);
    apply_.push_back([&slot, key = std::move(key), section = std::move(section)](json& config) {
      if (!slot) return;
      json& target = section.empty() ? config : config[section];
      target[key] = *slot;
    });
  }

  json build() const {
    json config = json::object();
    for (const auto& f : apply_) f(config);
    return config;
  }

 private:
  template <class T>
  std::deque<std::optional<T>>& storage() {
    if constexpr (std::is_same_v<T, double>) return doubles_;
    else if constexpr (std::is_same_v<T, std::string>) return strings_;
    else if constexpr (std::is_same_v<T, bool>) return bools_;
    else return sizes_;
  }

  std::deque<std::optional<double>> doubles_;
  std::deque<std::optional<std::uint64_t>> sizes_;
  std::deque<std::optional<std::string>> strings_;
  std::deque<std::optional<bool>> bools_;
  std::vector<std::function<void(json&)>> apply_;
};

void add_train_flags(CLI::App* app, ConfigFlags& flags) {
  flags.add<std::uint64_t>(app, "--batch-size,--batch_size", "batch_size", "Batch size", "train");
  flags.add<double>(app, "--learning-rate,--learning_rate,--lr", "learning_rate", "Learning rate", "train");
  flags.add<std::string>(app, "--schedule", "schedule", "none|noam", "train");
  flags.add<std::uint64_t>(app, "--warmup-steps,--warmup_steps", "warmup_steps", "Noam warmup steps", "train");
  flags.add<double>(app, "--epochs", "epochs", "Epochs (fractional allowed)", "train");
  flags.add<double>(app, "--l1-factor,--l1_factor", "l1_factor", "L1 penalty factor", "train");
  flags.add<std::uint64_t>(app, "--seed", "seed", "Shuffle seed", "train");
}

void add_decode_flags(CLI::App* app, ConfigFlags& flags, const std::string& section) {
  flags.add<double>(app, "--temperature", "temperature", "Sampling temperature (0 = greedy)", section);
  flags.add<std::uint64_t>(app, "--max-length,--max_length", "max_length", "Maximum answer tokens", section);
  flags.add<std::uint64_t>(app, "--n,--candidates", "candidates", "Candidates for reward decoding", section);
  flags.add<std::uint64_t>(app, "--top-k,--top_k", "top_k", "Top-k filter (0 disables)", section);
  flags.add<double>(app, "--top-p,--top_p", "top_p", "Nucleus mass (1 disables)", section);
  flags.add<std::uint64_t>(app, "--beam-width,--beam_width", "beam_width", "Beam width", section);
  flags.add<std::uint64_t>(app, "--seed", "seed", "Decoding seed", section);
}

int run_batch_job(const DataLayout& layout, JobKind kind, const json& config) {
  paln::service::AnnotationStore annotations(layout);
  paln::service::JobRunner runner(layout, annotations);
  const auto submitted = runner.submit(kind, config);
  spdlog::info("job {} ({}) started", submitted.id, paln::service::to_string(kind));
  const auto job = runner.wait(submitted.id);
  if (job.status != paln::service::JobStatus::done) {
    std::cerr << "paln: job " << job.id << " failed: " << job.error << "\n";
    return 1;
  }
  json out = {{"job", job.id}, {"artifacts", job.artifacts}, {"summary", job.summary}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_evaluate(const DataLayout& layout, const json& config, const std::string& output) {
  paln::service::AnnotationStore annotations(layout);
  paln::service::JobRunner runner(layout, annotations);
  const auto job = runner.wait(runner.submit(JobKind::evaluate, config).id);
  if (job.status != paln::service::JobStatus::done) {
    std::cerr << "paln: evaluation failed: " << job.error << "\n";
    return 1;
  }
  const auto report_path = job.artifacts.at("report");
  const auto report = json::parse(paln::nn::read_file(report_path));
  std::cout << report.at("table").get<std::string>();
  if (!output.empty()) {
    std::filesystem::copy_file(report_path, output, std::filesystem::copy_options::overwrite_existing);
  }
  std::cerr << "report: " << (output.empty() ? report_path : output) << "\n";
  return 0;
}

int run_chat(const DataLayout& layout, const std::string& strategy, const json& params) {
  const auto bundle = paln::service::load_bundle(layout);
  const bool interactive = ::isatty(STDIN_FILENO);
  std::string line;
  while ((interactive && std::cout << "> " << std::flush), std::getline(std::cin, line)) {
    if (line.empty()) continue;
    if (line == "/quit" || line == "/exit") break;
    try {
      const auto reply = paln::service::answer_chat(*bundle, {{"question", line}, {"strategy", strategy}, {"params", params}});
      std::cout << reply.answer << "\n";
      if (reply.score) std::cerr << "  [reward " << *reply.score << ", " << reply.latency_ms << " ms]\n";
    } catch (const paln::service::Unavailable& e) {
      std::cerr << "paln: " << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}

paln::service::Service* g_service = nullptr;

int run_serve(const DataLayout& layout, const std::string& host, int port) {
  paln::service::Service service(layout);
  const int bound = service.bind(host, port);
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });
  spdlog::info("serving {} on http://{}:{}/v1/", layout.root.string(), host, bound);
  std::cout << "listening on " << host << ":" << bound << std::endl;
  service.listen();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paln: fine-tune, align and serve a small dialogue model"};
  app.require_subcommand(1);
  std::string data_dir;
  app.add_option("--data-dir", data_dir, "Data root (default: $PALN_DATA_DIR or ./paln-data)");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  // train-lm: vocabulary plus phase-1 fine-tuning on the base corpus.
  ConfigFlags lm_flags;
  auto* train_lm = app.add_subcommand("train-lm", "Train the vocabulary and fine-tune on the base corpus");
  lm_flags.add<std::string>(train_lm, "--corpus", "corpus", "Base corpus JSONL (default data/base.jsonl)");
  lm_flags.add<std::uint64_t>(train_lm, "--vocab-size,--vocab_size", "vocab_size", "Vocabulary size");
  lm_flags.add<std::uint64_t>(train_lm, "--d-model,--d_model", "d_model", "Model width", "model");
  lm_flags.add<std::uint64_t>(train_lm, "--n-layers,--n_layers", "n_layers", "Transformer blocks", "model");
  lm_flags.add<std::uint64_t>(train_lm, "--n-heads,--n_heads", "n_heads", "Attention heads", "model");
  lm_flags.add<std::uint64_t>(train_lm, "--max-context,--max_context", "max_context", "Context length", "model");
  lm_flags.add<std::uint64_t>(train_lm, "--ff-width,--ff_width", "ff_width", "Feed-forward width", "model");
  lm_flags.add<std::uint64_t>(train_lm, "--model-seed,--model_seed", "model_seed", "Initialization seed");
  add_train_flags(train_lm, lm_flags);

  ConfigFlags ft_flags;
  auto* finetune = app.add_subcommand("finetune", "Fine-tune the live model on the closed-domain set");
  ft_flags.add<std::string>(finetune, "--data", "data", "Dialogue JSONL (default data/gold.jsonl)");
  add_train_flags(finetune, ft_flags);

  ConfigFlags gen_flags;
  auto* gen = app.add_subcommand("gen-candidates", "Sample answers into the annotation queue");
  gen_flags.add<std::string>(gen, "--questions", "questions", "Question JSONL (default data/gold.jsonl)");
  gen_flags.add<std::uint64_t>(gen, "--k", "k", "Candidates per question");
  gen_flags.add<std::uint64_t>(gen, "--seed", "seed", "Sampling seed");
  gen_flags.add<double>(gen, "--temperature", "temperature", "Sampling temperature");
  gen_flags.add<std::uint64_t>(gen, "--max-length,--max_length", "max_length", "Maximum answer tokens");

  ConfigFlags rw_flags;
  auto* train_reward = app.add_subcommand("train-reward", "Train the reward net on rated answers plus gold");
  rw_flags.add<std::uint64_t>(train_reward, "--epochs", "epochs", "Epochs");
  rw_flags.add<double>(train_reward, "--learning-rate,--learning_rate,--lr", "learning_rate", "Learning rate");
  rw_flags.add<std::uint64_t>(train_reward, "--batch-size,--batch_size", "batch_size", "Batch size");
  rw_flags.add<std::uint64_t>(train_reward, "--seed", "seed", "Shuffle seed");
  rw_flags.add<std::uint64_t>(train_reward, "--hidden1", "hidden1", "First hidden width");
  rw_flags.add<std::uint64_t>(train_reward, "--hidden2", "hidden2", "Second hidden width");
  rw_flags.add<std::uint64_t>(train_reward, "--net-seed,--net_seed", "net_seed", "Initialization seed");
  rw_flags.add<std::string>(train_reward, "--preferences", "preferences",
                            "Preference JSONL (default: export the annotation store)");

  ConfigFlags ev_flags;
  auto* evaluate = app.add_subcommand("evaluate", "Compare decoders by BLEU and perplexity");
  ev_flags.add<std::string>(evaluate, "--data", "data", "Dialogue JSONL (default data/gold.jsonl)");
  ev_flags.add<std::string>(evaluate, "--strategies", "strategies", "Comma list of sampling,reward,beam");
  ev_flags.add<std::string>(evaluate, "--bleu", "bleu", "corpus|sentence_mean");
  ev_flags.add<std::string>(evaluate, "--perplexity", "perplexity", "generated|reference");
  add_decode_flags(evaluate, ev_flags, "decode");
  std::string output;
  evaluate->add_option("-o,--output", output, "Also copy the report JSON here");

  ConfigFlags chat_flags;
  auto* chat = app.add_subcommand("chat", "Interactive question answering on stdin");
  std::string strategy = "reward";
  chat->add_option("--strategy", strategy, "sampling|reward|beam")->check(CLI::IsMember({"sampling", "reward", "beam"}));
  add_decode_flags(chat, chat_flags, "");

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));

  auto* export_prefs = app.add_subcommand("export-preferences", "Write rated answers plus gold to exports/");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  spdlog::set_level(verbose || serve->parsed() ? spdlog::level::info : spdlog::level::warn);
  const auto layout = data_dir.empty() ? DataLayout::from_environment() : DataLayout(data_dir);

  try {
    if (train_lm->parsed()) return run_batch_job(layout, JobKind::finetune_phase1, lm_flags.build());
    if (finetune->parsed()) return run_batch_job(layout, JobKind::finetune_phase2, ft_flags.build());
    if (gen->parsed()) return run_batch_job(layout, JobKind::gen_candidates, gen_flags.build());
    if (train_reward->parsed()) return run_batch_job(layout, JobKind::train_reward, rw_flags.build());
    if (evaluate->parsed()) return run_evaluate(layout, ev_flags.build(), output);
    if (chat->parsed()) return run_chat(layout, strategy, chat_flags.build());
    if (serve->parsed()) return run_serve(layout, host, port);
    if (export_prefs->parsed()) {
      paln::service::AnnotationStore annotations(layout);
      const auto merged = paln::service::export_preferences(annotations, layout);
      std::cout << merged.size() << " examples -> " << layout.preferences().string() << "\n";
      return 0;
    }
  } catch (const paln::InvalidInput& e) {
    std::cerr << "paln: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "paln: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
