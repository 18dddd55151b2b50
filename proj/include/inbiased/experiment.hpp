#pragma once

#include "inbiased/adversarial.hpp"
#include "inbiased/eval_suite.hpp"
#include "inbiased/trainer.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace inbiased {

/// Per-dataset defaults: architecture, epochs, scheduler, learning rate and
/// the four alignment weights.
TrainConfig dataset_defaults(DatasetName name);

struct FolderTarget {
  std::string name;
  fs::path path;
  int image_size = 0;
};

/// What to evaluate after training.
struct EvalPlan {
  bool accuracy = true;
  bool fourier = true;
  bool calibration = true;
  std::vector<double> robustness_epsilons;  // empty = skip
  int robustness_steps = 10;
  std::vector<FolderTarget> folders;
};

struct ExperimentConfig {
  std::string name;
  Method method = Method::inbiased;
  TrainConfig train;
  std::vector<std::uint64_t> seeds;  // one run per seed
  EvalPlan eval;
  fs::path output = "runs";
};

/// Parses and validates a config document. Unknown keys, wrong types and
/// missing required keys throw ConfigError naming the key path.
ExperimentConfig parse_experiment(const nlohmann::json& doc);
ExperimentConfig load_experiment(const fs::path& path);

/// Dataset a checkpoint was trained on, for the requested split. The data
/// root is not part of the recorded config and is supplied by the caller.
DatasetSpec checkpoint_dataset(const Checkpoint& ckpt, Split split, const fs::path& root);

/// Fully resolved config (defaults filled in), suitable for echoing.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Append-only JSON-lines file of run records shared between processes.
class Ledger {
 public:
  explicit Ledger(fs::path path);

  void append(const RunRecord& record) const;
  [[nodiscard]] std::vector<RunRecord> records() const;
  /// Latest record with this id; NotFoundError when absent.
  [[nodiscard]] RunRecord find(const std::string& run_id) const;
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  fs::path lock_path_;
};

struct RunOptions {
  bool dry_run = false;
  bool resume = true;
  std::optional<std::vector<std::uint64_t>> seeds;  // overrides the config
  std::function<void(const std::string&)> log;
};

struct ExperimentResult {
  nlohmann::json resolved;
  std::vector<RunRecord> records;  // empty on a dry run
};

/// Trains and evaluates one run per seed. Each run writes its checkpoint,
/// tables and plots to `<output>/<run_id>/` and appends its record to
/// `<output>/ledger.jsonl`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});
ExperimentResult run_experiment(const fs::path& config_path, const RunOptions& options = {});

/// The evaluation stage alone, on a finished checkpoint. Writes tables and
/// plots into `dir` and returns the summary recorded as final metrics, with
/// the written files listed in `artifacts`.
nlohmann::json evaluate_checkpoint(const Checkpoint& ckpt, const ImageBatch<float>& test, const EvalPlan& plan,
                                   const fs::path& dir, nlohmann::json& artifacts, std::uint64_t seed = 0);

/// Checks that every artifact referenced by a record exists with its hash.
/// Returns the names of artifacts that fail.
std::vector<std::string> verify_artifacts(const RunRecord& record);

enum class ReportLayout { shortcut, iid_ood, robustness, calibration };
ReportLayout parse_layout(const std::string& name);

/// Markdown tables in the requested layout. Runs that differ only in their
/// seed share a row with mean +- std cells (std omitted for single runs).
std::string report(const Ledger& ledger, const std::vector<std::string>& run_ids, ReportLayout layout);

/// "m" or "m ± s" with the sample standard deviation, in percent.
std::string mean_std_cell(const std::vector<double>& values, int decimals = 2);

}  // namespace inbiased
