#pragma once

#include "inbiased/alignment_losses.hpp"
#include "inbiased/attack.hpp"
#include "inbiased/data_factory.hpp"
#include "inbiased/model_zoo.hpp"
#include "inbiased/shape_extraction.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace inbiased {

using Model = EncoderClassifier<float>;

enum class Scheduler { cosine, multistep };
enum class Augmentation { crop_flip, none };

/// Which networks are trained and how their losses couple.
enum class Method {
  baseline_rgb,
  baseline_shape,
  inbiased,
  selfdistil,
  madry,            // single RGB network, PGD-CE adversarial training
  trades,           // single RGB network, TRADES
  madry_inbiased,   // adversarial RGB network aligned to a clean-shape ShapeNet
  trades_inbiased,
};

Method parse_method(const std::string& name);
std::string to_string(Method method);
[[nodiscard]] bool is_adversarial(Method method);
[[nodiscard]] bool has_peer(Method method);

struct TrainConfig {
  DatasetSpec dataset;
  Arch arch = Arch::resnet18_cifar;
  int latent_dim = 0;
  std::vector<int> mlp_hidden;
  int epochs = 200;
  Index batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Rescale each network's gradient to at most this global L2 norm before
  /// the optimizer step (0 = off).
  double grad_clip = 0.0;
  Scheduler scheduler = Scheduler::cosine;
  std::vector<int> milestones;  // epochs at which multistep decays
  double lr_decay = 0.1;
  AlignmentWeights weights;
  std::uint64_t seed = 0;
  Augmentation augmentation = Augmentation::crop_flip;
  ShapeExtractorConfig shape;
  /// Adversarial training (ignored by clean methods).
  AttackSpec attack;
  TradesConfig trades;
  /// Write a checkpoint every this many epochs (0 = final only).
  int checkpoint_every = 0;
  /// Evaluate on the test split every this many epochs (0 = final only).
  int eval_every = 0;

  void validate() const;
};

/// Resolved configuration as canonical JSON; the config hash is its SHA-256.
nlohmann::json to_json(const TrainConfig& cfg);
std::string config_hash(const TrainConfig& cfg, Method method);

/// Learning rate used throughout epoch `epoch` (0-based).
double learning_rate(const TrainConfig& cfg, int epoch);

/// SGD with momentum and L2 weight decay folded into the gradient:
/// v <- mu v + (g + wd p);  p <- p - lr v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(Model& model, const Gradients<float>& grads, double lr);
  /// As step() with the gradient scaled by `scale` (weight decay is not).
  void step(Model& model, const Gradients<float>& grads, double lr, double scale);

  [[nodiscard]] const std::vector<RowMatrix<float>>& state() const { return velocity_; }
  void set_state(std::vector<RowMatrix<float>> velocity) { velocity_ = std::move(velocity); }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<RowMatrix<float>> velocity_;
};

/// Global L2 norm of a network's accumulated gradient.
double gradient_norm(const Model& model, const Gradients<float>& grads);

/// Random crop from a zero-padded canvas (padding = round(side / 8)) and a
/// horizontal flip with probability 1/2, drawn per sample.
Tensor<float> augment(const Tensor<float>& x, Augmentation kind, Rng& rng);
int crop_padding(int side);

enum class Stage { extract_shape, augment };

/// The input transformation of one network, stage by stage.
struct InputPipeline {
  std::vector<Stage> stages;
  ShapeExtractorConfig shape;
  Augmentation augmentation = Augmentation::none;

  [[nodiscard]] bool has(Stage stage) const;
  /// Deterministic stages (applied once to a whole dataset).
  [[nodiscard]] Tensor<float> prepare(const Tensor<float>& x) const;
  /// Random stages, per training batch.
  [[nodiscard]] Tensor<float> per_batch(const Tensor<float>& x, Rng& rng) const;
  /// Inference input: deterministic stages only.
  [[nodiscard]] Tensor<float> inference(const Tensor<float>& x) const { return prepare(x); }
};

/// Pipelines of the networks a method trains; index 0 is the network used
/// for inference.
std::vector<InputPipeline> training_pipelines(Method method, const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  std::vector<double> loss;       // per network, batch mean of the total objective
  std::vector<double> ce;         // per network, batch mean of the classification term
  std::vector<double> alignment;  // per network, batch mean of lambda*DA + gamma*FA
  std::vector<double> train_accuracy;
  std::optional<double> test_accuracy;  // inference network
  double robust_term = 0.0;             // TRADES KL, batch mean
};

struct RunRecord {
  std::string run_id;
  std::string method;
  std::string config_hash;
  std::string revision;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<EpochMetrics> epochs;
  nlohmann::json final_metrics = nlohmann::json::object();
  nlohmann::json artifacts = nlohmann::json::object();  // name -> {path, sha256}
  double wall_clock_seconds = 0.0;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EpochMetrics& m);
EpochMetrics epoch_metrics_from_json(const nlohmann::json& j);

/// A trained (or partially trained) set of networks plus what is needed to
/// resume or to run inference.
struct Checkpoint {
  std::string method;
  std::string config_hash;
  nlohmann::json config;
  int epoch = 0;  // completed epochs
  std::vector<std::string> classes;
  std::vector<std::string> roles;  // e.g. "inbiased", "shapenet"
  std::vector<Model> networks;
  std::vector<InputPipeline> pipelines;
  std::vector<std::vector<RowMatrix<float>>> optimizer_state;  // empty for inference-only
  std::vector<EpochMetrics> history;

  [[nodiscard]] const Model& inference_model() const { return networks.at(0); }
  [[nodiscard]] const InputPipeline& inference_pipeline() const { return pipelines.at(0); }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);
/// The inference network alone, without optimizer state.
Checkpoint inference_only(const Checkpoint& ckpt);

struct TrainOptions {
  /// Directory for periodic and final checkpoints (empty = keep in memory).
  fs::path checkpoint_dir;
  /// Continue from `checkpoint_dir/last.ckpt` when it matches the config.
  bool resume = false;
  /// Stop after this many epochs in this call (for tests of resumption).
  std::optional<int> stop_after;
  /// Pre-loaded data; loaded from cfg.dataset when absent.
  const Dataset* train_data = nullptr;
  const Dataset* test_data = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  RunRecord record;
};

TrainResult train(Method method, const TrainConfig& cfg, const TrainOptions& options = {});

TrainResult train_inbiased(const TrainConfig& cfg, const TrainOptions& options = {});
enum class Modality { rgb, shape };
TrainResult train_baseline(Modality modality, const TrainConfig& cfg, const TrainOptions& options = {});
TrainResult train_selfdistil(const TrainConfig& cfg, const TrainOptions& options = {});

/// One member of an ensemble and the input transformation it expects.
struct EnsembleMember {
  const Model* model;
  InputPipeline pipeline;
};

/// Mean of the members' softmax outputs on raw inputs `x`; each member sees
/// its own pipeline's inference transform of `x`.
RowMatrix<float> ensemble_predict(std::span<const EnsembleMember> members, const Tensor<float>& x);

/// InBiaseD network on RGB plus ShapeNet on extracted shapes.
std::vector<EnsembleMember> inbiased_ensemble(const Checkpoint& ckpt);

/// Softmax outputs of the inference network over a dataset, in batches.
RowMatrix<float> predict(const Model& model, const InputPipeline& pipeline, const Tensor<float>& x,
                         Index batch_size = 256);

/// Build revision recorded in run records.
std::string build_revision();

}  // namespace inbiased
