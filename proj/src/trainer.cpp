#include "inbiased/trainer.hpp"

#include "inbiased/error.hpp"
#include "inbiased/io.hpp"
#include "inbiased/rng.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#ifndef INBIASED_REVISION
#define INBIASED_REVISION "unknown"
#endif

namespace inbiased {
namespace {

using nlohmann::json;

constexpr std::array<std::pair<Method, const char*>, 8> kMethods{{
    {Method::baseline_rgb, "baseline_rgb"},
    {Method::baseline_shape, "baseline_shape"},
    {Method::inbiased, "inbiased"},
    {Method::selfdistil, "selfdistil"},
    {Method::madry, "madry"},
    {Method::trades, "trades"},
    {Method::madry_inbiased, "madry_inbiased"},
    {Method::trades_inbiased, "trades_inbiased"},
}};

std::string net_stream(std::size_t k) { return "net" + std::to_string(k); }

double accuracy_of(const RowMatrix<float>& logits, std::span<const int> labels) {
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return logits.rows() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(logits.rows());
}

void guard(double value, const std::string& what, int epoch, Index batch) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "training diverged: " << what << " = " << value << " at epoch " << epoch << ", batch " << batch
        << " (try a lower learning rate)";
    throw DivergenceError(msg.str());
  }
}

void guard(const Model::Output& out, const std::string& what, int epoch, Index batch) {
  if (!out.logits.allFinite() || !out.latent.allFinite()) guard(std::nan(""), what + " outputs", epoch, batch);
}

/// Per-network running sums over one epoch.
struct Meter {
  double loss = 0.0;
  double ce = 0.0;
  double alignment = 0.0;
  double correct = 0.0;
  double samples = 0.0;
  Index batches = 0;

  void add(const NetworkLoss<float>& l, const RowMatrix<float>& logits, std::span<const int> labels) {
    loss += l.total;
    ce += l.classification;
    alignment += l.total - l.classification;
    correct += accuracy_of(logits, labels) * static_cast<double>(logits.rows());
    samples += static_cast<double>(logits.rows());
    ++batches;
  }
};

/// Alignment terms alone (no classification) against a constant peer.
struct Alignment {
  double value = 0.0;
  RowMatrix<float> grad_logits;
  RowMatrix<float> grad_latent;
};

Alignment alignment_terms(const Model::Output& own, const Model::Output& peer, double lambda, double gamma) {
  Alignment a;
  a.grad_logits = RowMatrix<float>::Zero(own.logits.rows(), own.logits.cols());
  if (lambda != 0.0) {
    const auto da = decision_alignment<float>(own.logits, peer.logits);
    a.value += lambda * da.value;
    a.grad_logits += static_cast<float>(lambda) * da.grad;
  }
  if (gamma != 0.0) {
    const auto fa = feature_alignment<float>(own.latent, peer.latent);
    a.value += gamma * fa.value;
    a.grad_latent = static_cast<float>(gamma) * fa.grad;
  }
  return a;
}

std::vector<std::string> roles_for(Method method) {
  switch (method) {
    case Method::baseline_rgb:
    case Method::madry:
    case Method::trades: return {"baseline"};
    case Method::baseline_shape: return {"baseline_shape"};
    case Method::selfdistil: return {"selfdistil", "peer"};
    default: return {"inbiased", "shapenet"};
  }
}

double evaluate_accuracy(const Model& model, const InputPipeline& pipeline, const ImageBatch<float>& data) {
  const RowMatrix<float> probs = predict(model, pipeline, data.images);
  return accuracy_of(probs, data.labels);
}

}  // namespace

Method parse_method(const std::string& name) {
  for (const auto& [value, text] : kMethods) {
    if (name == text) return value;
  }
  throw InvalidArgument("unknown training method '" + name + "'");
}

std::string to_string(Method method) {
  for (const auto& [value, text] : kMethods) {
    if (value == method) return text;
  }
  return "?";
}

bool is_adversarial(Method m) {
  return m == Method::madry || m == Method::trades || m == Method::madry_inbiased || m == Method::trades_inbiased;
}

bool has_peer(Method m) {
  return m == Method::inbiased || m == Method::selfdistil || m == Method::madry_inbiased || m == Method::trades_inbiased;
}

void TrainConfig::validate() const {
  // the dataset spec is checked when the data is loaded
  if (epochs < 1) throw InvalidArgument("epochs must be positive");
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) throw InvalidArgument("grad_clip must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidArgument("lr_decay must lie in (0,1]");
  if (!std::is_sorted(milestones.begin(), milestones.end())) throw InvalidArgument("milestones must be ascending");
  if (checkpoint_every < 0 || eval_every < 0) throw InvalidArgument("checkpoint_every and eval_every must be >= 0");
  weights.validate();
  attack.validate();
  trades.validate();
  shape.validate();
}

json to_json(const TrainConfig& cfg) {
  json j;
  j["dataset"] = {{"name", to_string(cfg.dataset.name)},
                  {"seed", cfg.dataset.seed},
                  {"tint_alpha", cfg.dataset.tint_alpha},
                  {"limit", cfg.dataset.limit},
                  {"image_size", cfg.dataset.image_size}};
  j["arch"] = std::string(to_string(cfg.arch));
  j["latent_dim"] = cfg.latent_dim;
  j["mlp_hidden"] = cfg.mlp_hidden;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["grad_clip"] = cfg.grad_clip;
  j["scheduler"] = cfg.scheduler == Scheduler::cosine ? "cosine" : "multistep";
  j["milestones"] = cfg.milestones;
  j["lr_decay"] = cfg.lr_decay;
  j["weights"] = {{"lambda_rgb", cfg.weights.lambda_rgb},
                  {"lambda_shape", cfg.weights.lambda_shape},
                  {"gamma_rgb", cfg.weights.gamma_rgb},
                  {"gamma_shape", cfg.weights.gamma_shape}};
  j["seed"] = cfg.seed;
  j["augmentation"] = cfg.augmentation == Augmentation::crop_flip ? "crop_flip" : "none";
  j["shape"] = {{"upsample_factor", cfg.shape.upsample_factor},
                {"blur_kernel", cfg.shape.blur_kernel},
                {"blur_sigma", cfg.shape.blur_sigma},
                {"output_channels", cfg.shape.output_channels == ShapeChannels::replicate3 ? "replicate3" : "single"}};
  j["attack"] = {{"epsilon", cfg.attack.epsilon},
                 {"steps", cfg.attack.steps},
                 {"step_size", cfg.attack.step_size},
                 {"random_start", cfg.attack.random_start}};
  j["trades_beta"] = cfg.trades.beta;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["eval_every"] = cfg.eval_every;
  return j;
}

std::string config_hash(const TrainConfig& cfg, Method method) {
  json j = to_json(cfg);
  j["method"] = to_string(method);
  return io::sha256_hex(std::string_view(j.dump()));
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.scheduler == Scheduler::cosine) {
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
  }
  const auto passed = std::upper_bound(cfg.milestones.begin(), cfg.milestones.end(), epoch) - cfg.milestones.begin();
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(passed));
}

void Sgd::step(Model& model, const Gradients<float>& grads, double lr) { step(model, grads, lr, 1.0); }

void Sgd::step(Model& model, const Gradients<float>& grads, double lr, double scale) {
  auto params = model.parameters();
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (auto* p : params) velocity_.push_back(RowMatrix<float>::Zero(p->value.rows(), p->value.cols()));
  }
  if (velocity_.size() != params.size()) throw InvalidArgument("optimizer state does not match the model");
  const auto mu = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  const auto rate = static_cast<float>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->value;
    const auto* g = grads.find(*params[k]);
    RowMatrix<float> d = wd * p;
    if (g != nullptr) d += scale == 1.0 ? *g : RowMatrix<float>(static_cast<float>(scale) * *g);
    velocity_[k] = mu * velocity_[k] + d;
    p -= rate * velocity_[k];
  }
}

double gradient_norm(const Model& model, const Gradients<float>& grads) {
  double sq = 0.0;
  for (const auto* p : model.parameters()) {
    if (const auto* g = grads.find(*p)) sq += g->template cast<double>().squaredNorm();
  }
  return std::sqrt(sq);
}

int crop_padding(int side) { return static_cast<int>(std::lround(side / 8.0)); }

Tensor<float> augment(const Tensor<float>& x, Augmentation kind, Rng& rng) {
  if (kind == Augmentation::none) return x;
  const Dims d = x.dims;
  const int ph = crop_padding(d.height);
  const int pw = crop_padding(d.width);
  Tensor<float> out(x.batch(), d);
  for (Index i = 0; i < x.batch(); ++i) {
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * ph + 1))) - ph;
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * pw + 1))) - pw;
    const bool flip = rng.uniform() < 0.5;
    for (int c = 0; c < d.channels; ++c) {
      const auto src = x.plane(i, c);
      auto dst = out.plane(i, c);
      for (int y = 0; y < d.height; ++y) {
        const int sy = y + oy;
        if (sy < 0 || sy >= d.height) continue;
        for (int xx = 0; xx < d.width; ++xx) {
          const int sx = (flip ? d.width - 1 - xx : xx) + ox;
          if (sx >= 0 && sx < d.width) dst(y, xx) = src(sy, sx);
        }
      }
    }
  }
  return out;
}

bool InputPipeline::has(Stage stage) const { return std::find(stages.begin(), stages.end(), stage) != stages.end(); }

Tensor<float> InputPipeline::prepare(const Tensor<float>& x) const {
  return has(Stage::extract_shape) ? extract_shape(x, shape) : x;
}

Tensor<float> InputPipeline::per_batch(const Tensor<float>& x, Rng& rng) const {
  return has(Stage::augment) ? augment(x, augmentation, rng) : x;
}

std::vector<InputPipeline> training_pipelines(Method method, const TrainConfig& cfg) {
  InputPipeline rgb;
  rgb.shape = cfg.shape;
  rgb.augmentation = cfg.augmentation;
  if (cfg.augmentation != Augmentation::none) rgb.stages.push_back(Stage::augment);
  InputPipeline shape = rgb;
  shape.stages.insert(shape.stages.begin(), Stage::extract_shape);

  switch (method) {
    case Method::baseline_rgb:
    case Method::madry:
    case Method::trades: return {rgb};
    case Method::baseline_shape: return {shape};
    case Method::selfdistil: return {rgb, rgb};
    default: return {rgb, shape};
  }
}

RowMatrix<float> predict(const Model& model, const InputPipeline& pipeline, const Tensor<float>& x, Index batch_size) {
  RowMatrix<float> probs(x.batch(), model.num_classes());
  for (Index start = 0; start < x.batch(); start += batch_size) {
    const Index n = std::min(batch_size, x.batch() - start);
    const Tensor<float> chunk(x.values.middleRows(start, n), x.dims);
    probs.middleRows(start, n) = softmax<float>(model.forward_split(pipeline.inference(chunk), Mode::eval).logits);
  }
  return probs;
}

RowMatrix<float> ensemble_predict(std::span<const EnsembleMember> members, const Tensor<float>& x) {
  if (members.empty()) throw InvalidArgument("ensemble needs at least one member");
  RowMatrix<float> sum;
  for (const auto& m : members) {
    const RowMatrix<float> p = predict(*m.model, m.pipeline, x);
    if (sum.size() == 0) {
      sum = p;
    } else {
      if (p.cols() != sum.cols()) throw ShapeError("ensemble members disagree on the number of classes");
      sum += p;
    }
  }
  return sum / static_cast<float>(members.size());
}

std::vector<EnsembleMember> inbiased_ensemble(const Checkpoint& ckpt) {
  if (ckpt.networks.size() < 2) throw InvalidArgument("checkpoint holds a single network; no ensemble available");
  return {{&ckpt.networks[0], ckpt.pipelines[0]}, {&ckpt.networks[1], ckpt.pipelines[1]}};
}

std::string build_revision() { return INBIASED_REVISION; }

TrainResult train(Method method, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();

  Dataset train_owned;
  Dataset test_owned;
  const Dataset* train_ds = options.train_data;
  const Dataset* test_ds = options.test_data;
  if (train_ds == nullptr) {
    DatasetSpec spec = cfg.dataset;
    spec.split = Split::train;
    train_owned = load_dataset(spec);
    train_ds = &train_owned;
  }
  if (test_ds == nullptr) {
    DatasetSpec spec = cfg.dataset;
    spec.split = Split::test;
    test_owned = load_dataset(spec);
    test_ds = &test_owned;
  }
  if (train_ds->data.size() == 0) throw EmptyDatasetError("training set is empty");

  const auto pipelines = training_pipelines(method, cfg);
  const std::size_t nets = pipelines.size();
  const bool peer = has_peer(method);
  const auto& weights = cfg.weights;

  // Deterministic stages run once over the whole training set.
  std::vector<Tensor<float>> inputs;
  for (const auto& p : pipelines) inputs.push_back(p.prepare(train_ds->data.images));

  Checkpoint ckpt;
  ckpt.method = to_string(method);
  ckpt.config_hash = config_hash(cfg, method);
  ckpt.config = to_json(cfg);
  ckpt.classes = train_ds->classes;
  ckpt.roles = roles_for(method);
  ckpt.pipelines = pipelines;
  for (std::size_t k = 0; k < nets; ++k) {
    ModelSpec spec{cfg.arch, train_ds->num_classes(), inputs[k].dims, cfg.latent_dim, cfg.mlp_hidden};
    ckpt.networks.emplace_back(spec, derive_seed(cfg.seed, net_stream(k)));
  }
  std::vector<Sgd> optimizers(nets, Sgd(cfg.momentum, cfg.weight_decay));

  const fs::path last = options.checkpoint_dir.empty() ? fs::path() : options.checkpoint_dir / "last.ckpt";
  if (options.resume && !last.empty() && fs::exists(last)) {
    Checkpoint saved = load_checkpoint(last);
    if (saved.config_hash != ckpt.config_hash) {
      throw ConfigError("resume", "checkpoint " + last.string() + " was written for a different configuration");
    }
    ckpt.epoch = saved.epoch;
    ckpt.history = saved.history;
    ckpt.networks = std::move(saved.networks);
    for (std::size_t k = 0; k < nets && k < saved.optimizer_state.size(); ++k) optimizers[k].set_state(saved.optimizer_state[k]);
  }

  RunRecord record;
  record.method = ckpt.method;
  record.config_hash = ckpt.config_hash;
  record.run_id = ckpt.method + "-" + ckpt.config_hash.substr(0, 12);
  record.revision = build_revision();
  record.seed = cfg.seed;
  record.config = ckpt.config;
  record.config["method"] = ckpt.method;

  auto snapshot = [&] {
    ckpt.optimizer_state.clear();
    for (const auto& o : optimizers) ckpt.optimizer_state.push_back(o.state());
    if (!last.empty()) save_checkpoint(ckpt, last);
  };

  const Index n = train_ds->data.size();
  const auto& labels_all = train_ds->data.labels;
  const int end_epoch = options.stop_after ? std::min(cfg.epochs, ckpt.epoch + *options.stop_after) : cfg.epochs;

  for (int epoch = ckpt.epoch; epoch < end_epoch; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    const auto perm = Rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)).permutation(n);
    std::vector<Rng> aug;
    for (std::size_t k = 0; k < nets; ++k) aug.emplace_back(cfg.seed, "augment/" + net_stream(k), static_cast<std::uint64_t>(epoch));
    Rng attack_rng(cfg.seed, "attack", static_cast<std::uint64_t>(epoch));
    std::vector<Meter> meters(nets);
    double robust_sum = 0.0;

    Index batch_index = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const Index count = std::min(cfg.batch_size, n - start);
      const std::vector<Index> idx(perm.begin() + start, perm.begin() + start + count);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = labels_all[static_cast<std::size_t>(idx[i])];

      std::vector<Tensor<float>> x;
      for (std::size_t k = 0; k < nets; ++k) x.push_back(pipelines[k].per_batch(gather(inputs[k], idx), aug[k]));

      std::vector<Gradients<float>> grads(nets);
      std::vector<Tape<float>> tapes;
      for (std::size_t k = 0; k < nets; ++k) tapes.emplace_back(&grads[k]);

      if (!is_adversarial(method)) {
        const auto out0 = ckpt.networks[0].forward_split(x[0], Mode::train, &tapes[0]);
        guard(out0, "network", epoch, batch_index);
        if (!peer) {
          const auto l0 = aligned_loss<float>({out0.latent, out0.logits}, {out0.latent, out0.logits}, labels, 0.0, 0.0);
          guard(l0.total, "loss", epoch, batch_index);
          ckpt.networks[0].backward(l0.grad_logits, nullptr, tapes[0]);
          meters[0].add(l0, out0.logits, labels);
        } else {
          const auto out1 = ckpt.networks[1].forward_split(x[1], Mode::train, &tapes[1]);
          guard(out1, "peer network", epoch, batch_index);
          const auto [l0, l1] = inbiased_losses<float>({out0.latent, out0.logits}, {out1.latent, out1.logits}, labels, weights);
          guard(l0.total, "loss", epoch, batch_index);
          guard(l1.total, "peer loss", epoch, batch_index);
          ckpt.networks[0].backward(l0.grad_logits, l0.grad_latent.size() ? &l0.grad_latent : nullptr, tapes[0]);
          ckpt.networks[1].backward(l1.grad_logits, l1.grad_latent.size() ? &l1.grad_latent : nullptr, tapes[1]);
          meters[0].add(l0, out0.logits, labels);
          meters[1].add(l1, out1.logits, labels);
        }
      } else {
        const bool trades = method == Method::trades || method == Method::trades_inbiased;
        const Tensor<float> x_adv = pgd_attack(ckpt.networks[0], x[0], labels, cfg.attack,
                                               trades ? AttackLoss::trades_kl : AttackLoss::ce, cfg.trades.beta, &attack_rng);
        const auto adv = ckpt.networks[0].forward_split(x_adv, Mode::train, &tapes[0]);
        guard(adv, "network", epoch, batch_index);
        std::optional<Model::Output> shape_out;
        if (peer) {
          shape_out = ckpt.networks[1].forward_split(x[1], Mode::train, &tapes[1]);
          guard(*shape_out, "peer network", epoch, batch_index);
        }

        NetworkLoss<float> l0;
        RowMatrix<float> grad_adv;
        RowMatrix<float> grad_latent;
        if (trades) {
          // TRADES needs a second, clean forward with its own tape
          Tape<float> clean_tape(&grads[0]);
          const auto clean = ckpt.networks[0].forward_split(x[0], Mode::train, &clean_tape);
          guard(clean, "network", epoch, batch_index);
          const auto t = trades_loss<float>(clean.logits, adv.logits, labels, cfg.trades.beta);
          guard(t.robustness, "TRADES KL", epoch, batch_index);
          robust_sum += t.robustness;
          l0.classification = t.classification;
          l0.total = t.total;
          grad_adv = t.grad_adversarial;
          ckpt.networks[0].backward(t.grad_clean, nullptr, clean_tape);
        } else {
          const auto ce = cross_entropy<float>(adv.logits, labels);
          l0.classification = ce.value;
          l0.total = ce.value;
          grad_adv = ce.grad;
        }
        if (peer) {
          const auto a = alignment_terms(adv, *shape_out, weights.lambda_rgb, weights.gamma_rgb);
          l0.total += static_cast<float>(a.value);
          grad_adv += a.grad_logits;
          grad_latent = a.grad_latent;
        }
        guard(l0.total, "loss", epoch, batch_index);
        ckpt.networks[0].backward(grad_adv, grad_latent.size() ? &grad_latent : nullptr, tapes[0]);
        meters[0].add(l0, adv.logits, labels);

        if (peer) {
          // the shape network learns from labels only
          const auto ce = cross_entropy<float>(shape_out->logits, labels);
          guard(ce.value, "peer loss", epoch, batch_index);
          ckpt.networks[1].backward(ce.grad, nullptr, tapes[1]);
          NetworkLoss<float> l1;
          l1.total = l1.classification = ce.value;
          meters[1].add(l1, shape_out->logits, labels);
        }
      }

      for (std::size_t k = 0; k < nets; ++k) {
        double scale = 1.0;
        if (cfg.grad_clip > 0.0) {
          const double norm = gradient_norm(ckpt.networks[k], grads[k]);
          guard(norm, "gradient norm", epoch, batch_index);
          if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
        }
        optimizers[k].step(ckpt.networks[k], grads[k], lr, scale);
      }
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    for (const auto& meter : meters) {
      const auto b = static_cast<double>(std::max<Index>(1, meter.batches));
      m.loss.push_back(meter.loss / b);
      m.ce.push_back(meter.ce / b);
      m.alignment.push_back(meter.alignment / b);
      m.train_accuracy.push_back(meter.samples > 0 ? meter.correct / meter.samples : 0.0);
    }
    m.robust_term = robust_sum / static_cast<double>(std::max<Index>(1, batch_index));
    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
      m.test_accuracy = evaluate_accuracy(ckpt.networks[0], pipelines[0], test_ds->data);
    }
    ckpt.history.push_back(m);
    ckpt.epoch = epoch + 1;
    if (options.on_epoch) options.on_epoch(m);
    if (cfg.checkpoint_every > 0 && ckpt.epoch % cfg.checkpoint_every == 0 && ckpt.epoch < end_epoch) snapshot();
  }
  snapshot();

  record.epochs = ckpt.history;
  if (ckpt.epoch == cfg.epochs) {
    json networks = json::object();
    for (std::size_t k = 0; k < nets; ++k) networks[ckpt.roles[k]] = evaluate_accuracy(ckpt.networks[k], pipelines[k], test_ds->data);
    record.final_metrics["test_accuracy"] = networks[ckpt.roles[0]];
    record.final_metrics["network_accuracy"] = networks;
    if (nets > 1) {
      std::vector<EnsembleMember> members{{&ckpt.networks[0], pipelines[0]}, {&ckpt.networks[1], pipelines[1]}};
      record.final_metrics["ensemble_accuracy"] = accuracy_of(ensemble_predict(members, test_ds->data.images), test_ds->data.labels);
    }
  }
  record.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!last.empty()) record.artifacts["checkpoint"] = {{"path", last.string()}, {"sha256", io::sha256_file(last)}};
  return {std::move(ckpt), std::move(record)};
}

TrainResult train_inbiased(const TrainConfig& cfg, const TrainOptions& options) { return train(Method::inbiased, cfg, options); }

TrainResult train_baseline(Modality modality, const TrainConfig& cfg, const TrainOptions& options) {
  return train(modality == Modality::rgb ? Method::baseline_rgb : Method::baseline_shape, cfg, options);
}

TrainResult train_selfdistil(const TrainConfig& cfg, const TrainOptions& options) { return train(Method::selfdistil, cfg, options); }

json to_json(const EpochMetrics& m) {
  json j{{"epoch", m.epoch}, {"lr", m.lr}, {"loss", m.loss}, {"ce", m.ce}, {"alignment", m.alignment}, {"train_accuracy", m.train_accuracy}};
  j["test_accuracy"] = m.test_accuracy ? json(*m.test_accuracy) : json(nullptr);
  if (m.robust_term != 0.0) j["robust_term"] = m.robust_term;
  return j;
}

EpochMetrics epoch_metrics_from_json(const json& e) {
  EpochMetrics m;
  m.epoch = e.at("epoch").get<int>();
  m.lr = e.at("lr").get<double>();
  m.loss = e.at("loss").get<std::vector<double>>();
  m.ce = e.at("ce").get<std::vector<double>>();
  m.alignment = e.at("alignment").get<std::vector<double>>();
  m.train_accuracy = e.at("train_accuracy").get<std::vector<double>>();
  if (e.contains("test_accuracy") && !e["test_accuracy"].is_null()) m.test_accuracy = e["test_accuracy"].get<double>();
  m.robust_term = e.value("robust_term", 0.0);
  return m;
}

json to_json(const RunRecord& r) {
  json epochs = json::array();
  for (const auto& m : r.epochs) epochs.push_back(to_json(m));
  return {{"run_id", r.run_id},
          {"method", r.method},
          {"config_hash", r.config_hash},
          {"revision", r.revision},
          {"seed", r.seed},
          {"config", r.config},
          {"epochs", epochs},
          {"final", r.final_metrics},
          {"artifacts", r.artifacts},
          {"wall_clock_seconds", r.wall_clock_seconds}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.revision = j.value("revision", "");
  r.seed = j.value("seed", std::uint64_t{0});
  r.config = j.value("config", json::object());
  for (const auto& e : j.value("epochs", json::array())) r.epochs.push_back(epoch_metrics_from_json(e));
  r.final_metrics = j.value("final", json::object());
  r.artifacts = j.value("artifacts", json::object());
  r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
  return r;
}

}  // namespace inbiased
