#include <doctest.h>

#include "inbiased/error.hpp"
#include "inbiased/io.hpp"
#include "inbiased/trainer.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

#include <cmath>
#include <fstream>

using namespace inbiased;

namespace {

const Dataset& train_set() {
  static const Dataset d = testing::blocks_dataset(96, 3, 1);
  return d;
}
const Dataset& test_set() {
  static const Dataset d = testing::blocks_dataset(48, 3, 2);
  return d;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.dataset.name = DatasetName::folder;
  cfg.arch = Arch::mlp;
  cfg.mlp_hidden = {32, 16};
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.seed = 7;
  cfg.augmentation = Augmentation::crop_flip;
  cfg.attack.steps = 2;
  return cfg;
}

TrainOptions data_options() {
  TrainOptions o;
  o.train_data = &train_set();
  o.test_data = &test_set();
  return o;
}

std::vector<std::uint64_t> digests(const Checkpoint& c) {
  std::vector<std::uint64_t> out;
  for (const auto& n : c.networks) out.push_back(parameter_digest(n));
  return out;
}

}  // namespace

TEST_CASE("zero alignment weights reproduce the baseline bit for bit") {
  TrainConfig cfg = small_config();
  cfg.weights = {0.0, 0.0, 0.0, 0.0};
  const auto baseline = train(Method::baseline_rgb, cfg, data_options());
  const auto joint = train(Method::inbiased, cfg, data_options());
  CHECK(parameter_digest(joint.checkpoint.networks[0]) == parameter_digest(baseline.checkpoint.networks[0]));
  CHECK(joint.record.epochs.back().loss[0] == baseline.record.epochs.back().loss[0]);

  const auto madry = train(Method::madry, cfg, data_options());
  const auto madry_joint = train(Method::madry_inbiased, cfg, data_options());
  CHECK(parameter_digest(madry_joint.checkpoint.networks[0]) == parameter_digest(madry.checkpoint.networks[0]));
}

TEST_CASE("alignment changes the RGB network when switched on") {
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  const auto baseline = train(Method::baseline_rgb, cfg, data_options());
  const auto joint = train(Method::inbiased, cfg, data_options());
  CHECK(parameter_digest(joint.checkpoint.networks[0]) != parameter_digest(baseline.checkpoint.networks[0]));
  CHECK(joint.record.epochs.back().alignment[0] > 0.0);
  CHECK(joint.record.epochs.back().alignment[1] > 0.0);
}

TEST_CASE("training is deterministic in the seed") {
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  const auto a = train(Method::inbiased, cfg, data_options());
  const auto b = train(Method::inbiased, cfg, data_options());
  CHECK(digests(a.checkpoint) == digests(b.checkpoint));
  auto ja = to_json(a.record);
  auto jb = to_json(b.record);
  ja.erase("wall_clock_seconds");
  jb.erase("wall_clock_seconds");
  CHECK(ja == jb);
  cfg.seed = 8;
  const auto c = train(Method::inbiased, cfg, data_options());
  CHECK(digests(c.checkpoint) != digests(a.checkpoint));
}

TEST_CASE("loss falls and accuracy rises on a learnable problem") {
  TrainConfig cfg = small_config();
  cfg.epochs = 8;
  cfg.augmentation = Augmentation::none;
  const auto r = train(Method::inbiased, cfg, data_options());
  const auto& h = r.record.epochs;
  REQUIRE(h.size() == 8);
  for (std::size_t k = 0; k < 2; ++k) CHECK(h.back().ce[k] < h.front().ce[k]);
  CHECK(r.record.final_metrics["test_accuracy"].get<double>() > 0.9);
  CHECK(r.record.final_metrics.contains("ensemble_accuracy"));
  CHECK(r.record.final_metrics["network_accuracy"].contains("shapenet"));
}

TEST_CASE("every method trains and reports its networks") {
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  for (Method m : {Method::baseline_rgb, Method::baseline_shape, Method::inbiased, Method::selfdistil, Method::madry,
                   Method::trades, Method::madry_inbiased, Method::trades_inbiased}) {
    CAPTURE(to_string(m));
    const auto r = train(m, cfg, data_options());
    CHECK(r.checkpoint.networks.size() == (has_peer(m) ? 2u : 1u));
    CHECK(r.record.epochs.size() == 1u);
    CHECK(std::isfinite(r.record.epochs[0].loss[0]));
    if (m == Method::trades || m == Method::trades_inbiased) CHECK(r.record.epochs[0].robust_term > 0.0);
    CHECK(parse_method(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("bogus"), InvalidArgument);
}

TEST_CASE("learning rate schedules") {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.lr = 0.1;
  CHECK(learning_rate(cfg, 0) == doctest::Approx(0.1));
  CHECK(learning_rate(cfg, 50) == doctest::Approx(0.05));
  for (int e = 1; e < 100; ++e) CHECK(learning_rate(cfg, e) < learning_rate(cfg, e - 1));
  CHECK(learning_rate(cfg, 99) < 1e-3 * cfg.lr);
  cfg.scheduler = Scheduler::multistep;
  cfg.milestones = {30, 60};
  CHECK(learning_rate(cfg, 29) == doctest::Approx(0.1));
  CHECK(learning_rate(cfg, 30) == doctest::Approx(0.01));
  CHECK(learning_rate(cfg, 99) == doctest::Approx(0.001));
}

TEST_CASE("SGD follows the momentum and weight decay recurrence") {
  ModelSpec spec;
  spec.arch = Arch::mlp;
  spec.num_classes = 2;
  spec.input = {1, 1, 2};
  spec.mlp_hidden = {2};
  Model model(spec, 1);
  auto* p = model.parameters().front();
  const RowMatrix<float> p0 = p->value;
  const RowMatrix<float> g = RowMatrix<float>::Constant(p0.rows(), p0.cols(), 0.5f);
  Gradients<float> grads;
  grads.accumulate(*p, g);
  Sgd sgd(0.9, 0.01);
  sgd.step(model, grads, 0.1);
  // oracle in double: v1 = g + wd p0; p1 = p0 - lr v1; v2 = mu v1 + g + wd p1
  for (Index i = 0; i < p0.size(); ++i) {
    const double v1 = 0.5 + 0.01 * p0.data()[i];
    const double p1 = p0.data()[i] - 0.1 * v1;
    CHECK(p->value.data()[i] == doctest::Approx(p1).epsilon(1e-6));
  }
  const RowMatrix<float> p1 = p->value;
  sgd.step(model, grads, 0.1);
  for (Index i = 0; i < p0.size(); ++i) {
    const double v1 = 0.5 + 0.01 * p0.data()[i];
    const double v2 = 0.9 * v1 + 0.5 + 0.01 * p1.data()[i];
    CHECK(p->value.data()[i] == doctest::Approx(p1.data()[i] - 0.1 * v2).epsilon(1e-6));
  }
  // parameters without a gradient still decay
  auto* q = model.parameters().back();
  CHECK(grads.find(*q) == nullptr);
}

TEST_CASE("gradient clipping") {
  ModelSpec spec;
  spec.arch = Arch::mlp;
  spec.num_classes = 2;
  spec.input = {1, 1, 2};
  spec.mlp_hidden = {2};
  Model model(spec, 3);
  auto params = model.parameters();
  Gradients<float> grads;
  RowMatrix<float> g0 = RowMatrix<float>::Constant(params[0]->value.rows(), params[0]->value.cols(), 3.0f);
  RowMatrix<float> g1 = RowMatrix<float>::Constant(params[1]->value.rows(), params[1]->value.cols(), -4.0f);
  grads.accumulate(*params[0], g0);
  grads.accumulate(*params[1], g1);
  // oracle: sqrt(9 n0 + 16 n1)
  const double expected = std::sqrt(9.0 * static_cast<double>(g0.size()) + 16.0 * static_cast<double>(g1.size()));
  CHECK(gradient_norm(model, grads) == doctest::Approx(expected).epsilon(1e-12));

  // a scaled step equals a step on the scaled gradient
  Model a = model, b = model;
  Gradients<float> half;
  half.accumulate(*b.parameters()[0], RowMatrix<float>(0.5f * g0));
  half.accumulate(*b.parameters()[1], RowMatrix<float>(0.5f * g1));
  Gradients<float> ga;
  ga.accumulate(*a.parameters()[0], g0);
  ga.accumulate(*a.parameters()[1], g1);
  Sgd(0.9, 0.0).step(a, ga, 0.1, 0.5);
  Sgd(0.9, 0.0).step(b, half, 0.1);
  CHECK(parameter_digest(a) == parameter_digest(b));

  // a bound that is never reached leaves training bit-identical
  auto cfg = small_config();
  cfg.epochs = 2;
  const auto plain = train(Method::inbiased, cfg, data_options());
  cfg.grad_clip = 1e30;
  const auto loose = train(Method::inbiased, cfg, data_options());
  CHECK(digests(plain.checkpoint) == digests(loose.checkpoint));
  cfg.grad_clip = 1e-3;
  const auto tight = train(Method::inbiased, cfg, data_options());
  CHECK(digests(plain.checkpoint) != digests(tight.checkpoint));
  cfg.grad_clip = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("crop and flip augmentation") {
  CHECK(crop_padding(32) == 4);
  CHECK(crop_padding(28) == 4);
  CHECK(crop_padding(64) == 8);
  Tensor<float> ones(6, Dims{2, 16, 16});
  ones.values.setOnes();
  Rng none_rng(1);
  CHECK((augment(ones, Augmentation::none, none_rng).values.array() == 1.0f).all());

  Rng a(3);
  Rng b(3);
  const auto out = augment(ones, Augmentation::crop_flip, a);
  CHECK((out.values.array() == augment(ones, Augmentation::crop_flip, b).values.array()).all());
  const int pad = crop_padding(16);
  for (Index i = 0; i < out.batch(); ++i) {
    // zeros only appear in a band at most `pad` wide along each border
    const auto plane = out.plane(i, 0);
    CHECK(plane.block(pad, pad, 16 - 2 * pad, 16 - 2 * pad).minCoeff() == 1.0f);
    CHECK((out.plane(i, 1).array() == plane.array()).all());
  }

  // a lone bright column ends up where a shift (and maybe a mirror) puts it
  Tensor<float> col(200, Dims{1, 8, 8});
  for (Index i = 0; i < col.batch(); ++i) col.plane(i, 0).col(2).setOnes();
  Rng c(4);
  const auto moved = augment(col, Augmentation::crop_flip, c);
  int mirrored = 0;
  for (Index i = 0; i < moved.batch(); ++i) {
    const auto p = moved.plane(i, 0);
    Index row = 0;
    Index where = 0;
    const float peak = p.colwise().sum().maxCoeff(&row, &where);
    if (peak == 0.0f) continue;  // shifted out of view
    const int shift = static_cast<int>(where) - 2;
    const int flipped = static_cast<int>(where) - 5;
    CHECK((std::abs(shift) <= 1 || std::abs(flipped) <= 1));
    mirrored += std::abs(shift) > 1 ? 1 : 0;
  }
  CHECK(mirrored > 50);
  CHECK(mirrored < 150);
}

TEST_CASE("input pipelines per method") {
  TrainConfig cfg = small_config();
  const auto rgb = training_pipelines(Method::baseline_rgb, cfg);
  REQUIRE(rgb.size() == 1);
  CHECK(rgb[0].stages == std::vector<Stage>{Stage::augment});
  const auto joint = training_pipelines(Method::inbiased, cfg);
  REQUIRE(joint.size() == 2);
  CHECK(joint[1].stages == std::vector<Stage>{Stage::extract_shape, Stage::augment});
  CHECK_FALSE(joint[0].has(Stage::extract_shape));
  CHECK(training_pipelines(Method::selfdistil, cfg)[1].stages == rgb[0].stages);
  CHECK(training_pipelines(Method::baseline_shape, cfg)[0].has(Stage::extract_shape));
  cfg.augmentation = Augmentation::none;
  CHECK(training_pipelines(Method::inbiased, cfg)[0].stages.empty());

  // inference applies the shape stage and skips augmentation
  const auto x = train_set().data.images;
  const auto shape_in = joint[1].inference(x);
  const auto direct = extract_shape(x, cfg.shape);
  CHECK((shape_in.values.array() == direct.values.array()).all());
}

TEST_CASE("checkpoints round-trip and detect corruption") {
  testing::TempDir dir("ckpt");
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  auto opts = data_options();
  opts.checkpoint_dir = dir.path();
  const auto r = train(Method::inbiased, cfg, opts);
  const auto path = dir / "last.ckpt";
  REQUIRE(fs::exists(path));
  CHECK(r.record.artifacts["checkpoint"]["sha256"].get<std::string>() == io::sha256_file(path));

  const auto loaded = load_checkpoint(path);
  CHECK(digests(loaded) == digests(r.checkpoint));
  CHECK(loaded.roles == std::vector<std::string>{"inbiased", "shapenet"});
  CHECK(loaded.epoch == 2);
  CHECK(loaded.history.size() == 2);
  CHECK(loaded.config_hash == r.checkpoint.config_hash);
  CHECK(loaded.pipelines[1].stages == r.checkpoint.pipelines[1].stages);
  const auto& x = test_set().data.images;
  CHECK((predict(loaded.inference_model(), loaded.inference_pipeline(), x).array() ==
         predict(r.checkpoint.inference_model(), r.checkpoint.inference_pipeline(), x).array())
            .all());

  const auto slim = inference_only(loaded);
  CHECK(slim.networks.size() == 1);
  save_checkpoint(slim, dir / "slim.ckpt");
  CHECK(load_checkpoint(dir / "slim.ckpt").optimizer_state.empty());

  std::string bytes = io::read_file(path);
  bytes[bytes.size() - 3] ^= 0x5a;
  io::write_file_atomic(dir / "bad.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ChecksumError);
  io::write_file_atomic(dir / "junk.ckpt", "not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), NotFoundError);
}

TEST_CASE("interrupted training resumes to the same result") {
  testing::TempDir dir("resume");
  TrainConfig cfg = small_config();
  const auto straight = train(Method::trades_inbiased, cfg, data_options());

  auto opts = data_options();
  opts.checkpoint_dir = dir.path();
  opts.stop_after = 2;
  const auto first = train(Method::trades_inbiased, cfg, opts);
  CHECK(first.checkpoint.epoch == 2);
  CHECK(first.record.final_metrics.empty());
  opts.resume = true;
  opts.stop_after.reset();
  const auto resumed = train(Method::trades_inbiased, cfg, opts);
  CHECK(resumed.checkpoint.epoch == 4);
  CHECK(digests(resumed.checkpoint) == digests(straight.checkpoint));
  CHECK(resumed.record.epochs.size() == 4);
  CHECK(resumed.record.epochs.back().loss == straight.record.epochs.back().loss);

  cfg.lr = 0.01;
  CHECK_THROWS_AS(train(Method::trades_inbiased, cfg, opts), ConfigError);
}

TEST_CASE("ensemble prediction averages member softmax outputs") {
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  const auto r = train(Method::inbiased, cfg, data_options());
  const auto members = inbiased_ensemble(r.checkpoint);
  const auto& x = test_set().data.images;
  const RowMatrix<float> ens = ensemble_predict(members, x);
  const RowMatrix<float> a = predict(r.checkpoint.networks[0], r.checkpoint.pipelines[0], x);
  const RowMatrix<float> b = predict(r.checkpoint.networks[1], r.checkpoint.pipelines[1], x);
  CHECK((ens - (a + b) / 2.0f).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK((ens.rowwise().sum().array() - 1.0f).abs().maxCoeff() < 1e-5f);
  CHECK_THROWS_AS(inbiased_ensemble(inference_only(r.checkpoint)), InvalidArgument);
  CHECK_THROWS_AS(ensemble_predict({}, x), InvalidArgument);
}

TEST_CASE("a diverging run stops with a divergence error") {
  TrainConfig cfg = small_config();
  cfg.lr = 1e30;
  cfg.momentum = 0.0;
  CHECK_THROWS_AS(train(Method::baseline_rgb, cfg, data_options()), DivergenceError);
}

TEST_CASE("configuration hashing and validation") {
  const TrainConfig cfg = small_config();
  CHECK(config_hash(cfg, Method::inbiased) == config_hash(cfg, Method::inbiased));
  CHECK(config_hash(cfg, Method::inbiased) != config_hash(cfg, Method::baseline_rgb));
  TrainConfig other = cfg;
  other.seed = 99;
  CHECK(config_hash(other, Method::inbiased) != config_hash(cfg, Method::inbiased));
  other = cfg;
  other.dataset.root = "/elsewhere";
  CHECK(config_hash(other, Method::inbiased) == config_hash(cfg, Method::inbiased));

  auto bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = cfg;
  bad.weights.gamma_rgb = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = cfg;
  bad.milestones = {50, 10};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = cfg;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("run records survive a JSON round trip") {
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.eval_every = 1;
  const auto r = train(Method::selfdistil, cfg, data_options());
  CHECK(r.record.run_id.starts_with("selfdistil-"));
  CHECK(r.record.epochs[0].test_accuracy.has_value());
  const auto j = to_json(r.record);
  CHECK(to_json(run_record_from_json(nlohmann::json::parse(j.dump()))) == j);
  CHECK_FALSE(r.record.revision.empty());
}
