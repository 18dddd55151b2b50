#include <doctest.h>

#include "inbiased/error.hpp"
#include "inbiased/experiment.hpp"
#include "inbiased/io.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

#include <fstream>
#include <thread>

using namespace inbiased;
using nlohmann::json;

namespace {

std::string config_error_key(const json& doc) {
  try {
    parse_experiment(doc);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<accepted>";
}

/// A small learnable folder dataset and a config that trains on it quickly.
json small_config(const fs::path& folder, const fs::path& output) {
  return {{"dataset", {{"name", "folder"}, {"root", folder.string()}}},
          {"method", "inbiased"},
          {"model", {{"arch", "mlp"}, {"mlp_hidden", {32, 16}}}},
          {"train", {{"epochs", 3}, {"batch_size", 16}, {"lr", 0.05}, {"augmentation", "none"}}},
          {"seeds", {0, 1}},
          {"evaluate", {{"robustness", {{"epsilons", {0.0, 8.0}}, {"steps", 2}}}}},
          {"output", output.string()}};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("per-dataset defaults") {
  const auto cm = dataset_defaults(DatasetName::colored_mnist_fg);
  CHECK(cm.arch == Arch::mlp);
  CHECK(cm.epochs == 100);
  CHECK(cm.lr == 0.01);
  CHECK(cm.scheduler == Scheduler::cosine);
  CHECK(cm.weights.lambda_rgb == 50.0);
  CHECK(cm.weights.lambda_shape == 1.0);
  CHECK(cm.weights.gamma_rgb == 1.0);
  CHECK(cm.weights.gamma_shape == 50.0);

  const auto tinted = dataset_defaults(DatasetName::tinted_stl10);
  CHECK(tinted.arch == Arch::resnet18_cifar);
  CHECK(tinted.epochs == 200);
  CHECK(tinted.lr == 0.1);
  CHECK(tinted.weights.lambda_rgb == 5.0);
  CHECK(tinted.weights.gamma_shape == 5.0);

  for (auto name : {DatasetName::stl10, DatasetName::cifar10, DatasetName::cifar100, DatasetName::skewed_celeba}) {
    const auto c = dataset_defaults(name);
    CHECK(c.epochs == 200);
    CHECK(c.weights.lambda_rgb == 1.0);
    CHECK(c.weights.lambda_shape == 1.0);
    CHECK(c.weights.gamma_rgb == 1.0);
    CHECK(c.weights.gamma_shape == 5.0);
  }
  CHECK(dataset_defaults(DatasetName::tinyimagenet).epochs == 250);
  for (auto name : {DatasetName::cifar10, DatasetName::tinyimagenet}) {
    const auto c = dataset_defaults(name);
    CHECK(c.momentum == 0.9);
    CHECK(c.weight_decay == 1e-4);
    CHECK(c.batch_size == 128);
  }
}

TEST_CASE("config parsing fills defaults and applies overrides") {
  const json doc = {{"dataset", {{"name", "cifar10"}}},
                    {"method", "selfdistil"},
                    {"train", {{"epochs", 7}, {"scheduler", "multistep"}, {"milestones", {3, 5}}}},
                    {"weights", {{"gamma_shape", 2.5}}},
                    {"attack", {{"epsilon", 4}}},
                    {"seed", 11}};
  const auto cfg = parse_experiment(doc);
  CHECK(cfg.method == Method::selfdistil);
  CHECK(cfg.train.dataset.name == DatasetName::cifar10);
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.train.scheduler == Scheduler::multistep);
  CHECK(cfg.train.milestones == std::vector<int>{3, 5});
  CHECK(cfg.train.lr == 0.1);
  CHECK(cfg.train.weights.gamma_shape == 2.5);
  CHECK(cfg.train.weights.lambda_rgb == 1.0);
  CHECK(cfg.train.attack.epsilon == 4.0);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{11});
  CHECK(cfg.eval.robustness_epsilons.empty());

  // the echo parses back to the same hash
  const json echo = to_json(cfg);
  CHECK(echo["train"]["epochs"] == 7);
  CHECK(echo["method"] == "selfdistil");

  const auto multi = parse_experiment({{"dataset", {{"name", "mnist"}}}, {"seeds", {0, 1, 2}}});
  CHECK(multi.seeds.size() == 3);
  CHECK(multi.train.arch == Arch::mlp);
  CHECK(parse_experiment({{"dataset", {{"name", "mnist"}}}, {"evaluate", {{"robustness", true}}}})
            .eval.robustness_epsilons == kEpsilonGrid);
}

TEST_CASE("schema errors name the offending key") {
  CHECK(config_error_key({{"method", "inbiased"}}) == "dataset");
  CHECK(config_error_key({{"dataset", json::object()}}) == "dataset.name");
  CHECK(config_error_key({{"dataset", {{"name", "imagenet9000"}}}}) == "dataset.name");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"trian", json::object()}}) == "trian");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"train", {{"epoch", 3}}}}) == "train.epoch");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"train", {{"epochs", "ten"}}}}) == "train.epochs");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"train", {{"epochs", 2.5}}}}) == "train.epochs");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"train", {{"epochs", 0}}}}) == "train.epochs");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"weights", {{"lambda_rgb", -1}}}}) ==
        "weights.lambda_rgb");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"method", "magic"}}) == "method");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"seeds", json::array()}}) == "seeds");
  CHECK(config_error_key({{"dataset", {{"name", "folder"}}}}) == "dataset.root");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"evaluate", {{"folders", {{{"name", "x"}}}}}}}) ==
        "evaluate.folders[0].path");
  CHECK(config_error_key({{"dataset", {{"name", "mnist"}}}, {"attack", {{"norm", "l2"}}}}) == "attack.norm");
  CHECK(config_error_key(json::array()) == "");

  testing::TempDir dir("cfg");
  io::write_file_atomic(dir / "broken.json", "{\"dataset\": ");
  CHECK_THROWS_AS(load_experiment(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_experiment(dir / "absent.json"), ConfigError);
  io::write_file_atomic(dir / "ok.json", "// comment\n{\"dataset\": {\"name\": \"mnist\"}}");
  CHECK(load_experiment(dir / "ok.json").train.dataset.name == DatasetName::mnist);
}

TEST_CASE("dry run echoes the resolved config without training") {
  testing::TempDir dir("dry");
  const auto cfg = parse_experiment(small_config(dir / "nodata", dir / "runs"));
  RunOptions o;
  o.dry_run = true;
  o.seeds = std::vector<std::uint64_t>{4, 5, 6};
  const auto result = run_experiment(cfg, o);
  CHECK(result.records.empty());
  CHECK(result.resolved["seeds"] == json({4, 5, 6}));
  CHECK(result.resolved["train"]["epochs"] == 3);
  CHECK_FALSE(fs::exists(dir / "runs"));
}

TEST_CASE("experiments persist runs, ledger and verifiable artifacts") {
  testing::TempDir dir("exp");
  write_image_folder(testing::blocks_dataset(96, 3, 1, 8), dir / "data");
  const auto cfg = parse_experiment(small_config(dir / "data", dir / "runs"));

  const auto first = run_experiment(cfg);
  REQUIRE(first.records.size() == 2);
  CHECK(first.records[0].run_id != first.records[1].run_id);
  for (const auto& r : first.records) {
    CHECK(r.seed == (&r == &first.records[0] ? 0u : 1u));
    CHECK(fs::exists(dir / "runs" / r.run_id / "last.ckpt"));
    CHECK(fs::exists(dir / "runs" / r.run_id / "reliability.svg"));
    CHECK(r.final_metrics.contains("fourier"));
    CHECK(r.final_metrics.contains("calibration"));
    CHECK(r.final_metrics["robustness"]["attacks"].size() == 2);
    CHECK(verify_artifacts(r).empty());
  }

  const Ledger ledger(dir / "runs" / "ledger.jsonl");
  const auto before = lines_of(ledger.path());
  CHECK(before.size() == 2);
  CHECK(ledger.find(first.records[1].run_id).seed == 1);
  CHECK_THROWS_AS((void)ledger.find("inbiased-000000000000"), NotFoundError);

  SUBCASE("a fresh rerun reproduces the metric tables and only appends") {
    auto again_cfg = cfg;
    again_cfg.output = dir / "again";
    const auto again = run_experiment(again_cfg);
    REQUIRE(again.records.size() == 2);
    for (int i = 0; i < 2; ++i) {
      CHECK(again.records[i].run_id == first.records[i].run_id);
      CHECK(again.records[i].final_metrics == first.records[i].final_metrics);
    }
    // resuming a finished run re-evaluates and appends, leaving old lines intact
    const auto resumed = run_experiment(cfg);
    CHECK(resumed.records[0].final_metrics == first.records[0].final_metrics);
    const auto after = lines_of(ledger.path());
    REQUIRE(after.size() == 4);
    CHECK(std::equal(before.begin(), before.end(), after.begin()));
  }

  SUBCASE("tampered artifacts fail verification") {
    const auto& r = first.records[0];
    const fs::path csv = r.artifacts["accuracy_csv"]["path"].get<std::string>();
    io::write_file_atomic(csv, "accuracy\n1.0\n");
    CHECK(verify_artifacts(r) == std::vector<std::string>{"accuracy_csv"});
    fs::remove(dir / "runs" / r.run_id / "last.ckpt");
    CHECK(verify_artifacts(r).size() == 2);
  }

  SUBCASE("reports aggregate seeds into mean and sample std") {
    std::vector<std::string> ids;
    std::vector<double> acc;
    for (const auto& r : first.records) {
      ids.push_back(r.run_id);
      acc.push_back(r.final_metrics["accuracy"]["accuracy"].get<double>());
    }
    const std::string table = report(ledger, ids, ReportLayout::shortcut);
    CHECK(table.find("| inbiased / folder | 2 | " + mean_std_cell(acc) + " |") != std::string::npos);
    const std::string single = report(ledger, {ids[0]}, ReportLayout::calibration);
    CHECK(single.find("±") == std::string::npos);
    CHECK(single.find("ECE") != std::string::npos);
    CHECK(report(ledger, ids, ReportLayout::robustness).find("eps=8") != std::string::npos);
    CHECK_THROWS_AS(report(ledger, {"missing-run"}, ReportLayout::shortcut), NotFoundError);
  }
}

TEST_CASE("mean and std cells") {
  CHECK(mean_std_cell({0.5}) == "50.00");
  // mean 0.6, sample std sqrt(((0.1)^2 + (0.1)^2) / 1) = 0.141421...
  CHECK(mean_std_cell({0.5, 0.7}) == "60.00 ± 14.14");
  CHECK(mean_std_cell({0.1, 0.2, 0.3}, 1) == "20.0 ± 10.0");
  CHECK(mean_std_cell({}) == "-");
  CHECK(parse_layout("iid_ood") == ReportLayout::iid_ood);
  CHECK_THROWS_AS(parse_layout("fancy"), InvalidArgument);
}

TEST_CASE("concurrent ledger appends keep every record whole") {
  testing::TempDir dir("ledger");
  const Ledger ledger(dir / "ledger.jsonl");
  auto writer = [&](int who) {
    for (int i = 0; i < 40; ++i) {
      RunRecord r;
      r.run_id = "w" + std::to_string(who) + "-" + std::to_string(i);
      r.method = "baseline_rgb";
      r.config = {{"payload", std::string(2000, static_cast<char>('a' + who))}};
      ledger.append(r);
    }
  };
  std::thread a(writer, 0), b(writer, 1), c(writer, 2);
  a.join();
  b.join();
  c.join();
  const auto records = ledger.records();
  CHECK(records.size() == 120);
  CHECK(ledger.find("w2-39").config["payload"].get<std::string>() == std::string(2000, 'c'));

  std::ofstream(ledger.path(), std::ios::app) << "{not json\n";
  CHECK_THROWS_AS((void)ledger.records(), DataError);
}

TEST_CASE("checkpoint dataset description") {
  Checkpoint ckpt;
  TrainConfig cfg = dataset_defaults(DatasetName::colored_mnist_bg);
  cfg.dataset.seed = 3;
  cfg.dataset.limit = 50;
  ckpt.config = to_json(cfg);
  const auto spec = checkpoint_dataset(ckpt, Split::test, "/data");
  CHECK(spec.name == DatasetName::colored_mnist_bg);
  CHECK(spec.split == Split::test);
  CHECK(spec.seed == 3);
  CHECK(spec.limit == 50);
  CHECK(spec.root == fs::path("/data"));
  CHECK_THROWS_AS(checkpoint_dataset(Checkpoint{}, Split::test, "/data"), DataError);
}
