#include <doctest.h>

#include "inbiased/cli.hpp"
#include "inbiased/experiment.hpp"
#include "inbiased/io.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

#include <sstream>

using namespace inbiased;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

void write_config(const fs::path& path, const json& doc) { io::write_file_atomic(path, doc.dump(2)); }

json folder_config(const fs::path& data, const fs::path& runs) {
  return {{"dataset", {{"name", "folder"}, {"root", data.string()}}},
          {"model", {{"arch", "mlp"}, {"mlp_hidden", {24}}}},
          {"train", {{"epochs", 2}, {"batch_size", 16}, {"lr", 0.05}, {"augmentation", "none"}}},
          {"evaluate", {{"fourier", false}}},
          {"output", runs.string()}};
}

}  // namespace

TEST_CASE("usage errors and help") {
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
  CHECK(run_cli({}).code == cli::kExitConfig);
  CHECK(run_cli({"fly"}).code == cli::kExitConfig);
  CHECK(run_cli({"train"}).code == cli::kExitConfig);
  CHECK(run_cli({"train", "--config", "x.json", "--mode", "fgsm"}).code == cli::kExitConfig);
}

TEST_CASE("config errors exit with 2 and name the key") {
  testing::TempDir dir("cli_cfg");
  write_config(dir / "c.json", {{"method", "inbiased"}});
  auto r = run_cli({"train", "--config", (dir / "c.json").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("dataset") != std::string::npos);

  write_config(dir / "c.json", {{"dataset", {{"name", "mnist"}}}, {"train", {{"lr", "fast"}}}});
  r = run_cli({"train", "--config", (dir / "c.json").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("train.lr") != std::string::npos);
}

TEST_CASE("dry run prints the resolved config with mode and seed overrides") {
  testing::TempDir dir("cli_dry");
  write_config(dir / "c.json", {{"dataset", {{"name", "colored_mnist_fg"}}}, {"output", (dir / "runs").string()}});
  const auto r = run_cli({"train", "--config", (dir / "c.json").string(), "--dry-run", "--seeds", "0,1,2", "--mode",
                          "trades", "--inbiased", "on"});
  REQUIRE(r.code == cli::kExitOk);
  const json echo = json::parse(r.out);
  CHECK(echo["method"] == "trades_inbiased");
  CHECK(echo["seeds"] == json({0, 1, 2}));
  CHECK(echo["train"]["weights"]["lambda_rgb"] == 50.0);
  CHECK_FALSE(fs::exists(dir / "runs"));

  const auto off = run_cli({"train", "--config", (dir / "c.json").string(), "--dry-run", "--inbiased", "off"});
  CHECK(json::parse(off.out)["method"] == "baseline_rgb");
  const auto madry = run_cli({"train", "--config", (dir / "c.json").string(), "--dry-run", "--mode", "madry",
                              "--inbiased", "off"});
  CHECK(json::parse(madry.out)["method"] == "madry");
}

TEST_CASE("data and divergence failures map to their exit codes") {
  testing::TempDir dir("cli_fail");
  write_config(dir / "missing.json", folder_config(dir / "no_such_folder", dir / "runs"));
  CHECK(run_cli({"train", "--config", (dir / "missing.json").string()}).code == cli::kExitData);
  CHECK(run_cli({"evaluate", "--ckpt", (dir / "none.ckpt").string()}).code == cli::kExitData);
  CHECK(run_cli({"report", "--ledger", (dir / "ledger.jsonl").string(), "nope"}).code == cli::kExitData);

  write_image_folder(testing::blocks_dataset(48, 3, 2, 8), dir / "data");
  json diverging = folder_config(dir / "data", dir / "runs");
  diverging["train"]["lr"] = 1e30;
  write_config(dir / "diverge.json", diverging);
  const auto r = run_cli({"train", "--config", (dir / "diverge.json").string()});
  CHECK(r.code == cli::kExitDivergence);
  CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("train, evaluate, report and export from the command line") {
  testing::TempDir dir("cli_flow");
  write_image_folder(testing::blocks_dataset(96, 3, 1, 8), dir / "data");
  write_config(dir / "c.json", folder_config(dir / "data", dir / "runs"));

  const auto trained = run_cli({"train", "--config", (dir / "c.json").string(), "--seeds", "0,1"});
  REQUIRE(trained.code == cli::kExitOk);
  const Ledger ledger(dir / "runs" / "ledger.jsonl");
  const auto records = ledger.records();
  REQUIRE(records.size() == 2);
  CHECK(trained.out.find(records[0].run_id) != std::string::npos);
  CHECK(trained.err.find("epoch 2/2") != std::string::npos);

  const auto rep = run_cli({"report", "--ledger", ledger.path().string(), "--layout", "calibration",
                            records[0].run_id, records[1].run_id, "--out", (dir / "report.md").string()});
  CHECK(rep.code == cli::kExitOk);
  CHECK(rep.out.find("| inbiased / folder | 2 |") != std::string::npos);
  CHECK(io::read_file(dir / "report.md") == rep.out);

  const fs::path ckpt = dir / "runs" / records[0].run_id / "last.ckpt";
  const std::string root = (dir / "data").string();
  const auto ev = run_cli({"--data-root", root, "evaluate", "--ckpt", ckpt.string(), "--out", (dir / "ev").string()});
  REQUIRE(ev.code == cli::kExitOk);
  CHECK(json::parse(ev.out)["summary"]["accuracy"]["accuracy"] ==
        records[0].final_metrics["accuracy"]["accuracy"]);
  CHECK(fs::exists(dir / "ev" / "accuracy.csv"));

  CHECK(run_cli({"--data-root", root, "calibrate", "--ckpt", ckpt.string(), "--out", (dir / "cal").string()}).code ==
        cli::kExitOk);
  CHECK(fs::exists(dir / "cal" / "reliability.svg"));
  CHECK(run_cli({"--data-root", root, "fourier-eval", "--ckpt", ckpt.string(), "--out", (dir / "f").string()}).code ==
        cli::kExitOk);
  CHECK(fs::exists(dir / "f" / "fourier.csv"));
  const auto att = run_cli({"--data-root", root, "attack", "--ckpt", ckpt.string(), "--eps", "0,8", "--steps", "2",
                            "--out", (dir / "att").string()});
  REQUIRE(att.code == cli::kExitOk);
  CHECK(json::parse(att.out)["summary"]["robustness"]["attacks"].size() == 2);

  const auto exp = run_cli({"export", "--ckpt", ckpt.string(), "--out", (dir / "slim.ckpt").string()});
  REQUIRE(exp.code == cli::kExitOk);
  const Checkpoint slim = load_checkpoint(dir / "slim.ckpt");
  CHECK(slim.networks.size() == 1);
  CHECK(slim.optimizer_state.empty());

  const auto fe = run_cli({"folder-eval", "--ckpt", (dir / "slim.ckpt").string(), "--folder", root});
  REQUIRE(fe.code == cli::kExitOk);
  CHECK(json::parse(fe.out)["samples"] == 96);
}

TEST_CASE("generate-data and preprocess write manifest folders") {
  testing::TempDir dir("cli_data");
  write_image_folder(testing::blocks_dataset(12, 3, 5, 8), dir / "src");
  const auto pre = run_cli({"preprocess", "--in", (dir / "src").string(), "--out", (dir / "pre").string(),
                            "--upsample", "2", "--blur-kernel", "3"});
  REQUIRE(pre.code == cli::kExitOk);
  const json manifest = json::parse(io::read_file(dir / "pre" / "shape" / "manifest.json"));
  CHECK(manifest["count"] == 12);
  CHECK(manifest["dims"][0] == 1);
  CHECK(manifest["shape_extractor"]["blur_kernel"] == 3);
  CHECK(fs::exists(dir / "pre" / "rgb" / "manifest.json"));
  CHECK(run_cli({"preprocess", "--in", (dir / "src").string(), "--out", (dir / "bad").string(), "--blur-kernel",
                 "4"})
            .code == cli::kExitConfig);

  const auto gen = run_cli({"--data-root", INBIASED_TEST_DATA, "generate-data", "--dataset", "colored_mnist_bg",
                            "--split", "test", "--limit", "20", "--out", (dir / "gen").string()});
  REQUIRE(gen.code == cli::kExitOk);
  const json g = json::parse(io::read_file(dir / "gen" / "test" / "manifest.json"));
  CHECK(g["dataset"] == "colored_mnist_bg");
  CHECK(g["count"] == 20);
  CHECK(run_cli({"generate-data", "--dataset", "nope", "--out", (dir / "x").string()}).code == cli::kExitConfig);
}
