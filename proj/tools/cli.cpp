#include "inbiased/cli.hpp"

#include "inbiased/error.hpp"
#include "inbiased/experiment.hpp"
#include "inbiased/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <optional>

namespace inbiased::cli {
namespace {

using nlohmann::json;

struct Common {
  std::string data_root;  // overrides INBIASED_DATA
  [[nodiscard]] fs::path root() const { return data_root.empty() ? default_data_root() : fs::path(data_root); }
};

struct GenerateArgs {
  std::string dataset;
  std::string split = "both";
  std::uint64_t seed = 0;
  std::string out;
  Index limit = 0;
  double tint_alpha = 0.3;
  int image_size = 0;
  bool download = false;
};

struct PreprocessArgs {
  std::string in, out;
  int upsample = 2;
  int blur_kernel = 3;
  double blur_sigma = 0.8;
  int image_size = 0;
};

struct TrainArgs {
  std::string config;
  std::vector<std::uint64_t> seeds;
  bool dry_run = false;
  bool fresh = false;
  std::string mode;
  std::string inbiased;
  std::string output;
};

struct CheckpointArgs {
  std::string ckpt;
  std::string out;
  Index limit = -1;
  std::uint64_t seed = 0;
  std::vector<double> eps{8.0};
  int steps = 10;
  std::string folder;
  int image_size = 0;
};

struct ReportArgs {
  std::string ledger = "runs/ledger.jsonl";
  std::string layout = "shortcut";
  std::vector<std::string> runs;
  std::string out;
};

void generate_data(const GenerateArgs& a, const Common& common, std::ostream& out) {
  std::vector<Split> splits;
  if (a.split == "both") {
    splits = {Split::train, Split::test};
  } else {
    splits = {parse_split(a.split)};
  }
  for (Split split : splits) {
    DatasetSpec spec;
    spec.name = parse_dataset_name(a.dataset);
    spec.split = split;
    spec.seed = a.seed;
    spec.root = common.root();
    spec.limit = a.limit;
    spec.tint_alpha = a.tint_alpha;
    spec.image_size = a.image_size;
    spec.download = a.download;
    const Dataset d = load_dataset(spec);
    const fs::path manifest = write_image_folder(d, fs::path(a.out) / to_string(split));
    out << to_string(split) << ": " << d.data.size() << " images -> " << manifest.parent_path().string() << '\n';
  }
}

void preprocess(const PreprocessArgs& a, std::ostream& out) {
  ShapeExtractorConfig shape;
  shape.upsample_factor = a.upsample;
  shape.blur_kernel = a.blur_kernel;
  shape.blur_sigma = a.blur_sigma;
  shape.output_channels = ShapeChannels::single;
  shape.validate();

  const Dataset rgb = load_image_folder(a.in, a.image_size);
  Dataset edges = rgb;
  edges.data = extract_shape(rgb.data, shape);
  const fs::path root(a.out);
  write_image_folder(rgb, root / "rgb");
  const fs::path manifest_path = write_image_folder(edges, root / "shape");

  json manifest = json::parse(io::read_file(manifest_path));
  manifest["shape_extractor"] = {{"upsample_factor", shape.upsample_factor},
                                 {"blur_kernel", shape.blur_kernel},
                                 {"blur_sigma", shape.blur_sigma},
                                 {"source", fs::absolute(a.in).string()}};
  io::write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  out << rgb.data.size() << " images -> " << (root / "rgb").string() << ", " << (root / "shape").string() << '\n';
}

void train_command(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_experiment(a.config);
  if (!a.mode.empty()) {
    cfg.method = adversarial_method(parse_scheme(a.mode), a.inbiased != "off");
  } else if (a.inbiased == "off") {
    cfg.method = Method::baseline_rgb;
  } else if (a.inbiased == "on") {
    cfg.method = Method::inbiased;
  }
  if (!a.output.empty()) cfg.output = a.output;

  RunOptions options;
  options.dry_run = a.dry_run;
  options.resume = !a.fresh;
  if (!a.seeds.empty()) options.seeds = a.seeds;
  options.log = [&err](const std::string& line) { err << line << '\n'; };

  const ExperimentResult result = run_experiment(cfg, options);
  if (a.dry_run) {
    out << result.resolved.dump(2) << '\n';
    return;
  }
  for (const auto& r : result.records) {
    out << r.run_id << " seed=" << r.seed << " test_accuracy=" << r.final_metrics.value("test_accuracy", 0.0)
        << " dir=" << (cfg.output / r.run_id).string() << '\n';
  }
}

struct Loaded {
  Checkpoint ckpt;
  Dataset test;
  fs::path out;
};

Loaded load_for_eval(const CheckpointArgs& a, const Common& common, const std::string& subdir) {
  Loaded l;
  l.ckpt = load_checkpoint(a.ckpt);
  DatasetSpec spec = checkpoint_dataset(l.ckpt, Split::test, common.root());
  if (a.limit >= 0) spec.limit = a.limit;
  l.test = load_dataset(spec);
  l.out = a.out.empty() ? fs::path(a.ckpt).parent_path() / subdir : fs::path(a.out);
  return l;
}

void eval_stage(const CheckpointArgs& a, const Common& common, const std::string& subdir, EvalPlan plan,
                std::ostream& out) {
  const Loaded l = load_for_eval(a, common, subdir);
  json artifacts = json::object();
  const json summary = evaluate_checkpoint(l.ckpt, l.test.data, plan, l.out, artifacts, a.seed);
  out << json{{"summary", summary}, {"artifacts", artifacts}}.dump(2) << '\n';
}

EvalPlan only(bool accuracy, bool fourier, bool calibration) {
  EvalPlan p;
  p.accuracy = accuracy;
  p.fourier = fourier;
  p.calibration = calibration;
  return p;
}

void folder_command(const CheckpointArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const AccuracyTable table = folder_eval(ckpt, a.folder, a.image_size);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    io::write_file_atomic(fs::path(a.out) / "folder_accuracy.csv", table.to_csv());
    io::write_file_atomic(fs::path(a.out) / "folder_accuracy.json", table.to_json().dump(2) + "\n");
  }
  out << table.to_json().dump(2) << '\n';
}

void report_command(const ReportArgs& a, std::ostream& out) {
  const std::string doc = report(Ledger(a.ledger), a.runs, parse_layout(a.layout));
  if (!a.out.empty()) io::write_file_atomic(a.out, doc);
  out << doc;
}

void export_command(const CheckpointArgs& a, std::ostream& out) {
  if (a.out.empty()) throw ConfigError("--out", "an output path is required");
  const Checkpoint slim = inference_only(load_checkpoint(a.ckpt));
  save_checkpoint(slim, a.out);
  out << a.out << " sha256=" << io::sha256_file(a.out) << '\n';
}

void add_checkpoint_options(CLI::App* sub, CheckpointArgs& a, bool dataset) {
  sub->add_option("--ckpt", a.ckpt, "Checkpoint file")->required();
  if (dataset) {
    sub->add_option("--limit", a.limit, "Evaluate a seeded subset of at most this many test samples");
    sub->add_option("--seed", a.seed, "Seed for random attack starts");
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shape-biased two-network training and evaluation", "inbiased"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--data-root", common.data_root, "Data and cache root (default: $INBIASED_DATA)");

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate-data", "Write a dataset as class folders of PNG images");
  generate->add_option("--dataset", gen.dataset, "Dataset name")->required();
  generate->add_option("--split", gen.split, "train, test or both")->check(CLI::IsMember({"train", "test", "both"}));
  generate->add_option("--seed", gen.seed, "Dataset seed (palette, sampling)");
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--limit", gen.limit, "Keep at most this many samples per split");
  generate->add_option("--tint-alpha", gen.tint_alpha, "Tint strength for tinted_stl10");
  generate->add_option("--image-size", gen.image_size, "Square size for datasets decoded from image files");
  generate->add_flag("--download", gen.download, "Fetch missing downloadable sources");

  PreprocessArgs pre;
  auto* preprocess_cmd = app.add_subcommand("preprocess", "Extract Sobel shape images from an image folder");
  preprocess_cmd->add_option("--in", pre.in, "Input class folder tree")->required();
  preprocess_cmd->add_option("--out", pre.out, "Output directory")->required();
  preprocess_cmd->add_option("--upsample", pre.upsample, "Upsampling factor before filtering");
  preprocess_cmd->add_option("--blur-kernel", pre.blur_kernel, "Gaussian kernel size (odd)");
  preprocess_cmd->add_option("--blur-sigma", pre.blur_sigma, "Gaussian sigma");
  preprocess_cmd->add_option("--image-size", pre.image_size, "Resize inputs to this square size");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one run per seed");
  train_cmd->add_option("--config", tr.config, "Experiment config (JSON)")->required();
  train_cmd->add_option("--seeds", tr.seeds, "Comma separated seeds, e.g. 0,1,2")->delimiter(',');
  train_cmd->add_flag("--dry-run", tr.dry_run, "Print the resolved config and exit");
  train_cmd->add_flag("--fresh", tr.fresh, "Ignore existing checkpoints instead of resuming");
  train_cmd->add_option("--mode", tr.mode, "Adversarial training scheme")->check(CLI::IsMember({"madry", "trades"}));
  train_cmd->add_option("--inbiased", tr.inbiased, "Train with the shape peer")->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--output", tr.output, "Run directory root (overrides the config)");

  CheckpointArgs att;
  auto* attack_cmd = app.add_subcommand("attack", "PGD robustness of a checkpoint on its test split");
  add_checkpoint_options(attack_cmd, att, true);
  attack_cmd->add_option("--eps", att.eps, "Radii in 1/255 units")->delimiter(',');
  attack_cmd->add_option("--steps", att.steps, "PGD steps")->check(CLI::PositiveNumber);
  attack_cmd->add_option("--out", att.out, "Output directory (default: next to the checkpoint)");

  CheckpointArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Test accuracy, by group when the data is grouped");
  add_checkpoint_options(evaluate_cmd, ev, true);
  evaluate_cmd->add_option("--out", ev.out, "Output directory (default: next to the checkpoint)");

  CheckpointArgs cal;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Reliability diagram and expected calibration error");
  add_checkpoint_options(calibrate_cmd, cal, true);
  calibrate_cmd->add_option("--out", cal.out, "Output directory (default: next to the checkpoint)");

  CheckpointArgs fou;
  auto* fourier_cmd = app.add_subcommand("fourier-eval", "Accuracy under radial low-pass filtering");
  add_checkpoint_options(fourier_cmd, fou, true);
  fourier_cmd->add_option("--out", fou.out, "Output directory (default: next to the checkpoint)");

  CheckpointArgs fol;
  auto* folder_cmd = app.add_subcommand("folder-eval", "Accuracy on a class folder tree");
  add_checkpoint_options(folder_cmd, fol, false);
  folder_cmd->add_option("--folder", fol.folder, "Folder with one directory per class")->required();
  folder_cmd->add_option("--image-size", fol.image_size, "Resize to this square size (default: model input)");
  folder_cmd->add_option("--out", fol.out, "Directory for CSV/JSON output");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Markdown tables over ledger runs");
  report_cmd->add_option("--ledger", rep.ledger, "Ledger file");
  report_cmd->add_option("--layout", rep.layout, "shortcut, iid_ood, robustness or calibration");
  report_cmd->add_option("runs", rep.runs, "Run ids")->required();
  report_cmd->add_option("--out", rep.out, "Also write the report to this file");

  CheckpointArgs exp;
  auto* export_cmd = app.add_subcommand("export", "Write an inference-only checkpoint");
  add_checkpoint_options(export_cmd, exp, false);
  export_cmd->add_option("--out", exp.out, "Output checkpoint path")->required();

  std::vector<std::string> argv_storage{"inbiased"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (generate->parsed()) {
      generate_data(gen, common, out);
    } else if (preprocess_cmd->parsed()) {
      preprocess(pre, out);
    } else if (train_cmd->parsed()) {
      if (!common.data_root.empty()) ::setenv("INBIASED_DATA", common.data_root.c_str(), 1);
      train_command(tr, out, err);
    } else if (attack_cmd->parsed()) {
      EvalPlan plan = only(false, false, false);
      plan.robustness_epsilons = att.eps;
      plan.robustness_steps = att.steps;
      eval_stage(att, common, "attack", plan, out);
    } else if (evaluate_cmd->parsed()) {
      eval_stage(ev, common, "evaluate", only(true, false, false), out);
    } else if (calibrate_cmd->parsed()) {
      eval_stage(cal, common, "calibrate", only(false, false, true), out);
    } else if (fourier_cmd->parsed()) {
      eval_stage(fou, common, "fourier", only(false, true, false), out);
    } else if (folder_cmd->parsed()) {
      folder_command(fol, out);
    } else if (report_cmd->parsed()) {
      report_command(rep, out);
    } else if (export_cmd->parsed()) {
      export_command(exp, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NotFoundError& e) {
    err << "not found: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    err << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace inbiased::cli
