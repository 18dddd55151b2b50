#include "inbiased/experiment.hpp"

#include "inbiased/error.hpp"
#include "inbiased/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace inbiased {
namespace {

using nlohmann::json;

bool is_seed(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

/// One object of the config document. Tracks which keys were read so that
/// anything left over is reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  [[nodiscard]] std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  void read(const std::string& key, int& out, int min = std::numeric_limits<int>::min()) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
      const auto value = v->get<std::int64_t>();
      if (value < min || value > std::numeric_limits<int>::max()) {
        throw ConfigError(key_path(key), "must be >= " + std::to_string(min));
      }
      out = static_cast<int>(value);
    }
  }

  void read(const std::string& key, Index& out, Index min) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
      out = v->get<Index>();
      if (out < min) throw ConfigError(key_path(key), "must be >= " + std::to_string(min));
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!is_seed(*v)) throw ConfigError(key_path(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void read(const std::string& key, double& out, double min = -std::numeric_limits<double>::infinity()) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out) || out < min) throw ConfigError(key_path(key), "must be a finite number >= " + fmt(min));
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, std::vector<int>& out, int min) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected a list of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer() || e.get<std::int64_t>() < min) {
          throw ConfigError(key_path(key), "expected integers >= " + std::to_string(min));
        }
        out.push_back(e.get<int>());
      }
    }
  }

  void read(const std::string& key, std::vector<double>& out, double min) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected a list of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number() || e.get<double>() < min) throw ConfigError(key_path(key), "expected numbers >= " + fmt(min));
        out.push_back(e.get<double>());
      }
    }
  }

  /// Reads a string and maps it through `parse`, reporting failures on the key.
  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string text;
    read(key, text);
    if (!has(key)) return;
    try {
      out = parse(text);
    } catch (const std::exception& e) {
      throw ConfigError(key_path(key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
    }
  }

  static std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Scheduler parse_scheduler(const std::string& s) {
  if (s == "cosine") return Scheduler::cosine;
  if (s == "multistep") return Scheduler::multistep;
  throw InvalidArgument("expected cosine or multistep, got '" + s + "'");
}

Augmentation parse_augmentation(const std::string& s) {
  if (s == "crop_flip") return Augmentation::crop_flip;
  if (s == "none") return Augmentation::none;
  throw InvalidArgument("expected crop_flip or none, got '" + s + "'");
}

ShapeChannels parse_channels(const std::string& s) {
  if (s == "replicate3") return ShapeChannels::replicate3;
  if (s == "single") return ShapeChannels::single;
  throw InvalidArgument("expected replicate3 or single, got '" + s + "'");
}

Norm parse_norm(const std::string& s) {
  if (s == "linf") return Norm::linf;
  throw InvalidArgument("only linf is supported, got '" + s + "'");
}

json eval_plan_json(const EvalPlan& p) {
  json folders = json::array();
  for (const auto& f : p.folders) folders.push_back({{"name", f.name}, {"path", f.path.string()}, {"image_size", f.image_size}});
  json robustness = p.robustness_epsilons.empty()
                        ? json(false)
                        : json{{"epsilons", p.robustness_epsilons}, {"steps", p.robustness_steps}};
  return {{"accuracy", p.accuracy},
          {"fourier", p.fourier},
          {"calibration", p.calibration},
          {"robustness", robustness},
          {"folders", folders}};
}

void log_line(const RunOptions& o, const std::string& text) {
  if (o.log) o.log(text);
}

void add_artifact(json& artifacts, const std::string& name, const fs::path& path) {
  artifacts[name] = {{"path", path.string()}, {"sha256", io::sha256_file(path)}};
}

void write_artifact(json& artifacts, const std::string& name, const fs::path& path, const std::string& contents) {
  io::write_file_atomic(path, contents);
  add_artifact(artifacts, name, path);
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

TrainConfig dataset_defaults(DatasetName name) {
  TrainConfig cfg;
  cfg.dataset.name = name;
  cfg.arch = Arch::resnet18_cifar;
  cfg.epochs = 200;
  cfg.scheduler = Scheduler::cosine;
  cfg.lr = 0.1;
  cfg.weights = {1.0, 1.0, 1.0, 5.0};
  switch (name) {
    case DatasetName::colored_mnist_fg:
    case DatasetName::colored_mnist_bg:
    case DatasetName::colored_mnist_fgbg:
    case DatasetName::mnist:
      cfg.arch = Arch::mlp;
      cfg.epochs = 100;
      cfg.lr = 0.01;
      cfg.weights = {50.0, 1.0, 1.0, 50.0};
      // keeps the strong decision alignment from running away
      cfg.grad_clip = 5.0;
      break;
    case DatasetName::tinted_stl10: cfg.weights = {5.0, 1.0, 1.0, 5.0}; break;
    case DatasetName::tinyimagenet: cfg.epochs = 250; break;
    default: break;
  }
  return cfg;
}

ExperimentConfig parse_experiment(const json& doc) {
  Section top(doc, "");
  ExperimentConfig out;

  const json* ds = top.find("dataset");
  if (ds == nullptr) throw ConfigError("dataset", "required key is missing");
  Section dataset(*ds, "dataset");
  if (!dataset.has("name")) throw ConfigError("dataset.name", "required key is missing");
  DatasetName name = DatasetName::mnist;
  dataset.read_enum("name", name, parse_dataset_name);
  out.train = dataset_defaults(name);
  auto& t = out.train;
  dataset.read("seed", t.dataset.seed);
  std::string root;
  dataset.read("root", root);
  t.dataset.root = root.empty() ? default_data_root() : fs::path(root);
  if (name == DatasetName::folder && root.empty()) throw ConfigError("dataset.root", "required for folder datasets");
  dataset.read("tint_alpha", t.dataset.tint_alpha, 0.0);
  if (t.dataset.tint_alpha > 1.0) throw ConfigError("dataset.tint_alpha", "must lie in [0,1]");
  dataset.read("limit", t.dataset.limit, Index{0});
  dataset.read("image_size", t.dataset.image_size, 0);
  dataset.read("download", t.dataset.download);
  dataset.finish();

  top.read("name", out.name);
  top.read_enum("method", out.method, parse_method);

  if (const json* m = top.find("model")) {
    Section model(*m, "model");
    model.read_enum("arch", t.arch, [](const std::string& s) { return parse_arch(s); });
    model.read("latent_dim", t.latent_dim, 0);
    model.read("mlp_hidden", t.mlp_hidden, 1);
    model.finish();
  }
  if (const json* tr = top.find("train")) {
    Section train(*tr, "train");
    train.read("epochs", t.epochs, 1);
    train.read("batch_size", t.batch_size, Index{1});
    train.read("lr", t.lr, 0.0);
    if (train.has("lr") && t.lr <= 0.0) throw ConfigError("train.lr", "must be > 0");
    train.read("momentum", t.momentum, 0.0);
    if (t.momentum >= 1.0) throw ConfigError("train.momentum", "must lie in [0,1)");
    train.read("weight_decay", t.weight_decay, 0.0);
    train.read("grad_clip", t.grad_clip, 0.0);
    train.read_enum("scheduler", t.scheduler, parse_scheduler);
    train.read("milestones", t.milestones, 0);
    train.read("lr_decay", t.lr_decay, 0.0);
    train.read_enum("augmentation", t.augmentation, parse_augmentation);
    train.read("checkpoint_every", t.checkpoint_every, 0);
    train.read("eval_every", t.eval_every, 0);
    train.finish();
  }
  if (const json* w = top.find("weights")) {
    Section weights(*w, "weights");
    weights.read("lambda_rgb", t.weights.lambda_rgb, 0.0);
    weights.read("lambda_shape", t.weights.lambda_shape, 0.0);
    weights.read("gamma_rgb", t.weights.gamma_rgb, 0.0);
    weights.read("gamma_shape", t.weights.gamma_shape, 0.0);
    weights.finish();
  }
  if (const json* s = top.find("shape")) {
    Section shape(*s, "shape");
    shape.read("upsample_factor", t.shape.upsample_factor, 1);
    shape.read("blur_kernel", t.shape.blur_kernel, 1);
    shape.read("blur_sigma", t.shape.blur_sigma, 0.0);
    shape.read_enum("output_channels", t.shape.output_channels, parse_channels);
    shape.finish();
  }
  if (const json* a = top.find("attack")) {
    Section attack(*a, "attack");
    attack.read("epsilon", t.attack.epsilon, 0.0);
    attack.read("steps", t.attack.steps, 0);
    attack.read("step_size", t.attack.step_size, 0.0);
    attack.read("random_start", t.attack.random_start);
    attack.read_enum("norm", t.attack.norm, parse_norm);
    attack.finish();
  }
  if (const json* tr = top.find("trades")) {
    Section trades(*tr, "trades");
    trades.read("beta", t.trades.beta, 0.0);
    trades.finish();
  }

  top.read("seed", t.seed);
  if (const json* seeds = top.find("seeds")) {
    if (!seeds->is_array() || seeds->empty()) throw ConfigError("seeds", "expected a non-empty list of seeds");
    for (const auto& s : *seeds) {
      if (!is_seed(s)) throw ConfigError("seeds", "expected non-negative integers");
      out.seeds.push_back(s.get<std::uint64_t>());
    }
  } else {
    out.seeds = {t.seed};
  }

  if (const json* e = top.find("evaluate")) {
    Section eval(*e, "evaluate");
    eval.read("accuracy", out.eval.accuracy);
    eval.read("fourier", out.eval.fourier);
    eval.read("calibration", out.eval.calibration);
    if (const json* r = eval.find("robustness")) {
      if (r->is_boolean()) {
        if (r->get<bool>()) out.eval.robustness_epsilons = kEpsilonGrid;
      } else {
        Section rob(*r, "evaluate.robustness");
        out.eval.robustness_epsilons = kEpsilonGrid;
        rob.read("epsilons", out.eval.robustness_epsilons, 0.0);
        rob.read("steps", out.eval.robustness_steps, 1);
        rob.finish();
      }
    }
    if (const json* f = eval.find("folders")) {
      if (!f->is_array()) throw ConfigError("evaluate.folders", "expected a list");
      for (std::size_t i = 0; i < f->size(); ++i) {
        Section folder((*f)[i], "evaluate.folders[" + std::to_string(i) + "]");
        FolderTarget target;
        std::string path;
        folder.read("name", target.name);
        folder.read("path", path);
        folder.read("image_size", target.image_size, 0);
        folder.finish();
        if (path.empty()) throw ConfigError(folder.key_path("path"), "required key is missing");
        target.path = path;
        if (target.name.empty()) target.name = target.path.filename().string();
        out.eval.folders.push_back(std::move(target));
      }
    }
    eval.finish();
  }
  std::string output;
  top.read("output", output);
  if (!output.empty()) out.output = output;
  top.finish();

  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("", e.what());
  }
  if (out.name.empty()) out.name = to_string(out.method) + "_" + to_string(name);
  return out;
}

ExperimentConfig load_experiment(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("", "config file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(io::read_file(path), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + e.what());
  }
  return parse_experiment(doc);
}

DatasetSpec checkpoint_dataset(const Checkpoint& ckpt, Split split, const fs::path& root) {
  if (!ckpt.config.contains("dataset")) throw DataError("checkpoint carries no dataset description");
  const json& d = ckpt.config["dataset"];
  DatasetSpec spec;
  try {
    spec.name = parse_dataset_name(d.at("name").get<std::string>());
    spec.seed = d.value("seed", std::uint64_t{0});
    spec.tint_alpha = d.value("tint_alpha", spec.tint_alpha);
    spec.limit = d.value("limit", Index{0});
    spec.image_size = d.value("image_size", 0);
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint dataset description: ") + e.what());
  }
  spec.split = split;
  spec.root = root.empty() ? default_data_root() : root;
  return spec;
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["method"] = to_string(cfg.method);
  j["train"] = to_json(cfg.train);
  j["train"]["dataset"]["root"] = cfg.train.dataset.root.string();
  j["seeds"] = cfg.seeds;
  j["evaluate"] = eval_plan_json(cfg.eval);
  j["output"] = cfg.output.string();
  return j;
}

Ledger::Ledger(fs::path path) : path_(std::move(path)), lock_path_(path_.string() + ".lock") {}

void Ledger::append(const RunRecord& record) const {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  io::FileLock lock(lock_path_);
  std::ofstream out(path_, std::ios::app);
  out << to_json(record).dump() << '\n';
  out.flush();
  if (!out) throw DataError("cannot append to ledger " + path_.string());
}

std::vector<RunRecord> Ledger::records() const {
  std::vector<RunRecord> out;
  if (!fs::exists(path_)) return out;
  io::FileLock lock(lock_path_);
  std::ifstream in(path_);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(run_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path_.string() + ":" + std::to_string(number) + ": malformed record: " + e.what());
    }
  }
  return out;
}

RunRecord Ledger::find(const std::string& run_id) const {
  const auto all = records();
  for (auto it = all.rbegin(); it != all.rend(); ++it) {
    if (it->run_id == run_id) return *it;
  }
  throw NotFoundError("run '" + run_id + "' not found in " + path_.string());
}

json evaluate_checkpoint(const Checkpoint& ckpt, const ImageBatch<float>& test, const EvalPlan& plan,
                         const fs::path& dir, json& artifacts, std::uint64_t seed) {
  fs::create_directories(dir);
  json summary = json::object();
  if (plan.accuracy) {
    const auto acc = evaluate(ckpt, test);
    summary["accuracy"] = acc.to_json();
    write_artifact(artifacts, "accuracy_csv", dir / "accuracy.csv", acc.to_csv());
    if (ckpt.networks.size() > 1) {
      const auto members = inbiased_ensemble(ckpt);
      const auto probs = ensemble_predict(members, match_channels(test.images, test.images.dims.channels));
      summary["ensemble_accuracy"] = accuracy_table(probs, test.labels, test.groups).to_json();
    }
  }
  if (plan.fourier) {
    const auto table = fourier_robustness(ckpt, test);
    summary["fourier"] = table.to_json();
    write_artifact(artifacts, "fourier_csv", dir / "fourier.csv", table.to_csv());
    write_artifact(artifacts, "fourier_svg", dir / "fourier.svg", fourier_svg(table, "Accuracy vs low-pass severity"));
  }
  if (plan.calibration) {
    const auto rel = calibration(ckpt, test);
    summary["calibration"] = rel.to_json();
    write_artifact(artifacts, "calibration_csv", dir / "calibration.csv", rel.to_csv());
    write_artifact(artifacts, "reliability_svg", dir / "reliability.svg", reliability_svg(rel, "Reliability diagram"));
  }
  if (!plan.robustness_epsilons.empty()) {
    const auto specs = evaluation_specs(plan.robustness_epsilons, plan.robustness_steps);
    const auto table = evaluate_robustness(ckpt, test, specs, seed);
    summary["robustness"] = table.to_json();
    write_artifact(artifacts, "robustness_csv", dir / "robustness.csv", table.to_csv());
  }
  if (!plan.folders.empty()) {
    json folders = json::object();
    for (const auto& f : plan.folders) folders[f.name] = folder_eval(ckpt, f.path, f.image_size).to_json();
    summary["folders"] = folders;
  }
  write_artifact(artifacts, "summary_json", dir / "summary.json", summary.dump(2));
  return summary;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  ExperimentResult result;
  result.resolved = to_json(cfg);
  const auto seeds = options.seeds ? *options.seeds : cfg.seeds;
  result.resolved["seeds"] = seeds;
  if (options.dry_run) return result;

  const Ledger ledger(cfg.output / "ledger.jsonl");
  DatasetSpec train_spec = cfg.train.dataset;
  train_spec.split = Split::train;
  DatasetSpec test_spec = cfg.train.dataset;
  test_spec.split = Split::test;
  log_line(options, "loading " + to_string(train_spec.name));
  const Dataset train_data = load_dataset(train_spec);
  const Dataset test_data = load_dataset(test_spec);

  for (std::uint64_t seed : seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const std::string run_id = to_string(cfg.method) + "-" + config_hash(tc, cfg.method).substr(0, 12);
    const fs::path dir = cfg.output / run_id;
    log_line(options, "run " + run_id + " (seed " + std::to_string(seed) + ")");

    TrainOptions to;
    to.checkpoint_dir = dir;
    to.resume = options.resume;
    to.train_data = &train_data;
    to.test_data = &test_data;
    to.on_epoch = [&](const EpochMetrics& m) {
      std::ostringstream line;
      line << "  epoch " << m.epoch << "/" << tc.epochs << " lr " << m.lr << " loss " << m.loss[0] << " train_acc "
           << m.train_accuracy[0];
      if (m.test_accuracy) line << " test_acc " << *m.test_accuracy;
      log_line(options, line.str());
    };
    TrainResult trained = train(cfg.method, tc, to);
    RunRecord& record = trained.record;
    record.config = to_json(cfg);
    record.config["seed"] = seed;
    record.config.erase("seeds");
    record.config["train"]["seed"] = seed;

    const json summary = evaluate_checkpoint(trained.checkpoint, test_data.data, cfg.eval, dir, record.artifacts, seed);
    for (auto it = summary.begin(); it != summary.end(); ++it) record.final_metrics[it.key()] = it.value();
    write_artifact(record.artifacts, "record_json", dir / "record.json", to_json(record).dump(2));
    ledger.append(record);
    result.records.push_back(std::move(record));
  }
  return result;
}

ExperimentResult run_experiment(const fs::path& config_path, const RunOptions& options) {
  return run_experiment(load_experiment(config_path), options);
}

std::vector<std::string> verify_artifacts(const RunRecord& record) {
  std::vector<std::string> bad;
  for (auto it = record.artifacts.begin(); it != record.artifacts.end(); ++it) {
    const fs::path path = it.value().at("path").get<std::string>();
    // the record file is written after its own entry is hashed
    if (it.key() == "record_json") {
      if (!fs::exists(path)) bad.push_back(it.key());
      continue;
    }
    if (!fs::exists(path) || io::sha256_file(path) != it.value().at("sha256").get<std::string>()) bad.push_back(it.key());
  }
  return bad;
}

ReportLayout parse_layout(const std::string& name) {
  if (name == "shortcut") return ReportLayout::shortcut;
  if (name == "iid_ood") return ReportLayout::iid_ood;
  if (name == "robustness") return ReportLayout::robustness;
  if (name == "calibration") return ReportLayout::calibration;
  throw InvalidArgument("unknown report layout '" + name + "' (shortcut, iid_ood, robustness, calibration)");
}

std::string mean_std_cell(const std::vector<double>& values, int decimals) {
  if (values.empty()) return "-";
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  std::ostringstream s;
  s << std::fixed << std::setprecision(decimals) << 100.0 * mean;
  if (values.size() > 1) s << " ± " << 100.0 * sample_std(values);
  return s.str();
}

std::string report(const Ledger& ledger, const std::vector<std::string>& run_ids, ReportLayout layout) {
  if (run_ids.empty()) throw InvalidArgument("report needs at least one run id");
  std::vector<RunRecord> runs;
  for (const auto& id : run_ids) runs.push_back(ledger.find(id));

  // Rows: runs that agree on everything but the seed.
  std::vector<std::string> row_order;
  std::map<std::string, std::vector<const RunRecord*>> rows;
  for (const auto& r : runs) {
    json key = r.config;
    key.erase("seed");
    if (key.contains("train")) key["train"].erase("seed");
    const std::string k = key.dump();
    if (!rows.contains(k)) row_order.push_back(k);
    rows[k].push_back(&r);
  }

  auto label = [](const RunRecord& r) {
    const std::string dataset = r.config.contains("train") ? r.config["train"]["dataset"]["name"].get<std::string>() : "?";
    return r.method + " / " + dataset;
  };
  auto metric = [](const RunRecord& r, const json::json_pointer& ptr) -> std::optional<double> {
    if (!r.final_metrics.contains(ptr)) return std::nullopt;
    const auto& v = r.final_metrics[ptr];
    return v.is_number() ? std::optional<double>(v.get<double>()) : std::nullopt;
  };

  // Columns: (header, pointer into final metrics), discovered from the runs.
  std::vector<std::pair<std::string, json::json_pointer>> columns;
  auto add_column = [&](const std::string& header, const std::string& ptr) {
    for (const auto& c : columns) {
      if (c.first == header) return;
    }
    columns.emplace_back(header, json::json_pointer(ptr));
  };
  std::string title;
  for (const auto& r : runs) {
    const auto& fm = r.final_metrics;
    switch (layout) {
      case ReportLayout::shortcut:
        title = "Shortcut / bias test accuracy (%)";
        add_column("Accuracy", "/accuracy/accuracy");
        if (fm.contains("accuracy") && fm["accuracy"].contains("groups")) {
          for (const char* g : {"NB-M", "B-F", "B-M", "NB-F"}) add_column(g, std::string("/accuracy/groups/") + g + "/accuracy");
        }
        break;
      case ReportLayout::iid_ood:
        title = "IID and OOD accuracy (%)";
        add_column("IID", "/accuracy/accuracy");
        if (fm.contains("ensemble_accuracy")) add_column("Ensemble", "/ensemble_accuracy/accuracy");
        if (fm.contains("folders")) {
          for (auto it = fm["folders"].begin(); it != fm["folders"].end(); ++it) {
            add_column(it.key(), "/folders/" + it.key() + "/accuracy");
          }
        }
        break;
      case ReportLayout::robustness:
        title = "Accuracy (%) under PGD and low-pass filtering";
        if (fm.contains("robustness")) {
          const auto& attacks = fm["robustness"]["attacks"];
          for (std::size_t i = 0; i < attacks.size(); ++i) {
            std::ostringstream h;
            h << "eps=" << attacks[i]["epsilon"].get<double>();
            add_column(h.str(), "/robustness/attacks/" + std::to_string(i) + "/accuracy");
          }
        }
        if (fm.contains("fourier")) {
          for (std::size_t i = 0; i < fm["fourier"]["rows"].size(); ++i) {
            add_column("radius " + std::to_string(i), "/fourier/rows/" + std::to_string(i) + "/accuracy");
          }
        }
        break;
      case ReportLayout::calibration:
        title = "Calibration";
        add_column("Accuracy (%)", "/accuracy/accuracy");
        add_column("ECE (%)", "/calibration/ece");
        break;
    }
  }
  if (columns.empty()) throw DataError("the selected runs carry no metrics for this layout");

  std::ostringstream out;
  out << "## " << title << "\n\n| Method / dataset | Seeds |";
  for (const auto& c : columns) out << ' ' << c.first << " |";
  out << "\n|---|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& k : row_order) {
    const auto& members = rows[k];
    out << "| " << label(*members.front()) << " | " << members.size() << " |";
    for (const auto& c : columns) {
      std::vector<double> values;
      for (const auto* r : members) {
        if (auto v = metric(*r, c.second)) values.push_back(*v);
      }
      out << ' ' << mean_std_cell(values) << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace inbiased
