#include "inbiased/adversarial.hpp"

#include "inbiased/error.hpp"

#include <sstream>

namespace inbiased {
namespace {

Index count_correct(const RowMatrix<float>& logits, std::span<const int> labels) {
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return correct;
}

}  // namespace

AdversarialScheme parse_scheme(const std::string& name) {
  if (name == "madry") return AdversarialScheme::madry;
  if (name == "trades") return AdversarialScheme::trades;
  throw InvalidArgument("unknown adversarial scheme '" + name + "' (expected madry or trades)");
}

Method adversarial_method(AdversarialScheme scheme, bool inbiased) {
  if (scheme == AdversarialScheme::madry) return inbiased ? Method::madry_inbiased : Method::madry;
  return inbiased ? Method::trades_inbiased : Method::trades;
}

TrainResult train_madry_inbiased(TrainConfig cfg, const AttackSpec& spec, const TrainOptions& options) {
  cfg.attack = spec;
  return train(Method::madry_inbiased, cfg, options);
}

TrainResult train_trades_inbiased(TrainConfig cfg, const AttackSpec& spec, const TradesConfig& trades,
                                  const TrainOptions& options) {
  cfg.attack = spec;
  cfg.trades = trades;
  return train(Method::trades_inbiased, cfg, options);
}

std::vector<AttackSpec> evaluation_specs(std::span<const double> epsilons, int steps) {
  std::vector<AttackSpec> specs;
  for (double eps : epsilons) specs.push_back(evaluation_attack(eps, steps));
  return specs;
}

RobustnessTable evaluate_robustness(const Checkpoint& ckpt, const ImageBatch<float>& data,
                                    std::span<const AttackSpec> specs, std::uint64_t seed, Index batch_size) {
  if (data.size() == 0) throw EmptyDatasetError("robustness evaluation on an empty dataset");
  const Model& model = ckpt.inference_model();
  const Tensor<float> inputs = ckpt.inference_pipeline().inference(data.images);

  RobustnessTable table;
  table.samples = data.size();
  Index clean = 0;
  std::vector<Index> attacked(specs.size(), 0);
  for (std::size_t s = 0; s < specs.size(); ++s) specs[s].validate();

  Index batch_index = 0;
  for (Index start = 0; start < data.size(); start += batch_size, ++batch_index) {
    const Index n = std::min(batch_size, data.size() - start);
    const Tensor<float> x(inputs.values.middleRows(start, n), inputs.dims);
    const std::span<const int> labels(data.labels.data() + start, static_cast<std::size_t>(n));
    clean += count_correct(model.forward_split(x, Mode::eval).logits, labels);
    for (std::size_t s = 0; s < specs.size(); ++s) {
      Rng rng(seed, "robustness/" + std::to_string(s), static_cast<std::uint64_t>(batch_index));
      const Tensor<float> adv = pgd_attack(model, x, labels, specs[s], AttackLoss::ce, 5.0, &rng);
      attacked[s] += count_correct(model.forward_split(adv, Mode::eval).logits, labels);
    }
  }
  const auto total = static_cast<double>(data.size());
  table.clean_accuracy = static_cast<double>(clean) / total;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    table.rows.push_back({specs[s], static_cast<double>(attacked[s]) / total});
  }
  return table;
}

std::string RobustnessTable::to_csv() const {
  std::ostringstream out;
  out << "epsilon,steps,step_size,random_start,accuracy\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.spec.epsilon << ',' << r.spec.steps << ',' << r.spec.step_size << ',' << (r.spec.random_start ? 1 : 0)
        << ',' << r.accuracy << '\n';
  }
  return out.str();
}

nlohmann::json RobustnessTable::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"epsilon", r.spec.epsilon},
                         {"steps", r.spec.steps},
                         {"step_size", r.spec.step_size},
                         {"random_start", r.spec.random_start},
                         {"accuracy", r.accuracy}});
  }
  return {{"clean_accuracy", clean_accuracy}, {"samples", samples}, {"attacks", rows_json}};
}

}  // namespace inbiased
