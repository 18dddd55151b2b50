#pragma once

#include "inbiased/attack.hpp"
#include "inbiased/trainer.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace inbiased {

enum class AdversarialScheme { madry, trades };

AdversarialScheme parse_scheme(const std::string& name);

/// Training method for a scheme with the shape-distillation plugin on or off.
Method adversarial_method(AdversarialScheme scheme, bool inbiased);

/// The RGB network trains on PGD-CE examples and aligns to a ShapeNet that
/// sees shape images of the natural inputs; the ShapeNet learns from CE only.
TrainResult train_madry_inbiased(TrainConfig cfg, const AttackSpec& spec, const TrainOptions& options = {});

/// As above with the TRADES objective CE(x+d) + beta * KL(f(x) || f(x+d)),
/// both for the attack and for the RGB network's loss.
TrainResult train_trades_inbiased(TrainConfig cfg, const AttackSpec& spec, const TradesConfig& trades,
                                  const TrainOptions& options = {});

struct RobustnessRow {
  AttackSpec spec;
  double accuracy = 0.0;
};

struct RobustnessTable {
  double clean_accuracy = 0.0;
  Index samples = 0;
  std::vector<RobustnessRow> rows;

  [[nodiscard]] std::string to_csv() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// One evaluation attack per epsilon of the grid.
std::vector<AttackSpec> evaluation_specs(std::span<const double> epsilons = kEpsilonGrid, int steps = 10);

/// Clean and attacked accuracy of the checkpoint's inference network. The
/// attack perturbs the network's input after its deterministic pipeline
/// stages. Random starts draw from streams derived from `seed`.
RobustnessTable evaluate_robustness(const Checkpoint& ckpt, const ImageBatch<float>& data,
                                    std::span<const AttackSpec> specs, std::uint64_t seed = 0,
                                    Index batch_size = 256);

}  // namespace inbiased
