#pragma once

#include "inbiased/model_zoo.hpp"
#include "inbiased/rng.hpp"

#include <span>
#include <vector>

namespace inbiased {

enum class Norm { linf };

/// PGD configuration. `epsilon` is in 1/255 pixel units,
/// `step_size` on the [0,1] pixel scale.
struct AttackSpec {
  double epsilon = 8.0;
  int steps = 10;
  double step_size = 0.03;
  bool random_start = true;
  Norm norm = Norm::linf;

  void validate() const;
  [[nodiscard]] double radius() const { return epsilon / 255.0; }
  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

/// Evaluation attack at `epsilon` with the 2.5 * eps / steps step size.
AttackSpec evaluation_attack(double epsilon, int steps = 10, bool random_start = true);

/// The evaluation grid, in 1/255 units.
inline const std::vector<double> kEpsilonGrid{0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

struct TradesConfig {
  double beta = 5.0;
  void validate() const;
};

enum class AttackLoss { ce, trades_kl };

/// Projects `adversarial` onto {x' : |x' - x| <= radius, 0 <= x' <= 1}
/// elementwise. The bound is enforced on the exact (double) difference.
template <typename Scalar>
void project_linf(const Tensor<Scalar>& x, Tensor<Scalar>& adversarial, double radius);

/// Iterated signed-gradient ascent from a (randomly started) point in the
/// ball, projecting after every step. The model runs in evaluation mode and
/// is not modified. For `trades_kl` the objective is
/// CE(x+d) + beta * KL(model(x) || model(x+d)).
template <typename Scalar>
Tensor<Scalar> pgd_attack(const EncoderClassifier<Scalar>& model, const Tensor<Scalar>& x, std::span<const int> labels,
                          const AttackSpec& spec, AttackLoss loss = AttackLoss::ce, double beta = 5.0,
                          Rng* rng = nullptr);

template <typename Scalar>
ImageBatch<Scalar> pgd_attack(const EncoderClassifier<Scalar>& model, const ImageBatch<Scalar>& batch,
                              const AttackSpec& spec, AttackLoss loss = AttackLoss::ce, double beta = 5.0,
                              Rng* rng = nullptr);

/// dLoss/dx of the attack objective at `x_adv`, eval mode.
template <typename Scalar>
Tensor<Scalar> attack_gradient(const EncoderClassifier<Scalar>& model, const Tensor<Scalar>& x_adv,
                               std::span<const int> labels, AttackLoss loss, const RowMatrix<Scalar>* clean_logits,
                               double beta);

}  // namespace inbiased
