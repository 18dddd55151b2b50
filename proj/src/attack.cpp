#include "inbiased/attack.hpp"

#include "inbiased/alignment_losses.hpp"
#include "inbiased/error.hpp"

#include <algorithm>
#include <cmath>

namespace inbiased {

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("attack epsilon must be >= 0");
  if (steps < 0) throw InvalidArgument("attack steps must be >= 0");
  if (!(step_size > 0.0 && step_size <= 1.0)) throw InvalidArgument("attack step_size must lie in (0,1]");
}

AttackSpec evaluation_attack(double epsilon, int steps, bool random_start) {
  AttackSpec spec;
  spec.epsilon = epsilon;
  spec.steps = steps;
  spec.random_start = random_start;
  // any positive value works when epsilon is 0
  spec.step_size = epsilon > 0.0 ? 2.5 * (epsilon / 255.0) / steps : 1.0 / 255.0;
  return spec;
}

void TradesConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("TRADES beta must be > 0");
}

template <typename Scalar>
void project_linf(const Tensor<Scalar>& x, Tensor<Scalar>& adversarial, double radius) {
  Scalar* adv = adversarial.values.data();
  const Scalar* ref = x.values.data();
  for (Index i = 0; i < x.values.size(); ++i) {
    const double base = ref[i];
    const double delta = std::clamp(static_cast<double>(adv[i]) - base, -radius, radius);
    Scalar v = static_cast<Scalar>(std::clamp(base + delta, 0.0, 1.0));
    // rounding x + delta to Scalar may overshoot the ball by an ulp
    while (std::abs(static_cast<double>(v) - base) > radius) v = std::nextafter(v, ref[i]);
    adv[i] = v;
  }
}

template <typename Scalar>
Tensor<Scalar> attack_gradient(const EncoderClassifier<Scalar>& model, const Tensor<Scalar>& x_adv,
                               std::span<const int> labels, AttackLoss loss, const RowMatrix<Scalar>* clean_logits,
                               double beta) {
  Tape<Scalar> tape;  // no parameter gradients
  const auto out = model.forward_split(x_adv, Mode::eval, &tape);
  if (!out.logits.allFinite()) throw DivergenceError("non-finite logits during attack generation");
  RowMatrix<Scalar> grad;
  if (loss == AttackLoss::ce) {
    grad = cross_entropy<Scalar>(out.logits, labels).grad;
  } else {
    if (clean_logits == nullptr) throw InvalidArgument("trades_kl attack needs clean logits");
    grad = trades_loss<Scalar>(*clean_logits, out.logits, labels, beta).grad_adversarial;
  }
  Tensor<Scalar> dx = model.backward(grad, nullptr, tape);
  if (!dx.values.allFinite()) throw DivergenceError("non-finite input gradient during attack generation");
  return dx;
}

template <typename Scalar>
Tensor<Scalar> pgd_attack(const EncoderClassifier<Scalar>& model, const Tensor<Scalar>& x, std::span<const int> labels,
                          const AttackSpec& spec, AttackLoss loss, double beta, Rng* rng) {
  spec.validate();
  if (static_cast<Index>(labels.size()) != x.batch()) throw ShapeError("attack labels do not match the batch");
  if (loss == AttackLoss::trades_kl) TradesConfig{beta}.validate();
  const double radius = spec.radius();
  Tensor<Scalar> adv = x;
  if (radius == 0.0 || spec.steps == 0) return adv;

  if (spec.random_start) {
    if (rng == nullptr) throw InvalidArgument("random_start needs a random source");
    for (Index i = 0; i < adv.values.size(); ++i) {
      adv.values.data()[i] += static_cast<Scalar>(rng->uniform(-radius, radius));
    }
    project_linf(x, adv, radius);
  }

  RowMatrix<Scalar> clean_logits;
  if (loss == AttackLoss::trades_kl) clean_logits = model.forward_split(x, Mode::eval).logits;

  const auto step = static_cast<Scalar>(spec.step_size);
  for (int t = 0; t < spec.steps; ++t) {
    const Tensor<Scalar> g = attack_gradient(model, adv, labels, loss, &clean_logits, beta);
    adv.values.array() += step * g.values.array().sign();
    project_linf(x, adv, radius);
  }
  return adv;
}

template <typename Scalar>
ImageBatch<Scalar> pgd_attack(const EncoderClassifier<Scalar>& model, const ImageBatch<Scalar>& batch,
                              const AttackSpec& spec, AttackLoss loss, double beta, Rng* rng) {
  return {pgd_attack(model, batch.images, batch.labels, spec, loss, beta, rng), batch.labels, batch.groups};
}

#define INBIASED_INSTANTIATE(S)                                                                                     \
  template void project_linf(const Tensor<S>&, Tensor<S>&, double);                                                \
  template Tensor<S> attack_gradient(const EncoderClassifier<S>&, const Tensor<S>&, std::span<const int>,          \
                                     AttackLoss, const RowMatrix<S>*, double);                                     \
  template Tensor<S> pgd_attack(const EncoderClassifier<S>&, const Tensor<S>&, std::span<const int>,               \
                                const AttackSpec&, AttackLoss, double, Rng*);                                      \
  template ImageBatch<S> pgd_attack(const EncoderClassifier<S>&, const ImageBatch<S>&, const AttackSpec&,          \
                                    AttackLoss, double, Rng*);
INBIASED_INSTANTIATE(float)
INBIASED_INSTANTIATE(double)
#undef INBIASED_INSTANTIATE

}  // namespace inbiased
