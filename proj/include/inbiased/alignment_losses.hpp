#pragma once

#include "inbiased/tensor.hpp"

#include <span>
#include <utility>

namespace inbiased {

/// Balancing factors of the two per-network objectives. `*_rgb` weight the
/// RGB network's loss (alignment toward the shape network), `*_shape` the
/// shape network's loss.
struct AlignmentWeights {
  double lambda_rgb = 1.0;   // decision alignment in the RGB loss
  double lambda_shape = 1.0; // decision alignment in the shape loss
  double gamma_rgb = 1.0;    // feature alignment in the RGB loss
  double gamma_shape = 5.0;  // feature alignment in the shape loss

  void validate() const;
  [[nodiscard]] bool all_zero() const {
    return lambda_rgb == 0.0 && lambda_shape == 0.0 && gamma_rgb == 0.0 && gamma_shape == 0.0;
  }
  friend bool operator==(const AlignmentWeights&, const AlignmentWeights&) = default;
};

/// Scalar loss and its gradient w.r.t. the first ("own") argument only.
/// Arguments after the first are constants: no gradient flows into them.
template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  RowMatrix<Scalar> grad;
};

template <typename Scalar>
RowMatrix<Scalar> softmax(const RowMatrix<Scalar>& logits);

template <typename Scalar>
RowMatrix<Scalar> log_softmax(const RowMatrix<Scalar>& logits);

/// Mean cross-entropy over the batch.
template <typename Scalar>
LossValue<Scalar> cross_entropy(const RowMatrix<Scalar>& logits, std::span<const int> labels);

/// Mean over the batch of KL(softmax(own) || softmax(peer)), natural log.
template <typename Scalar>
LossValue<Scalar> decision_alignment(const RowMatrix<Scalar>& own_logits, const RowMatrix<Scalar>& peer_logits);

/// Mean over all batch x latent elements of (own - peer)^2.
template <typename Scalar>
LossValue<Scalar> feature_alignment(const RowMatrix<Scalar>& own_latent, const RowMatrix<Scalar>& peer_latent);

/// One network's composite objective with per-term values and the gradients
/// w.r.t. that network's own logits and latent vector.
template <typename Scalar>
struct NetworkLoss {
  Scalar total = 0;
  Scalar classification = 0;
  Scalar decision = 0;
  Scalar feature = 0;
  RowMatrix<Scalar> grad_logits;
  RowMatrix<Scalar> grad_latent;  // zero-sized when the feature term is off
};

template <typename Scalar>
struct NetworkOutputs {
  const RowMatrix<Scalar>& latent;
  const RowMatrix<Scalar>& logits;
};

/// own CE + lambda * DA(own, peer) + gamma * FA(own, peer), peer constant.
/// Terms with zero weight are skipped entirely.
template <typename Scalar>
NetworkLoss<Scalar> aligned_loss(NetworkOutputs<Scalar> own, NetworkOutputs<Scalar> peer, std::span<const int> labels,
                                 double lambda, double gamma);

/// (L, L_ib): the RGB network's objective and the shape network's, each
/// treating the other network's outputs as constants.
template <typename Scalar>
std::pair<NetworkLoss<Scalar>, NetworkLoss<Scalar>> inbiased_losses(NetworkOutputs<Scalar> rgb,
                                                                     NetworkOutputs<Scalar> shape,
                                                                     std::span<const int> labels,
                                                                     const AlignmentWeights& weights);

/// CE(adv) + beta * KL(softmax(clean) || softmax(adv)) with gradients for
/// both logit sets (the clean branch is not detached).
template <typename Scalar>
struct TradesLoss {
  Scalar total = 0;
  Scalar classification = 0;
  Scalar robustness = 0;  // the KL term, >= 0
  RowMatrix<Scalar> grad_clean;
  RowMatrix<Scalar> grad_adversarial;
};

template <typename Scalar>
TradesLoss<Scalar> trades_loss(const RowMatrix<Scalar>& clean_logits, const RowMatrix<Scalar>& adversarial_logits,
                               std::span<const int> labels, double beta);

}  // namespace inbiased
