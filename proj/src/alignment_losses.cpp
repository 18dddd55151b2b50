#include "inbiased/alignment_losses.hpp"

#include "inbiased/error.hpp"

#include <cmath>

namespace inbiased {

void AlignmentWeights::validate() const {
  for (double w : {lambda_rgb, lambda_shape, gamma_rgb, gamma_shape}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("alignment weights must be finite and non-negative");
  }
}

namespace {

template <typename Scalar>
void require_finite(const RowMatrix<Scalar>& m, const char* what) {
  if (!m.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite input");
}

template <typename Scalar>
void require_same_shape(const RowMatrix<Scalar>& a, const RowMatrix<Scalar>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

template <typename Scalar>
void require_labels(const RowMatrix<Scalar>& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) throw ShapeError("label count does not match batch size");
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) throw InvalidArgument("label " + std::to_string(y) + " out of range");
  }
  if (logits.rows() == 0) throw ShapeError("empty batch");
}

/// Per-row KL(p || q) and r = log p - log q.
template <typename Scalar>
Vector<Scalar> row_kl(const RowMatrix<Scalar>& p, const RowMatrix<Scalar>& log_p, const RowMatrix<Scalar>& log_q,
                      RowMatrix<Scalar>& log_ratio) {
  log_ratio = log_p - log_q;
  return (p.array() * log_ratio.array()).rowwise().sum().matrix();
}

}  // namespace

template <typename Scalar>
RowMatrix<Scalar> log_softmax(const RowMatrix<Scalar>& logits) {
  RowMatrix<Scalar> out = logits;
  for (Index i = 0; i < out.rows(); ++i) {
    const Scalar m = out.row(i).maxCoeff();
    out.row(i).array() -= m;
    const Scalar lse = std::log(out.row(i).array().exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> softmax(const RowMatrix<Scalar>& logits) {
  return log_softmax(logits).array().exp().matrix();
}

template <typename Scalar>
LossValue<Scalar> cross_entropy(const RowMatrix<Scalar>& logits, std::span<const int> labels) {
  require_labels(logits, labels);
  require_finite(logits, "cross_entropy");
  const RowMatrix<Scalar> log_p = log_softmax(logits);
  const auto n = static_cast<Scalar>(logits.rows());
  LossValue<Scalar> out;
  out.grad = log_p.array().exp().matrix();
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    out.value -= log_p(i, y);
    out.grad(i, y) -= Scalar(1);
  }
  out.value /= n;
  out.grad /= n;
  return out;
}

template <typename Scalar>
LossValue<Scalar> decision_alignment(const RowMatrix<Scalar>& own_logits, const RowMatrix<Scalar>& peer_logits) {
  require_same_shape(own_logits, peer_logits, "decision_alignment");
  require_finite(own_logits, "decision_alignment");
  require_finite(peer_logits, "decision_alignment");
  const RowMatrix<Scalar> log_p = log_softmax(own_logits);
  const RowMatrix<Scalar> log_q = log_softmax(peer_logits);
  const RowMatrix<Scalar> p = log_p.array().exp().matrix();
  RowMatrix<Scalar> r;
  const Vector<Scalar> kl = row_kl(p, log_p, log_q, r);
  const auto n = static_cast<Scalar>(own_logits.rows());
  LossValue<Scalar> out;
  // clamp rounding noise: KL is non-negative
  out.value = std::max(Scalar(0), kl.sum() / n);
  // d KL / d a_k = p_k (r_k - KL)
  out.grad = (p.array() * (r.array().colwise() - kl.array())).matrix() / n;
  return out;
}

template <typename Scalar>
LossValue<Scalar> feature_alignment(const RowMatrix<Scalar>& own_latent, const RowMatrix<Scalar>& peer_latent) {
  require_same_shape(own_latent, peer_latent, "feature_alignment");
  require_finite(own_latent, "feature_alignment");
  require_finite(peer_latent, "feature_alignment");
  const RowMatrix<Scalar> diff = own_latent - peer_latent;
  const auto count = static_cast<Scalar>(diff.size());
  return {diff.squaredNorm() / count, diff * (Scalar(2) / count)};
}

template <typename Scalar>
NetworkLoss<Scalar> aligned_loss(NetworkOutputs<Scalar> own, NetworkOutputs<Scalar> peer, std::span<const int> labels,
                                 double lambda, double gamma) {
  NetworkLoss<Scalar> out;
  auto ce = cross_entropy(own.logits, labels);
  out.classification = ce.value;
  out.grad_logits = std::move(ce.grad);
  out.total = out.classification;
  if (lambda != 0.0) {
    const auto da = decision_alignment(own.logits, peer.logits);
    out.decision = da.value;
    out.total += static_cast<Scalar>(lambda) * da.value;
    out.grad_logits += static_cast<Scalar>(lambda) * da.grad;
  }
  if (gamma != 0.0) {
    const auto fa = feature_alignment(own.latent, peer.latent);
    out.feature = fa.value;
    out.total += static_cast<Scalar>(gamma) * fa.value;
    out.grad_latent = static_cast<Scalar>(gamma) * fa.grad;
  }
  return out;
}

template <typename Scalar>
std::pair<NetworkLoss<Scalar>, NetworkLoss<Scalar>> inbiased_losses(NetworkOutputs<Scalar> rgb,
                                                                     NetworkOutputs<Scalar> shape,
                                                                     std::span<const int> labels,
                                                                     const AlignmentWeights& weights) {
  weights.validate();
  return {aligned_loss(rgb, shape, labels, weights.lambda_rgb, weights.gamma_rgb),
          aligned_loss(shape, rgb, labels, weights.lambda_shape, weights.gamma_shape)};
}

template <typename Scalar>
TradesLoss<Scalar> trades_loss(const RowMatrix<Scalar>& clean_logits, const RowMatrix<Scalar>& adversarial_logits,
                               std::span<const int> labels, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("TRADES beta must be > 0");
  require_same_shape(clean_logits, adversarial_logits, "trades_loss");
  require_finite(clean_logits, "trades_loss");
  auto ce = cross_entropy(adversarial_logits, labels);
  const RowMatrix<Scalar> log_p = log_softmax(clean_logits);
  const RowMatrix<Scalar> log_q = log_softmax(adversarial_logits);
  const RowMatrix<Scalar> p = log_p.array().exp().matrix();
  const RowMatrix<Scalar> q = log_q.array().exp().matrix();
  RowMatrix<Scalar> r;
  const Vector<Scalar> kl = row_kl(p, log_p, log_q, r);
  const auto n = static_cast<Scalar>(clean_logits.rows());
  const auto b = static_cast<Scalar>(beta);
  TradesLoss<Scalar> out;
  out.classification = ce.value;
  out.robustness = std::max(Scalar(0), kl.sum() / n);
  out.total = out.classification + b * out.robustness;
  out.grad_clean = b * (p.array() * (r.array().colwise() - kl.array())).matrix() / n;
  out.grad_adversarial = ce.grad + b * (q - p) / n;
  return out;
}

#define INBIASED_INSTANTIATE(S)                                                                                   \
  template RowMatrix<S> softmax(const RowMatrix<S>&);                                                            \
  template RowMatrix<S> log_softmax(const RowMatrix<S>&);                                                        \
  template LossValue<S> cross_entropy(const RowMatrix<S>&, std::span<const int>);                                \
  template LossValue<S> decision_alignment(const RowMatrix<S>&, const RowMatrix<S>&);                            \
  template LossValue<S> feature_alignment(const RowMatrix<S>&, const RowMatrix<S>&);                             \
  template NetworkLoss<S> aligned_loss(NetworkOutputs<S>, NetworkOutputs<S>, std::span<const int>, double, double); \
  template std::pair<NetworkLoss<S>, NetworkLoss<S>> inbiased_losses(NetworkOutputs<S>, NetworkOutputs<S>,      \
                                                                     std::span<const int>, const AlignmentWeights&); \
  template TradesLoss<S> trades_loss(const RowMatrix<S>&, const RowMatrix<S>&, std::span<const int>, double);
INBIASED_INSTANTIATE(float)
INBIASED_INSTANTIATE(double)
#undef INBIASED_INSTANTIATE

}  // namespace inbiased
