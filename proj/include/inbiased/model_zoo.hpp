#pragma once

#include "inbiased/layers.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace inbiased {

enum class Arch { resnet18, resnet18_cifar, mlp };

Arch parse_arch(std::string_view name);
std::string_view to_string(Arch arch);

struct ModelSpec {
  Arch arch = Arch::resnet18_cifar;
  int num_classes = 10;
  Dims input{3, 32, 32};
  /// 0 selects the architecture default (512 for ResNet-18, 256 for the MLP).
  /// For ResNets the stage widths scale as latent_dim/8 * {1, 2, 4, 8}.
  int latent_dim = 0;
  /// MLP hidden widths; the last one is the latent dimension. Empty selects
  /// {1024, 512, 256}.
  std::vector<int> mlp_hidden;

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Encoder f producing a latent vector z and a linear classifier g on z.
template <typename Scalar>
class EncoderClassifier {
 public:
  struct Output {
    RowMatrix<Scalar> latent;  // n x d
    RowMatrix<Scalar> logits;  // n x num_classes
  };

  EncoderClassifier(ModelSpec spec, std::uint64_t seed);

  /// (z, g(z)). `tape` records both stages when given.
  Output forward_split(const Tensor<Scalar>& x, Mode mode = Mode::eval, Tape<Scalar>* tape = nullptr) const;

  /// g(z).
  [[nodiscard]] RowMatrix<Scalar> classify(const RowMatrix<Scalar>& latent) const;

  /// Backpropagates dL/dlogits (and optionally an extra dL/dz) through a
  /// recorded forward pass; returns dL/dx.
  Tensor<Scalar> backward(const RowMatrix<Scalar>& grad_logits, const RowMatrix<Scalar>* grad_latent,
                          Tape<Scalar>& tape) const;

  [[nodiscard]] std::vector<Parameter<Scalar>*> parameters();
  [[nodiscard]] std::vector<const Parameter<Scalar>*> parameters() const;
  [[nodiscard]] std::vector<RowMatrix<Scalar>*> buffers();
  [[nodiscard]] std::vector<const RowMatrix<Scalar>*> buffers() const;

  [[nodiscard]] const ModelSpec& spec() const { return spec_; }
  [[nodiscard]] int latent_dim() const { return latent_dim_; }
  [[nodiscard]] int num_classes() const { return spec_.num_classes; }
  [[nodiscard]] Index parameter_count() const;

  template <typename Other>
  [[nodiscard]] EncoderClassifier<Other> cast() const;

 private:
  template <typename>
  friend class EncoderClassifier;
  EncoderClassifier() = default;
  void name_parameters();

  ModelSpec spec_;
  int latent_dim_ = 0;
  Sequential<Scalar> encoder_;
  std::optional<Linear<Scalar>> classifier_;
};

/// Builds a randomly initialized network; throws InvalidArgument for an
/// unknown architecture or num_classes < 2.
template <typename Scalar = float>
EncoderClassifier<Scalar> build_model(const ModelSpec& spec, std::uint64_t seed) {
  return EncoderClassifier<Scalar>(spec, seed);
}

/// Convenience wrapper: (z, logits) in evaluation mode.
template <typename Scalar>
typename EncoderClassifier<Scalar>::Output forward_split(const EncoderClassifier<Scalar>& model,
                                                         const Tensor<Scalar>& batch) {
  return model.forward_split(batch, Mode::eval);
}

/// Digest of all parameters and buffers, for read-only checks.
template <typename Scalar>
std::uint64_t parameter_digest(const EncoderClassifier<Scalar>& model);

}  // namespace inbiased
