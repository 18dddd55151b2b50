#pragma once

#include "inbiased/rng.hpp"
#include "inbiased/tensor.hpp"

#include <any>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace inbiased {

enum class Mode { train, eval };

template <typename Scalar>
struct Parameter {
  std::string name;
  RowMatrix<Scalar> value;
};

/// Accumulated gradients keyed by parameter identity. Models never store
/// gradients themselves, so a network is read-only during backpropagation
/// and a loss that treats a peer as constant simply never touches the
/// peer's entries.
template <typename Scalar>
class Gradients {
 public:
  void accumulate(const Parameter<Scalar>& p, const Eigen::Ref<const RowMatrix<Scalar>>& g) {
    auto [it, inserted] = grads_.try_emplace(&p, g);
    if (!inserted) it->second += g;
  }
  [[nodiscard]] const RowMatrix<Scalar>* find(const Parameter<Scalar>& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }
  [[nodiscard]] std::size_t size() const { return grads_.size(); }
  [[nodiscard]] bool empty() const { return grads_.empty(); }
  void clear() { grads_.clear(); }

 private:
  std::unordered_map<const Parameter<Scalar>*, RowMatrix<Scalar>> grads_;
};

/// Activation record of one forward pass, consumed in reverse by backward.
/// Several tapes over the same model may coexist (e.g. clean and
/// adversarial passes of TRADES).
template <typename Scalar>
class Tape {
 public:
  /// With a null sink only input gradients are produced.
  explicit Tape(Gradients<Scalar>* gradients = nullptr) : gradients_(gradients) {}

  template <typename T>
  void push(T value) {
    entries_.emplace_back(std::move(value));
  }
  template <typename T>
  T pop() {
    T value = std::any_cast<T&&>(std::move(entries_.back()));
    entries_.pop_back();
    return value;
  }
  [[nodiscard]] Gradients<Scalar>* gradients() const { return gradients_; }
  [[nodiscard]] bool empty() const { return entries_.empty(); }

 private:
  std::vector<std::any> entries_;
  Gradients<Scalar>* gradients_;
};

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  [[nodiscard]] virtual Dims output_dims(const Dims& input) const = 0;
  /// Records into `tape` when non-null. Only BatchNorm in train mode
  /// mutates state (its running statistics).
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const = 0;
  /// Returns the gradient w.r.t. the layer input; parameter gradients go
  /// to the tape's sink.
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const = 0;

  virtual void collect_parameters(std::vector<Parameter<Scalar>*>&) {}
  virtual void collect_buffers(std::vector<RowMatrix<Scalar>*>&) {}
  [[nodiscard]] virtual std::unique_ptr<Layer> clone() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  Linear(Index in, Index out, Rng& rng, bool bias = true);

  Dims output_dims(const Dims& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  void collect_parameters(std::vector<Parameter<Scalar>*>& out) override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Linear>(*this); }
  std::string name() const override { return "linear"; }

  /// Plain affine map x W^T + b without recording.
  [[nodiscard]] RowMatrix<Scalar> apply(const RowMatrix<Scalar>& x) const;

  Parameter<Scalar> weight;  // out x in
  Parameter<Scalar> bias;    // 1 x out; empty when disabled
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  Dims output_dims(const Dims& input) const override { return input; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Relu>(*this); }
  std::string name() const override { return "relu"; }
};

template <typename Scalar>
class Flatten final : public Layer<Scalar> {
 public:
  Dims output_dims(const Dims& input) const override { return {static_cast<int>(input.size()), 1, 1}; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Flatten>(*this); }
  std::string name() const override { return "flatten"; }
};

/// Cross-correlation with zero padding, weights laid out (out, in*k*k).
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);

  Dims output_dims(const Dims& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  void collect_parameters(std::vector<Parameter<Scalar>*>& out) override { out.push_back(&weight); }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string name() const override { return "conv2d"; }

  Parameter<Scalar> weight;

 private:
  void im2col(const Scalar* image, const Dims& in, const Dims& out, RowMatrix<Scalar>& col) const;
  void col2im(const RowMatrix<Scalar>& col, const Dims& in, const Dims& out, Scalar* image) const;

  int in_channels_;
  int out_channels_;
  int kernel_;
  int stride_;
  int padding_;
};

template <typename Scalar>
class BatchNorm2d final : public Layer<Scalar> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Dims output_dims(const Dims& input) const override { return input; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  void collect_parameters(std::vector<Parameter<Scalar>*>& out) override;
  void collect_buffers(std::vector<RowMatrix<Scalar>*>& out) override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  std::string name() const override { return "batchnorm2d"; }

  Parameter<Scalar> gamma;
  Parameter<Scalar> beta;
  mutable RowMatrix<Scalar> running_mean;
  mutable RowMatrix<Scalar> running_var;

 private:
  int channels_;
  double momentum_;
  double eps_;
};

template <typename Scalar>
class MaxPool2d final : public Layer<Scalar> {
 public:
  MaxPool2d(int kernel, int stride, int padding) : kernel_(kernel), stride_(stride), padding_(padding) {}

  Dims output_dims(const Dims& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  std::string name() const override { return "maxpool2d"; }

 private:
  int kernel_;
  int stride_;
  int padding_;
};

template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
 public:
  Dims output_dims(const Dims& input) const override { return {input.channels, 1, 1}; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::string name() const override { return "global_avg_pool"; }
};

template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push(std::unique_ptr<Layer<Scalar>> layer) { layers_.push_back(std::move(layer)); }

  Dims output_dims(const Dims& input) const override;
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  void collect_parameters(std::vector<Parameter<Scalar>*>& out) override;
  void collect_buffers(std::vector<RowMatrix<Scalar>*>& out) override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Sequential>(*this); }
  std::string name() const override { return "sequential"; }

  [[nodiscard]] std::size_t size() const { return layers_.size(); }
  [[nodiscard]] const Layer<Scalar>& at(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

/// Two 3x3 conv/BN stages with an identity or 1x1-projection shortcut.
template <typename Scalar>
class BasicBlock final : public Layer<Scalar> {
 public:
  BasicBlock(int in_channels, int out_channels, int stride, Rng& rng);

  Dims output_dims(const Dims& input) const override { return main_.output_dims(input); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, Tape<Scalar>* tape) const override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, Tape<Scalar>& tape) const override;
  void collect_parameters(std::vector<Parameter<Scalar>*>& out) override;
  void collect_buffers(std::vector<RowMatrix<Scalar>*>& out) override;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BasicBlock>(*this); }
  std::string name() const override { return "basic_block"; }

 private:
  Sequential<Scalar> main_;
  Sequential<Scalar> shortcut_;  // empty for identity
};

}  // namespace inbiased
