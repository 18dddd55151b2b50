#include "inbiased/model_zoo.hpp"

#include "inbiased/error.hpp"

#include <cstring>

namespace inbiased {

Arch parse_arch(std::string_view name) {
  if (name == "resnet18") return Arch::resnet18;
  if (name == "resnet18_cifar") return Arch::resnet18_cifar;
  if (name == "mlp") return Arch::mlp;
  throw InvalidArgument("unknown architecture '" + std::string(name) + "'");
}

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::resnet18: return "resnet18";
    case Arch::resnet18_cifar: return "resnet18_cifar";
    case Arch::mlp: return "mlp";
  }
  return "?";
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw InvalidArgument("num_classes must be >= 2");
  if (input.size() <= 0) throw InvalidArgument("input dims must be positive");
  if (latent_dim < 0) throw InvalidArgument("latent_dim must be non-negative");
  if (arch != Arch::mlp && latent_dim % 8 != 0) throw InvalidArgument("ResNet latent_dim must be a multiple of 8");
  for (int w : mlp_hidden) {
    if (w < 1) throw InvalidArgument("MLP widths must be positive");
  }
}

template <typename Scalar>
EncoderClassifier<Scalar>::EncoderClassifier(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(seed, "model/init");
  if (spec_.arch == Arch::mlp) {
    std::vector<int> widths = spec_.mlp_hidden.empty() ? std::vector<int>{1024, 512, 256} : spec_.mlp_hidden;
    if (spec_.latent_dim > 0) widths.back() = spec_.latent_dim;
    encoder_.template emplace<Flatten<Scalar>>();
    Index in = spec_.input.size();
    for (int w : widths) {
      encoder_.template emplace<Linear<Scalar>>(in, w, rng);
      encoder_.template emplace<Relu<Scalar>>();
      in = w;
    }
    latent_dim_ = widths.back();
  } else {
    const int base = spec_.latent_dim > 0 ? spec_.latent_dim / 8 : 64;
    const int cin = spec_.input.channels;
    if (spec_.arch == Arch::resnet18_cifar) {
      encoder_.template emplace<Conv2d<Scalar>>(cin, base, 3, 1, 1, rng);
      encoder_.template emplace<BatchNorm2d<Scalar>>(base);
      encoder_.template emplace<Relu<Scalar>>();
    } else {
      encoder_.template emplace<Conv2d<Scalar>>(cin, base, 7, 2, 3, rng);
      encoder_.template emplace<BatchNorm2d<Scalar>>(base);
      encoder_.template emplace<Relu<Scalar>>();
      encoder_.template emplace<MaxPool2d<Scalar>>(3, 2, 1);
    }
    int channels = base;
    for (int stage = 0; stage < 4; ++stage) {
      const int width = base << stage;
      for (int block = 0; block < 2; ++block) {
        const int stride = (stage > 0 && block == 0) ? 2 : 1;
        encoder_.template emplace<BasicBlock<Scalar>>(channels, width, stride, rng);
        channels = width;
      }
    }
    encoder_.template emplace<GlobalAvgPool<Scalar>>();
    encoder_.template emplace<Flatten<Scalar>>();
    latent_dim_ = channels;
  }
  // validates that the input resolution survives the encoder
  const Dims z = encoder_.output_dims(spec_.input);
  if (z.size() != latent_dim_) throw ShapeError("encoder output " + to_string(z) + " is not a latent vector");
  classifier_.emplace(latent_dim_, spec_.num_classes, rng);
  name_parameters();
}

template <typename Scalar>
void EncoderClassifier<Scalar>::name_parameters() {
  std::vector<Parameter<Scalar>*> enc;
  encoder_.collect_parameters(enc);
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const auto dot = enc[i]->name.rfind('.');
    const std::string leaf = dot == std::string::npos ? enc[i]->name : enc[i]->name.substr(dot + 1);
    enc[i]->name = "encoder." + std::to_string(i) + "." + leaf;
  }
  classifier_->weight.name = "classifier.weight";
  classifier_->bias.name = "classifier.bias";
}

template <typename Scalar>
typename EncoderClassifier<Scalar>::Output EncoderClassifier<Scalar>::forward_split(const Tensor<Scalar>& x, Mode mode,
                                                                                   Tape<Scalar>* tape) const {
  if (x.dims != spec_.input) {
    throw ShapeError("model expects input " + to_string(spec_.input) + ", got " + to_string(x.dims));
  }
  Tensor<Scalar> z = encoder_.forward(x, mode, tape);
  Tensor<Scalar> logits = classifier_->forward(z, mode, tape);
  return {std::move(z.values), std::move(logits.values)};
}

template <typename Scalar>
RowMatrix<Scalar> EncoderClassifier<Scalar>::classify(const RowMatrix<Scalar>& latent) const {
  return classifier_->apply(latent);
}

template <typename Scalar>
Tensor<Scalar> EncoderClassifier<Scalar>::backward(const RowMatrix<Scalar>& grad_logits,
                                                   const RowMatrix<Scalar>* grad_latent, Tape<Scalar>& tape) const {
  const Dims latent_dims{latent_dim_, 1, 1};
  Tensor<Scalar> gz = classifier_->backward(Tensor<Scalar>(grad_logits, {spec_.num_classes, 1, 1}), tape);
  if (grad_latent) gz.values += *grad_latent;
  gz.dims = latent_dims;
  return encoder_.backward(gz, tape);
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> EncoderClassifier<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  encoder_.collect_parameters(out);
  classifier_->collect_parameters(out);
  return out;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> EncoderClassifier<Scalar>::parameters() const {
  auto mutable_params = const_cast<EncoderClassifier*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename Scalar>
std::vector<RowMatrix<Scalar>*> EncoderClassifier<Scalar>::buffers() {
  std::vector<RowMatrix<Scalar>*> out;
  encoder_.collect_buffers(out);
  return out;
}

template <typename Scalar>
std::vector<const RowMatrix<Scalar>*> EncoderClassifier<Scalar>::buffers() const {
  auto mutable_buffers = const_cast<EncoderClassifier*>(this)->buffers();
  return {mutable_buffers.begin(), mutable_buffers.end()};
}

template <typename Scalar>
Index EncoderClassifier<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename Scalar>
template <typename Other>
EncoderClassifier<Other> EncoderClassifier<Scalar>::cast() const {
  EncoderClassifier<Other> out(spec_, 0);
  auto dst = out.parameters();
  auto src = parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<Other>();
  auto dst_buffers = out.buffers();
  auto src_buffers = buffers();
  for (std::size_t i = 0; i < src_buffers.size(); ++i) *dst_buffers[i] = src_buffers[i]->template cast<Other>();
  return out;
}

template <typename Scalar>
std::uint64_t parameter_digest(const EncoderClassifier<Scalar>& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto* p : model.parameters()) mix_bytes(p->value.data(), sizeof(Scalar) * static_cast<std::size_t>(p->value.size()));
  for (const auto* b : model.buffers()) mix_bytes(b->data(), sizeof(Scalar) * static_cast<std::size_t>(b->size()));
  return h;
}

template class EncoderClassifier<float>;
template class EncoderClassifier<double>;
template EncoderClassifier<double> EncoderClassifier<float>::cast<double>() const;
template EncoderClassifier<float> EncoderClassifier<double>::cast<float>() const;
template std::uint64_t parameter_digest(const EncoderClassifier<float>&);
template std::uint64_t parameter_digest(const EncoderClassifier<double>&);

}  // namespace inbiased
