#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fracdet/tensor.hpp"

namespace fracdet {

// Type codes double as the on-disk layer table encoding.
enum class LayerKind : std::uint8_t {
  kConv3x3 = 1,
  kMaxPool2x2 = 2,
  kReLU = 3,
  kFlatten = 4,
  kGlobalAvgPool = 5,
  kDense = 6,
  kSoftmax = 7,
};

const char* layer_kind_name(LayerKind kind);

struct LayerDesc {
  LayerKind kind;
  std::uint32_t units = 0;  // output channels (conv) or output units (dense)

  bool has_params() const { return kind == LayerKind::kConv3x3 || kind == LayerKind::kDense; }
  bool operator==(const LayerDesc&) const = default;
};

// Class 0 = "fractured", class 1 = "not fractured".
inline constexpr std::size_t kNumClasses = 2;
inline constexpr const char* kClassNames[kNumClasses] = {"fractured", "not fractured"};

struct ArchitectureSpec {
  Shape input{3, 224, 224};
  std::vector<LayerDesc> layers;

  bool operator==(const ArchitectureSpec&) const = default;
};

// Stock VGG-19 convolutional base followed by Flatten, one Dense+ReLU per
// entry of `head`, and a Dense{2}+Softmax classifier.
ArchitectureSpec build_vgg19_modified(std::span<const std::uint32_t> head, bool global_pool = false);

// Same grammar at desk scale: one Conv+ReLU+MaxPool block per channel count.
ArchitectureSpec build_toy(std::span<const std::uint32_t> channels, std::span<const std::uint32_t> head,
                           std::size_t input_size = 64);

// Output shape of every layer; throws kInvalidArgument when the chain is
// inconsistent.
std::vector<Shape> layer_output_shapes(const ArchitectureSpec& spec);
// Shape chain plus the Dense{2}+Softmax classifier at the end.
void validate(const ArchitectureSpec& spec);

std::uint64_t layer_parameter_count(const ArchitectureSpec& spec, std::size_t layer);
std::uint64_t count_parameters(const ArchitectureSpec& spec);

// Weight then bias for each parameterized layer, in layer order.
std::vector<Shape> parameter_shapes(const ArchitectureSpec& spec);

std::size_t last_conv_layer(const ArchitectureSpec& spec);

struct ReceptiveField {
  std::size_t size = 1;    // input pixels spanned along one axis
  std::size_t stride = 1;  // input pixels between adjacent units
};

// Receptive field of the units produced by `layer`.
ReceptiveField receptive_field(const ArchitectureSpec& spec, std::size_t layer);

enum class InitScheme : std::uint8_t { kZeros = 0, kHeNormal = 1 };

struct ModelParams {
  std::vector<Tensor> tensors;  // aligned with parameter_shapes()
  InitScheme init = InitScheme::kZeros;
  std::uint64_t seed = 0;

  bool operator==(const ModelParams&) const = default;
};

// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
ModelParams init_params(const ArchitectureSpec& spec, std::uint64_t seed);
ModelParams zero_params(const ArchitectureSpec& spec);

// A spec plus matching parameters. Immutable during inference; the trainer
// mutates params in place between batches.
class Model {
 public:
  Model(ArchitectureSpec spec, ModelParams params);

  const ArchitectureSpec& spec() const { return spec_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }

  // Index into params().tensors of the weight for `layer`, or -1.
  int param_index(std::size_t layer) const { return param_index_[layer]; }
  const Tensor& weight(std::size_t layer) const { return params_.tensors.at(param_index_.at(layer)); }
  const Tensor& bias(std::size_t layer) const { return params_.tensors.at(param_index_.at(layer) + 1); }

 private:
  ArchitectureSpec spec_;
  ModelParams params_;
  std::vector<int> param_index_;
};

// All intermediate activations of one forward pass: activations[0] is the
// input and activations[i + 1] the output of layer i. The Softmax layer's
// output holds probabilities; `logits` is the input to it.
struct ForwardTrace {
  std::vector<Tensor> activations;
  const Tensor& logits() const { return activations[activations.size() - 2]; }
  const Tensor& probabilities() const { return activations.back(); }
};

ForwardTrace forward_trace(const Model& model, const Tensor& input);

struct ForwardResult {
  Tensor logits;
  Tensor probabilities;
  std::optional<Tensor> captured;
};

// `capture_layer` must index a Conv3x3 layer; the captured tensor is that
// layer's post-ReLU output.
ForwardResult forward(const Model& model, const Tensor& input, std::optional<std::size_t> capture_layer = {});

// Index of the layer whose output is the post-ReLU activation of `conv_layer`.
std::size_t activation_layer(const ArchitectureSpec& spec, std::size_t conv_layer);

// Back-propagates `grad_out` (gradient of the layer-`last` output) through
// layers last..first and returns the gradient of layer `first`'s input (empty
// when first == 0). When `param_grads` is non-null, parameter gradients are
// accumulated into it (aligned with params().tensors).
Tensor backward_range(const Model& model, const ForwardTrace& trace, std::size_t last, std::size_t first,
                      Tensor grad_out, std::vector<Tensor>* param_grads);

// Gradient of the pre-softmax logit y_c with respect to the post-ReLU
// activation of `conv_layer`.
struct ClassScoreGradient {
  Tensor activation;
  Tensor gradient;
  Tensor logits;
  Tensor probabilities;
};
ClassScoreGradient class_score_gradient(const Model& model, const Tensor& input, std::size_t class_idx,
                                        std::size_t conv_layer);

// Cross-entropy loss for one sample with gradients accumulated into `grads`.
struct SampleLoss {
  double loss = 0.0;
  Tensor probabilities;
};
SampleLoss loss_and_gradients(const Model& model, const Tensor& input, std::size_t label, std::vector<Tensor>& grads);

std::vector<Tensor> zero_like(const ModelParams& params);

// Argmax with ties resolved toward class 0.
std::size_t predicted_class(const Tensor& probabilities);

// Binary model file. Layout (little-endian):
//   "FDXM" | u32 version | u32 C,H,W | u8 init | u64 seed | u32 layer count |
//   per layer: u8 type code, u32 units | u64 payload float count |
//   payload floats | u32 CRC-32 of the payload bytes
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace fracdet
