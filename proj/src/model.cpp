#include "fracdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include <zlib.h>

#include "fracdet/codec.hpp"
#include "fracdet/error.hpp"
#include "fracdet/layers.hpp"

namespace fracdet {

namespace {

constexpr std::uint32_t kVgg19Base[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0,
                                        512, 512, 512, 512, 0, 512, 512, 512, 512, 0};

void append_head(ArchitectureSpec& spec, std::span<const std::uint32_t> head, bool global_pool) {
  spec.layers.push_back({global_pool ? LayerKind::kGlobalAvgPool : LayerKind::kFlatten});
  for (auto units : head) {
    if (units < 1) throw_invalid("head layer widths must be at least 1");
    spec.layers.push_back({LayerKind::kDense, units});
    spec.layers.push_back({LayerKind::kReLU});
  }
  spec.layers.push_back({LayerKind::kDense, static_cast<std::uint32_t>(kNumClasses)});
  spec.layers.push_back({LayerKind::kSoftmax});
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv3x3: return "Conv3x3";
    case LayerKind::kMaxPool2x2: return "MaxPool2x2";
    case LayerKind::kReLU: return "ReLU";
    case LayerKind::kFlatten: return "Flatten";
    case LayerKind::kGlobalAvgPool: return "GlobalAvgPool";
    case LayerKind::kDense: return "Dense";
    case LayerKind::kSoftmax: return "Softmax";
  }
  return "?";
}

ArchitectureSpec build_vgg19_modified(std::span<const std::uint32_t> head, bool global_pool) {
  if (head.empty()) throw_invalid("the modified VGG-19 needs at least one head Dense layer");
  ArchitectureSpec spec;
  spec.input = {3, 224, 224};
  for (auto c : kVgg19Base) {
    if (c == 0) {
      spec.layers.push_back({LayerKind::kMaxPool2x2});
    } else {
      spec.layers.push_back({LayerKind::kConv3x3, c});
      spec.layers.push_back({LayerKind::kReLU});
    }
  }
  append_head(spec, head, global_pool);
  validate(spec);
  return spec;
}

ArchitectureSpec build_toy(std::span<const std::uint32_t> channels, std::span<const std::uint32_t> head,
                           std::size_t input_size) {
  if (channels.empty()) throw_invalid("toy architecture needs at least one conv block");
  ArchitectureSpec spec;
  spec.input = {3, input_size, input_size};
  for (auto c : channels) {
    if (c < 1) throw_invalid("conv channel counts must be at least 1");
    spec.layers.push_back({LayerKind::kConv3x3, c});
    spec.layers.push_back({LayerKind::kReLU});
    spec.layers.push_back({LayerKind::kMaxPool2x2});
  }
  append_head(spec, head, false);
  validate(spec);
  return spec;
}

std::vector<Shape> layer_output_shapes(const ArchitectureSpec& spec) {
  if (spec.input.size() != 3 || shape_size(spec.input) == 0) {
    throw_invalid("architecture input must be a non-empty (C,H,W) shape");
  }
  std::vector<Shape> shapes;
  Shape cur = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + "): ";
    switch (l.kind) {
      case LayerKind::kConv3x3:
        if (cur.size() != 3) throw_invalid(where + "needs a (C,H,W) input");
        if (l.units < 1) throw_invalid(where + "needs at least one output channel");
        cur = {l.units, cur[1], cur[2]};
        break;
      case LayerKind::kMaxPool2x2:
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) throw_invalid(where + "needs a (C,H,W) input of at least 2x2");
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::kReLU:
        break;
      case LayerKind::kFlatten:
        if (cur.size() != 3) throw_invalid(where + "needs a (C,H,W) input");
        cur = {shape_size(cur)};
        break;
      case LayerKind::kGlobalAvgPool:
        if (cur.size() != 3) throw_invalid(where + "needs a (C,H,W) input");
        cur = {cur[0]};
        break;
      case LayerKind::kDense:
        if (cur.size() != 1) throw_invalid(where + "needs a flat input");
        if (l.units < 1) throw_invalid(where + "needs at least one unit");
        cur = {l.units};
        break;
      case LayerKind::kSoftmax:
        if (i + 1 != spec.layers.size()) throw_invalid(where + "softmax must be the final layer");
        break;
      default:
        throw_invalid(where + "unknown layer kind");
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void validate(const ArchitectureSpec& spec) {
  (void)layer_output_shapes(spec);
  if (spec.layers.size() < 2 || spec.layers.back().kind != LayerKind::kSoftmax ||
      spec.layers[spec.layers.size() - 2].kind != LayerKind::kDense ||
      spec.layers[spec.layers.size() - 2].units != kNumClasses) {
    throw_invalid("architecture must end in Dense{2} followed by Softmax");
  }
}

std::uint64_t layer_parameter_count(const ArchitectureSpec& spec, std::size_t layer) {
  const LayerDesc& l = spec.layers.at(layer);
  if (!l.has_params()) return 0;
  const Shape in = layer == 0 ? spec.input : layer_output_shapes(spec)[layer - 1];
  if (l.kind == LayerKind::kConv3x3) return 9ull * in[0] * l.units + l.units;
  return static_cast<std::uint64_t>(shape_size(in)) * l.units + l.units;
}

std::uint64_t count_parameters(const ArchitectureSpec& spec) {
  std::uint64_t total = 0;
  for (const Shape& s : parameter_shapes(spec)) total += shape_size(s);
  return total;
}

std::vector<Shape> parameter_shapes(const ArchitectureSpec& spec) {
  const auto shapes = layer_output_shapes(spec);
  std::vector<Shape> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    const Shape& in = i == 0 ? spec.input : shapes[i - 1];
    if (l.kind == LayerKind::kConv3x3) {
      out.push_back({l.units, in[0], 3, 3});
      out.push_back({l.units});
    } else if (l.kind == LayerKind::kDense) {
      out.push_back({l.units, shape_size(in)});
      out.push_back({l.units});
    }
  }
  return out;
}

std::size_t last_conv_layer(const ArchitectureSpec& spec) {
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    if (spec.layers[i].kind == LayerKind::kConv3x3) return i;
  }
  throw_invalid("architecture has no convolution layer");
}

ReceptiveField receptive_field(const ArchitectureSpec& spec, std::size_t layer) {
  ReceptiveField rf;
  for (std::size_t i = 0; i <= layer && i < spec.layers.size(); ++i) {
    switch (spec.layers[i].kind) {
      case LayerKind::kConv3x3:
        rf.size += 2 * rf.stride;
        break;
      case LayerKind::kMaxPool2x2:
        rf.size += rf.stride;
        rf.stride *= 2;
        break;
      default:
        break;
    }
  }
  return rf;
}

ModelParams zero_params(const ArchitectureSpec& spec) {
  ModelParams p;
  for (auto& s : parameter_shapes(spec)) p.tensors.emplace_back(s);
  return p;
}

ModelParams init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
  ModelParams p = zero_params(spec);
  p.init = InitScheme::kHeNormal;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < p.tensors.size(); k += 2) {
    Tensor& w = p.tensors[k];
    const std::size_t fan_in = w.size() / w.dim(0);
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / static_cast<double>(fan_in))));
    for (auto& v : w.values()) v = dist(rng);
  }
  return p;
}

Model::Model(ArchitectureSpec spec, ModelParams params) : spec_(std::move(spec)), params_(std::move(params)) {
  validate(spec_);
  const auto shapes = parameter_shapes(spec_);
  if (shapes.size() != params_.tensors.size()) {
    throw_invalid("model has " + std::to_string(params_.tensors.size()) + " parameter tensors, spec needs " +
                  std::to_string(shapes.size()));
  }
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    if (params_.tensors[k].shape() != shapes[k]) {
      throw_invalid("parameter tensor " + std::to_string(k) + " has shape " + shape_string(params_.tensors[k].shape()) +
                    ", expected " + shape_string(shapes[k]));
    }
  }
  int next = 0;
  for (const auto& l : spec_.layers) {
    param_index_.push_back(l.has_params() ? next : -1);
    if (l.has_params()) next += 2;
  }
}

ForwardTrace forward_trace(const Model& model, const Tensor& input) {
  const ArchitectureSpec& spec = model.spec();
  if (input.shape() != spec.input) {
    throw_invalid("input shape " + shape_string(input.shape()) + " does not match model input " +
                  shape_string(spec.input));
  }
  ForwardTrace t;
  t.activations.reserve(spec.layers.size() + 1);
  t.activations.push_back(input);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Tensor& x = t.activations.back();
    Tensor y;
    switch (spec.layers[i].kind) {
      case LayerKind::kConv3x3: y = nn::conv3x3_forward(x, model.weight(i), model.bias(i)); break;
      case LayerKind::kMaxPool2x2: y = nn::maxpool2x2_forward(x); break;
      case LayerKind::kReLU: y = nn::relu_forward(x); break;
      case LayerKind::kFlatten: y = x.reshaped({x.size()}); break;
      case LayerKind::kGlobalAvgPool: y = nn::global_avg_pool_forward(x); break;
      case LayerKind::kDense: y = nn::dense_forward(x, model.weight(i), model.bias(i)); break;
      case LayerKind::kSoftmax: y = nn::softmax(x); break;
    }
    t.activations.push_back(std::move(y));
  }
  return t;
}

std::size_t activation_layer(const ArchitectureSpec& spec, std::size_t conv_layer) {
  if (conv_layer >= spec.layers.size() || spec.layers[conv_layer].kind != LayerKind::kConv3x3) {
    throw_invalid("layer " + std::to_string(conv_layer) + " is not a convolution layer");
  }
  if (conv_layer + 1 < spec.layers.size() && spec.layers[conv_layer + 1].kind == LayerKind::kReLU) {
    return conv_layer + 1;
  }
  return conv_layer;
}

ForwardResult forward(const Model& model, const Tensor& input, std::optional<std::size_t> capture_layer) {
  std::size_t capture = 0;
  if (capture_layer) capture = activation_layer(model.spec(), *capture_layer);
  ForwardTrace t = forward_trace(model, input);
  ForwardResult r;
  r.logits = t.logits();
  r.probabilities = t.probabilities();
  if (capture_layer) r.captured = std::move(t.activations[capture + 1]);
  return r;
}

Tensor backward_range(const Model& model, const ForwardTrace& trace, std::size_t last, std::size_t first,
                      Tensor grad, std::vector<Tensor>* param_grads) {
  const ArchitectureSpec& spec = model.spec();
  if (first > last || last >= spec.layers.size()) throw_invalid("backward_range: empty or out-of-range layer span");
  for (std::size_t i = last + 1; i-- > first;) {
    const Tensor& x = trace.activations[i];
    const bool need_dx = i > 0;
    switch (spec.layers[i].kind) {
      case LayerKind::kConv3x3: {
        const int k = model.param_index(i);
        if (param_grads) {
          grad = nn::conv3x3_backward(x, model.weight(i), grad, (*param_grads)[k], (*param_grads)[k + 1], need_dx);
        } else {
          Tensor dw(model.weight(i).shape()), db(model.bias(i).shape());
          grad = nn::conv3x3_backward(x, model.weight(i), grad, dw, db, need_dx);
        }
        break;
      }
      case LayerKind::kMaxPool2x2: grad = nn::maxpool2x2_backward(x, grad); break;
      case LayerKind::kReLU: grad = nn::relu_backward(x, grad); break;
      case LayerKind::kFlatten: grad = grad.reshaped(x.shape()); break;
      case LayerKind::kGlobalAvgPool: grad = nn::global_avg_pool_backward(x.shape(), grad); break;
      case LayerKind::kDense: {
        const int k = model.param_index(i);
        if (param_grads) {
          grad = nn::dense_backward(x, model.weight(i), grad, (*param_grads)[k], (*param_grads)[k + 1]);
        } else {
          Tensor dw(model.weight(i).shape()), db(model.bias(i).shape());
          grad = nn::dense_backward(x, model.weight(i), grad, dw, db);
        }
        break;
      }
      case LayerKind::kSoftmax:
        throw_invalid("backward_range cannot start above the softmax; pass logit gradients instead");
    }
  }
  return grad;
}

ClassScoreGradient class_score_gradient(const Model& model, const Tensor& input, std::size_t class_idx,
                                        std::size_t conv_layer) {
  if (class_idx >= kNumClasses) throw_invalid("class index " + std::to_string(class_idx) + " out of range");
  const std::size_t act = activation_layer(model.spec(), conv_layer);
  ForwardTrace t = forward_trace(model, input);
  const std::size_t logit_layer = model.spec().layers.size() - 2;
  Tensor seed(t.logits().shape());
  seed[class_idx] = 1.0f;
  ClassScoreGradient out;
  out.gradient = backward_range(model, t, logit_layer, act + 1, std::move(seed), nullptr);
  out.logits = t.logits();
  out.probabilities = t.probabilities();
  out.activation = std::move(t.activations[act + 1]);
  return out;
}

std::vector<Tensor> zero_like(const ModelParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.tensors.size());
  for (const auto& t : params.tensors) out.emplace_back(t.shape());
  return out;
}

SampleLoss loss_and_gradients(const Model& model, const Tensor& input, std::size_t label, std::vector<Tensor>& grads) {
  ForwardTrace t = forward_trace(model, input);
  nn::SoftmaxCE ce = nn::softmax_ce_forward(t.logits(), label);
  Tensor g = nn::softmax_ce_backward(ce.probabilities, label);
  const std::size_t logit_layer = model.spec().layers.size() - 2;
  backward_range(model, t, logit_layer, 0, std::move(g), &grads);
  return {ce.loss, std::move(ce.probabilities)};
}

std::size_t predicted_class(const Tensor& probabilities) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probabilities.size(); ++i) {
    if (probabilities[i] > probabilities[best]) best = i;
  }
  return best;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T)) {
      throw Error(ErrorCode::kFormat, std::string("format-error: length check failed, file truncated in ") + what);
    }
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

[[noreturn]] void format_fail(const std::string& what) { throw Error(ErrorCode::kFormat, "format-error: " + what); }

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  const ArchitectureSpec& spec = model.spec();
  std::vector<std::uint8_t> out = {'F', 'D', 'X', 'M'};
  put<std::uint32_t>(out, kModelFormatVersion);
  for (auto d : spec.input) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(model.params().init));
  put<std::uint64_t>(out, model.params().seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
    put<std::uint32_t>(out, l.units);
  }
  const std::uint64_t count = count_parameters(spec);
  put<std::uint64_t>(out, count);
  const std::size_t payload_start = out.size();
  out.reserve(out.size() + count * 4 + 4);
  for (const auto& t : model.params().tensors) {
    for (float v : t.values()) put<float>(out, v);
  }
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + payload_start, static_cast<uInt>(out.size() - payload_start));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
  return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FDXM", 4) != 0) format_fail("bad magic, expected FDXM");
  for (int i = 0; i < 4; ++i) r.get<std::uint8_t>("magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelFormatVersion) format_fail("unsupported version " + std::to_string(version));
  ArchitectureSpec spec;
  spec.input.clear();
  for (int i = 0; i < 3; ++i) spec.input.push_back(r.get<std::uint32_t>("input shape"));
  ModelParams params;
  const auto init = r.get<std::uint8_t>("init scheme");
  if (init > static_cast<std::uint8_t>(InitScheme::kHeNormal)) format_fail("unknown init scheme " + std::to_string(init));
  params.init = static_cast<InitScheme>(init);
  params.seed = r.get<std::uint64_t>("seed");
  const auto n_layers = r.get<std::uint32_t>("layer count");
  if (n_layers > r.remaining() / 5) format_fail("length check failed, layer table truncated");
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto code = r.get<std::uint8_t>("layer table");
    const auto units = r.get<std::uint32_t>("layer table");
    if (code < 1 || code > 7) format_fail("unknown layer type code " + std::to_string(code));
    spec.layers.push_back({static_cast<LayerKind>(code), units});
  }
  try {
    validate(spec);
  } catch (const Error& e) {
    format_fail(std::string("shape chain check failed: ") + e.what());
  }
  const auto declared = r.get<std::uint64_t>("payload length");
  const std::uint64_t expected = count_parameters(spec);
  if (declared != expected) {
    format_fail("length check failed, payload declares " + std::to_string(declared) + " values but the layer table needs " +
                std::to_string(expected));
  }
  if (r.remaining() < declared * 4 + 4) format_fail("length check failed, file truncated in payload");
  if (r.remaining() > declared * 4 + 4) format_fail("length check failed, trailing bytes after checksum");
  const std::size_t payload_start = r.pos();
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), bytes.data() + payload_start, static_cast<uInt>(declared * 4));
  params.tensors.clear();
  for (const Shape& s : parameter_shapes(spec)) {
    Tensor t(s);
    for (auto& v : t.values()) v = r.get<float>("payload");
    params.tensors.push_back(std::move(t));
  }
  const auto stored = r.get<std::uint32_t>("checksum");
  if (stored != static_cast<std::uint32_t>(crc)) format_fail("CRC check failed, payload is corrupt");
  return Model(std::move(spec), std::move(params));
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file(path, serialize_model(model)); }

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace fracdet
