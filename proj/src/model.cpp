#include "deca/model.hpp"

#include <algorithm>

#include "deca/error.hpp"

namespace deca {

const char* to_string(Variant v) noexcept {
  switch (v) {
    case Variant::D1: return "D1";
    case Variant::D2: return "D2";
    case Variant::D3: return "D3";
    case Variant::R4: return "R4";
    case Variant::H4: return "H4";
  }
  return "?";
}

const char* to_string(Task t) noexcept {
  switch (t) {
    case Task::T3D: return "3D";
    case Task::T2D: return "2D";
    case Task::DM: return "DM";
    case Task::DMJ: return "DM_J";
    case Task::W: return "W";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::D1, Variant::D2, Variant::D3, Variant::R4, Variant::H4})
    if (s == to_string(v)) return v;
  fail(ErrorKind::Config, "unknown variant '" + s + "' (expected D1, D2, D3, R4 or H4)");
}

Task parse_task(const std::string& s) {
  for (Task t : {Task::T3D, Task::T2D, Task::DM, Task::DMJ, Task::W})
    if (s == to_string(t)) return t;
  fail(ErrorKind::Config, "unknown task '" + s + "' (expected 3D, 2D, DM, DM_J or W)");
}

std::vector<Task> variant_tasks(Variant v) {
  switch (v) {
    case Variant::D1: return {Task::T3D};
    case Variant::D2: return {Task::T3D, Task::W};
    case Variant::D3: return {Task::T3D, Task::T2D, Task::W};
    case Variant::R4: return {Task::T3D, Task::T2D, Task::DM, Task::W};
    case Variant::H4: return {Task::T3D, Task::T2D, Task::DMJ, Task::W};
  }
  return {};
}

std::size_t variant_input_channels(Variant v) {
  return v == Variant::R4 || v == Variant::H4 ? 3 : 1;
}

bool ModelConfig::has_task(Task t) const {
  const auto ts = tasks();
  return std::find(ts.begin(), ts.end(), t) != ts.end();
}

std::size_t ModelConfig::feature_height() const {
  std::size_t h = input_height;
  for (auto s : encoder_strides) h = conv_output_extent(h, 3, s, 1);
  return h;
}

std::size_t ModelConfig::feature_width() const {
  std::size_t w = input_width;
  for (auto s : encoder_strides) w = conv_output_extent(w, 3, s, 1);
  return w;
}

void ModelConfig::validate() const {
  require(joints >= 1, ErrorKind::Config, "joints must be positive");
  require(input_height >= 1 && input_width >= 1, ErrorKind::Config, "input resolution must be positive");
  require(recon_height >= 1 && recon_width >= 1, ErrorKind::Config, "recon resolution must be positive");
  require(!encoder_channels.empty() && encoder_channels.size() == encoder_strides.size(), ErrorKind::Config,
          "encoder_channels and encoder_strides must be non-empty and of equal length");
  std::size_t total_stride = 1;
  for (auto s : encoder_strides) {
    require(s >= 1, ErrorKind::Config, "encoder strides must be positive");
    total_stride *= s;
  }
  for (auto c : encoder_channels) require(c >= 1, ErrorKind::Config, "encoder channel counts must be positive");
  require(input_height % total_stride == 0 && input_width % total_stride == 0, ErrorKind::Config,
          "input resolution " + std::to_string(input_height) + "x" + std::to_string(input_width) +
              " is not divisible by the encoder stride product " + std::to_string(total_stride));
  require(capsule_types >= 1, ErrorKind::Config, "capsule_types must be positive");
  require(encoder_channels.back() >= 17 * capsule_types, ErrorKind::Config,
          "the last encoder width must be at least 17 * capsule_types");
  require(decoder_hidden >= 1, ErrorKind::Config, "decoder_hidden must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config, "dropout must be in [0, 1)");
  // Instance norm needs at least two spatial elements per channel.
  std::size_t h = input_height, w = input_width;
  for (auto s : encoder_strides) {
    h = conv_output_extent(h, 3, s, 1);
    w = conv_output_extent(w, 3, s, 1);
    require(h * w >= 2, ErrorKind::Config, "encoder reduces the input to a single pixel before normalization");
  }
  routing.validate();
}

template <typename T>
Tensor<T> DecoderHead<T>::operator()(const Tensor<T>& features, Mode mode, Rng* rng) const {
  return output(gelu(hidden(deca::dropout(features, dropout, mode, rng))));
}

template <typename T>
DecaModel<T>::DecaModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::size_t in = config_.input_channels();
  for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
    const auto name = "encoder." + std::to_string(i);
    const std::size_t out = config_.encoder_channels[i];
    convs_.push_back(Conv2dLayer<T>::create(name + ".conv", in, out, rng, 3, config_.encoder_strides[i], 1));
    norms_.push_back(InstanceNormLayer<T>::create(name + ".norm", out));
    in = out;
  }
  const std::size_t types = config_.capsule_types;
  primary_ = PrimaryCapsuleLayer<T>::create("primary_caps", in, types, rng);
  for (std::size_t i = 0; i < 2; ++i)
    conv_caps_.push_back(ConvCapsuleLayer<T>::create("conv_caps." + std::to_string(i), types, types, rng));
  class_caps_ = ClassCapsuleLayer<T>::create("class_caps", types, config_.joints, rng);

  for (Task task : config_.tasks()) {
    if (task == Task::W) continue;
    DecoderHead<T> head;
    head.task = task;
    head.dropout = config_.dropout;
    const auto name = std::string("decoder.") + to_string(task);
    head.hidden = LinearLayer<T>::create(name + ".hidden", 16 * config_.joints, config_.decoder_hidden, rng);
    head.output = LinearLayer<T>::create(name + ".output", config_.decoder_hidden, head_output_size(task), rng);
    heads_.push_back(std::move(head));
  }
}

template <typename T>
std::size_t DecaModel<T>::head_output_size(Task task) const {
  const std::size_t j = config_.joints, hw = config_.recon_height * config_.recon_width;
  switch (task) {
    case Task::T3D: return 3 * j;
    case Task::T2D: return 2 * j;
    case Task::DM: return hw;
    case Task::DMJ: return j * hw;
    case Task::W: break;
  }
  fail(ErrorKind::Config, std::string("task ") + to_string(task) + " has no decoder head");
}

template <typename T>
const DecoderHead<T>* DecaModel<T>::head(Task task) const {
  for (const auto& h : heads_)
    if (h.task == task) return &h;
  return nullptr;
}

template <typename T>
EncoderOutput<T> DecaModel<T>::encode(const Tensor<T>& x) const {
  require(x.dim() == 4 && x.size(1) == config_.input_channels() && x.size(2) == config_.input_height &&
              x.size(3) == config_.input_width,
          ErrorKind::Config,
          "encoder expects [B, " + std::to_string(config_.input_channels()) + ", " +
              std::to_string(config_.input_height) + ", " + std::to_string(config_.input_width) + "], got " +
              to_string(x.shape()));
  Tensor<T> h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) h = gelu(norms_[i](convs_[i](h)));
  CapsuleState<T> caps = primary_(h);
  for (const auto& layer : conv_caps_) caps = layer(caps, config_.routing);
  const auto cls = class_caps_(caps, config_.routing);
  return {cls.state.poses, cls.inverse_graphics, cls.state.activations};
}

template <typename T>
Predictions<T> DecaModel<T>::decode(const Tensor<T>& entities, Mode mode, Rng* rng) const {
  const std::size_t j = config_.joints;
  require(entities.dim() == 3 && entities.size(1) == j && entities.size(2) == 16, ErrorKind::Dimension,
          "decode expects entities [B, " + std::to_string(j) + ", 16], got " + to_string(entities.shape()));
  const std::size_t batch = entities.size(0);
  const Tensor<T> flat = reshape(entities, {batch, 16 * j});
  Predictions<T> out;
  for (const auto& h : heads_) {
    const Tensor<T> y = h(flat, mode, rng);
    switch (h.task) {
      case Task::T3D: out.y3d = reshape(y, {batch, j, 3}); break;
      case Task::T2D: out.y2d = reshape(y, {batch, j, 2}); break;
      case Task::DM: out.ydm = reshape(y, {batch, config_.recon_height, config_.recon_width}); break;
      case Task::DMJ: out.ydm = reshape(y, {batch, j, config_.recon_height, config_.recon_width}); break;
      case Task::W: break;
    }
  }
  return out;
}

template <typename T>
ForwardOutput<T> DecaModel<T>::forward(const Tensor<T>& x, Mode mode, Rng* rng) const {
  ForwardOutput<T> out;
  out.encoded = encode(x);
  out.predictions = decode(out.encoded.entities, mode, rng);
  return out;
}

template <typename T>
ParameterList<T> DecaModel<T>::parameters() const {
  ParameterList<T> params;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    params.push_back(convs_[i].weight);
    params.push_back(convs_[i].bias);
    params.push_back(norms_[i].gamma);
    params.push_back(norms_[i].beta);
  }
  params.push_back(primary_.conv.weight);
  params.push_back(primary_.conv.bias);
  for (const auto& layer : conv_caps_) {
    params.push_back(layer.weights);
    params.push_back(layer.routing.beta_a);
    params.push_back(layer.routing.beta_u);
  }
  params.push_back(class_caps_.weights);
  params.push_back(class_caps_.inverse_graphics);
  params.push_back(class_caps_.routing.beta_a);
  params.push_back(class_caps_.routing.beta_u);
  for (const auto& h : heads_) {
    params.push_back(h.hidden.weight);
    params.push_back(h.hidden.bias);
    params.push_back(h.output.weight);
    params.push_back(h.output.bias);
  }
  return params;
}

template struct DecoderHead<float>;
template struct DecoderHead<double>;
template class DecaModel<float>;
template class DecaModel<double>;

}  // namespace deca
