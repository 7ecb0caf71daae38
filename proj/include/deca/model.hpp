#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "deca/capsules.hpp"

namespace deca {

enum class Variant { D1, D2, D3, R4, H4 };

/// T3D: 3D joints, T2D: normalized 2D joints, DM: depth map, DMJ: per-joint
/// heatmaps (H4), W: inverse-graphics constraint.
enum class Task { T3D, T2D, DM, DMJ, W };

const char* to_string(Variant v) noexcept;
const char* to_string(Task t) noexcept;
Variant parse_variant(const std::string& s);
Task parse_task(const std::string& s);

/// The fixed task set of each variant, in canonical order.
std::vector<Task> variant_tasks(Variant v);
/// 1 for the depth variants (D*), 3 for the RGB variants (R4, H4).
std::size_t variant_input_channels(Variant v);

struct ModelConfig {
  Variant variant = Variant::D3;
  std::size_t joints = 15;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t recon_height = 16;
  std::size_t recon_width = 16;
  std::vector<std::size_t> encoder_channels{64, 128, 256, 256};
  std::vector<std::size_t> encoder_strides{2, 2, 2, 2};
  std::size_t capsule_types = 8;
  std::size_t decoder_hidden = 128;
  double dropout = 0.5;
  RoutingConfig routing;

  std::vector<Task> tasks() const { return variant_tasks(variant); }
  std::size_t input_channels() const { return variant_input_channels(variant); }
  bool has_task(Task t) const;
  /// Spatial extent of the primary capsule grid.
  std::size_t feature_height() const;
  std::size_t feature_width() const;
  void validate() const;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> entities;           // [B, J, 16]
  Tensor<T> inverse_graphics;   // [J, 4, 4]
  Tensor<T> class_activations;  // [B, J]
};

/// Head outputs; heads outside the task set stay undefined.
template <typename T>
struct Predictions {
  Tensor<T> y3d;  // [B, J, 3] metres, camera frame
  Tensor<T> y2d;  // [B, J, 2] normalized image coordinates
  Tensor<T> ydm;  // [B, H', W'] depth relief, or [B, J, H', W'] heatmaps
};

template <typename T>
struct ForwardOutput {
  Predictions<T> predictions;
  EncoderOutput<T> encoded;
};

/// Dropout -> Linear(16 J -> hidden) -> GELU -> Linear(hidden -> out).
template <typename T>
struct DecoderHead {
  Task task = Task::T3D;
  double dropout = 0.5;
  LinearLayer<T> hidden;
  LinearLayer<T> output;

  Tensor<T> operator()(const Tensor<T>& features, Mode mode, Rng* rng) const;
};

template <typename T>
class DecaModel {
 public:
  DecaModel(const ModelConfig& config, std::uint64_t seed);

  EncoderOutput<T> encode(const Tensor<T>& x) const;
  Predictions<T> decode(const Tensor<T>& entities, Mode mode, Rng* rng) const;
  ForwardOutput<T> forward(const Tensor<T>& x, Mode mode, Rng* rng) const;

  /// Every trainable tensor, in a stable order (encoder, capsules, heads).
  ParameterList<T> parameters() const;
  const ModelConfig& config() const noexcept { return config_; }
  const ClassCapsuleLayer<T>& class_capsules() const noexcept { return class_caps_; }
  const DecoderHead<T>* head(Task task) const;
  std::size_t head_output_size(Task task) const;

 private:
  ModelConfig config_;
  std::vector<Conv2dLayer<T>> convs_;
  std::vector<InstanceNormLayer<T>> norms_;
  PrimaryCapsuleLayer<T> primary_;
  std::vector<ConvCapsuleLayer<T>> conv_caps_;
  ClassCapsuleLayer<T> class_caps_;
  std::vector<DecoderHead<T>> heads_;
};

}  // namespace deca
