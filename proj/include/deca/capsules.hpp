#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "deca/nn.hpp"

namespace deca {

/// Hyperparameters of the Gaussian-mixture routing between capsule layers.
struct RoutingConfig {
  std::size_t iterations = 3;
  /// Pseudo-count pulling each per-dimension variance toward 1.
  double prior_strength = 1.0;
  /// Inverse temperature per iteration; non-decreasing, one entry per iteration.
  std::vector<double> inv_temperature{1.0, 2.0, 3.0};
  /// Adds each lower capsule's normalized grid centre to the translation
  /// entries of its class votes.
  bool coordinate_addition = false;

  void validate() const;
};

/// Spatial arrangement of a capsule layer; capsule index = (row * width + col) * types + type.
struct CapsuleGrid {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t types = 1;
  std::size_t count() const { return height * width * types; }
};

/// Activations [B, N] in (0, 1) and flattened 4x4 poses [B, N, 16].
template <typename T>
struct CapsuleState {
  Tensor<T> activations;
  Tensor<T> poses;
  CapsuleGrid grid;

  std::size_t batch() const { return activations.size(0); }
  std::size_t count() const { return activations.size(1); }
};

template <typename T>
struct RoutingParameters {
  Parameter<T> beta_a;  // initialized to 0
  Parameter<T> beta_u;  // initialized to 1

  static RoutingParameters create(const std::string& name);
};

template <typename T>
struct RoutingOutput {
  Tensor<T> activations;                      // [..., Nj]
  Tensor<T> poses;                            // [..., Nj, 16]
  std::vector<Tensor<T>> responsibilities;    // [..., K, Nj], one per E-step
};

/// Routes K lower capsules into Nj higher capsules for every leading index.
///
/// a_lower: [..., K], votes: [..., K, Nj, 16]. Responsibilities start uniform.
/// Each iteration runs an M-step (weights r * a, weighted mean and diagonal
/// variance regularized by `prior_strength` pseudo-counts of unit variance,
/// activation sigmoid(lambda_t (beta_a - beta_u * cost))) and, except after
/// the last one, an E-step r ~ a_j N(v | mu_j, var_j) normalized over j.
/// The cost is the expected per-dimension Gaussian NLL scaled by the
/// capsule's share of the routed mass relative to the mean share.
template <typename T>
RoutingOutput<T> vb_routing(const Tensor<T>& a_lower, const Tensor<T>& votes, const RoutingConfig& cfg,
                            const Tensor<T>& beta_a, const Tensor<T>& beta_u);

/// V[b, i, j] = M[b, i] * W[i mod types, j]; poses [B, N, 16], weights [types, Nj, 4, 4].
template <typename T>
Tensor<T> compute_votes(const Tensor<T>& poses, const Tensor<T>& weights);

template <typename T>
struct PrimaryCapsuleLayer {
  std::size_t types = 8;
  Conv2dLayer<T> conv;  // 1x1, C -> 17 * types

  static PrimaryCapsuleLayer create(const std::string& name, std::size_t in_channels, std::size_t types, Rng& rng);
  /// features [B, C, H, W] -> H * W * types capsules. Per type, channels
  /// [17t, 17t + 16) form the pose and channel 17t + 16 the activation logit.
  CapsuleState<T> operator()(const Tensor<T>& features) const;
};

template <typename T>
struct ConvCapsuleLayer {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t in_types = 8;
  std::size_t out_types = 8;
  Parameter<T> weights;  // [kernel * kernel * in_types, out_types, 4, 4]
  RoutingParameters<T> routing;

  static ConvCapsuleLayer create(const std::string& name, std::size_t in_types, std::size_t out_types, Rng& rng,
                                 std::size_t kernel = 3, std::size_t stride = 2, std::size_t padding = 1);
  CapsuleState<T> operator()(const CapsuleState<T>& in, const RoutingConfig& cfg) const;
};

template <typename T>
struct ClassCapsuleOutput {
  CapsuleState<T> state;        // J capsules on a 1x1 grid
  Tensor<T> inverse_graphics;   // [J, 4, 4]
};

template <typename T>
struct ClassCapsuleLayer {
  std::size_t in_types = 8;
  std::size_t classes = 15;
  Parameter<T> weights;           // [in_types, classes, 4, 4], shared over positions
  Parameter<T> inverse_graphics;  // [classes, 4, 4], identity at init
  RoutingParameters<T> routing;

  static ClassCapsuleLayer create(const std::string& name, std::size_t in_types, std::size_t classes, Rng& rng);
  /// Votes from every lower capsule, then the final (class) routing.
  ClassCapsuleOutput<T> operator()(const CapsuleState<T>& in, const RoutingConfig& cfg) const;
};

/// Splits a linearized feature vector of length 16 J into J contiguous entities [J, 16].
template <typename T>
Tensor<T> extract_entities(const Tensor<T>& feature_vector, std::size_t joints);

/// Random 4x4 transform weights with Xavier bounds per 4x4 slice.
template <typename T>
Tensor<T> init_transform_weights(const Shape& shape, Rng& rng);

}  // namespace deca
