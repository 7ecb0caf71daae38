#include "deca/capsules.hpp"

#include <cmath>
#include <numbers>

#include "deca/error.hpp"

namespace deca {

namespace {

constexpr std::size_t kPoseSize = 16;

Shape with_suffix(Shape lead, std::initializer_list<std::size_t> suffix) {
  lead.insert(lead.end(), suffix.begin(), suffix.end());
  return lead;
}

}  // namespace

void RoutingConfig::validate() const {
  require(iterations >= 1, ErrorKind::Config, "routing needs at least one iteration");
  require(prior_strength >= 0.0, ErrorKind::Config, "routing prior_strength must be >= 0");
  require(inv_temperature.size() == iterations, ErrorKind::Config,
          "routing inv_temperature must have one entry per iteration");
  for (std::size_t t = 0; t < inv_temperature.size(); ++t) {
    require(inv_temperature[t] > 0.0, ErrorKind::Config, "routing inv_temperature entries must be positive");
    require(t == 0 || inv_temperature[t] >= inv_temperature[t - 1], ErrorKind::Config,
            "routing inv_temperature must be non-decreasing");
  }
}

template <typename T>
RoutingParameters<T> RoutingParameters<T>::create(const std::string& name) {
  return {make_parameter(name + ".beta_a", Tensor<T>::zeros({1})),
          make_parameter(name + ".beta_u", Tensor<T>::full({1}, T(1)))};
}

template <typename T>
RoutingOutput<T> vb_routing(const Tensor<T>& a_lower, const Tensor<T>& votes, const RoutingConfig& cfg,
                            const Tensor<T>& beta_a, const Tensor<T>& beta_u) {
  cfg.validate();
  require(votes.dim() >= 3 && votes.shape().back() == kPoseSize, ErrorKind::Dimension,
          "vb_routing: votes must be [..., K, Nj, 16], got " + to_string(votes.shape()));
  const std::size_t nd = votes.dim();
  const std::size_t out_caps = votes.size(nd - 2);
  const std::size_t in_caps = votes.size(nd - 3);
  require(out_caps > 0, ErrorKind::Config, "vb_routing: no output capsules");
  const Shape lead(votes.shape().begin(), votes.shape().end() - 3);
  require(a_lower.shape() == with_suffix(lead, {in_caps}), ErrorKind::Dimension,
          "vb_routing: activations " + to_string(a_lower.shape()) + " do not match votes " +
              to_string(votes.shape()));
  const std::size_t groups = numel(lead);

  const auto av = a_lower.data();
  for (std::size_t g = 0; g < groups; ++g) {
    bool alive = false;
    for (std::size_t i = 0; i < in_caps && !alive; ++i) alive = av[g * in_caps + i] >= T(1e-12);
    require(alive, ErrorKind::Degenerate, "vb_routing: every lower activation is below 1e-12");
  }

  const T tiny = T(1e-12);
  const T var_floor = T(1e-6);
  const T kappa = static_cast<T>(cfg.prior_strength);
  const T log_two_pi = static_cast<T>(std::log(2.0 * std::numbers::pi));

  const Tensor<T> a = reshape(a_lower, {groups, in_caps, 1});
  const Tensor<T> v = reshape(votes, {groups, in_caps, out_caps, kPoseSize});
  Tensor<T> r = Tensor<T>::full({groups, in_caps, out_caps}, T(1) / static_cast<T>(out_caps));

  RoutingOutput<T> result;
  Tensor<T> mu, activation;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    // M-step.
    const Tensor<T> w = mul(r, a);
    const Tensor<T> w4 = reshape(w, {groups, in_caps, out_caps, 1});
    const Tensor<T> mass = sum(w, 1, true);  // [G, 1, Nj]
    const Tensor<T> mass4 = reshape(mass, {groups, 1, out_caps, 1});
    const Tensor<T> mass_safe = clamp_min(mass4, tiny);
    mu = div(sum(mul(w4, v), 1, true), mass_safe);  // [G, 1, Nj, 16]
    const Tensor<T> dev2 = square(sub(v, mu));      // [G, K, Nj, 16]
    const Tensor<T> scatter = sum(mul(w4, dev2), 1, true);
    const Tensor<T> var =
        add_scalar(div(add_scalar(scatter, kappa), clamp_min(add_scalar(mass4, kappa), tiny)), var_floor);
    const Tensor<T> log_var = log(var);

    const Tensor<T> nll = add(mul_scalar(add_scalar(log_var, log_two_pi), T(0.5)),
                              mul_scalar(div(div(scatter, mass_safe), var), T(0.5)));
    const Tensor<T> cost = mean(nll, 3, false);  // [G, 1, Nj]
    const Tensor<T> share = div(mass, clamp_min(mean(mass, 2, true), tiny));
    const Tensor<T> logits =
        mul_scalar(sub(beta_a, mul(beta_u, mul(cost, share))), static_cast<T>(cfg.inv_temperature[t]));
    activation = sigmoid(logits);

    if (t + 1 == cfg.iterations) break;
    // E-step.
    const Tensor<T> log_density =
        mul_scalar(sum(add(add_scalar(log_var, log_two_pi), div(dev2, var)), 3, false), T(-0.5));  // [G, K, Nj]
    r = softmax(add(log_sigmoid(logits), log_density), 2);
    result.responsibilities.push_back(reshape(r, with_suffix(lead, {in_caps, out_caps})));
  }
  result.poses = reshape(mu, with_suffix(lead, {out_caps, kPoseSize}));
  result.activations = reshape(activation, with_suffix(lead, {out_caps}));
  return result;
}

template <typename T>
Tensor<T> compute_votes(const Tensor<T>& poses, const Tensor<T>& weights) {
  require(poses.dim() == 3 && poses.size(2) == kPoseSize, ErrorKind::Dimension,
          "compute_votes: poses must be [B, N, 16], got " + to_string(poses.shape()));
  require(weights.dim() == 4 && weights.size(2) == 4 && weights.size(3) == 4, ErrorKind::Dimension,
          "compute_votes: weights must be [types, Nj, 4, 4], got " + to_string(weights.shape()));
  const std::size_t batch = poses.size(0), count = poses.size(1);
  const std::size_t types = weights.size(0), out_caps = weights.size(1);
  require(count % types == 0, ErrorKind::Dimension,
          "compute_votes: " + std::to_string(count) + " capsules are not a whole number of " +
              std::to_string(types) + " types");
  const Tensor<T> m = reshape(poses, {batch, count / types, types, 1, 4, 4});
  const Tensor<T> v = matmul(m, weights);  // [B, N/types, types, Nj, 4, 4]
  return reshape(v, {batch, count, out_caps, kPoseSize});
}

template <typename T>
Tensor<T> init_transform_weights(const Shape& shape, Rng& rng) {
  require(shape.size() >= 2 && shape[shape.size() - 1] == 4 && shape[shape.size() - 2] == 4, ErrorKind::Contract,
          "transform weights must end in 4x4, got " + to_string(shape));
  std::vector<T> values;
  values.reserve(numel(shape));
  for (std::size_t s = 0; s < numel(shape) / 16; ++s) {
    const Tensor<T> slab = xavier_uniform_init<T>({4, 4}, rng);
    values.insert(values.end(), slab.data().begin(), slab.data().end());
  }
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
PrimaryCapsuleLayer<T> PrimaryCapsuleLayer<T>::create(const std::string& name, std::size_t in_channels,
                                                      std::size_t types, Rng& rng) {
  require(types > 0, ErrorKind::Config, "primary capsules need at least one type");
  require(in_channels >= 17 * types, ErrorKind::Config,
          "primary capsules need at least 17 * types = " + std::to_string(17 * types) + " channels, got " +
              std::to_string(in_channels));
  PrimaryCapsuleLayer layer;
  layer.types = types;
  layer.conv = Conv2dLayer<T>::create(name + ".conv", in_channels, 17 * types, rng, 1, 1, 0);
  return layer;
}

template <typename T>
CapsuleState<T> PrimaryCapsuleLayer<T>::operator()(const Tensor<T>& features) const {
  require(features.dim() == 4 && features.size(1) == conv.in_channels, ErrorKind::Config,
          "primary capsules expect " + std::to_string(conv.in_channels) + " channels, got " +
              to_string(features.shape()));
  const std::size_t batch = features.size(0), h = features.size(2), w = features.size(3);
  const Tensor<T> raw = permute(conv(features), {0, 2, 3, 1});  // [B, H, W, 17 types]
  const Tensor<T> caps = reshape(raw, {batch, h * w * types, 17});
  CapsuleState<T> state;
  state.poses = slice(caps, 2, 0, kPoseSize);
  state.activations = reshape(sigmoid(slice(caps, 2, kPoseSize, 1)), {batch, h * w * types});
  state.grid = {h, w, types};
  return state;
}

template <typename T>
ConvCapsuleLayer<T> ConvCapsuleLayer<T>::create(const std::string& name, std::size_t in_types,
                                                std::size_t out_types, Rng& rng, std::size_t kernel,
                                                std::size_t stride, std::size_t padding) {
  ConvCapsuleLayer layer;
  layer.kernel = kernel;
  layer.stride = stride;
  layer.padding = padding;
  layer.in_types = in_types;
  layer.out_types = out_types;
  layer.weights = make_parameter(name + ".weights",
                                 init_transform_weights<T>({kernel * kernel * in_types, out_types, 4, 4}, rng));
  layer.routing = RoutingParameters<T>::create(name + ".routing");
  return layer;
}

template <typename T>
CapsuleState<T> ConvCapsuleLayer<T>::operator()(const CapsuleState<T>& in, const RoutingConfig& cfg) const {
  require(in.grid.types == in_types, ErrorKind::Dimension,
          "conv capsules expect " + std::to_string(in_types) + " input types, got " + std::to_string(in.grid.types));
  const std::size_t oh = conv_output_extent(in.grid.height, kernel, stride, padding);
  const std::size_t ow = conv_output_extent(in.grid.width, kernel, stride, padding);
  const std::size_t window = kernel * kernel * in_types;
  const std::size_t positions = oh * ow;

  std::vector<std::ptrdiff_t> index;
  index.reserve(positions * window);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ky = 0; ky < kernel; ++ky)
        for (std::size_t kx = 0; kx < kernel; ++kx)
          for (std::size_t t = 0; t < in_types; ++t) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(in.grid.height) &&
                                ix < static_cast<std::ptrdiff_t>(in.grid.width);
            index.push_back(inside ? (iy * static_cast<std::ptrdiff_t>(in.grid.width) + ix) *
                                             static_cast<std::ptrdiff_t>(in_types) +
                                         static_cast<std::ptrdiff_t>(t)
                                   : -1);
          }

  const std::size_t batch = in.batch();
  const Tensor<T> window_poses = index_select(in.poses, 1, index);       // [B, P*K, 16]
  const Tensor<T> window_acts = index_select(in.activations, 1, index);  // [B, P*K]
  const Tensor<T> votes = reshape(compute_votes(window_poses, weights.tensor),
                                  {batch, positions, window, out_types, kPoseSize});
  const auto routed = vb_routing(reshape(window_acts, {batch, positions, window}), votes, cfg,
                                 routing.beta_a.tensor, routing.beta_u.tensor);
  CapsuleState<T> out;
  out.poses = reshape(routed.poses, {batch, positions * out_types, kPoseSize});
  out.activations = reshape(routed.activations, {batch, positions * out_types});
  out.grid = {oh, ow, out_types};
  return out;
}

template <typename T>
ClassCapsuleLayer<T> ClassCapsuleLayer<T>::create(const std::string& name, std::size_t in_types,
                                                  std::size_t classes, Rng& rng) {
  require(classes > 0, ErrorKind::Config, "class capsules need at least one class");
  ClassCapsuleLayer layer;
  layer.in_types = in_types;
  layer.classes = classes;
  layer.weights = make_parameter(name + ".weights", init_transform_weights<T>({in_types, classes, 4, 4}, rng));
  std::vector<T> eye(classes * 16, T(0));
  for (std::size_t j = 0; j < classes; ++j)
    for (std::size_t d = 0; d < 4; ++d) eye[j * 16 + d * 5] = T(1);
  layer.inverse_graphics = make_parameter(name + ".inverse_graphics", Tensor<T>({classes, 4, 4}, std::move(eye)));
  layer.routing = RoutingParameters<T>::create(name + ".routing");
  return layer;
}

template <typename T>
ClassCapsuleOutput<T> ClassCapsuleLayer<T>::operator()(const CapsuleState<T>& in, const RoutingConfig& cfg) const {
  require(in.grid.types == in_types, ErrorKind::Dimension,
          "class capsules expect " + std::to_string(in_types) + " input types, got " + std::to_string(in.grid.types));
  const std::size_t batch = in.batch();
  Tensor<T> votes = compute_votes(in.poses, weights.tensor);  // [B, N, J, 16]
  if (cfg.coordinate_addition) {
    const std::size_t n = in.count();
    std::vector<T> offsets(n * kPoseSize, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cell = i / in.grid.types;
      const std::size_t row = cell / in.grid.width, col = cell % in.grid.width;
      offsets[i * kPoseSize + 3] = (static_cast<T>(col) + T(0.5)) / static_cast<T>(in.grid.width);
      offsets[i * kPoseSize + 7] = (static_cast<T>(row) + T(0.5)) / static_cast<T>(in.grid.height);
    }
    votes = add(votes, Tensor<T>({n, 1, kPoseSize}, std::move(offsets)));
  }
  const auto routed = vb_routing(in.activations, votes, cfg, routing.beta_a.tensor, routing.beta_u.tensor);
  ClassCapsuleOutput<T> out;
  out.state.poses = routed.poses;  // [B, J, 16]
  out.state.activations = routed.activations;
  out.state.grid = {1, 1, classes};
  out.inverse_graphics = inverse_graphics.tensor;
  (void)batch;
  return out;
}

template <typename T>
Tensor<T> extract_entities(const Tensor<T>& feature_vector, std::size_t joints) {
  require(joints > 0, ErrorKind::Contract, "extract_entities: joint count must be positive");
  require(feature_vector.dim() == 1, ErrorKind::Contract,
          "extract_entities: expected a flat feature vector, got " + to_string(feature_vector.shape()));
  const std::size_t length = feature_vector.numel();
  require(length % joints == 0, ErrorKind::Contract,
          "extract_entities: length " + std::to_string(length) + " is not divisible by " + std::to_string(joints));
  require(length == kPoseSize * joints, ErrorKind::Contract,
          "extract_entities: length " + std::to_string(length) + " is not 16 * " + std::to_string(joints));
  return reshape(feature_vector, {joints, kPoseSize});
}

#define DECA_INSTANTIATE(T)                                                                              \
  template struct RoutingParameters<T>;                                                                  \
  template RoutingOutput<T> vb_routing(const Tensor<T>&, const Tensor<T>&, const RoutingConfig&,         \
                                       const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> compute_votes(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> init_transform_weights(const Shape&, Rng&);                                         \
  template struct PrimaryCapsuleLayer<T>;                                                                \
  template struct ConvCapsuleLayer<T>;                                                                   \
  template struct ClassCapsuleLayer<T>;                                                                  \
  template Tensor<T> extract_entities(const Tensor<T>&, std::size_t);

DECA_INSTANTIATE(float)
DECA_INSTANTIATE(double)
#undef DECA_INSTANTIATE

}  // namespace deca
