#include "deca/training.hpp"

#include <chrono>
#include <cmath>

#include "deca/error.hpp"

namespace deca {

namespace {

// Stream tags for seeds derived from TrainConfig::seed.
constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;
constexpr std::uint64_t kDropoutTag = 0x44524f50ULL;

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorKind::Config, "learning_rate must be positive");
  require(weight_decay >= 0.0, ErrorKind::Config, "weight_decay must be non-negative");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be at least 1");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, ErrorKind::Config,
          "adam betas must be in [0, 1)");
  require(adam_eps > 0.0, ErrorKind::Config, "adam_eps must be positive");
  require(clip_norm >= 0.0, ErrorKind::Config, "clip_norm must be non-negative");
}

template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, const TrainConfig& cfg) {
  for (const auto& p : params)
    require(p.tensor.has_grad(), ErrorKind::Contract, "adam_step: parameter " + p.name + " has no gradient");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T(0));
      state.v.emplace_back(p.tensor.numel(), T(0));
    }
  }
  require(state.m.size() == params.size(), ErrorKind::Contract, "adam_step: optimizer state does not match");

  double scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double norm2 = 0.0;
    for (const auto& p : params)
      for (T g : p.tensor.grad()) norm2 += double(g) * double(g);
    const double norm = std::sqrt(norm2);
    if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
  }

  ++state.step;
  const T b1 = T(cfg.adam_beta1), b2 = T(cfg.adam_beta2);
  const T c1 = T(1) / (T(1) - T(std::pow(cfg.adam_beta1, double(state.step))));
  const T c2 = T(1) / (T(1) - T(std::pow(cfg.adam_beta2, double(state.step))));
  const T lr = T(cfg.learning_rate), eps = T(cfg.adam_eps), wd = T(cfg.weight_decay), sc = T(scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    auto values = tensor.mutable_data();
    const auto grad = tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    require(m.size() == values.size(), ErrorKind::Contract, "adam_step: moment size mismatch for " + params[i].name);
    for (std::size_t k = 0; k < values.size(); ++k) {
      const T g = grad[k] * sc + wd * values[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      values[k] -= lr * (m[k] * c1) / (std::sqrt(v[k] * c2) + eps);
    }
    tensor.zero_grad();
  }
}

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"steps", steps},
          {"loss_total", loss_total},
          {"loss_per_task", loss_per_task},
          {"s_per_task", s_per_task},
          {"wall_ms", wall_ms}};
}

template <typename T>
Trainer<T>::Trainer(const ModelConfig& model_config, const TrainConfig& train_config)
    : model_config_(model_config),
      config_(train_config),
      model_((train_config.validate(), model_config), train_config.seed),
      weights_(LossWeights<T>::create(model_config.tasks())) {}

template <typename T>
ParameterList<T> Trainer<T>::parameters() const {
  auto params = model_.parameters();
  params.insert(params.end(), weights_.s.begin(), weights_.s.end());
  return params;
}

template <typename T>
std::map<Task, Tensor<T>> Trainer<T>::losses(const Batch<T>& batch, Mode mode, Rng* rng) const {
  const auto out = model_.forward(batch.input, mode, rng);
  const auto& p = out.predictions;
  std::map<Task, Tensor<T>> result;
  for (Task task : model_config_.tasks()) {
    switch (task) {
      case Task::T3D: result[task] = mse_loss(p.y3d, batch.y3d); break;
      case Task::T2D: result[task] = mse_loss(p.y2d, batch.y2d); break;
      case Task::DM:
      case Task::DMJ:
        require(batch.ydm.defined(), ErrorKind::Data, std::string("batch has no target for task ") + to_string(task));
        result[task] = masked_l1_loss(p.ydm, batch.ydm, T(config_.depth_threshold));
        break;
      case Task::W:
        result[task] = inverse_graphics_loss(out.encoded.inverse_graphics, model_.class_capsules().weights.tensor,
                                             config_.inverse_graphics);
        break;
    }
  }
  return result;
}

template <typename T>
StepResult Trainer<T>::train_step(const Batch<T>& batch) {
  Rng dropout_rng(mix_seed(mix_seed(config_.seed, kDropoutTag), adam_.step));
  const auto task_losses = losses(batch, Mode::Train, &dropout_rng);
  const auto total = total_loss(weights_, task_losses);
  const auto params = parameters();
  total.backward();
  // Parameters outside every enabled path still take a (zero) Adam step.
  for (const auto& p : params)
    if (!p.tensor.has_grad()) p.tensor.node()->grad_buffer();
  adam_step(params, adam_, config_);
  for (const auto& p : params) assert_finite(p.tensor, "parameter " + p.name + " after step " + std::to_string(adam_.step));

  StepResult r;
  r.loss_total = double(total.item());
  for (const auto& [task, l] : task_losses) r.losses[task] = double(l.item());
  return r;
}

template <typename T>
std::vector<std::size_t> Trainer<T>::epoch_order(const std::vector<std::size_t>& indices, std::size_t epoch) const {
  std::vector<std::size_t> order = indices;
  Rng rng(mix_seed(mix_seed(config_.seed, kShuffleTag), epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

template <typename T>
std::vector<EpochLog> Trainer<T>::fit(const Dataset& data, const std::vector<std::size_t>& indices,
                                      const std::function<void(const EpochLog&)>& on_epoch) {
  require(!indices.empty(), ErrorKind::Data, "training set is empty");
  const std::size_t bs = config_.batch_size;
  const std::size_t per_epoch = (indices.size() + bs - 1) / bs;
  std::size_t last = config_.epochs * per_epoch;
  if (config_.max_steps > 0) last = std::min(last, config_.max_steps);

  std::vector<EpochLog> logs;
  EpochLog log;
  std::vector<std::size_t> order;
  std::size_t order_epoch = SIZE_MAX;
  auto start = std::chrono::steady_clock::now();
  auto flush = [&] {
    if (log.steps == 0) return;
    const double n = double(log.steps);
    log.loss_total /= n;
    for (auto& [_, v] : log.loss_per_task) v /= n;
    for (std::size_t i = 0; i < weights_.tasks.size(); ++i)
      log.s_per_task[to_string(weights_.tasks[i])] = double(weights_.s[i].tensor.item());
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (on_epoch) on_epoch(log);
    logs.push_back(log);
  };

  while (adam_.step < last) {
    const std::size_t step = adam_.step, epoch = step / per_epoch, pos = step % per_epoch;
    if (epoch != order_epoch) {
      flush();
      log = EpochLog{};
      log.epoch = epoch;
      start = std::chrono::steady_clock::now();
      order = epoch_order(indices, epoch);
      order_epoch = epoch;
    }
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(pos * bs);
    const auto end = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), (pos + 1) * bs));
    const auto batch = make_batch<T>(data, std::vector<std::size_t>(first, end), model_config_);
    const auto r = train_step(batch);
    ++log.steps;
    log.loss_total += r.loss_total;
    for (const auto& [task, v] : r.losses) log.loss_per_task[to_string(task)] += v;
  }
  flush();
  return logs;
}

PointSet ground_truth(const Dataset& data, const std::vector<std::size_t>& indices) {
  const std::size_t j = data.joints();
  PointSet gt(static_cast<Eigen::Index>(indices.size() * j), 3);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& s = data.samples.at(indices[n]);
    for (std::size_t k = 0; k < 3 * j; ++k) gt.data()[n * 3 * j + k] = s.joints3d[k];
  }
  return gt;
}

template <typename T>
Evaluation evaluate(const DecaModel<T>& model, const Dataset& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size) {
  require(!indices.empty(), ErrorKind::Data, "nothing to evaluate: the sample selection is empty");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be at least 1");
  const std::size_t j = model.config().joints;
  require(data.joints() == j, ErrorKind::Config,
          "checkpoint has " + std::to_string(j) + " joints but the dataset has " + std::to_string(data.joints()));
  NoGradGuard no_grad;
  Evaluation ev;
  ev.indices = indices;
  ev.gt = ground_truth(data, indices);
  ev.pred.resize(ev.gt.rows(), 3);
  ev.entities.reserve(indices.size() * j * 16);
  for (std::size_t first = 0; first < indices.size(); first += batch_size) {
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(first),
                                         indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), first + batch_size)));
    const auto batch = make_batch<T>(data, chunk, model.config());
    const auto enc = model.encode(batch.input);
    const auto pred = model.decode(enc.entities, Mode::Eval, nullptr);
    const auto y = pred.y3d.data();
    for (std::size_t k = 0; k < y.size(); ++k) ev.pred.data()[first * j * 3 + k] = double(y[k]);
    for (T v : enc.entities.data()) ev.entities.push_back(double(v));
  }
  ev.report = compute_report(ev.pred, ev.gt, data.manifest.joint_names, ev.entities);
  return ev;
}

PointSet mean_pose_baseline(const Dataset& data, const std::vector<std::size_t>& reference,
                            const std::vector<std::size_t>& targets) {
  require(!reference.empty() && !targets.empty(), ErrorKind::Data, "mean-pose baseline needs samples");
  const std::size_t j = data.joints();
  std::vector<Vec3> mean(j, Vec3::Zero());
  for (std::size_t i : reference) {
    const auto& s = data.samples.at(i);
    for (std::size_t k = 0; k < j; ++k)
      mean[k] += s.camera.to_world(Vec3(s.joints3d[3 * k], s.joints3d[3 * k + 1], s.joints3d[3 * k + 2]));
  }
  for (auto& p : mean) p /= double(reference.size());
  PointSet out(static_cast<Eigen::Index>(targets.size() * j), 3);
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const auto& cam = data.samples.at(targets[n]).camera;
    for (std::size_t k = 0; k < j; ++k) out.row(static_cast<Eigen::Index>(n * j + k)) = cam.to_camera(mean[k]).transpose();
  }
  return out;
}

template void adam_step(const ParameterList<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step(const ParameterList<double>&, AdamState<double>&, const TrainConfig&);
template class Trainer<float>;
template class Trainer<double>;
template Evaluation evaluate(const DecaModel<float>&, const Dataset&, const std::vector<std::size_t>&, std::size_t);
template Evaluation evaluate(const DecaModel<double>&, const Dataset&, const std::vector<std::size_t>&, std::size_t);

}  // namespace deca
