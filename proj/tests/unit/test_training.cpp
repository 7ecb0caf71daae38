#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "deca/checkpoint.hpp"
#include "deca/config.hpp"
#include "deca/error.hpp"
#include "deca/training.hpp"
#include "doctest.h"
#include "temp_dir.hpp"
#include "test_util.hpp"
#include "tiny_model.hpp"

using namespace deca;
using deca::testing::TempDir;
using deca::testing::tiny_config;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Dataset tiny_dataset(const TempDir& dir, std::size_t poses = 6, Domain domain = Domain::Depth) {
  GenerateOptions opt;
  opt.num_poses = poses;
  opt.joints = 3;
  opt.width = opt.height = 16;
  opt.domain = domain;
  opt.seed = 4;
  generate_synthetic(opt, dir.path());
  return load_dataset(dir.path());
}

TrainConfig fast_train() {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.batch_size = 4;
  t.epochs = 2;
  t.seed = 3;
  return t;
}

std::vector<std::size_t> all(const Dataset& d) {
  std::vector<std::size_t> idx(d.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

bool same_parameters(const ParameterList<float>& a, const ParameterList<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].tensor.data(), y = b[i].tensor.data();
    if (a[i].name != b[i].name || !std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam step") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  auto p = make_parameter<double>("p", Tensor<double>::full({1}, 0.5));
  AdamState<double> state;
  CHECK_THROWS_AS(adam_step<double>({p}, state, cfg), Error);

  auto loss = mul_scalar(sum(p.tensor), 1.0);  // dL/dp = 1
  loss.backward();
  adam_step<double>({p}, state, cfg);
  // Bias-corrected moments are both 1, so the step is lr / (1 + eps).
  CHECK(std::abs(p.tensor.item() - (0.5 - 1e-3 / (1.0 + 1e-8))) < 1e-12);
  CHECK(p.tensor.grad()[0] == 0.0);
  CHECK(state.step == 1);

  auto q = make_parameter<double>("q", Tensor<double>::full({3}, 2.0));
  q.tensor.node()->grad_buffer();
  AdamState<double> zero_state;
  for (int i = 0; i < 5; ++i) adam_step<double>({q}, zero_state, cfg);
  for (double v : q.tensor.data()) CHECK(v == 2.0);

  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("adam closed form over several steps") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  auto p = make_parameter<double>("p", Tensor<double>::full({1}, 0.0));
  AdamState<double> state;
  double m = 0, v = 0, x = 0;
  const double grads[] = {1.0, -2.0, 0.5, 3.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    mul_scalar(sum(p.tensor), g).backward();
    adam_step<double>({p}, state, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(std::abs(p.tensor.item() - x) < 1e-12);
  }
}

TEST_CASE("training is deterministic and logs the variant's tasks") {
  TempDir dir("train_det");
  const auto data = tiny_dataset(dir);
  const auto idx = all(data);
  Trainer<float> a(tiny_config(Variant::D3), fast_train()), b(tiny_config(Variant::D3), fast_train());
  std::vector<EpochLog> seen;
  const auto logs = a.fit(data, idx, [&](const EpochLog& l) { seen.push_back(l); });
  b.fit(data, idx);
  CHECK(same_parameters(a.parameters(), b.parameters()));
  REQUIRE(logs.size() == 2);
  CHECK(seen.size() == 2);
  CHECK(logs[0].steps == 3);
  CHECK(a.step() == 6);
  std::set<std::string> tasks;
  for (const auto& [t, _] : logs[0].loss_per_task) tasks.insert(t);
  CHECK(tasks == std::set<std::string>{"3D", "2D", "W"});
  CHECK(logs[1].s_per_task.size() == 3);
  const auto doc = logs[0].to_json();
  for (const char* key : {"epoch", "loss_total", "loss_per_task", "s_per_task", "wall_ms"}) CHECK(doc.contains(key));

  auto other = fast_train();
  other.seed = 4;
  Trainer<float> c(tiny_config(Variant::D3), other);
  c.fit(data, idx);
  CHECK(!same_parameters(a.parameters(), c.parameters()));
}

TEST_CASE("zero epochs leave the initialization; unused heads never change") {
  TempDir dir("train_zero");
  const auto data = tiny_dataset(dir);
  auto cfg = fast_train();
  cfg.epochs = 0;
  Trainer<float> t(tiny_config(Variant::D1), cfg);
  const DecaModel<float> init(tiny_config(Variant::D1), cfg.seed);
  t.fit(data, all(data));
  CHECK(t.step() == 0);
  CHECK(same_parameters(t.model().parameters(), init.parameters()));

  // D1 has no W task: the inverse-graphics matrix gets zero gradient.
  cfg.epochs = 2;
  Trainer<float> d1(tiny_config(Variant::D1), cfg);
  const auto before = std::vector<float>(d1.model().class_capsules().inverse_graphics.tensor.data().begin(),
                                         d1.model().class_capsules().inverse_graphics.tensor.data().end());
  d1.fit(data, all(data));
  const auto after = d1.model().class_capsules().inverse_graphics.tensor.data();
  CHECK(std::equal(before.begin(), before.end(), after.begin(), after.end()));
}

TEST_CASE("epoch order is a seeded permutation") {
  Trainer<float> t(tiny_config(), fast_train());
  const std::vector<std::size_t> idx{3, 5, 7, 9, 11, 13};
  const auto e0 = t.epoch_order(idx, 0), e1 = t.epoch_order(idx, 1);
  CHECK(std::is_permutation(e0.begin(), e0.end(), idx.begin()));
  CHECK(e0 == t.epoch_order(idx, 0));
  CHECK(e0 != e1);
}

TEST_CASE("dm task needs matching data; joint mismatch is a config error") {
  TempDir dir("train_dm");
  const auto depth = tiny_dataset(dir);
  Trainer<float> r4(tiny_config(Variant::R4), fast_train());
  try {
    r4.fit(depth, all(depth));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }

  TempDir rgb_dir("train_rgb");
  const auto rgb = tiny_dataset(rgb_dir, 4, Domain::Rgb);
  for (Variant v : {Variant::R4, Variant::H4}) {
    Trainer<float> t(tiny_config(v), fast_train());
    const auto logs = t.fit(rgb, all(rgb));
    CHECK(logs.back().loss_per_task.size() == 4);
    CHECK(std::isfinite(logs.back().loss_total));
  }

  auto c = tiny_config();
  c.joints = 4;
  c.encoder_channels.back() = 34;
  const DecaModel<float> wrong(c, 1);
  try {
    evaluate(wrong, depth, all(depth));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("evaluate agrees with the metric functions") {
  TempDir dir("train_eval");
  const auto data = tiny_dataset(dir);
  Trainer<float> t(tiny_config(), fast_train());
  t.fit(data, all(data));
  const auto top = data.select(View::Top);
  const auto ev = evaluate(t.model(), data, top, 4);
  CHECK(ev.indices == top);
  CHECK(ev.report.samples == top.size());
  CHECK(ev.report.mpjpe_mm == mpjpe_mm(ev.pred, ground_truth(data, top)));
  CHECK(ev.entities.size() == top.size() * 3 * 16);
  // Batch size does not change the predictions.
  const auto ev1 = evaluate(t.model(), data, top, 1);
  CHECK((ev1.pred - ev.pred).cwiseAbs().maxCoeff() < 1e-5);
  const auto base = mean_pose_baseline(data, data.select(View::Front), top);
  CHECK(base.rows() == ev.pred.rows());
}

TEST_CASE("mean pose baseline maps the mean world pose into each camera") {
  TempDir dir("train_base");
  const auto data = tiny_dataset(dir, 4);
  const auto front = data.select(View::Front);
  const auto b = mean_pose_baseline(data, front, front);
  // Front cameras are identical, so the baseline equals the mean camera-frame pose.
  for (std::size_t k = 0; k < 9; ++k) {
    double mean = 0;
    for (std::size_t i : front) mean += data.samples[i].joints3d[k];
    CHECK(std::abs(b.data()[k] - mean / 4) < 1e-12);
  }
}

TEST_CASE("config json round trip and validation") {
  RunConfig c;
  c.model = tiny_config(Variant::H4);
  c.model.routing.coordinate_addition = true;
  c.train.learning_rate = 3e-4;
  c.train.seed = 17;
  c.train.inverse_graphics = InverseGraphicsMode::PaperLiteral;
  const auto doc = to_json(c);
  const auto back = run_config_from_json(doc);
  CHECK(to_json(back) == doc);
  // The rebuilt config constructs an identical model.
  const DecaModel<float> m1(c.model, 5), m2(back.model, 5);
  CHECK(same_parameters(m1.parameters(), m2.parameters()));

  CHECK(run_config_from_json(nlohmann::json::object()).model.variant == Variant::D3);
  for (const char* bad : {R"({"lr": 0.1})", R"({"routing": {"iters": 2}})", R"({"batch_size": "x"})",
                          R"({"variant": "D9"})", R"({"batch_size": 0})"}) {
    try {
      run_config_from_json(nlohmann::json::parse(bad));
      FAIL("expected an error for " << bad);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
    }
  }

  setenv("DECA_SEED", "123", 1);
  apply_env_overrides(c);
  CHECK(c.train.seed == 123);
  setenv("DECA_SEED", "12x", 1);
  CHECK_THROWS_AS(apply_env_overrides(c), Error);
  unsetenv("DECA_SEED");
  apply_env_overrides(c);
  CHECK(c.train.seed == 123);
}

TEST_CASE("checkpoint round trip, faults and resume") {
  TempDir dir("ckpt"), data_dir("ckpt_data");
  const auto data = tiny_dataset(data_dir);
  const auto idx = all(data);
  auto cfg = fast_train();
  cfg.max_steps = 4;
  Trainer<float> t(tiny_config(), cfg);
  t.fit(data, idx);
  save_checkpoint(t, dir / "a", {{"train_view", "front"}});

  auto loaded = load_checkpoint(dir / "a");
  CHECK(same_parameters(loaded.trainer->parameters(), t.parameters()));
  CHECK(loaded.trainer->step() == 4);
  CHECK(loaded.metadata.at("train_view") == "front");
  save_checkpoint(*loaded.trainer, dir / "b", loaded.metadata);
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(slurp(dir / "a" / "params.f32") == slurp(dir / "b" / "params.f32"));

  // Resuming for the remaining steps matches the uninterrupted run bitwise.
  auto full_cfg = cfg;
  full_cfg.max_steps = 5;
  Trainer<float> full(tiny_config(), full_cfg);
  full.fit(data, idx);
  auto cont = load_checkpoint(dir / "a");
  cont.trainer->set_max_steps(5);
  cont.trainer->fit(data, idx);
  CHECK(cont.trainer->step() == 5);
  CHECK(same_parameters(cont.trainer->parameters(), full.parameters()));

  // Truncated blob.
  std::filesystem::copy(dir / "a", dir / "trunc");
  std::filesystem::resize_file(dir / "trunc" / "params.f32", std::filesystem::file_size(dir / "a" / "params.f32") - 4);
  try {
    load_checkpoint(dir / "trunc");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TruncatedBlob);
    CHECK(std::string(e.category()) == "truncated_blob");
  }

  // Version mismatch.
  std::filesystem::copy(dir / "a", dir / "ver");
  {
    auto doc = nlohmann::json::parse(slurp(dir / "ver" / "manifest.json"));
    doc["format_version"] = 99;
    std::ofstream(dir / "ver" / "manifest.json") << doc.dump();
  }
  try {
    load_checkpoint(dir / "ver");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::VersionMismatch);
  }

  // Shape table that disagrees with the config.
  std::filesystem::copy(dir / "a", dir / "shape");
  {
    auto doc = nlohmann::json::parse(slurp(dir / "shape" / "manifest.json"));
    doc["config"]["decoder_hidden"] = 9;
    std::ofstream(dir / "shape" / "manifest.json") << doc.dump();
  }
  try {
    load_checkpoint(dir / "shape");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), Error);
}
