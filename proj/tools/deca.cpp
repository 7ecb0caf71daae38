// Command-line driver: dataset generation, training, evaluation, viewpoint
// transfer and latent dumps.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "deca/checkpoint.hpp"
#include "deca/config.hpp"
#include "deca/data.hpp"
#include "deca/error.hpp"
#include "deca/training.hpp"

using namespace deca;
using nlohmann::json;

namespace {

std::vector<View> parse_views(const std::string& list) {
  std::vector<View> views;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const View v = parse_view(item);
    require(std::find(views.begin(), views.end(), v) == views.end(), ErrorKind::Config, "duplicate view " + item);
    views.push_back(v);
  }
  require(!views.empty(), ErrorKind::Config, "no views given");
  return views;
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump(2) << "\n";
  require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

std::vector<std::size_t> select(const Dataset& data, View view, const std::string& split) {
  if (split == "all") return data.select(view);
  return data.select(view, parse_split(split));
}

// A trained view recorded in the checkpoint must agree with --train-view.
void check_train_view(const LoadedCheckpoint& ckpt, View view) {
  if (!ckpt.metadata.contains("train_view")) return;
  const auto recorded = ckpt.metadata.at("train_view").get<std::string>();
  require(recorded == to_string(view), ErrorKind::Config,
          std::string("checkpoint was trained on view ") + recorded + ", not " + to_string(view));
}

int run(int argc, char** argv) {
  CLI::App app{"Capsule autoencoder for multi-view 3D pose estimation"};
  app.require_subcommand(1);

  GenerateOptions gen;
  std::string gen_out, gen_views = "front,top", gen_domain = "depth";
  std::size_t res = 64;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic multi-view pose dataset");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--num", gen.num_poses, "Number of poses")->default_val(10);
  gen_cmd->add_option("--views", gen_views, "Comma-separated views: front, top, free")->default_val("front,top");
  gen_cmd->add_option("--joints", gen.joints, "Joint count (1-15)")->default_val(15);
  gen_cmd->add_option("--res", res, "Square image resolution")->default_val(64);
  gen_cmd->add_option("--domain", gen_domain, "depth or rgb")->default_val("depth");
  gen_cmd->add_option("--seed", gen.seed, "Generation seed")->default_val(0);
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "Fraction of poses in the test split")->default_val(0.2);

  std::string cfg_path, data_dir, train_view, ckpt_out, log_path;
  auto* train_cmd = app.add_subcommand("train", "Train a model on one view's training split");
  train_cmd->add_option("--config", cfg_path, "JSON run configuration")->required();
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--train-view", train_view, "View to train on")->required();
  train_cmd->add_option("--out", ckpt_out, "Checkpoint directory")->required();
  train_cmd->add_option("--log", log_path, "Epoch log (JSON lines); default <out>/train_log.jsonl");

  std::string ckpt_dir, view, report, split, latent_split;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one view");
  eval_cmd->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--view", view, "View to evaluate")->required();
  eval_cmd->add_option("--report", report, "Report file (JSON)")->required();
  eval_cmd->add_option("--split", split, "test, train or all")->default_val("test");

  std::string test_view;
  auto* transfer_cmd = app.add_subcommand("transfer", "Evaluate a model trained on view A on view B");
  transfer_cmd->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  transfer_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  transfer_cmd->add_option("--train-view", train_view, "View the checkpoint was trained on")->required();
  transfer_cmd->add_option("--test-view", test_view, "View to test on")->required();
  transfer_cmd->add_option("--report", report, "Report file (JSON)")->required();

  std::string csv_out;
  auto* latent_cmd = app.add_subcommand("inspect-latent", "Dump per-joint entities as CSV");
  latent_cmd->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  latent_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  latent_cmd->add_option("--out", csv_out, "CSV file")->required();
  latent_cmd->add_option("--view", view, "Restrict to one view");
  latent_cmd->add_option("--split", latent_split, "test, train or all")->default_val("all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage: " << e.what() << "\n";
    return 2;
  }

  if (*gen_cmd) {
    gen.views = parse_views(gen_views);
    gen.width = gen.height = res;
    gen.domain = parse_domain(gen_domain);
    const auto m = generate_synthetic(gen, gen_out);
    std::cout << json{{"samples", m.samples.size()}, {"out", gen_out}}.dump() << "\n";
  } else if (*train_cmd) {
    RunConfig cfg = load_run_config(cfg_path);
    apply_env_overrides(cfg);
    const auto data = load_dataset(data_dir);
    const View v = parse_view(train_view);
    const auto idx = data.select(v, Split::Train);
    require(!idx.empty(), ErrorKind::Data, std::string("no training samples for view ") + train_view);
    Trainer<float> trainer(cfg.model, cfg.train);
    const std::filesystem::path out(ckpt_out);
    std::filesystem::create_directories(out);
    const auto log_file = log_path.empty() ? out / "train_log.jsonl" : std::filesystem::path(log_path);
    std::ofstream log(log_file);
    require(log.good(), ErrorKind::Io, "cannot write " + log_file.string());
    trainer.fit(data, idx, [&](const EpochLog& e) {
      const auto line = e.to_json().dump();
      log << line << "\n" << std::flush;
      std::cout << line << "\n" << std::flush;
    });
    save_checkpoint(trainer, out, {{"train_view", to_string(v)}, {"data", data_dir}});
  } else if (*eval_cmd) {
    const auto ckpt = load_checkpoint(ckpt_dir);
    const auto data = load_dataset(data_dir);
    const auto idx = select(data, parse_view(view), split);
    const auto ev = evaluate(ckpt.trainer->model(), data, idx);
    write_json_file(report, to_json(ev.report));
    std::cout << json{{"mpjpe_mm", ev.report.mpjpe_mm}, {"map_010", ev.report.map_010}}.dump() << "\n";
  } else if (*transfer_cmd) {
    const auto ckpt = load_checkpoint(ckpt_dir);
    const View a = parse_view(train_view), b = parse_view(test_view);
    check_train_view(ckpt, a);
    const auto data = load_dataset(data_dir);
    const auto test = data.select(b, Split::Test);
    const auto ev = evaluate(ckpt.trainer->model(), data, test);
    const auto reference = data.select(a, Split::Train);
    const PointSet baseline = mean_pose_baseline(data, reference, test);
    const double base_mm = mpjpe_mm(baseline, ev.gt);
    const json doc = {{"train_view", to_string(a)},
                      {"test_view", to_string(b)},
                      {"metrics", to_json(ev.report)},
                      {"baseline", {{"mpjpe_mm", base_mm}, {"map_010", map_at_threshold(baseline, ev.gt)}}},
                      {"improvement", 1.0 - ev.report.mpjpe_mm / base_mm}};
    write_json_file(report, doc);
    std::cout << json{{"mpjpe_mm", ev.report.mpjpe_mm}, {"baseline_mpjpe_mm", base_mm}}.dump() << "\n";
  } else if (*latent_cmd) {
    const auto ckpt = load_checkpoint(ckpt_dir);
    const auto data = load_dataset(data_dir);
    std::vector<std::size_t> idx;
    if (view.empty()) {
      for (std::size_t i = 0; i < data.samples.size(); ++i)
        if (latent_split == "all" || data.samples[i].split == parse_split(latent_split)) idx.push_back(i);
    } else {
      idx = select(data, parse_view(view), latent_split);
    }
    const auto ev = evaluate(ckpt.trainer->model(), data, idx);
    std::ofstream out(csv_out);
    require(out.good(), ErrorKind::Io, "cannot write " + csv_out);
    out << "stem,pose_id,view,split,joint_index,joint_name";
    for (int d = 0; d < 16; ++d) out << ",e" << d;
    out << "\n";
    const std::size_t j = data.joints();
    char buf[32];
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto& s = data.samples[idx[n]];
      for (std::size_t k = 0; k < j; ++k) {
        out << s.stem << ',' << s.pose_id << ',' << to_string(s.view) << ',' << to_string(s.split) << ',' << k << ','
            << data.manifest.joint_names[k];
        for (std::size_t d = 0; d < 16; ++d) {
          std::snprintf(buf, sizeof buf, "%.9g", ev.entities[(n * j + k) * 16 + d]);
          out << ',' << buf;
        }
        out << "\n";
      }
    }
    require(out.good(), ErrorKind::Io, "failed writing " + csv_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal: " << e.what() << "\n";
    return 1;
  }
}
