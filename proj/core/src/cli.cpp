#include "dim3d/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include "dim3d/dataset.hpp"
#include "dim3d/diffusion.hpp"
#include "dim3d/io.hpp"
#include "dim3d/metrics.hpp"
#include "dim3d/model.hpp"
#include "dim3d/profiler.hpp"
#include "dim3d/train.hpp"

namespace dim3d::cli {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Replaces "--config FILE" with the file's key=value pairs as --key value
// tokens right after the subcommand, so explicit flags (later on the line)
// override the file and later file keys override earlier ones.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string config_path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + i);
      break;
    }
  }
  if (config_path.empty()) return args;
  const auto kv = io::read_config_file(config_path);
  std::vector<std::string> tokens;
  for (const auto& [k, v] : kv) {
    tokens.push_back("--" + k);
    tokens.push_back(v);
  }
  if (args.empty()) return tokens;
  std::vector<std::string> out;
  out.push_back(args[0]);  // subcommand first
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io::IoError(io::IoError::Code::Io, "cannot write " + path);
  out << text;
}

std::vector<PointCloud> read_cloud_dir(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".pcb")
      names.push_back(entry.path().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty())
    throw io::IoError(io::IoError::Code::Io,
                      "no .pcb point clouds found in " + dir);
  std::vector<PointCloud> clouds;
  clouds.reserve(names.size());
  for (const auto& n : names) clouds.push_back(io::read_point_cloud(n));
  return clouds;
}

std::vector<std::string> read_class_names(const std::string& data_dir,
                                          int num_classes) {
  std::vector<std::string> names;
  std::ifstream in(fs::path(data_dir) / "classes.txt");
  std::string line;
  while (in && std::getline(in, line))
    if (!line.empty()) names.push_back(line);
  while (static_cast<int>(names.size()) < num_classes)
    names.push_back("class" + std::to_string(names.size()));
  names.resize(num_classes);
  return names;
}

struct GenDataArgs {
  std::string classes = "sphere";
  int clouds = 8;
  int points = 128;
  double jitter = 0.0;
  uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  DatasetSpec spec;
  spec.classes = split_list(a.classes);
  spec.clouds_per_class = a.clouds;
  spec.points_per_cloud = a.points;
  spec.jitter = a.jitter;
  spec.seed = a.seed;
  gen_data(spec, a.out);
  std::string names;
  for (const auto& c : spec.classes) names += c + "\n";
  write_text_file((fs::path(a.out) / "classes.txt").string(), names);
  std::cout << "wrote " << spec.classes.size() * spec.clouds_per_class
            << " clouds to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string model_size = "S";
  int patch = 4;
  int voxel = 32;
  int steps = 2000;
  int batch = 8;
  double lr = 1e-4;
  int ckpt_every = 0;
  int diffusion_steps = 1000;
  double p_uncond = 0.1;
  uint64_t seed = 0;
  std::string out = ".";
};

int cmd_train(const TrainArgs& a) {
  std::vector<PointCloud> raw = load_dataset(a.data);
  int num_classes = 1;
  for (const auto& c : raw)
    if (c.class_id) num_classes = std::max(num_classes, *c.class_id + 1);
  const std::vector<std::string> class_names =
      read_class_names(a.data, num_classes);

  auto [normalized, stats] = normalize_dataset(raw);
  DiMConfig cfg =
      DiMConfig::preset(a.model_size, a.patch, a.voxel, num_classes);
  ModelParams params = ModelParams::init(cfg, a.seed);

  TrainOptions opt;
  opt.steps = a.steps;
  opt.batch = a.batch;
  opt.lr = a.lr;
  opt.p_uncond = a.p_uncond;
  opt.diffusion_steps = a.diffusion_steps;
  opt.seed = a.seed;
  Trainer trainer(std::move(params), std::move(normalized), stats, opt);

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "loss.csv",
                    std::ios::binary | std::ios::trunc);
  if (!log)
    throw io::IoError(io::IoError::Code::Io,
                      "cannot write loss log in " + a.out);
  log << "step,loss\n";
  const int points = static_cast<int>(trainer.data().front().size());
  char buf[64];
  for (int step = 1; step <= a.steps; ++step) {
    const double loss = trainer.step();
    std::snprintf(buf, sizeof buf, "%d,%.17g\n", step, loss);
    log << buf;
    if (a.ckpt_every > 0 && step % a.ckpt_every == 0) {
      std::snprintf(buf, sizeof buf, "ckpt_%06d.ckpt", step);
      io::save_checkpoint((fs::path(a.out) / buf).string(),
                          trainer.to_checkpoint(class_names, points));
    }
  }
  io::save_checkpoint((fs::path(a.out) / "ckpt_final.ckpt").string(),
                      trainer.to_checkpoint(class_names, points));
  std::cout << "trained " << a.steps << " steps; checkpoints in " << a.out
            << "\n";
  return 0;
}

struct SampleArgs {
  std::string ckpt;
  int num = 1;
  std::string class_spec;  // empty = unconditional
  double guidance = 1.5;
  uint64_t seed = 0;
  std::string out = ".";
};

int cmd_sample(const SampleArgs& a) {
  SamplerBundle bundle = sampler_from_checkpoint(io::load_checkpoint(a.ckpt));
  std::optional<int> y;
  if (!a.class_spec.empty()) {
    try {
      y = std::stoi(a.class_spec);
    } catch (const std::exception&) {
      const auto it = std::find(bundle.class_names.begin(),
                                bundle.class_names.end(), a.class_spec);
      if (it == bundle.class_names.end())
        throw std::runtime_error("--class '" + a.class_spec +
                                 "' is neither an id nor a known class name");
      y = static_cast<int>(it - bundle.class_names.begin());
    }
  }
  SamplerConfig cfg;
  cfg.guidance = a.guidance;
  cfg.seed = a.seed;
  const auto clouds = sample(bundle.params, a.num, y, bundle.schedule, cfg,
                             bundle.stats, bundle.points_per_cloud);
  fs::create_directories(a.out);
  char name[64];
  for (size_t i = 0; i < clouds.size(); ++i) {
    std::snprintf(name, sizeof name, "sample_%03zu.pcb", i);
    io::write_point_cloud((fs::path(a.out) / name).string(), clouds[i]);
  }
  std::cout << "wrote " << clouds.size() << " samples to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string gen_dir, ref_dir;
  std::string metric = "both";
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const bool with_cd = a.metric == "cd" || a.metric == "both";
  const bool with_emd = a.metric == "emd" || a.metric == "both";
  const auto gen = read_cloud_dir(a.gen_dir);
  const auto ref = read_cloud_dir(a.ref_dir);
  const MetricsReport report = evaluate_sets(gen, ref, with_cd, with_emd);
  const std::string text = report.text() + MetricsReport::csv_header() + "\n" +
                           report.csv_row() + "\n";
  std::cout << text;
  if (!a.out.empty()) write_text_file(a.out, text);
  return 0;
}

struct FlopsArgs {
  std::string model_size = "S";
  int patch = 4;
  int voxel = 32;
  std::string out;
};

int cmd_flops(const FlopsArgs& a) {
  DiMConfig cfg = DiMConfig::preset(a.model_size, a.patch, a.voxel, 1);
  const prof::ScalingReport report = prof::scaling_report({cfg}, {a.voxel});
  std::cout << report.csv();
  if (!a.out.empty()) write_text_file(a.out, report.csv());
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"dim3d: bidirectional state-space diffusion over voxelized "
               "point clouds"};
  app.require_subcommand(1);
  const auto last = CLI::MultiOptionPolicy::TakeLast;
  std::function<int()> action;

  GenDataArgs gd;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--classes", gd.classes,
                  "comma list of sphere,box,torus,cylinder")
      ->multi_option_policy(last);
  gen->add_option("--clouds", gd.clouds, "clouds per class")
      ->multi_option_policy(last);
  gen->add_option("--points", gd.points, "points per cloud (>= 8)")
      ->multi_option_policy(last);
  gen->add_option("--jitter", gd.jitter, "Gaussian jitter sigma")
      ->multi_option_policy(last);
  gen->add_option("--seed", gd.seed, "RNG seed")->multi_option_policy(last);
  gen->add_option("--out", gd.out, "output directory")
      ->required()
      ->multi_option_policy(last);
  gen->callback([&]() { action = [&gd]() { return cmd_gen_data(gd); }; });

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train a noise predictor");
  train->add_option("--data", tr.data, "dataset directory (manifest.csv)")
      ->required()
      ->multi_option_policy(last);
  train->add_option("--model-size", tr.model_size, "S, B, L or XL")
      ->check(CLI::IsMember({"S", "B", "L", "XL"}))
      ->multi_option_policy(last);
  train->add_option("--patch", tr.patch, "patch size (2, 4 or 8)")
      ->check(CLI::IsMember({2, 4, 8}))
      ->multi_option_policy(last);
  train->add_option("--voxel", tr.voxel, "voxel resolution")
      ->multi_option_policy(last);
  train->add_option("--steps", tr.steps, "optimizer steps")
      ->multi_option_policy(last);
  train->add_option("--batch", tr.batch, "batch size")
      ->multi_option_policy(last);
  train->add_option("--lr", tr.lr, "Adam learning rate")
      ->multi_option_policy(last);
  train->add_option("--ckpt-every", tr.ckpt_every,
                    "checkpoint every k steps (0 = final only)")
      ->multi_option_policy(last);
  train->add_option("--diffusion-steps", tr.diffusion_steps,
                    "number of diffusion steps T")
      ->multi_option_policy(last);
  train->add_option("--p-uncond", tr.p_uncond,
                    "conditioning drop probability")
      ->multi_option_policy(last);
  train->add_option("--seed", tr.seed, "RNG seed")->multi_option_policy(last);
  train->add_option("--out", tr.out, "output directory")
      ->multi_option_policy(last);
  train->callback([&]() { action = [&tr]() { return cmd_train(tr); }; });

  SampleArgs sa;
  CLI::App* smp = app.add_subcommand("sample", "sample point clouds");
  smp->add_option("--ckpt", sa.ckpt, "checkpoint file")
      ->required()
      ->multi_option_policy(last);
  smp->add_option("--num", sa.num, "number of clouds")
      ->multi_option_policy(last);
  smp->add_option("--class", sa.class_spec, "class id or name")
      ->multi_option_policy(last);
  smp->add_option("--guidance", sa.guidance, "guidance scale w")
      ->multi_option_policy(last);
  smp->add_option("--seed", sa.seed, "RNG seed")->multi_option_policy(last);
  smp->add_option("--out", sa.out, "output directory")
      ->multi_option_policy(last);
  smp->callback([&]() { action = [&sa]() { return cmd_sample(sa); }; });

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "compare generated vs reference");
  eval->add_option("--gen-dir", ev.gen_dir, "generated clouds directory")
      ->required()
      ->multi_option_policy(last);
  eval->add_option("--ref-dir", ev.ref_dir, "reference clouds directory")
      ->required()
      ->multi_option_policy(last);
  eval->add_option("--metric", ev.metric, "cd, emd or both")
      ->check(CLI::IsMember({"cd", "emd", "both"}))
      ->multi_option_policy(last);
  eval->add_option("--out", ev.out, "also write the report to this file")
      ->multi_option_policy(last);
  eval->callback([&]() { action = [&ev]() { return cmd_eval(ev); }; });

  FlopsArgs fl;
  CLI::App* flops = app.add_subcommand("flops", "analytic cost report");
  flops->add_option("--model-size", fl.model_size, "S, B, L or XL")
      ->check(CLI::IsMember({"S", "B", "L", "XL"}))
      ->multi_option_policy(last);
  flops->add_option("--patch", fl.patch, "patch size (2, 4 or 8)")
      ->check(CLI::IsMember({2, 4, 8}))
      ->multi_option_policy(last);
  flops->add_option("--voxel", fl.voxel, "voxel resolution")
      ->multi_option_policy(last);
  flops->add_option("--out", fl.out, "also write the CSV to this file")
      ->multi_option_policy(last);
  flops->callback([&]() { action = [&fl]() { return cmd_flops(fl); }; });

  try {
    std::vector<std::string> expanded = expand_config(args);
    std::reverse(expanded.begin(), expanded.end());
    app.parse(expanded);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_name() == "CallForHelp" ? 0 : 2;
  } catch (const io::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  try {
    return action ? action() : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dim3d::cli
