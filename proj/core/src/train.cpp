#include "dim3d/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace dim3d {

Adam::Adam(ModelParams& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  params_.for_each_param([this](const std::string& name, Tensor& t) {
    m_[name].assign(t.numel(), 0.0);
    v_[name].assign(t.numel(), 0.0);
  });
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
  params_.for_each_param([this, bc1, bc2](const std::string& name, Tensor& t) {
    if (!t.has_grad()) return;  // parameter unused this step
    auto& m = m_[name];
    auto& v = v_[name];
    auto g = t.grad();
    auto p = t.raw();
    for (int64_t i = 0; i < t.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    t.zero_grad();
  });
}

Trainer::Trainer(ModelParams params, std::vector<PointCloud> normalized_data,
                 NormalizationStats stats, TrainOptions opt)
    : params_(std::move(params)),
      data_(std::move(normalized_data)),
      stats_(stats),
      options_(opt),
      sched_(make_schedule(opt.diffusion_steps)),
      opt_(params_, AdamConfig{opt.lr, 0.9, 0.999, 1e-8}),
      pool_(opt.seed) {
  if (data_.empty()) throw std::invalid_argument("trainer needs data");
  params_.set_requires_grad(true);
}

double Trainer::step() {
  const int64_t n = static_cast<int64_t>(data_.size());
  std::vector<int64_t> batch;
  if (options_.batch >= n) {
    batch.resize(n);
    for (int64_t i = 0; i < n; ++i) batch[i] = i;
  } else {
    // Partial Fisher-Yates draw without replacement.
    std::vector<int64_t> ids(n);
    for (int64_t i = 0; i < n; ++i) ids[i] = i;
    Rng& rng = pool_.stream("train.batch");
    for (int i = 0; i < options_.batch; ++i) {
      const int64_t j = i + static_cast<int64_t>(rng.uniform_index(n - i));
      std::swap(ids[i], ids[j]);
      batch.push_back(ids[i]);
    }
  }

  Tensor total = Tensor::scalar(0.0);
  for (int64_t idx : batch) {
    const PointCloud& cloud = data_[idx];
    Tensor loss = loss_simple(params_, cloud.points, cloud.class_id, sched_,
                              options_.p_uncond, pool_);
    total = add(total, loss);
  }
  Tensor batch_loss = scale(total, 1.0 / static_cast<double>(batch.size()));
  const double value = batch_loss.item();
  backward(batch_loss);
  opt_.step();
  return value;
}

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& cfg_get(const std::map<std::string, std::string>& cfg,
                           const std::string& key) {
  auto it = cfg.find(key);
  if (it == cfg.end())
    throw io::IoError(io::IoError::Code::BadValue,
                      "checkpoint is missing config key '" + key + "'");
  return it->second;
}

Tensor rng_snapshot_tensor(const Rng::Snapshot& s) {
  std::vector<double> v(6);
  for (int i = 0; i < 4; ++i) std::memcpy(&v[i], &s.state[i], 8);
  v[4] = s.has_spare ? 1.0 : 0.0;
  v[5] = s.spare;
  return Tensor::from({6}, std::move(v));
}

Rng::Snapshot rng_snapshot_from_tensor(const Tensor& t) {
  Rng::Snapshot s{};
  for (int i = 0; i < 4; ++i) std::memcpy(&s.state[i], &t.data()[i], 8);
  s.has_spare = t.data()[4] != 0.0;
  s.spare = t.data()[5];
  return s;
}

DiMConfig config_from_map(const std::map<std::string, std::string>& cfg) {
  DiMConfig c;
  c.size_tag = cfg_get(cfg, "model.size_tag");
  c.layers = std::stoi(cfg_get(cfg, "model.layers"));
  c.hidden = std::stoi(cfg_get(cfg, "model.hidden"));
  c.patch = std::stoi(cfg_get(cfg, "model.patch"));
  c.voxel = std::stoi(cfg_get(cfg, "model.voxel"));
  c.state_size = std::stoi(cfg_get(cfg, "model.state_size"));
  c.expand = std::stoi(cfg_get(cfg, "model.expand"));
  c.conv_width = std::stoi(cfg_get(cfg, "model.conv_width"));
  c.num_classes = std::stoi(cfg_get(cfg, "model.num_classes"));
  c.channels = std::stoi(cfg_get(cfg, "model.channels"));
  c.validate();
  return c;
}

ModelParams params_from_checkpoint(const io::CheckpointData& data,
                                   const DiMConfig& cfg) {
  ModelParams params = ModelParams::init(cfg, 0);
  params.for_each_param([&data](const std::string& name, Tensor& t) {
    const Tensor* stored = data.find("param/" + name);
    if (!stored)
      throw io::IoError(io::IoError::Code::BadValue,
                        "checkpoint is missing parameter '" + name + "'");
    if (stored->shape() != t.shape())
      throw io::IoError(io::IoError::Code::BadValue,
                        "checkpoint parameter '" + name + "' has shape " +
                            shape_str(stored->shape()) + ", expected " +
                            shape_str(t.shape()));
    std::copy(stored->data().begin(), stored->data().end(), t.raw().begin());
  });
  return params;
}

NormalizationStats stats_from_map(
    const std::map<std::string, std::string>& cfg) {
  NormalizationStats stats;
  stats.mean = {std::stod(cfg_get(cfg, "norm.mean_x")),
                std::stod(cfg_get(cfg, "norm.mean_y")),
                std::stod(cfg_get(cfg, "norm.mean_z"))};
  stats.scale = std::stod(cfg_get(cfg, "norm.scale"));
  return stats;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

io::CheckpointData Trainer::to_checkpoint(
    const std::vector<std::string>& class_names, int points_per_cloud) {
  io::CheckpointData data;
  auto& cfg = data.config;
  const DiMConfig& c = params_.cfg;
  cfg["model.size_tag"] = c.size_tag;
  cfg["model.layers"] = std::to_string(c.layers);
  cfg["model.hidden"] = std::to_string(c.hidden);
  cfg["model.patch"] = std::to_string(c.patch);
  cfg["model.voxel"] = std::to_string(c.voxel);
  cfg["model.state_size"] = std::to_string(c.state_size);
  cfg["model.expand"] = std::to_string(c.expand);
  cfg["model.conv_width"] = std::to_string(c.conv_width);
  cfg["model.num_classes"] = std::to_string(c.num_classes);
  cfg["model.channels"] = std::to_string(c.channels);
  cfg["diffusion.steps"] = std::to_string(options_.diffusion_steps);
  cfg["data.points"] = std::to_string(points_per_cloud);
  std::string joined;
  for (const auto& n : class_names) joined += (joined.empty() ? "" : ",") + n;
  cfg["data.classes"] = joined;
  cfg["norm.mean_x"] = fmt_g17(stats_.mean[0]);
  cfg["norm.mean_y"] = fmt_g17(stats_.mean[1]);
  cfg["norm.mean_z"] = fmt_g17(stats_.mean[2]);
  cfg["norm.scale"] = fmt_g17(stats_.scale);
  cfg["train.lr"] = fmt_g17(options_.lr);
  cfg["train.p_uncond"] = fmt_g17(options_.p_uncond);
  cfg["train.seed"] = std::to_string(options_.seed);
  cfg["train.batch"] = std::to_string(options_.batch);
  cfg["train.steps"] = std::to_string(options_.steps);

  params_.for_each_param([&data](const std::string& name, Tensor& t) {
    data.tensors.emplace_back("param/" + name, t);
  });
  for (const auto& [name, m] : opt_.moment1())
    data.tensors.emplace_back(
        "adam/m/" + name,
        Tensor::from({static_cast<int64_t>(m.size())}, m));
  for (const auto& [name, v] : opt_.moment2())
    data.tensors.emplace_back(
        "adam/v/" + name,
        Tensor::from({static_cast<int64_t>(v.size())}, v));
  data.tensors.emplace_back(
      "adam/t", Tensor::scalar(static_cast<double>(opt_.step_count())));
  for (const auto& [name, rng] : pool_.streams())
    data.tensors.emplace_back("rng/" + name,
                              rng_snapshot_tensor(rng.snapshot()));
  return data;
}

Trainer Trainer::from_checkpoint(const io::CheckpointData& data,
                                 std::vector<PointCloud> normalized_data) {
  const DiMConfig cfg = config_from_map(data.config);
  TrainOptions opt;
  opt.steps = std::stoi(cfg_get(data.config, "train.steps"));
  opt.batch = std::stoi(cfg_get(data.config, "train.batch"));
  opt.lr = std::stod(cfg_get(data.config, "train.lr"));
  opt.p_uncond = std::stod(cfg_get(data.config, "train.p_uncond"));
  opt.diffusion_steps = std::stoi(cfg_get(data.config, "diffusion.steps"));
  opt.seed = std::stoull(cfg_get(data.config, "train.seed"));

  Trainer trainer(params_from_checkpoint(data, cfg), std::move(normalized_data),
                  stats_from_map(data.config), opt);
  for (auto& [name, m] : trainer.opt_.moment1()) {
    const Tensor* t = data.find("adam/m/" + name);
    if (t && t->numel() == static_cast<int64_t>(m.size()))
      std::copy(t->data().begin(), t->data().end(), m.begin());
  }
  for (auto& [name, v] : trainer.opt_.moment2()) {
    const Tensor* t = data.find("adam/v/" + name);
    if (t && t->numel() == static_cast<int64_t>(v.size()))
      std::copy(t->data().begin(), t->data().end(), v.begin());
  }
  if (const Tensor* t = data.find("adam/t"))
    trainer.opt_.set_step_count(static_cast<int64_t>(t->item()));
  for (const auto& [name, t] : data.tensors) {
    if (name.rfind("rng/", 0) == 0)
      trainer.pool_.stream(name.substr(4))
          .restore(rng_snapshot_from_tensor(t));
  }
  return trainer;
}

SamplerBundle sampler_from_checkpoint(const io::CheckpointData& data) {
  const DiMConfig cfg = config_from_map(data.config);
  SamplerBundle b{params_from_checkpoint(data, cfg),
                  make_schedule(std::stoi(cfg_get(data.config,
                                                  "diffusion.steps"))),
                  stats_from_map(data.config),
                  std::stoi(cfg_get(data.config, "data.points")),
                  split_csv(cfg_get(data.config, "data.classes"))};
  b.params.set_requires_grad(false);
  return b;
}

}  // namespace dim3d
