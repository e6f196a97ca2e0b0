#include "dim3d/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dim3d/ssm.hpp"

namespace dim3d {

DiMConfig DiMConfig::preset(const std::string& tag, int patch, int voxel,
                            int num_classes) {
  DiMConfig cfg;
  cfg.size_tag = tag;
  if (tag == "S") {
    cfg.layers = 16;
    cfg.hidden = 384;
  } else if (tag == "B") {
    cfg.layers = 16;
    cfg.hidden = 768;
  } else if (tag == "L") {
    cfg.layers = 32;
    cfg.hidden = 1024;
  } else if (tag == "XL") {
    cfg.layers = 36;
    cfg.hidden = 1152;
  } else {
    throw std::invalid_argument("unknown model size tag '" + tag +
                                "' (expected S, B, L or XL)");
  }
  cfg.patch = patch;
  cfg.voxel = voxel;
  cfg.num_classes = num_classes;
  cfg.validate();
  return cfg;
}

void DiMConfig::validate() const {
  struct Row {
    const char* tag;
    int layers, hidden;
  };
  static constexpr Row table[] = {
      {"S", 16, 384}, {"B", 16, 768}, {"L", 32, 1024}, {"XL", 36, 1152}};
  bool named = false;
  for (const Row& r : table) {
    if (size_tag == r.tag) {
      named = true;
      if (layers != r.layers || hidden != r.hidden)
        throw std::invalid_argument(
            "config tagged " + size_tag + " must have layers=" +
            std::to_string(r.layers) + ", hidden=" + std::to_string(r.hidden));
    }
  }
  if (!named && size_tag != "custom")
    throw std::invalid_argument("unknown size tag '" + size_tag + "'");
  if (patch != 2 && patch != 4 && patch != 8)
    throw std::invalid_argument("patch size must be 2, 4 or 8, got " +
                                std::to_string(patch));
  if (voxel < patch || voxel % patch != 0)
    throw std::invalid_argument("patch " + std::to_string(patch) +
                                " must divide voxel resolution " +
                                std::to_string(voxel));
  if (layers < 1 || hidden < 1 || state_size < 1 || expand < 1 ||
      conv_width < 1 || num_classes < 1 || channels < 1)
    throw std::invalid_argument("config extents must be positive");
}

namespace {

// softplus^{-1}(y) = log(expm1(y))
double softplus_inverse(double y) { return std::log(std::expm1(y)); }

BlockDirParams init_dir(const DiMConfig& cfg, Rng& rng) {
  const int E = cfg.expanded(), N = cfg.state_size, k = cfg.conv_width;
  BlockDirParams d;
  d.conv_w = Tensor::randn({E, k}, rng, 0.02);
  d.W_delta = Tensor::randn({E, 1}, rng, 0.02);
  {
    std::vector<double> b(E);
    for (int e = 0; e < E; ++e) {
      const double dt =
          std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      b[e] = softplus_inverse(dt);
    }
    d.b_delta = Tensor::from({E}, std::move(b));
  }
  d.W_B = Tensor::randn({E, N}, rng, 0.02);
  d.W_C = Tensor::randn({E, N}, rng, 0.02);
  {
    // A[e,n] = -(n+1): real S4D ladder, strictly negative.
    std::vector<double> a(static_cast<size_t>(E) * N);
    for (int e = 0; e < E; ++e)
      for (int n = 0; n < N; ++n)
        a[e * N + n] = std::log(static_cast<double>(n + 1));
    d.A_log = Tensor::from({E, N}, std::move(a));
  }
  d.D_skip = Tensor::full({E}, 1.0);
  return d;
}

}  // namespace

ModelParams ModelParams::init(const DiMConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::splitmix64(seed));
  const int D = cfg.hidden, E = cfg.expanded();
  const int64_t L = cfg.tokens(), PL = cfg.patch_len();

  ModelParams p;
  p.cfg = cfg;
  p.W_embed = Tensor::randn({PL, D}, rng, 0.02);
  p.pos = Tensor::randn({L, D}, rng, 0.02);
  p.time_W1 = Tensor::randn({kTimeFeatureDim, D}, rng, 0.02);
  p.time_b1 = Tensor::zeros({D});
  p.time_W2 = Tensor::randn({D, D}, rng, 0.02);
  p.time_b2 = Tensor::zeros({D});
  p.class_table = Tensor::randn({cfg.num_classes + 1, D}, rng, 0.02);
  p.blocks.resize(cfg.layers);
  for (auto& b : p.blocks) {
    b.norm_gain = Tensor::full({D}, 1.0);
    b.norm_bias = Tensor::zeros({D});
    b.W_z = Tensor::randn({D, E}, rng, 0.02);
    b.W_v = Tensor::randn({D, E}, rng, 0.02);
    b.dir[0] = init_dir(cfg, rng);
    b.dir[1] = init_dir(cfg, rng);
    b.W_out = Tensor::zeros({E, D});
  }
  p.final_gain = Tensor::full({D}, 1.0);
  p.final_bias = Tensor::zeros({D});
  p.W_head = Tensor::zeros({D, PL});
  p.set_requires_grad(true);
  return p;
}

void ModelParams::for_each_param(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("embed.W", W_embed);
  fn("embed.pos", pos);
  fn("time.W1", time_W1);
  fn("time.b1", time_b1);
  fn("time.W2", time_W2);
  fn("time.b2", time_b2);
  fn("class.table", class_table);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string base = "block" + std::to_string(i);
    BlockParams& b = blocks[i];
    fn(base + ".norm.gain", b.norm_gain);
    fn(base + ".norm.bias", b.norm_bias);
    fn(base + ".W_z", b.W_z);
    fn(base + ".W_v", b.W_v);
    for (int d = 0; d < 2; ++d) {
      const std::string dir = base + (d == 0 ? ".fwd" : ".bwd");
      fn(dir + ".conv_w", b.dir[d].conv_w);
      fn(dir + ".W_delta", b.dir[d].W_delta);
      fn(dir + ".b_delta", b.dir[d].b_delta);
      fn(dir + ".W_B", b.dir[d].W_B);
      fn(dir + ".W_C", b.dir[d].W_C);
      fn(dir + ".A_log", b.dir[d].A_log);
      fn(dir + ".D_skip", b.dir[d].D_skip);
    }
    fn(base + ".W_out", b.W_out);
  }
  fn("final.gain", final_gain);
  fn("final.bias", final_bias);
  fn("head.W", W_head);
}

void ModelParams::set_requires_grad(bool v) {
  for_each_param([v](const std::string&, Tensor& t) { t.set_requires_grad(v); });
}

int64_t ModelParams::allocated_params() {
  int64_t total = 0;
  for_each_param([&total](const std::string&, Tensor& t) { total += t.numel(); });
  return total;
}

std::vector<double> time_features(int t) {
  std::vector<double> feat(kTimeFeatureDim);
  const int half = kTimeFeatureDim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / kTimeFeatureDim);
    feat[2 * i] = std::sin(t * freq);
    feat[2 * i + 1] = std::cos(t * freq);
  }
  return feat;
}

Tensor time_embed(const ModelParams& params, int t, int max_steps) {
  if (t < 0 || t >= max_steps)
    throw std::out_of_range("timestep " + std::to_string(t) +
                            " outside [0," + std::to_string(max_steps) + ")");
  Tensor feat = Tensor::from({1, kTimeFeatureDim}, time_features(t));
  Tensor h = silu(add_bias(matmul(feat, params.time_W1), params.time_b1));
  return add_bias(matmul(h, params.time_W2), params.time_b2);
}

Tensor dim_block(const Tensor& tokens, const BlockParams& bp) {
  Tensor u = layernorm(tokens, bp.norm_gain, bp.norm_bias);
  Tensor z = matmul(u, bp.W_z);
  Tensor v = matmul(u, bp.W_v);

  Tensor y_dir[2];
  for (int d = 0; d < 2; ++d) {
    const BlockDirParams& dp = bp.dir[d];
    Tensor vd = d == 0 ? v : reverse_rows(v);
    Tensor c = silu(conv1d_depthwise(vd, dp.conv_w));
    ssm::SelectiveParams sp;
    sp.delta = softplus(broadcast_add(matmul(c, dp.W_delta), dp.b_delta));
    sp.B = matmul(c, dp.W_B);
    sp.C = matmul(c, dp.W_C);
    sp.A_diag = scale(exp(dp.A_log), -1.0);
    sp.D_skip = dp.D_skip;
    Tensor yd = ssm::selective_scan(c, sp);
    y_dir[d] = d == 0 ? yd : reverse_rows(yd);
  }

  Tensor gated = mul(add(y_dir[0], y_dir[1]), silu(z));
  return add(tokens, matmul(gated, bp.W_out));
}

namespace {

Tensor clamp_unit(const Tensor& points) {
  std::vector<double> out(points.numel());
  const auto d = points.data();
  for (int64_t i = 0; i < points.numel(); ++i)
    out[i] = std::clamp(d[i], -1.0, 1.0);
  return Tensor::from(points.shape(), std::move(out));
}

Tensor class_row(const ModelParams& params, std::optional<int> y_class) {
  const int M = params.cfg.num_classes;
  int row = M;  // null class
  if (y_class.has_value()) {
    if (*y_class < 0 || *y_class >= M)
      throw std::out_of_range("class id " + std::to_string(*y_class) +
                              " outside [0," + std::to_string(M) + ")");
    row = *y_class;
  }
  return slice_rows(params.class_table, row, 1);
}

}  // namespace

Tensor model_forward_tokens(const ModelParams& params, const VoxelGrid& grid,
                            int t, std::optional<int> y_class, int max_steps) {
  const DiMConfig& cfg = params.cfg;
  TokenSequence seq = patchify(grid, cfg.patch, params.W_embed, params.pos);
  seq.cond_tokens =
      concat_rows(time_embed(params, t, max_steps), class_row(params, y_class));

  Tensor s = concat_rows(seq.cond_tokens, seq.tokens);
  for (const BlockParams& bp : params.blocks) s = dim_block(s, bp);
  s = layernorm(s, params.final_gain, params.final_bias);
  Tensor patch_tokens = slice_rows(s, kCondTokens, cfg.tokens());
  return matmul(patch_tokens, params.W_head);  // [L, P^3*C]
}

Tensor model_forward(const ModelParams& params, const Tensor& x_t, int t,
                     std::optional<int> y_class, int max_steps) {
  if (x_t.rank() != 2 || x_t.dim(1) != 3)
    throw std::invalid_argument("model_forward expects [N,3] points, got " +
                                shape_str(x_t.shape()));
  const DiMConfig& cfg = params.cfg;
  Tensor clamped = clamp_unit(x_t);
  VoxelGrid grid = voxelize({clamped, std::nullopt}, cfg.voxel);
  Tensor head = model_forward_tokens(params, grid, t, y_class, max_steps);
  VoxelGrid out_grid =
      depatchify(head, cfg.patch, cfg.voxel, cfg.channels);
  return devoxelize(out_grid, clamped);
}

int64_t block_param_count(const DiMConfig& cfg) {
  const int64_t D = cfg.hidden, E = cfg.expanded(), N = cfg.state_size,
                k = cfg.conv_width;
  const int64_t per_dir = E * k      // conv taps
                          + E + E    // W_delta, b_delta
                          + 2 * E * N  // W_B, W_C
                          + E * N      // A_log
                          + E;         // D_skip
  return 2 * D          // norm gain/bias
         + 2 * D * E    // W_z, W_v
         + 2 * per_dir  // both directions
         + E * D;       // W_out
}

int64_t param_count(const DiMConfig& cfg) {
  cfg.validate();
  const int64_t D = cfg.hidden, PL = cfg.patch_len(), L = cfg.tokens(),
                M = cfg.num_classes;
  int64_t total = PL * D + L * D;                       // embed + pos
  total += kTimeFeatureDim * D + D + D * D + D;         // time MLP
  total += (M + 1) * D;                                 // class table
  total += cfg.layers * block_param_count(cfg);
  total += 2 * D;                                       // final norm
  total += D * PL;                                      // head
  return total;
}

}  // namespace dim3d
