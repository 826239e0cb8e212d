#include "icd/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace icd::diffusion {

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat relu_d(Mat x) { return x.cwiseMax(0.0); }
Mat lin_d(const Mat& x, const ParamSet& p, const std::string& w, const std::string& b) {
  return (x * p.at(w)).rowwise() + p.at(b).row(0);
}

int feature_dim(const DiffusionConfig& cfg) {
  // [noisy latent | cond token | scene summary | step(5) | pos(1) | level one-hot]
  return 2 * cfg.d_z + cfg.scene_dim + 5 + 1 + (cfg.l_max + 1);
}

Mat build_features(const Mat& noisy, const Mat& cond, const Vec& scene_feat, int k, int level,
                   const DiffusionConfig& cfg) {
  const Eigen::Index m = noisy.rows();
  Mat f = Mat::Zero(m, feature_dim(cfg));
  const double kf = double(k) / double(cfg.steps);
  const int lv = std::clamp(level, 0, cfg.l_max);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index c = 0;
    f.block(i, c, 1, cfg.d_z) = noisy.row(i);
    c += cfg.d_z;
    f.block(i, c, 1, cfg.d_z) = cond.row(i);
    c += cfg.d_z;
    f.block(i, c, 1, cfg.scene_dim) = scene_feat.transpose();
    c += cfg.scene_dim;
    f(i, c + 0) = kf;
    f(i, c + 1) = std::sin(2.0 * kPi * kf);
    f(i, c + 2) = std::cos(2.0 * kPi * kf);
    f(i, c + 3) = std::sin(4.0 * kPi * kf);
    f(i, c + 4) = std::cos(4.0 * kPi * kf);
    c += 5;
    f(i, c) = double(i) / double(m - 1);
    c += 1;
    f(i, c + lv) = 1.0;
  }
  return f;
}

Mat normal_mat(Eigen::Index rows, Eigen::Index cols, icd::Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

int floor_log2(int n) {
  int l = 0;
  while ((1 << (l + 1)) <= n) ++l;
  return l;
}

}  // namespace

DiffusionSchedule make_schedule(const DiffusionConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("make_schedule: steps must be >= 1");
  const int K = cfg.steps;
  DiffusionSchedule s;
  s.beta = Vec::Zero(K + 1);
  s.alpha = Vec::Ones(K + 1);
  s.gamma = Vec::Zero(K + 1);
  s.sigma = Vec::Zero(K + 1);
  s.abar = Vec::Ones(K + 1);
  for (int k = 1; k <= K; ++k) {
    double b = K == 1 ? cfg.beta_lo
                      : cfg.beta_lo + (cfg.beta_hi - cfg.beta_lo) * double(k - 1) / double(K - 1);
    s.beta(k) = b;
    s.abar(k) = s.abar(k - 1) * (1.0 - b);
    s.alpha(k) = 1.0 / std::sqrt(1.0 - b);
    s.gamma(k) = b / std::sqrt(1.0 - s.abar(k));
    // posterior std; abar(0) = 1 makes the final reverse step noise-free
    s.sigma(k) = std::sqrt((1.0 - s.abar(k - 1)) / (1.0 - s.abar(k)) * b);
  }
  return s;
}

int chain_length(int level) { return (1 << level) + 1; }

std::vector<int> subsample_indices(int t0, int t1, int len) {
  if (len < 2 || t1 < t0) throw std::invalid_argument("subsample_indices: bad arguments");
  std::vector<int> idx(static_cast<size_t>(len));
  for (int j = 0; j < len; ++j)
    idx[size_t(j)] = t0 + int(std::llround(double(j) * double(t1 - t0) / double(len - 1)));
  return idx;
}

Mat cond_tokens(const Mat& prev) {
  const Eigen::Index m = prev.rows();
  Mat out(2 * m - 1, prev.cols());
  for (Eigen::Index i = 0; i < m; ++i) out.row(2 * i) = prev.row(i);
  for (Eigen::Index i = 0; i + 1 < m; ++i)
    out.row(2 * i + 1) = 0.5 * (prev.row(i) + prev.row(i + 1));
  return out;
}

Mat forward_noise(const Mat& x0, int k, const DiffusionSchedule& sched, icd::Rng& rng,
                  Mat* eps_out) {
  if (k < 0 || k >= sched.abar.size())
    throw std::invalid_argument("forward_noise: step out of range");
  Mat eps = normal_mat(x0.rows(), x0.cols(), rng);
  Mat out = std::sqrt(sched.abar(k)) * x0 + std::sqrt(1.0 - sched.abar(k)) * eps;
  if (eps_out != nullptr) *eps_out = std::move(eps);
  return out;
}

Mat reverse_update(const Mat& tau, const Mat& eps, const Mat& noise, int k,
                   const DiffusionSchedule& sched) {
  if (k < 1 || k >= sched.beta.size())
    throw std::invalid_argument("reverse_update: step out of range");
  return sched.alpha(k) * (tau - sched.gamma(k) * eps + sched.sigma(k) * noise);
}

ParamSet init_diffusion_params(const DiffusionConfig& cfg, icd::Rng& rng) {
  using learn::glorot;
  ParamSet p;
  p["eps_w1"] = glorot(feature_dim(cfg), cfg.hidden, rng);
  p["eps_b1"] = Mat::Zero(1, cfg.hidden);
  p["eps_w2"] = glorot(cfg.hidden, cfg.hidden, rng);
  p["eps_b2"] = Mat::Zero(1, cfg.hidden);
  p["eps_w3"] = glorot(cfg.hidden, cfg.d_z, rng);
  p["eps_b3"] = Mat::Zero(1, cfg.d_z);
  p.meta["model_kind"] = "ldm";
  p.meta["schema_version"] = "1";
  p.meta["d_z"] = std::to_string(cfg.d_z);
  p.meta["hidden"] = std::to_string(cfg.hidden);
  p.meta["scene_dim"] = std::to_string(cfg.scene_dim);
  p.meta["steps"] = std::to_string(cfg.steps);
  p.meta["l_max"] = std::to_string(cfg.l_max);
  p.meta["rho_reach"] = std::to_string(cfg.rho_reach);
  p.meta["beta_lo"] = std::to_string(cfg.beta_lo);
  p.meta["beta_hi"] = std::to_string(cfg.beta_hi);
  p.meta["goal_eps"] = std::to_string(cfg.goal_eps);
  return p;
}

DiffusionConfig diffusion_config_from_params(const ParamSet& params) {
  if (params.meta.at("model_kind") != "ldm")
    throw std::runtime_error("checkpoint is not a latent diffusion model");
  DiffusionConfig cfg;
  cfg.d_z = std::stoi(params.meta.at("d_z"));
  cfg.hidden = std::stoi(params.meta.at("hidden"));
  cfg.scene_dim = std::stoi(params.meta.at("scene_dim"));
  cfg.steps = std::stoi(params.meta.at("steps"));
  cfg.l_max = std::stoi(params.meta.at("l_max"));
  cfg.rho_reach = std::stod(params.meta.at("rho_reach"));
  cfg.beta_lo = std::stod(params.meta.at("beta_lo"));
  cfg.beta_hi = std::stod(params.meta.at("beta_hi"));
  cfg.goal_eps = std::stod(params.meta.at("goal_eps"));
  return cfg;
}

Mat predict_eps(const ParamSet& params, const Mat& noisy, const Mat& cond, const Vec& scene_feat,
                int k, int level) {
  DiffusionConfig cfg = diffusion_config_from_params(params);
  if (noisy.rows() != cond.rows() || noisy.cols() != cond.cols())
    throw std::invalid_argument("predict_eps: conditioning shape mismatch");
  DiffusionSchedule sched = make_schedule(cfg);
  Mat f = build_features(noisy, cond, scene_feat, k, level, cfg);
  Mat h1 = relu_d(lin_d(f, params, "eps_w1", "eps_b1"));
  Mat h2 = relu_d(lin_d(h1, params, "eps_w2", "eps_b2"));
  // the network predicts x0; eps follows from the q-sample identity, which
  // is a far easier function for a small MLP than raw eps at low-noise steps
  Mat x0 = lin_d(h2, params, "eps_w3", "eps_b3");
  return (noisy - std::sqrt(sched.abar(k)) * x0) / std::sqrt(1.0 - sched.abar(k));
}

Mat denoise_step(const ParamSet& params, const Mat& tau_k, int k, const Mat& cond,
                 const Vec& scene_feat, int level, const DiffusionSchedule& sched, icd::Rng& rng) {
  Mat eps = predict_eps(params, tau_k, cond, scene_feat, k, level);
  Mat noise = sched.sigma(k) > 0.0 ? normal_mat(tau_k.rows(), tau_k.cols(), rng)
                                   : Mat(Mat::Zero(tau_k.rows(), tau_k.cols()));
  return reverse_update(tau_k, eps, noise, k, sched);
}

Mat generate_level(const ParamSet& params, const Mat& prev, const Vec& scene_feat, int level,
                   icd::Rng& rng) {
  DiffusionConfig cfg = diffusion_config_from_params(params);
  DiffusionSchedule sched = make_schedule(cfg);
  Mat cond = cond_tokens(prev);
  Mat tau = normal_mat(cond.rows(), cond.cols(), rng);
  for (int k = cfg.steps; k >= 1; --k)
    tau = denoise_step(params, tau, k, cond, scene_feat, level, sched, rng);
  tau.row(0) = prev.row(0);  // endpoints are clamped, inpainting-style
  tau.row(tau.rows() - 1) = prev.row(prev.rows() - 1);
  return tau;
}

SubgoalChain generate_chain(const ParamSet& params, const Vec& z_cur, const Vec& z_goal,
                            const Vec& scene_feat, const ReachFn& reach_fn, icd::Rng& rng) {
  DiffusionConfig cfg = diffusion_config_from_params(params);
  SubgoalChain chain;
  chain.latents = Mat(2, z_cur.size());
  chain.latents.row(0) = z_cur.transpose();
  chain.latents.row(1) = z_goal.transpose();
  chain.level = 0;
  if ((z_cur - z_goal).norm() <= cfg.goal_eps) return chain;  // empty plan
  while (chain.level < cfg.l_max) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i + 1 < chain.latents.rows(); ++i)
      worst = std::max(worst, reach_fn(chain.latents.row(i).transpose(),
                                       chain.latents.row(i + 1).transpose()));
    if (worst <= cfg.rho_reach) break;
    chain.latents = generate_level(params, chain.latents, scene_feat, chain.level + 1, rng);
    chain.level += 1;
    chain.decoded.clear();
  }
  return chain;
}

const std::vector<Mat>& decode_chain(SubgoalChain& chain, const ParamSet& vae_params,
                                     const Points& canon) {
  if (chain.decoded.size() == size_t(chain.latents.rows())) return chain.decoded;
  chain.decoded.clear();
  chain.decoded.reserve(size_t(chain.latents.rows()));
  for (Eigen::Index i = 0; i < chain.latents.rows(); ++i)
    chain.decoded.push_back(vae::decode(vae_params, chain.latents.row(i).transpose(), canon));
  return chain.decoded;
}

LatentCache build_latent_cache(const vae::DescriptorCache& cache, const ParamSet& vae_params) {
  LatentCache out;
  out.vae_hash = vae_params.content_hash();
  out.scene_feats = cache.scene_feats;
  vae::VaeConfig vcfg = vae::vae_config_from_params(vae_params);
  for (const auto& record : cache.desc) {
    Mat z(Eigen::Index(record.size()), vcfg.d_z);
    for (size_t t = 0; t < record.size(); ++t)
      z.row(Eigen::Index(t)) = vae::encode(vae_params, cache.canon, record[t]).z.transpose();
    out.z.push_back(std::move(z));
  }
  return out;
}

learn::TrainReport train_diffusion(ParamSet& params, const LatentCache& cache,
                                   const DiffusionTrainConfig& cfg) {
  using namespace learn;
  DiffusionConfig net = diffusion_config_from_params(params);
  DiffusionSchedule sched = make_schedule(net);
  std::vector<int> train_idx;
  for (int i = 0; i < int(cache.z.size()); ++i) {
    bool held = std::find(cfg.holdout.begin(), cfg.holdout.end(), i) != cfg.holdout.end();
    if (!held && cache.z[i].rows() - 1 >= (1 << cfg.min_level)) train_idx.push_back(i);
  }
  if (train_idx.empty())
    throw std::invalid_argument("train_diffusion: no record long enough to train on");

  Objective obj = [&](Tape& t, std::map<std::string, Var>& v, int, icd::Rng& rng) -> Var {
    std::vector<Mat> feats, x0_targets;
    std::vector<double> snr;  // abar / (1 - abar) per chain
    Eigen::Index rows = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      int r = train_idx[rng.uniform_index(train_idx.size())];
      const Mat& z = cache.z[size_t(r)];
      const int T = int(z.rows());
      // hierarchy level, then a segment wide enough to hold the chain
      int lv_hi = std::min(net.l_max, floor_log2(T - 1));
      int l = cfg.min_level + int(rng.uniform_index(size_t(lv_hi - cfg.min_level + 1)));
      int span = (1 << l) + int(rng.uniform_index(size_t(T - (1 << l))));
      int t0 = int(rng.uniform_index(size_t(T - span)));
      std::vector<int> tgt_idx = subsample_indices(t0, t0 + span, chain_length(l));
      std::vector<int> prev_idx = subsample_indices(t0, t0 + span, chain_length(l - 1));
      Mat target(Eigen::Index(tgt_idx.size()), net.d_z);
      for (size_t j = 0; j < tgt_idx.size(); ++j) target.row(Eigen::Index(j)) = z.row(tgt_idx[j]);
      Mat prev(Eigen::Index(prev_idx.size()), net.d_z);
      for (size_t j = 0; j < prev_idx.size(); ++j) prev.row(Eigen::Index(j)) = z.row(prev_idx[j]);
      // endpoints are noised too; clamping happens only at sampling time
      int k = 1 + int(rng.uniform_index(size_t(net.steps)));
      Mat noisy = forward_noise(target, k, sched, rng);
      feats.push_back(build_features(noisy, cond_tokens(prev), cache.scene_feats[size_t(r)], k, l,
                                     net));
      x0_targets.push_back(std::move(target));
      // the raw eps-MSE weights the x0 error by snr = abar/(1-abar), which
      // vanishes at high-noise steps (where the sampler needs x0 to locate
      // the data mode) and explodes at low-noise steps (where predicting x0
      // is trivially copying the input). Clamping to [1, 5] (min-SNR-style)
      // keeps every step trained without letting the easy ones dominate.
      snr.push_back(std::clamp(sched.abar(k) / (1.0 - sched.abar(k)), 1.0, 5.0));
      rows += feats.back().rows();
    }
    Mat f(rows, feats[0].cols());
    Mat target(rows, net.d_z);
    Mat weight(rows, net.d_z);
    Eigen::Index at = 0;
    for (size_t i = 0; i < feats.size(); ++i) {
      f.middleRows(at, feats[i].rows()) = feats[i];
      target.middleRows(at, feats[i].rows()) = x0_targets[i];
      weight.middleRows(at, feats[i].rows()).setConstant(snr[i]);
      at += feats[i].rows();
    }
    Var x = constant(t, f);
    Var h1 = relu(linear(x, v.at("eps_w1"), v.at("eps_b1")));
    Var h2 = relu(linear(h1, v.at("eps_w2"), v.at("eps_b2")));
    Var x0 = linear(h2, v.at("eps_w3"), v.at("eps_b3"));
    // with eps derived from the predicted x0 via the q-sample identity,
    // ||eps - eps_hat||^2 equals abar/(1-abar) * ||x0 - x0_hat||^2; the
    // weight matrix holds that factor (floored at 1, see above)
    return mean_all(cmul_const(square(sub(x0, constant(t, target))), weight));
  };

  OptimConfig ocfg;
  ocfg.epochs = cfg.epochs;
  ocfg.steps_per_epoch = cfg.steps_per_epoch;
  ocfg.lr = cfg.lr;
  ocfg.seed = cfg.seed;
  auto [trained, report] = optimize(obj, std::move(params), ocfg);
  params = std::move(trained);
  return report;
}

}  // namespace icd::diffusion
