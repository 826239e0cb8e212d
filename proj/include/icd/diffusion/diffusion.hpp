#pragma once

#include <functional>
#include <utility>

#include "icd/vae/vae.hpp"

namespace icd::diffusion {

using learn::Mat;
using learn::ParamSet;
using learn::Tape;
using learn::Var;
using learn::Vec;
using sim::Points;

// Hierarchical latent diffusion model over subgoal chains: generates
// [z_0 ... z_M] between a current and a goal latent, coarse to fine, with
// the refinement depth chosen by a reachability estimate.
struct DiffusionConfig {
  int d_z = 64;
  int hidden = 128;
  int scene_dim = 8;        // pooled scene-summary width
  int steps = 100;          // K, diffusion steps
  int l_max = 4;            // deepest hierarchy level (chain length 2^l + 1)
  double rho_reach = 10.0;  // refine while max adjacent estimate exceeds this
  double beta_lo = 1e-3;    // linear noise schedule endpoints (0.1/K, 20/K)
  double beta_hi = 0.2;
  double goal_eps = 1e-9;   // latent distance below which the plan is empty
};

// Coefficients of the K-step schedule, indexed by step k in [1, K]
// (entry 0 is the identity step: beta=0, alpha=1, gamma=0, sigma=0).
// abar has K+1 entries with abar(0) = 1 and decays monotonically.
struct DiffusionSchedule {
  Vec beta;   // per-step noise variance, in (0, 1)
  Vec alpha;  // reverse-step scale 1 / sqrt(1 - beta_k)
  Vec gamma;  // noise-prediction scale beta_k / sqrt(1 - abar_k), in (0, 1]
  Vec sigma;  // posterior sampling-noise std; zero at k = 1 (last step)
  Vec abar;   // cumulative product of (1 - beta_j), j <= k
  std::string kind = "linear";
};

DiffusionSchedule make_schedule(const DiffusionConfig& cfg);

struct SubgoalChain {
  Mat latents;               // (M, d_z), row 0 = z_cur, row M-1 = z_goal
  int level = 0;             // M = 2^level + 1
  std::vector<Mat> decoded;  // lazily populated descriptor clouds
};

// chain length at hierarchy level l: 2^l + 1
int chain_length(int level);

// len indices spanning [t0, t1]: endpoints exact, interior temporally uniform
std::vector<int> subsample_indices(int t0, int t1, int len);

// conditioning tokens for the next level: previous-level latents interleaved
// at their positions, midpoints in between; (M, d) -> (2M - 1, d)
Mat cond_tokens(const Mat& prev);

// q-sample at step k: sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
// k = 0 is the identity. eps_out, when given, receives the drawn noise.
Mat forward_noise(const Mat& x0, int k, const DiffusionSchedule& sched, icd::Rng& rng,
                  Mat* eps_out = nullptr);

// one reverse step of the update rule: alpha_k (tau - gamma_k eps + sigma_k noise)
Mat reverse_update(const Mat& tau, const Mat& eps, const Mat& noise, int k,
                   const DiffusionSchedule& sched);

ParamSet init_diffusion_params(const DiffusionConfig& cfg, icd::Rng& rng);
DiffusionConfig diffusion_config_from_params(const ParamSet& params);

// eps_theta(tau^k, k | cond tokens, scene summary, level)
Mat predict_eps(const ParamSet& params, const Mat& noisy, const Mat& cond, const Vec& scene_feat,
                int k, int level);

Mat denoise_step(const ParamSet& params, const Mat& tau_k, int k, const Mat& cond,
                 const Vec& scene_feat, int level, const DiffusionSchedule& sched, icd::Rng& rng);

// full reverse pass for level `level` conditioned on the previous-level
// chain; output has 2|prev| - 1 rows with endpoints clamped to prev's
Mat generate_level(const ParamSet& params, const Mat& prev, const Vec& scene_feat, int level,
                   icd::Rng& rng);

using ReachFn = std::function<double(const Vec& z1, const Vec& z2)>;

// coarse-to-fine recursion from [z_cur, z_goal]; refines while any adjacent
// pair's estimated reachability exceeds rho_reach and level < l_max
SubgoalChain generate_chain(const ParamSet& params, const Vec& z_cur, const Vec& z_goal,
                            const Vec& scene_feat, const ReachFn& reach_fn, icd::Rng& rng);

// element-wise VAE decode of the chain latents; results cached on the chain
const std::vector<Mat>& decode_chain(SubgoalChain& chain, const ParamSet& vae_params,
                                     const Points& canon);

// trajectories encoded to latent rows against a frozen VAE checkpoint
struct LatentCache {
  std::vector<Mat> z;           // [record]: (T, d_z)
  std::vector<Vec> scene_feats; // [record]: scene_dim
  uint64_t vae_hash = 0;        // provenance of the VAE checkpoint
};

LatentCache build_latent_cache(const vae::DescriptorCache& cache, const ParamSet& vae_params);

struct DiffusionTrainConfig {
  int epochs = 20;
  int steps_per_epoch = 100;
  int batch = 8;      // chains per step
  double lr = 1e-3;
  int min_level = 1;  // lowest generated hierarchy level in training
  uint64_t seed = 1;
  std::vector<int> holdout;  // record indices excluded from training
};

learn::TrainReport train_diffusion(ParamSet& params, const LatentCache& cache,
                                   const DiffusionTrainConfig& cfg);

}  // namespace icd::diffusion
