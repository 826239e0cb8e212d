#pragma once

#include <utility>

#include "icd/fields/ndf.hpp"
#include "icd/sim/dataset.hpp"

namespace icd::vae {

using learn::Mat;
using learn::ParamSet;
using learn::Tape;
using learn::Var;
using learn::Vec;
using sim::Points;
using sim::Vec3;

// Reachability-aware point-cloud VAE: compresses a descriptor cloud (one
// descriptor row per canonical object point) into a latent vector, decodes
// it back as a point-wise map over the canonical cloud, and predicts a
// K-bin distribution over the number of steps between two latents.
struct VaeConfig {
  int d_z = 64;
  int hidden = 64;
  int desc_dim = 32;     // descriptor channels per object point
  int bins = 10;         // K reachability bins
  double bin_lo = 1.0;   // smallest temporal gap
  double bin_hi = 100.0; // largest temporal gap (trajectory length)
  double gamma = 0.99;   // discounted pair-sampling decay
  double beta = 1.0;     // softmin temperature
};

struct LatentState {
  Vec z;       // d_z, equals mean at inference
  Vec mean;
  Vec logvar;
};

struct ReachabilityDistribution {
  Vec probs;  // K, non-negative, sums to 1
};

ParamSet init_vae_params(const VaeConfig& cfg, icd::Rng& rng);
VaeConfig vae_config_from_params(const ParamSet& params);

// fixed query coordinates of the object class (straight rope / flat
// notebook); identical across all decode calls
Points canonical_object(sim::TaskTag task, const sim::SimConfig& cfg, int m);

// permutation-invariant set encoder; deterministic (z = posterior mean)
LatentState encode(const ParamSet& params, const Points& canon, const Mat& desc_cloud);

// point-wise decoder: row i depends only on (canon row i, z)
Mat decode(const ParamSet& params, const Vec& z, const Points& canon);

// 8-dim invariant scene summary (mean and std of per-point cloud stats)
Vec scene_summary(const fields::SceneEncoding& enc);

ReachabilityDistribution predict_reachability(const ParamSet& params, const Vec& z1,
                                              const Vec& z2, const Vec& scene_feat);

Vec bin_centers(const VaeConfig& cfg);
int bin_of_gap(double gap, const VaeConfig& cfg);

// expected steps under softmin weights w_k ~ p_k * exp(-beta * center_k)
double reachability_softmin(const ReachabilityDistribution& dist, const VaeConfig& cfg);

// (t1, t2) with t1 uniform and gap ~ gamma^gap, truncated to the record end
std::pair<int, int> sample_pair_discounted(const sim::TrajectoryRecord& record, double gamma,
                                           icd::Rng& rng);

// Descriptor clouds for a dataset, precomputed against a frozen field
// checkpoint and cached on disk so VAE training never re-runs the field.
struct DescriptorCache {
  Points canon;                        // M x 3 canonical object cloud
  std::vector<std::vector<Mat>> desc;  // [record][t]: M x desc_dim
  std::vector<Vec> scene_feats;        // [record]: 8
  uint64_t field_hash = 0;             // provenance of the field checkpoint
};

DescriptorCache build_descriptor_cache(const sim::Dataset& dataset, const ParamSet& ndf_params,
                                       const sim::SimConfig& sim_cfg, int scene_points,
                                       uint64_t seed);
void write_descriptor_cache(const std::string& path, const DescriptorCache& cache);
// throws with a message naming the caching command when the file is missing
DescriptorCache load_descriptor_cache(const std::string& path);

struct VaeTrainConfig {
  int epochs = 12;
  int steps_per_epoch = 120;
  int batch_recon = 6;   // clouds per reconstruction batch
  int batch_pairs = 16;  // reachability pairs per step
  double lr = 1e-3;
  double lambda_recon = 1.0;
  double lambda_kl = 1e-6;
  double lambda_reach = 1e-5;
  uint64_t seed = 1;
  std::vector<int> holdout;  // record indices excluded from training
};

learn::TrainReport train_vae(ParamSet& params, const DescriptorCache& cache,
                             const VaeTrainConfig& cfg);

}  // namespace icd::vae
