#pragma once

#include "icd/learn/optim.hpp"
#include "icd/learn/params.hpp"
#include "icd/sim/scene.hpp"

namespace icd::fields {

using learn::Mat;
using learn::ParamSet;
using learn::Tape;
using learn::Var;
using learn::Vec;
using sim::Points;
using sim::SceneSpec;
using sim::Vec3;

// Contact-aware neural descriptor field over a scene point cloud. All
// per-pair inputs are invariant to rotations about z and translations
// along z; vertical offsets carry a constant bias so the field is not
// invariant to z-flips.
struct NdfConfig {
  int knn = 16;        // neighbors aggregated per query
  int scene_knn = 8;   // neighbors used for per-scene-point stats
  int normal_knn = 12; // neighbors used for per-scene-point normals
  int hidden = 64;
  int desc_dim = 32;
  double c_z = 0.1;    // constant added to vertical offsets
  double knn_eps = 1e-3;
  bool global_mean = false;  // ablation: mean over all scene points

  static constexpr int kStatDim = 4;
  static constexpr int kPairDim = 8 + kStatDim;
};

// Scene cloud plus per-point invariant statistics, computed once.
struct SceneEncoding {
  Points points;   // N x 3
  Mat stats;       // N x kStatDim
  Points normals;  // N x 3, unoriented local surface normals
  NdfConfig cfg;
};

SceneEncoding encode_scene(const Points& cloud, const NdfConfig& cfg);

ParamSet init_ndf_params(const NdfConfig& cfg, icd::Rng& rng);
NdfConfig ndf_config_from_params(const ParamSet& params);

// Flattened per-(query, neighbor) inputs for a batch of queries.
struct NdfBatch {
  int k = 0;       // neighbors per query (N for global_mean)
  Mat pair_feats;  // (Q*k) x kPairDim
  Mat dirs;        // (Q*k) x 3, unit neighbor-to-query directions
  Mat normals;     // (Q*k) x 3, neighbor normals oriented toward the query
  Vec weights;     // Q*k, normalized per query
};

NdfBatch make_ndf_batch(const SceneEncoding& enc, const Points& queries);

struct NdfOut {
  Var descriptor;  // Q x desc_dim
  Var occ_logit;   // Q x 1
  Var grad_pred;   // Q x 3, unnormalized surface direction
};

// training-time forward on an autodiff tape
NdfOut ndf_forward(Tape& t, std::map<std::string, Var>& v, const NdfBatch& batch);

// inference-time forward (no tape); descriptor rows correspond to queries
Mat ndf_descriptors(const ParamSet& params, const SceneEncoding& enc, const Points& queries);
void ndf_heads(const ParamSet& params, const SceneEncoding& enc, const Points& queries,
               Mat* occ_prob, Points* grad_dirs);

// descriptor stack of an object point cloud against a scene encoding
Mat object_descriptors(const ParamSet& params, const SceneEncoding& enc, const Points& object);

struct NdfTrainConfig {
  int epochs = 20;
  int steps_per_epoch = 300;
  int batch_queries = 64;
  int scene_points = 1000;
  double lr = 1e-3;
  double near_band = 0.05;  // three quarters of the queries come from this band
  uint64_t seed = 1;
};

// occupancy BCE plus surface-direction regression, equally weighted
learn::TrainReport train_ndf(ParamSet& params, const std::vector<SceneSpec>& scenes,
                             const NdfTrainConfig& cfg);

}  // namespace icd::fields
