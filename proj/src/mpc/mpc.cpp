#include "icd/mpc/mpc.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

namespace icd::mpc {

std::string cost_mode_name(CostMode m) {
  switch (m) {
    case CostMode::ndf_subgoals: return "ndf_subgoals";
    case CostMode::pc_subgoals: return "pc_subgoals";
    case CostMode::ndf_goal_only: return "ndf_goal_only";
    case CostMode::pc_goal_only: return "pc_goal_only";
  }
  throw std::invalid_argument("unknown cost mode");
}

CostMode cost_mode_from_name(const std::string& s) {
  if (s == "ndf_subgoals") return CostMode::ndf_subgoals;
  if (s == "pc_subgoals") return CostMode::pc_subgoals;
  if (s == "ndf_goal_only") return CostMode::ndf_goal_only;
  if (s == "pc_goal_only") return CostMode::pc_goal_only;
  throw std::invalid_argument("unknown cost mode: " + s);
}

namespace {

bool mode_uses_ndf(CostMode m) {
  return m == CostMode::ndf_subgoals || m == CostMode::ndf_goal_only;
}
bool mode_uses_chain(CostMode m) {
  return m == CostMode::ndf_subgoals || m == CostMode::pc_subgoals;
}

}  // namespace

double gripper_sdf(const sim::SceneSpec& scene, const Vec3& gripper_pos, int skip_primitive) {
  double lo = std::numeric_limits<double>::infinity();
  for (int j = 0; j < kGripperSpheres; ++j) {
    Vec3 center = gripper_pos;
    center.z() += (j - (kGripperSpheres - 1) / 2.0) * kGripperSphereSpacing;
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
      if (int(i) == skip_primitive) continue;
      lo = std::min(lo, sim::primitive_sdf(scene.primitives[i], center) - kGripperSphereRadius);
    }
  }
  return lo;
}

double collision_cost(const sim::SceneSpec& scene, const Vec3& gripper_pos, double lambda_col,
                      int skip_primitive) {
  return lambda_col * std::max(-gripper_sdf(scene, gripper_pos, skip_primitive), 0.0);
}

double descriptor_msd(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("descriptor_msd: shape mismatch");
  return (a - b).squaredNorm() / double(a.size());
}

Mat state_representation(const SimState& state, int m, const SimConfig& sim_cfg,
                         const fields::SceneEncoding* enc, const ParamSet* ndf, bool use_ndf) {
  Points cloud = sim::object_point_cloud(state, m, sim_cfg);
  if (!use_ndf) return cloud;
  if (enc == nullptr || ndf == nullptr)
    throw std::invalid_argument("state_representation: NDF mode needs a scene encoding + field");
  Mat desc = fields::object_descriptors(*ndf, *enc, cloud);
  Mat rep(cloud.rows(), 3 + desc.cols());
  rep.leftCols(3) = cloud;
  rep.rightCols(desc.cols()) = desc;
  return rep;
}

double rollout_cost(const SimState& start, const Mat& actions, const std::vector<Mat>& subgoals,
                    const sim::SceneSpec& scene, const fields::SceneEncoding* enc,
                    const ParamSet* ndf, const SimConfig& sim_cfg, const MppiConfig& cfg,
                    SimState* final_state) {
  if (subgoals.empty()) throw std::invalid_argument("rollout_cost: empty goal chain");
  const bool use_ndf = mode_uses_ndf(cfg.cost_mode);
  const int m = int(subgoals[0].rows());
  SimState st = start;
  double cost = 0.0;
  for (Eigen::Index h = 0; h < actions.rows(); ++h) {
    sim::Action a;
    a.delta = actions.row(h).transpose();
    st = sim::step(st, a, scene, sim_cfg);
    Mat rep = state_representation(st, m, sim_cfg, enc, ndf, use_ndf);
    double nearest = std::numeric_limits<double>::infinity();
    for (const Mat& g : subgoals) nearest = std::min(nearest, descriptor_msd(rep, g));
    cost += nearest +
            collision_cost(scene, st.gripper_pos, cfg.lambda_col, cfg.support_primitive);
    if (st.stuck) cost += kStuckPenalty;
  }
  if (final_state != nullptr) *final_state = std::move(st);
  return cost;
}

Vec mppi_weights(const Vec& costs, double temperature) {
  Vec w = Vec::Zero(costs.size());
  Eigen::Index best = 0;
  costs.minCoeff(&best);
  if (temperature <= 0.0) {  // argmin limit
    w(best) = 1.0;
    return w;
  }
  // temperature acts on spread-normalized costs; with the raw scale a fixed
  // temperature would be arbitrarily sharp or flat depending on cost units.
  // The spread is the best-quartile gap, not the full range: outlier costs
  // (stuck rollouts carry ~1e6 penalties) would otherwise flatten the
  // weights of every reasonable sample to near-uniform
  std::vector<double> sorted(costs.data(), costs.data() + costs.size());
  std::sort(sorted.begin(), sorted.end());
  double spread = sorted[sorted.size() / 4] - costs(best);
  w = ((costs.array() - costs(best)) / -(temperature * spread + 1e-300)).exp();
  return w / w.sum();
}

sim::Action mppi_step(MppiController& ctrl, const SimState& state,
                      const std::vector<Mat>& subgoals, const sim::SceneSpec& scene,
                      const fields::SceneEncoding* enc, const ParamSet* ndf,
                      const SimConfig& sim_cfg, icd::Rng& rng) {
  const MppiConfig& cfg = ctrl.cfg;
  if (ctrl.mean.rows() != cfg.horizon || ctrl.mean.cols() != 3)
    ctrl.mean = Mat::Zero(cfg.horizon, 3);
  RolloutBatch batch;
  batch.actions.reserve(size_t(cfg.num_samples));
  batch.finals.resize(size_t(cfg.num_samples));
  batch.costs = Vec::Zero(cfg.num_samples);
  for (int k = 0; k < cfg.num_samples; ++k) {
    Mat a = ctrl.mean;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) += cfg.noise_scale * rng.normal();
    batch.costs(k) =
        rollout_cost(state, a, subgoals, scene, enc, ndf, sim_cfg, cfg, &batch.finals[size_t(k)]);
    batch.actions.push_back(std::move(a));
  }
  batch.weights = mppi_weights(batch.costs, cfg.temperature);
  Mat wmean = Mat::Zero(cfg.horizon, 3);
  for (int k = 0; k < cfg.num_samples; ++k) wmean += batch.weights(k) * batch.actions[size_t(k)];
  sim::Action act;
  act.delta = wmean.row(0).transpose();
  // warm start: persist the weighted mean shifted by one, zero-padded
  ctrl.mean.topRows(cfg.horizon - 1) = wmean.bottomRows(cfg.horizon - 1);
  ctrl.mean.row(cfg.horizon - 1).setZero();
  ctrl.last = std::move(batch);
  return act;
}

void update_goal_chain(const Mat& rep, std::vector<Mat>& subgoals, double delta_sg) {
  size_t drop = 0;
  while (drop < subgoals.size() && descriptor_msd(rep, subgoals[drop]) <= delta_sg) ++drop;
  if (drop > 0) subgoals.erase(subgoals.begin(), subgoals.begin() + long(drop));
}

EpisodeResult run_episode(const sim::SceneSpec& scene, const SimState& start,
                          const sim::GoalSpec& goal, const Models& models,
                          const EpisodeConfig& cfg) {
  const CostMode mode = cfg.mppi.cost_mode;
  const bool use_ndf = mode_uses_ndf(mode);
  const bool use_chain = mode_uses_chain(mode);
  if (use_ndf && models.ndf == nullptr)
    throw std::runtime_error("cost mode " + cost_mode_name(mode) + " requires an NDF checkpoint");
  if (use_chain && (models.vae == nullptr || models.ldm == nullptr))
    throw std::runtime_error("cost mode " + cost_mode_name(mode) +
                             " requires VAE and diffusion checkpoints");
  const int m = cfg.cloud_points;
  if (goal.object_cloud.rows() != m)
    throw std::invalid_argument("run_episode: goal cloud size does not match cloud_points");

  icd::Rng rng(cfg.seed);
  std::optional<fields::SceneEncoding> enc;
  if (use_ndf || use_chain) {
    icd::Rng srng = rng.fork(1);
    fields::NdfConfig ncfg =
        models.ndf != nullptr ? fields::ndf_config_from_params(*models.ndf) : fields::NdfConfig{};
    enc = fields::encode_scene(sim::sample_scene_point_cloud(scene, cfg.scene_points, srng), ncfg);
  }
  const fields::SceneEncoding* enc_p = enc.has_value() ? &*enc : nullptr;

  Mat goal_rep = goal.object_cloud;
  if (use_ndf) {
    Mat desc = fields::object_descriptors(*models.ndf, *enc, goal.object_cloud);
    Mat full(goal_rep.rows(), 3 + desc.cols());
    full.leftCols(3) = goal.object_cloud;
    full.rightCols(desc.cols()) = desc;
    goal_rep = std::move(full);
  }

  Points canon;
  Vec scene_feat, z_goal;
  vae::VaeConfig vcfg;
  if (use_chain) {
    vcfg = vae::vae_config_from_params(*models.vae);
    canon = vae::canonical_object(scene.task_tag, cfg.sim, m);
    scene_feat = vae::scene_summary(*enc);
    z_goal = vae::encode(*models.vae, canon, goal_rep).z;
  }

  EpisodeResult res;
  SimState state = start;
  MppiController ctrl;
  ctrl.cfg = cfg.mppi;
  std::vector<Mat> subgoals;
  Mat final_subgoal = goal_rep;
  res.trace.scene_index = 0;
  res.trace.clouds.push_back(sim::object_point_cloud(state, m, cfg.sim));
  res.trace.grippers.push_back(state.gripper_pos);

  for (int t = 0; t < cfg.mppi.step_cap; ++t) {
    Mat rep = state_representation(state, m, cfg.sim, enc_p, models.ndf, use_ndf);
    if (use_chain && t % cfg.mppi.replan_period == 0) {
      Vec z_cur = vae::encode(*models.vae, canon, rep).z;
      auto reach = [&](const Vec& z1, const Vec& z2) {
        return vae::reachability_softmin(
            vae::predict_reachability(*models.vae, z1, z2, scene_feat), vcfg);
      };
      icd::Rng crng = rng.fork(1000 + uint64_t(t));
      diffusion::SubgoalChain chain =
          diffusion::generate_chain(*models.ldm, z_cur, z_goal, scene_feat, reach, crng);
      subgoals.clear();
      for (Eigen::Index i = 1; i < chain.latents.rows(); ++i)
        subgoals.push_back(vae::decode(*models.vae, chain.latents.row(i).transpose(), canon));
    } else if (!use_chain && t == 0) {
      subgoals = {goal_rep};
    }
    if (!subgoals.empty()) final_subgoal = subgoals.back();
    update_goal_chain(rep, subgoals, cfg.mppi.subgoal_reach_threshold);
    if (subgoals.empty()) subgoals = {final_subgoal};  // always track the goal
    res.chain_lengths.push_back(int(subgoals.size()));

    icd::Rng arng = rng.fork(2000 + uint64_t(t));
    sim::Action a = mppi_step(ctrl, state, subgoals, scene, enc_p, models.ndf, cfg.sim, arng);
    state = sim::step(state, a, scene, cfg.sim);
    res.best_costs.push_back(ctrl.last.costs.minCoeff());
    res.trace.actions.push_back(a.delta);
    res.trace.clouds.push_back(sim::object_point_cloud(state, m, cfg.sim));
    res.trace.grippers.push_back(state.gripper_pos);
    res.steps = t + 1;

    sim::SuccessResult sr = sim::task_success(state, goal, scene, cfg.sim, m);
    res.success = sr.success;
    res.complete_rate = sr.complete_rate;
    if (res.success) break;
  }
  return res;
}

}  // namespace icd::mpc
