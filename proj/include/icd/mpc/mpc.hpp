#pragma once

#include "icd/diffusion/diffusion.hpp"
#include "icd/sim/tasks.hpp"

namespace icd::mpc {

using learn::Mat;
using learn::ParamSet;
using learn::Vec;
using sim::Points;
using sim::SimConfig;
using sim::SimState;
using sim::Vec3;

// Which representation rollouts are scored in and whether a subgoal chain
// is tracked or only the final goal.
enum class CostMode { ndf_subgoals, pc_subgoals, ndf_goal_only, pc_goal_only };

std::string cost_mode_name(CostMode m);
CostMode cost_mode_from_name(const std::string& s);

struct MppiConfig {
  int num_samples = 80;        // K sampled action sequences
  int horizon = 10;            // H
  double noise_scale = 0.001;  // std of the per-entry action perturbation
  double temperature = 0.005;  // cost-weighting temperature
  double lambda_col = 100.0;   // collision weight
  double subgoal_reach_threshold = 0.01;  // delta_sg, descriptor MSE units
  int replan_period = 20;      // T, steps between chain regenerations
  int step_cap = 300;
  CostMode cost_mode = CostMode::ndf_subgoals;
  // primitive index the object rests on, excluded from gripper collision
  // (-1 = none): grasping a flat object on its support always registers
  // penetration under the sphere model, which would swamp the task cost
  int support_primitive = -1;
};

// finite penalty added for every rollout step whose state is flagged stuck
constexpr double kStuckPenalty = 1e6;

// gripper collision geometry: spheres along the jaw (vertical) axis
constexpr double kGripperSphereRadius = 0.015;
constexpr double kGripperSphereSpacing = 0.015;
constexpr int kGripperSpheres = 3;

// min over the gripper spheres of (scene SDF at the center - radius);
// negative values measure penetration depth. skip_primitive (when >= 0)
// removes that primitive from the SDF
double gripper_sdf(const sim::SceneSpec& scene, const Vec3& gripper_pos, int skip_primitive = -1);

// lambda_col * max(-gripper_sdf, 0)
double collision_cost(const sim::SceneSpec& scene, const Vec3& gripper_pos, double lambda_col,
                      int skip_primitive = -1);

// mean squared error over the N x d representation matrices
double descriptor_msd(const Mat& a, const Mat& b);

// object cloud of `state`, augmented with its field descriptors when
// use_ndf is set (enc and ndf required in that case)
Mat state_representation(const SimState& state, int m, const SimConfig& sim_cfg,
                         const fields::SceneEncoding* enc, const ParamSet* ndf, bool use_ndf);

// sum over rollout steps of min-subgoal representation distance plus the
// collision term; stuck states add kStuckPenalty per step
double rollout_cost(const SimState& start, const Mat& actions, const std::vector<Mat>& subgoals,
                    const sim::SceneSpec& scene, const fields::SceneEncoding* enc,
                    const ParamSet* ndf, const SimConfig& sim_cfg, const MppiConfig& cfg,
                    SimState* final_state = nullptr);

struct RolloutBatch {
  std::vector<Mat> actions;     // K entries, H x 3 each
  std::vector<SimState> finals; // state at the end of each rollout
  Vec costs;                    // K, finite
  Vec weights;                  // K, non-negative, sums to 1
};

// softmin weights exp(-(c - c_min)/temperature), normalized; temperature
// <= 0 returns the argmin one-hot (ties to the lowest index)
Vec mppi_weights(const Vec& costs, double temperature);

struct MppiController {
  MppiConfig cfg;
  Mat mean;          // H x 3 warm-start mean, zero-initialized
  RolloutBatch last; // batch of the most recent step, for inspection
};

// sample around the shifted previous mean, score, weight, return the first
// action of the weighted mean; persists the shifted mean in the controller
sim::Action mppi_step(MppiController& ctrl, const SimState& state,
                      const std::vector<Mat>& subgoals, const sim::SceneSpec& scene,
                      const fields::SceneEncoding* enc, const ParamSet* ndf,
                      const SimConfig& sim_cfg, icd::Rng& rng);

// pops leading subgoals whose representation distance to `rep` is within
// delta_sg; stops at the first subgoal still out of reach
void update_goal_chain(const Mat& rep, std::vector<Mat>& subgoals, double delta_sg);

struct Models {
  const ParamSet* ndf = nullptr;
  const ParamSet* vae = nullptr;
  const ParamSet* ldm = nullptr;
};

struct EpisodeConfig {
  MppiConfig mppi;
  SimConfig sim;
  int cloud_points = 60;   // object points tracked by the controller
  int scene_points = 400;  // scene cloud size for the field encoding
  uint64_t seed = 1;
};

struct EpisodeResult {
  bool success = false;
  double complete_rate = 0.0;
  int steps = 0;
  sim::TrajectoryRecord trace;      // executed clouds / grippers / actions
  std::vector<int> chain_lengths;   // tracked subgoal count per step
  std::vector<double> best_costs;   // best rollout cost per step
};

// control loop: regenerate the subgoal chain every replan_period steps (in
// subgoal modes), between replans run mppi_step and update_goal_chain;
// terminates on task success or the step cap. Throws when a checkpoint
// required by the cost mode is missing.
EpisodeResult run_episode(const sim::SceneSpec& scene, const SimState& start,
                          const sim::GoalSpec& goal, const Models& models,
                          const EpisodeConfig& cfg);

}  // namespace icd::mpc
