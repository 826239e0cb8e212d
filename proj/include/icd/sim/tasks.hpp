#pragma once

#include "icd/sim/state.hpp"

namespace icd::sim {

struct GoalSpec {
  Points object_cloud;  // goal object point cloud, ordered
  Points scene_cloud;   // scene point cloud the goal was recorded against
  double goal_threshold = 0.03;  // notebook success distance, meters
};

struct SuccessResult {
  bool success = false;
  double complete_rate = 0.0;
};

// Vertical rectangle spanning the gap next to a fixture's anchor post;
// `normal` is the crossing direction used for the sign convention.
struct FixtureOpening {
  Vec3 center;
  Vec3 normal;    // local x of the anchor post
  Vec3 lateral;   // local y, from the anchor toward the twin post
  double lat_lo, lat_hi;  // gap interval along `lateral`, from anchor center
  double z_lo, z_hi;
};

FixtureOpening fixture_opening(const SceneSpec& scene, int fixture_id);

// Net signed crossings of an ordered polyline through the opening.
// Positive = net passage along the opening normal.
int net_crossings(const Points& polyline, const FixtureOpening& opening);

// cable: per fixture, routed iff the rope's net crossing matches the goal
// polyline's (nonzero) net crossing; notebook: mean point distance below
// the goal threshold. Throws if fixture counts disagree with the goal.
SuccessResult task_success(const SimState& state, const GoalSpec& goal,
                           const SceneSpec& scene, const SimConfig& cfg, int cloud_points);

// --- scene generation ----------------------------------------------------

struct SceneGenConfig {
  TaskTag task = TaskTag::cable_routing;
  int num_fixtures = 2;
  // cable scenes: fixture openings are sampled along a routing corridor
  // that starts at the rope anchor, so every scene admits a valid route
  double anchor_x_lo = -0.205, anchor_x_hi = -0.175;
  double anchor_y_lo = -0.135, anchor_y_hi = -0.105;
  double corridor_angle_lo = 0.15, corridor_angle_hi = 0.35;
  double fixture_t_lo[2] = {0.10, 0.24};  // distance along the corridor
  double fixture_t_hi[2] = {0.16, 0.30};
  double fixture_lateral_jitter = 0.008;  // opening offset off the corridor
  double fixture_yaw_jitter = 0.15;       // opening normal vs corridor dir
  // notebook table placement
  double table_x_lo = 0.04, table_x_hi = 0.14;
  double table_y_lo = -0.05, table_y_hi = 0.05;
};

SceneSpec make_cable_scene(const SceneGenConfig& cfg, icd::Rng& rng);
SceneSpec make_notebook_scene(const SceneGenConfig& cfg, icd::Rng& rng);
SceneSpec make_scene(const SceneGenConfig& cfg, icd::Rng& rng);

SimState initial_state(const SceneSpec& scene, const SimConfig& cfg, icd::Rng& rng);

// deterministic threading / folding script used to record goal states;
// returns false if the script fails to reach a valid goal on this scene
bool run_goal_script(const SceneSpec& scene, const SimConfig& cfg, SimState& io_state);

// perturb fixture poses in place (adaptation test); returns false if the
// perturbed fixtures would overlap or leave the placement ranges
bool perturb_fixtures(SceneSpec& scene, double pos_range, double yaw_range, icd::Rng& rng);

}  // namespace icd::sim
