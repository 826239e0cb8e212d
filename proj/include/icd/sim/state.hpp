#pragma once

#include <optional>

#include "icd/sim/scene.hpp"

namespace icd::sim {

struct Action {
  Vec3 delta = Vec3::Zero();  // gripper translation, clamped to a_max
};

// Notebook pose: hinge line through `center` with yaw; panel tilts are
// measured from horizontal, tilt_b sweeps over the hinge as it folds.
struct NotebookPose {
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;
  double tilt_a = 0.0;          // base panel, radians from horizontal
  double tilt_b = 0.0;          // folding panel, 0 = open flat, pi = closed
};

struct SimState {
  Points particles;             // rope particles or panel surface samples
  Vec3 gripper_pos = Vec3::Zero();
  int grasped_index = -1;
  std::optional<int> fixed_index;
  Vec3 anchor_pos = Vec3::Zero();
  double hinge_angle = 3.14159265358979323846;  // notebook only, [0, pi]
  int time_step = 0;
  bool stuck = false;
  NotebookPose notebook;        // valid only for notebook scenes
};

struct SimConfig {
  double a_max = 0.01;          // action clamp, meters
  double rope_radius = 0.01;
  double rope_length = 0.5;
  int rope_particles = 25;
  double gravity_step = 0.001;  // quasi-static gravity displacement per step
  int solver_iterations = 60;
  double residual_tol = 1e-4;
  double panel_len = 0.12;      // notebook panel extent away from the hinge
  double panel_width = 0.16;    // extent along the hinge
  double panel_clearance = 0.004;
  int panel_rows = 5;           // samples along hinge per panel
  int panel_cols = 4;           // samples across panel
  std::optional<double> gripper_min_z;  // optional plane confinement

  double rest_segment() const { return rope_length / (rope_particles - 1); }
};

// Rope anchored at `anchor`, laid straight along `direction`, settled to a
// fixed point of the zero-action dynamics.
SimState make_rope_state(const SceneSpec& scene, const SimConfig& cfg, const Vec3& anchor,
                         const Vec3& direction);

SimState make_notebook_state(const SceneSpec& scene, const SimConfig& cfg,
                             const NotebookPose& pose);

// One quasi-static step: clamped gripper translation followed by a
// position-based settle. Deterministic; flags `stuck` when the constraint
// solve cannot reach the residual tolerance.
SimState step(const SimState& state, const Action& action, const SceneSpec& scene,
              const SimConfig& cfg);

// m points at fixed material coordinates (polyline interpolation for the
// rope, fixed panel grid for the notebook); ordering persistent over time
Points object_point_cloud(const SimState& state, int m, const SimConfig& cfg);

// surface samples of both panels for a given pose
Points notebook_samples(const NotebookPose& pose, const SimConfig& cfg, int rows, int cols);
Vec3 notebook_grasp_point(const NotebookPose& pose, const SimConfig& cfg);

double max_constraint_residual(const SimState& state, const SceneSpec& scene,
                               const SimConfig& cfg);

}  // namespace icd::sim
