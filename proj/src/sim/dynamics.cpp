#include <cmath>

#include "icd/sim/state.hpp"

namespace icd::sim {

namespace {

Vec3 clamp_to(const Aabb& box, const Vec3& x, double inflate) {
  return x.cwiseMax(box.lo - Vec3::Constant(inflate)).cwiseMin(box.hi + Vec3::Constant(inflate));
}

Vec3 clamp_delta(const Vec3& d, double a_max) {
  double n = d.norm();
  return n > a_max ? Vec3(d * (a_max / n)) : d;
}

Vec3 hinge_dir(double yaw) { return Vec3(std::cos(yaw), std::sin(yaw), 0.0); }
Vec3 across_dir(double yaw) { return Vec3(std::sin(yaw), -std::cos(yaw), 0.0); }

Vec3 panel_a_dir(const NotebookPose& q) {
  return std::cos(q.tilt_a) * across_dir(q.yaw) + std::sin(q.tilt_a) * Vec3(0, 0, 1);
}
Vec3 panel_b_dir(const NotebookPose& q) {
  return -std::cos(q.tilt_b) * across_dir(q.yaw) + std::sin(q.tilt_b) * Vec3(0, 0, 1);
}

}  // namespace

Points notebook_samples(const NotebookPose& q, const SimConfig& cfg, int rows, int cols) {
  Points out(2 * rows * cols, 3);
  Vec3 h = hinge_dir(q.yaw);
  Vec3 da = panel_a_dir(q), db = panel_b_dir(q);
  int idx = 0;
  for (int panel = 0; panel < 2; ++panel) {
    const Vec3& d = panel == 0 ? da : db;
    for (int i = 0; i < rows; ++i) {
      double a = rows > 1 ? double(i) / (rows - 1) - 0.5 : 0.0;
      for (int j = 0; j < cols; ++j) {
        double b = cols > 1 ? double(j) / (cols - 1) : 0.0;
        out.row(idx++) = q.center + a * cfg.panel_width * h + b * cfg.panel_len * d;
      }
    }
  }
  return out;
}

Vec3 notebook_grasp_point(const NotebookPose& q, const SimConfig& cfg) {
  return q.center + cfg.panel_len * panel_b_dir(q);
}

double max_constraint_residual(const SimState& state, const SceneSpec& scene,
                               const SimConfig& cfg) {
  double res = 0.0;
  if (scene.task_tag == TaskTag::cable_routing) {
    double rest = cfg.rest_segment();
    for (Eigen::Index i = 0; i + 1 < state.particles.rows(); ++i) {
      double len = (state.particles.row(i + 1) - state.particles.row(i)).norm();
      res = std::max(res, std::abs(len - rest));
    }
    for (Eigen::Index i = 0; i < state.particles.rows(); ++i) {
      double d = scene_sdf(scene, state.particles.row(i).transpose());
      res = std::max(res, cfg.rope_radius - d);
    }
  } else {
    for (Eigen::Index i = 0; i < state.particles.rows(); ++i)
      res = std::max(res, -scene_sdf(scene, state.particles.row(i).transpose()));
  }
  return res;
}

namespace {

SimState step_rope(const SimState& state, const Action& action, const SceneSpec& scene,
                   const SimConfig& cfg) {
  SimState next = state;
  next.time_step = state.time_step + 1;
  next.stuck = false;

  Vec3 delta = clamp_delta(action.delta, cfg.a_max);
  Vec3 grip = state.gripper_pos + delta;
  if (cfg.gripper_min_z) grip.z() = std::max(grip.z(), *cfg.gripper_min_z);
  grip = clamp_to(scene.workspace, grip, 0.0);
  // the gripper is a sphere of the rope radius: keep it out of obstacles
  for (int it = 0; it < 4; ++it) {
    double d = scene_sdf(scene, grip);
    if (d >= cfg.rope_radius) break;
    grip += (cfg.rope_radius - d) * scene_sdf_gradient(scene, grip);
  }
  if (state.fixed_index) {
    // keep the grasped end reachable so the chain stays solvable
    Vec3 off = grip - state.anchor_pos;
    double reach = 0.95 * cfg.rope_length;
    if (off.norm() > reach) grip = state.anchor_pos + off * (reach / off.norm());
  }
  next.gripper_pos = grip;

  Points& p = next.particles;
  const Eigen::Index L = p.rows();
  auto pinned = [&](Eigen::Index i) {
    return i == next.grasped_index || (next.fixed_index && i == *next.fixed_index);
  };
  auto apply_pins = [&]() {
    if (next.fixed_index) p.row(*next.fixed_index) = next.anchor_pos;
    if (next.grasped_index >= 0) p.row(next.grasped_index) = next.gripper_pos;
  };

  // quasi-static gravity displacement
  for (Eigen::Index i = 0; i < L; ++i)
    if (!pinned(i)) p(i, 2) -= cfg.gravity_step;
  apply_pins();

  const double rest = cfg.rest_segment();
  for (int it = 0; it < cfg.solver_iterations; ++it) {
    // distance constraints, alternating sweep direction to spread error
    bool fwd = (it % 2) == 0;
    for (Eigen::Index k = 0; k + 1 < L; ++k) {
      Eigen::Index i = fwd ? k : L - 2 - k;
      Vec3 a = p.row(i), b = p.row(i + 1);
      Vec3 d = b - a;
      double len = d.norm();
      if (len < 1e-12) continue;
      Vec3 corr = d * ((len - rest) / len);
      bool pa = pinned(i), pb = pinned(i + 1);
      if (pa && pb) continue;
      if (pa)
        p.row(i + 1) = b - corr;
      else if (pb)
        p.row(i) = a + corr;
      else {
        p.row(i) = a + 0.5 * corr;
        p.row(i + 1) = b - 0.5 * corr;
      }
    }
    // collision: project free particles out to the rope radius
    for (Eigen::Index i = 0; i < L; ++i) {
      if (pinned(i)) continue;
      Vec3 x = p.row(i);
      double d = scene_sdf(scene, x);
      if (d < cfg.rope_radius)
        p.row(i) = x + (cfg.rope_radius - d) * scene_sdf_gradient(scene, x);
      p.row(i) = clamp_to(scene.workspace, p.row(i).transpose(), cfg.rope_radius);
    }
    apply_pins();
  }

  if (max_constraint_residual(next, scene, cfg) > cfg.residual_tol) next.stuck = true;
  return next;
}

double notebook_energy(const NotebookPose& q, const SceneSpec& scene, const SimConfig& cfg) {
  Points s = notebook_samples(q, cfg, cfg.panel_rows, cfg.panel_cols);
  double e = 0.0;
  const double k_col = 2000.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    e += s(i, 2);  // gravity, unit weight per sample
    double d = scene_sdf(scene, s.row(i).transpose());
    double pen = cfg.panel_clearance - d;
    if (pen > 0.0) e += k_col * pen * pen;
  }
  return e;
}

NotebookPose pose_from_grasp(NotebookPose q, const Vec3& gripper, const SimConfig& cfg) {
  q.center = gripper - cfg.panel_len * panel_b_dir(q);
  return q;
}

SimState step_notebook(const SimState& state, const Action& action, const SceneSpec& scene,
                       const SimConfig& cfg) {
  SimState next = state;
  next.time_step = state.time_step + 1;
  next.stuck = false;

  Vec3 delta = clamp_delta(action.delta, cfg.a_max);
  Vec3 grip = state.gripper_pos + delta;
  if (cfg.gripper_min_z) grip.z() = std::max(grip.z(), *cfg.gripper_min_z);
  grip = clamp_to(scene.workspace, grip, 0.0);
  next.gripper_pos = grip;

  // settle the panel tilts by projected gradient descent on gravity +
  // penetration energy; the grasp constraint eliminates the center and
  // holds the yaw.
  //
  // Static friction: while panel samples rest on a support, horizontal
  // sliding of the hinge is resisted.
  int contacts = 0;
  {
    Points prev = notebook_samples(state.notebook, cfg, cfg.panel_rows, cfg.panel_cols);
    for (Eigen::Index i = 0; i < prev.rows(); ++i)
      if (scene_sdf(scene, prev.row(i).transpose()) < cfg.panel_clearance + 1e-3) ++contacts;
  }
  const Eigen::Vector2d anchor_xy = state.notebook.center.head<2>();
  auto energy = [&](const NotebookPose& p) {
    return notebook_energy(p, scene, cfg) +
           2e4 * double(contacts) * (p.center.head<2>() - anchor_xy).squaredNorm();
  };
  NotebookPose q = pose_from_grasp(state.notebook, grip, cfg);
  const double h = 1e-6;
  double rate = 0.01;
  auto take = [&](const NotebookPose& base, const double g[2], double r) {
    NotebookPose n = base;
    n.tilt_a = std::clamp(n.tilt_a - r * g[0], -1.5, 1.5);
    n.tilt_b = std::clamp(n.tilt_b - r * g[1], 0.0, 3.14159265358979323846);
    return pose_from_grasp(n, grip, cfg);
  };
  for (int it = 0; it < 40; ++it) {
    double base = energy(q);
    double grad[2];
    for (int d = 0; d < 2; ++d) {
      NotebookPose qp = q;
      double* f = d == 0 ? &qp.tilt_a : &qp.tilt_b;
      *f += h;
      qp = pose_from_grasp(qp, grip, cfg);
      grad[d] = (energy(qp) - base) / h;
    }
    // backtracking: only accept steps that lower the energy
    double r = rate;
    NotebookPose cand = q;
    bool accepted = false;
    for (int bt = 0; bt < 24; ++bt, r *= 0.5) {
      cand = take(q, grad, r);
      if (energy(cand) < base) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    q = cand;
    rate = std::min(2.0 * r, 0.01);
  }
  next.notebook = q;
  Vec3 da = panel_a_dir(q), db = panel_b_dir(q);
  next.hinge_angle = std::acos(std::clamp(da.dot(db), -1.0, 1.0));
  next.particles = notebook_samples(q, cfg, cfg.panel_rows, cfg.panel_cols);

  if (max_constraint_residual(next, scene, cfg) > cfg.residual_tol) next.stuck = true;
  return next;
}

}  // namespace

SimState step(const SimState& state, const Action& action, const SceneSpec& scene,
              const SimConfig& cfg) {
  return scene.task_tag == TaskTag::cable_routing ? step_rope(state, action, scene, cfg)
                                                  : step_notebook(state, action, scene, cfg);
}

SimState make_rope_state(const SceneSpec& scene, const SimConfig& cfg, const Vec3& anchor,
                         const Vec3& direction) {
  SimState s;
  const int L = cfg.rope_particles;
  Vec3 dir = direction.normalized();
  s.particles.resize(L, 3);
  double rest = cfg.rest_segment();
  for (int i = 0; i < L; ++i) {
    Vec3 x = anchor + double(i) * rest * dir;
    x.z() = std::max(x.z(), cfg.rope_radius);
    s.particles.row(i) = x;
  }
  s.fixed_index = 0;
  s.anchor_pos = s.particles.row(0);
  s.grasped_index = L - 1;
  s.gripper_pos = s.particles.row(L - 1);
  // settle to a fixed point of the zero-action dynamics
  for (int k = 0; k < 400; ++k) {
    SimState n = step(s, Action{}, scene, cfg);
    n.time_step = 0;
    double moved = (n.particles - s.particles).cwiseAbs().maxCoeff();
    s = n;
    if (moved < 1e-10) break;
  }
  s.stuck = false;
  return s;
}

SimState make_notebook_state(const SceneSpec& scene, const SimConfig& cfg,
                             const NotebookPose& pose) {
  SimState s;
  s.notebook = pose;
  s.grasped_index = -1;
  s.gripper_pos = notebook_grasp_point(pose, cfg);
  s.particles = notebook_samples(pose, cfg, cfg.panel_rows, cfg.panel_cols);
  Vec3 da = panel_a_dir(pose), db = panel_b_dir(pose);
  s.hinge_angle = std::acos(std::clamp(da.dot(db), -1.0, 1.0));
  for (int k = 0; k < 50; ++k) {
    SimState n = step(s, Action{}, scene, cfg);
    n.time_step = 0;
    double moved = (n.particles - s.particles).cwiseAbs().maxCoeff();
    s = n;
    if (moved < 1e-10) break;
  }
  s.stuck = false;
  return s;
}

Points object_point_cloud(const SimState& state, int m, const SimConfig& cfg) {
  Points out(m, 3);
  if (state.grasped_index >= 0) {  // rope: fixed material coordinates
    const Points& p = state.particles;
    const Eigen::Index L = p.rows();
    for (int j = 0; j < m; ++j) {
      double u = m > 1 ? double(j) / (m - 1) * double(L - 1) : 0.0;
      Eigen::Index i = std::min(Eigen::Index(u), L - 2);
      double f = u - double(i);
      out.row(j) = (1.0 - f) * p.row(i) + f * p.row(i + 1);
    }
  } else {  // notebook: fixed lattice on both panels
    Vec3 h = hinge_dir(state.notebook.yaw);
    Vec3 da = panel_a_dir(state.notebook), db = panel_b_dir(state.notebook);
    int half = m / 2;
    for (int j = 0; j < m; ++j) {
      bool on_a = j < half;
      int q = on_a ? j : j - half;
      int c = on_a ? half : m - half;
      double a = std::fmod(double(q) * 0.7548776662466927, 1.0) - 0.5;
      double b = (double(q) + 0.5) / double(c);
      const Vec3& d = on_a ? da : db;
      out.row(j) = state.notebook.center + a * cfg.panel_width * h + b * cfg.panel_len * d;
    }
  }
  return out;
}

}  // namespace icd::sim
