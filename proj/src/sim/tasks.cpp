#include "icd/sim/tasks.hpp"

#include <cmath>
#include <stdexcept>

namespace icd::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;

Vec3 local_x(double yaw) { return Vec3(std::cos(yaw), std::sin(yaw), 0.0); }
Vec3 local_y(double yaw) { return Vec3(-std::sin(yaw), std::cos(yaw), 0.0); }
// direction panel A extends from the hinge when laid flat (see dynamics)
Vec3 across(double yaw) { return Vec3(std::sin(yaw), -std::cos(yaw), 0.0); }

// post cross-section half extents and height used by the generators
const Vec3 kPostHalf(0.015, 0.012, 0.05);

}  // namespace

FixtureOpening fixture_opening(const SceneSpec& scene, int fixture_id) {
  const Primitive& post = scene.primitives.at(size_t(fixture_id));
  FixtureOpening o;
  o.center = post.center;
  o.normal = local_x(post.yaw);
  o.lateral = local_y(post.yaw);
  o.lat_lo = post.dims.y();
  o.lat_hi = post.dims.y() + scene.fixture_gap;
  o.z_lo = post.center.z() - post.dims.z();
  o.z_hi = post.center.z() + post.dims.z();
  return o;
}

int net_crossings(const Points& polyline, const FixtureOpening& o) {
  int net = 0;
  for (Eigen::Index i = 0; i + 1 < polyline.rows(); ++i) {
    Vec3 a = polyline.row(i), b = polyline.row(i + 1);
    double sa = o.normal.dot(a - o.center);
    double sb = o.normal.dot(b - o.center);
    if ((sa < 0.0) == (sb < 0.0) || sa == sb) continue;
    double t = sa / (sa - sb);
    Vec3 q = a + t * (b - a);
    double lat = o.lateral.dot(q - o.center);
    if (lat < o.lat_lo || lat > o.lat_hi) continue;
    if (q.z() < o.z_lo || q.z() > o.z_hi) continue;
    net += sb > sa ? 1 : -1;
  }
  return net;
}

SuccessResult task_success(const SimState& state, const GoalSpec& goal,
                           const SceneSpec& scene, const SimConfig& cfg, int cloud_points) {
  SuccessResult r;
  if (scene.task_tag == TaskTag::cable_routing) {
    size_t n_fix = scene.fixture_ids.size();
    // goal polyline is the ordered goal object cloud; its crossings carry
    // the required side for each fixture
    if (n_fix == 0) throw std::invalid_argument("cable scene without fixtures");
    int routed = 0;
    for (int id : scene.fixture_ids) {
      FixtureOpening o = fixture_opening(scene, id);
      int want = net_crossings(goal.object_cloud, o);
      if (want == 0)
        throw std::invalid_argument("goal spec does not route fixture " + std::to_string(id));
      int got = net_crossings(state.particles, o);
      if (got == want) ++routed;
    }
    r.complete_rate = double(routed) / double(n_fix);
    r.success = routed == int(n_fix);
  } else {
    Points cloud = object_point_cloud(state, int(goal.object_cloud.rows()), cfg);
    (void)cloud_points;
    double mean = 0.0;
    for (Eigen::Index i = 0; i < cloud.rows(); ++i)
      mean += (cloud.row(i) - goal.object_cloud.row(i)).norm();
    mean /= double(cloud.rows());
    r.success = mean < goal.goal_threshold;
    r.complete_rate = r.success ? 1.0 : 0.0;
  }
  return r;
}

SceneSpec make_cable_scene(const SceneGenConfig& cfg, icd::Rng& rng) {
  SceneSpec s;
  s.task_tag = TaskTag::cable_routing;
  s.workspace = Aabb{Vec3(-0.35, -0.35, -0.02), Vec3(0.35, 0.35, 0.25)};
  s.fixture_gap = 0.05;
  // table, top surface at z = 0
  Primitive table;
  table.kind = PrimitiveKind::box;
  table.center = Vec3(0, 0, -0.05);
  table.dims = Vec3(0.38, 0.38, 0.05);
  s.primitives.push_back(table);
  s.rope_anchor = Vec3(rng.uniform(cfg.anchor_x_lo, cfg.anchor_x_hi),
                       rng.uniform(cfg.anchor_y_lo, cfg.anchor_y_hi), 0.01);
  double theta = rng.uniform(cfg.corridor_angle_lo, cfg.corridor_angle_hi);
  Vec3 dir = local_x(theta);
  double window_mid = kPostHalf.y() + 0.5 * s.fixture_gap;
  for (int f = 0; f < cfg.num_fixtures; ++f) {
    double t = rng.uniform(cfg.fixture_t_lo[f % 2], cfg.fixture_t_hi[f % 2]);
    double yaw = theta + rng.uniform(-cfg.fixture_yaw_jitter, cfg.fixture_yaw_jitter);
    double off = rng.uniform(-cfg.fixture_lateral_jitter, cfg.fixture_lateral_jitter);
    Vec3 mid = s.rope_anchor + t * dir + off * local_y(yaw);
    Primitive anchor;
    anchor.kind = PrimitiveKind::box;
    anchor.center = mid - window_mid * local_y(yaw);
    anchor.center.z() = kPostHalf.z();
    anchor.yaw = yaw;
    anchor.dims = kPostHalf;
    Primitive twin = anchor;
    twin.center += (2.0 * kPostHalf.y() + s.fixture_gap) * local_y(yaw);
    s.fixture_ids.push_back(int(s.primitives.size()));
    s.primitives.push_back(anchor);
    s.primitives.push_back(twin);
  }
  return s;
}

SceneSpec make_notebook_scene(const SceneGenConfig& cfg, icd::Rng& rng) {
  SceneSpec s;
  s.task_tag = TaskTag::notebook_folding;
  s.workspace = Aabb{Vec3(-0.35, -0.35, -0.02), Vec3(0.35, 0.35, 0.35)};
  Primitive ground;
  ground.kind = PrimitiveKind::box;
  ground.center = Vec3(0, 0, -0.05);
  ground.dims = Vec3(0.38, 0.38, 0.05);
  s.primitives.push_back(ground);
  Primitive table;
  table.kind = PrimitiveKind::box;
  table.center = Vec3(rng.uniform(cfg.table_x_lo, cfg.table_x_hi),
                      rng.uniform(cfg.table_y_lo, cfg.table_y_hi), 0.03);
  table.dims = Vec3(0.15, 0.13, 0.03);
  s.primitives.push_back(table);
  return s;
}

SceneSpec make_scene(const SceneGenConfig& cfg, icd::Rng& rng) {
  return cfg.task == TaskTag::cable_routing ? make_cable_scene(cfg, rng)
                                            : make_notebook_scene(cfg, rng);
}

SimState initial_state(const SceneSpec& scene, const SimConfig& cfg, icd::Rng& rng) {
  if (scene.task_tag == TaskTag::cable_routing) {
    Vec3 anchor = scene.rope_anchor;
    anchor.z() = std::max(anchor.z(), cfg.rope_radius);
    // lay the cable down-table, away from the routing corridor
    double ang = rng.uniform(-0.65, -0.35);
    return make_rope_state(scene, cfg, anchor, Vec3(std::cos(ang), std::sin(ang), 0.0));
  }
  NotebookPose pose;
  pose.center = Vec3(rng.uniform(-0.20, -0.14), rng.uniform(-0.05, 0.05), cfg.panel_clearance);
  pose.yaw = rng.uniform(-0.15, 0.15);
  pose.tilt_a = 0.0;
  pose.tilt_b = 0.0;
  return make_notebook_state(scene, cfg, pose);
}

namespace {

// move the gripper toward a waypoint; returns false if progress stalls
bool drive_to(SimState& state, const Vec3& target, const SceneSpec& scene,
              const SimConfig& cfg, int max_steps, double tol = 0.008) {
  for (int k = 0; k < max_steps; ++k) {
    Vec3 d = target - state.gripper_pos;
    if (d.norm() < tol) return true;
    Action a;
    a.delta = d.norm() > cfg.a_max * 0.9 ? Vec3(d * (cfg.a_max * 0.9 / d.norm())) : d;
    SimState next = step(state, a, scene, cfg);
    if ((next.gripper_pos - state.gripper_pos).norm() < 1e-7) return false;
    state = next;
  }
  return (target - state.gripper_pos).norm() < 4.0 * tol;
}

bool cable_goal_script(const SceneSpec& scene, const SimConfig& cfg, SimState& state) {
  for (int id : scene.fixture_ids) {
    FixtureOpening o = fixture_opening(scene, id);
    Vec3 mid = o.center + 0.5 * (o.lat_lo + o.lat_hi) * o.lateral;
    Vec3 wps[3] = {mid - 0.06 * o.normal, mid, mid + 0.05 * o.normal};
    for (Vec3& w : wps) w.z() = 0.03;
    for (const Vec3& w : wps)
      if (!drive_to(state, w, scene, cfg, 500)) return false;
  }
  for (int k = 0; k < 30; ++k) state = step(state, Action{}, scene, cfg);
  for (int id : scene.fixture_ids)
    if (net_crossings(state.particles, fixture_opening(scene, id)) == 0) return false;
  return !state.stuck;
}

bool notebook_goal_script(const SceneSpec& scene, const SimConfig& cfg, SimState& state) {
  const Primitive& table = scene.primitives.at(1);
  double top = table.center.z() + table.dims.z();
  Vec3 m = across(state.notebook.yaw);
  // where the hinge lands; the folded panels then span the +m side of it
  Vec3 hinge(table.center.x(), table.center.y(), top + cfg.panel_clearance);
  // lift so the fully dangling notebook clears the table, carry it over,
  // descend vertically to seat the hinge, then fold with a descending arc
  // of radius panel_len about the hinge line
  double carry_z = top + 2.0 * cfg.panel_len + 0.02;
  Vec3 up = state.gripper_pos;
  up.z() = carry_z;
  if (!drive_to(state, up, scene, cfg, 300)) return false;
  Vec3 over = hinge;
  over.z() = carry_z;
  if (!drive_to(state, over, scene, cfg, 800)) return false;
  Vec3 seat = hinge + Vec3(0, 0, cfg.panel_len);
  if (!drive_to(state, seat, scene, cfg, 300)) return false;
  for (double tb = 1.57; tb <= kPi - 0.12; tb += 0.15) {
    Vec3 target =
        hinge + cfg.panel_len * (-std::cos(tb) * m + std::sin(tb) * Vec3(0, 0, 1));
    if (!drive_to(state, target, scene, cfg, 200, 0.01)) return false;
  }
  for (int k = 0; k < 20; ++k) state = step(state, Action{}, scene, cfg);
  bool folded = state.hinge_angle < 0.5;
  bool on_table = std::abs(state.notebook.center.z() - top) < 0.03;
  return folded && on_table && !state.stuck;
}

}  // namespace

bool run_goal_script(const SceneSpec& scene, const SimConfig& cfg, SimState& io_state) {
  return scene.task_tag == TaskTag::cable_routing
             ? cable_goal_script(scene, cfg, io_state)
             : notebook_goal_script(scene, cfg, io_state);
}

bool perturb_fixtures(SceneSpec& scene, double pos_range, double yaw_range, icd::Rng& rng) {
  if (scene.task_tag != TaskTag::cable_routing) return false;
  SceneSpec out = scene;
  for (int id : out.fixture_ids) {
    Primitive& anchor = out.primitives.at(size_t(id));
    anchor.center.x() += rng.uniform(-pos_range, pos_range);
    anchor.center.y() += rng.uniform(-pos_range, pos_range);
    anchor.yaw += rng.uniform(-yaw_range, yaw_range);
    Primitive& twin = out.primitives.at(size_t(id) + 1);
    twin = anchor;
    twin.center += (2.0 * anchor.dims.y() + out.fixture_gap) * local_y(anchor.yaw);
  }
  // reject overlapping fixtures or fixtures off the table
  for (size_t a = 0; a < out.fixture_ids.size(); ++a)
    for (size_t b = a + 1; b < out.fixture_ids.size(); ++b) {
      Vec3 da = out.primitives[size_t(out.fixture_ids[a])].center;
      Vec3 db = out.primitives[size_t(out.fixture_ids[b])].center;
      if ((da - db).head<2>().norm() < 0.06) return false;
    }
  for (int id : out.fixture_ids) {
    const Vec3& c = out.primitives[size_t(id)].center;
    if (std::abs(c.x()) > 0.30 || std::abs(c.y()) > 0.30) return false;
  }
  scene = std::move(out);
  return true;
}

}  // namespace icd::sim
