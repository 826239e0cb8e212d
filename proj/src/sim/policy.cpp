#include "icd/sim/policy.hpp"

#include <cmath>

namespace icd::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void ScriptedPolicy::resample(const SimState& state, const SceneSpec& scene,
                              const SimConfig& cfg, icd::Rng& rng) {
  waypoints_.clear();
  if (scene.task_tag == TaskTag::cable_routing) {
    double u = rng.uniform();
    if (u < 0.55 && !scene.fixture_ids.empty()) {
      // thread (or unthread) a random fixture
      int id = scene.fixture_ids[rng.uniform_index(scene.fixture_ids.size())];
      FixtureOpening o = fixture_opening(scene, id);
      Vec3 mid = o.center + 0.5 * (o.lat_lo + o.lat_hi) * o.lateral;
      double z = rng.uniform(0.02, 0.05);
      Vec3 jitter(rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), 0.0);
      Vec3 pre = mid - 0.07 * o.normal + jitter;
      Vec3 post = mid + 0.06 * o.normal + jitter;
      pre.z() = post.z() = z;
      Vec3 through = mid;
      through.z() = z;
      if (rng.uniform() < 0.3) std::swap(pre, post);
      waypoints_.push_back(pre);
      waypoints_.push_back(through);
      waypoints_.push_back(post);
    } else {
      Vec3 c = state.fixed_index ? state.anchor_pos : state.gripper_pos;
      double r = rng.uniform(0.08, 0.42);
      double a = rng.uniform(0.0, 2.0 * kPi);
      Vec3 p = c + Vec3(r * std::cos(a), r * std::sin(a), 0.0);
      p.z() = rng.uniform(0.015, 0.08);
      waypoints_.push_back(p);
    }
  } else {
    double u = rng.uniform();
    const Primitive& table = scene.primitives.at(1);
    double top = table.center.z() + table.dims.z();
    if (u < 0.3) {
      // partial fold/unfold arc around the current hinge
      const NotebookPose& q = state.notebook;
      Vec3 m(std::sin(q.yaw), -std::cos(q.yaw), 0.0);
      double t0 = q.tilt_b;
      double t1 = std::clamp(t0 + rng.uniform(-1.4, 1.4), 0.05, kPi - 0.1);
      for (double t = t0; std::abs(t - t1) > 0.15; t += (t1 > t0 ? 0.15 : -0.15))
        waypoints_.push_back(q.center + cfg.panel_len *
                                            (-std::cos(t) * m + std::sin(t) * Vec3(0, 0, 1)));
    } else if (u < 0.6) {
      // hop toward / onto the table
      Vec3 over(table.center.x() + rng.uniform(-0.06, 0.02),
                table.center.y() + rng.uniform(-0.05, 0.05), top + rng.uniform(0.06, 0.14));
      waypoints_.push_back(state.gripper_pos + Vec3(0, 0, 0.10));
      waypoints_.push_back(over);
      if (rng.uniform() < 0.6) {
        Vec3 down = over;
        down.z() = top + cfg.panel_clearance + rng.uniform(0.0, 0.02);
        waypoints_.push_back(down);
      }
    } else {
      Vec3 p(state.gripper_pos.x() + rng.uniform(-0.15, 0.15),
             state.gripper_pos.y() + rng.uniform(-0.15, 0.15), rng.uniform(0.02, 0.2));
      waypoints_.push_back(p);
    }
    if (waypoints_.empty()) waypoints_.push_back(state.gripper_pos);
  }
}

Action ScriptedPolicy::act(const SimState& state, const SceneSpec& scene,
                           const SimConfig& cfg, icd::Rng& rng) {
  if (waypoints_.empty() || rng.uniform() < 0.02) resample(state, scene, cfg, rng);
  while (!waypoints_.empty() && (waypoints_.front() - state.gripper_pos).norm() < 0.012)
    waypoints_.pop_front();
  if (waypoints_.empty()) resample(state, scene, cfg, rng);

  Vec3 d = waypoints_.front() - state.gripper_pos;
  double n = d.norm();
  Vec3 move = n > 1e-9 ? Vec3(d * (0.85 * cfg.a_max / std::max(n, 0.85 * cfg.a_max)))
                       : Vec3::Zero();
  move += Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.0015;
  double mn = move.norm();
  if (mn > cfg.a_max) move *= cfg.a_max / mn;
  return Action{move};
}

}  // namespace icd::sim
