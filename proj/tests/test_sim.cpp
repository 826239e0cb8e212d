#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "icd/sim/dataset.hpp"
#include "icd/sim/policy.hpp"
#include "icd/sim/tasks.hpp"

using namespace icd::sim;

namespace {

SceneSpec default_cable_scene(uint64_t seed = 1) {
  SceneGenConfig g;
  icd::Rng rng(seed);
  return make_cable_scene(g, rng);
}

SimConfig sim_config() {
  SimConfig c;
  c.gripper_min_z = c.rope_radius;
  return c;
}

}  // namespace

TEST_CASE("box sdf at the center equals minus the smallest half extent") {
  Primitive b;
  b.kind = PrimitiveKind::box;
  b.center = Vec3(0.1, -0.2, 0.3);
  b.dims = Vec3(0.05, 0.02, 0.08);
  b.yaw = 0.7;
  CHECK(primitive_sdf(b, b.center) == doctest::Approx(-0.02).epsilon(1e-12));
}

TEST_CASE("sdf is zero on primitive faces") {
  Primitive b;
  b.kind = PrimitiveKind::box;
  b.center = Vec3(0, 0, 0);
  b.dims = Vec3(0.05, 0.03, 0.04);
  b.yaw = 0.3;
  Vec3 face_local(0.05, 0.01, -0.02);
  Vec3 world = b.center + b.to_world_dir(face_local);
  CHECK(std::abs(primitive_sdf(b, world)) < 1e-9);

  Primitive c;
  c.kind = PrimitiveKind::cylinder;
  c.dims = Vec3(0.04, 0.06, 0);
  CHECK(std::abs(primitive_sdf(c, Vec3(0.04, 0, 0.01))) < 1e-9);

  Primitive cap;
  cap.kind = PrimitiveKind::capsule;
  cap.dims = Vec3(0.05, 0.015, 0);
  CHECK(std::abs(primitive_sdf(cap, Vec3(0.02, 0.015, 0))) < 1e-9);
  CHECK(std::abs(primitive_sdf(cap, Vec3(0.065, 0, 0))) < 1e-9);
}

TEST_CASE("sdf against brute-force surface sampling") {
  SceneSpec s = default_cable_scene();
  icd::Rng rng(99);
  // dense surface samples as an independent distance oracle
  Points surf = sample_scene_point_cloud(s, 100000, rng);
  double spacing = 0.004;  // ~sqrt(area/n)
  for (int k = 0; k < 50; ++k) {
    Vec3 x(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.0, 0.2));
    double nearest = 1e9;
    for (Eigen::Index i = 0; i < surf.rows(); ++i)
      nearest = std::min(nearest, (surf.row(i).transpose() - x).norm());
    double d = std::abs(scene_sdf(s, x));
    CHECK(std::abs(d - nearest) < 2.0 * spacing);
  }
}

TEST_CASE("sdf gradient matches central differences") {
  SceneSpec s = default_cable_scene(3);
  icd::Rng rng(7);
  const double h = 1e-5;
  int ok = 0, total = 0;
  for (int k = 0; k < 1000; ++k) {
    Vec3 x(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.2));
    Vec3 fd;
    for (int d = 0; d < 3; ++d) {
      Vec3 e = Vec3::Zero();
      e(d) = h;
      fd(d) = (scene_sdf(s, x + e) - scene_sdf(s, x - e)) / (2 * h);
    }
    if (fd.norm() < 1e-6) continue;
    fd.normalize();
    Vec3 g = scene_sdf_gradient(s, x);
    ++total;
    if (g.dot(fd) >= 0.999) ++ok;
  }
  CHECK(double(ok) / total >= 0.99);
}

TEST_CASE("gradient above the tabletop points up") {
  SceneSpec s = default_cable_scene();
  Vec3 g = scene_sdf_gradient(s, Vec3(-0.3, -0.3, 0.05));
  CHECK(g.isApprox(Vec3(0, 0, 1), 1e-9));
}

TEST_CASE("gradient inside a box points at the nearest face") {
  Primitive b;
  b.kind = PrimitiveKind::box;
  b.dims = Vec3(0.05, 0.05, 0.05);
  Vec3 g = primitive_sdf_gradient(b, Vec3(0.04, 0.0, 0.0));
  CHECK(g.isApprox(Vec3(1, 0, 0), 1e-12));
}

TEST_CASE("scene sdf is the min over member primitives") {
  SceneSpec s = default_cable_scene(5);
  icd::Rng rng(13);
  for (int k = 0; k < 200; ++k) {
    Vec3 x(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.2));
    double manual = 1e18;
    for (const auto& p : s.primitives) manual = std::min(manual, primitive_sdf(p, x));
    CHECK(scene_sdf(s, x) == manual);
  }
}

TEST_CASE("surface sampling is deterministic and on-surface") {
  SceneSpec s = default_cable_scene();
  icd::Rng r1(42), r2(42);
  Points a = sample_scene_point_cloud(s, 1000, r1);
  Points b = sample_scene_point_cloud(s, 1000, r2);
  CHECK(a == b);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    worst = std::max(worst, std::abs(scene_sdf(s, a.row(i).transpose())));
  CHECK(worst <= 1e-6);
}

TEST_CASE("per-primitive sample counts follow exposed area") {
  // two disjoint boxes fully inside the workspace: exact analytic areas
  SceneSpec s;
  s.task_tag = TaskTag::notebook_folding;
  s.workspace = Aabb{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  Primitive b1, b2;
  b1.kind = b2.kind = PrimitiveKind::box;
  b1.center = Vec3(-0.4, 0, 0);
  b1.dims = Vec3(0.1, 0.1, 0.1);
  b2.center = Vec3(0.4, 0, 0);
  b2.dims = Vec3(0.2, 0.1, 0.05);
  s.primitives = {b1, b2};
  icd::Rng rng(8);
  int n = 100000;
  Points pts = sample_scene_point_cloud(s, n, rng);
  int c1 = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    if (pts(i, 0) < 0) ++c1;
  double a1 = b1.surface_area(), a2 = b2.surface_area();
  double expect = a1 / (a1 + a2);
  CHECK(std::abs(double(c1) / n - expect) < 0.05 * expect);
}

TEST_CASE("fully buried primitive fails surface sampling") {
  SceneSpec s;
  s.task_tag = TaskTag::notebook_folding;
  s.workspace = Aabb{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  Primitive outer, inner;
  outer.kind = inner.kind = PrimitiveKind::box;
  outer.dims = Vec3(0.3, 0.3, 0.3);
  inner.dims = Vec3(0.05, 0.05, 0.05);
  s.primitives = {outer, inner};
  icd::Rng rng(1);
  CHECK_THROWS_AS(sample_scene_point_cloud(s, 10, rng), std::runtime_error);
}

TEST_CASE("scene invariants are enforced") {
  SceneSpec s = default_cable_scene();
  SceneSpec bad = s;
  bad.primitives[0].dims.x() = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.fixture_ids.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.task_tag = TaskTag::notebook_folding;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("resting rope is a fixed point of the zero-action step") {
  SceneSpec s = default_cable_scene();
  SimConfig cfg = sim_config();
  icd::Rng rng(4);
  SimState st = initial_state(s, cfg, rng);
  SimState next = step(st, Action{}, s, cfg);
  CHECK((next.particles - st.particles).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_FALSE(next.stuck);
}

TEST_CASE("pushing into a fixture keeps the rope outside the sdf") {
  SceneSpec s = default_cable_scene();
  SimConfig cfg = sim_config();
  icd::Rng rng(4);
  SimState st = initial_state(s, cfg, rng);
  Vec3 target = s.primitives[size_t(s.fixture_ids[0])].center;
  target.z() = 0.03;
  for (int k = 0; k < 200; ++k) {
    Vec3 d = target - st.gripper_pos;
    if (d.norm() < 0.005) break;
    Action a;
    a.delta = d.normalized() * cfg.a_max;
    st = step(st, a, s, cfg);
  }
  double min_sdf = 1e9;
  for (Eigen::Index i = 0; i < st.particles.rows(); ++i)
    min_sdf = std::min(min_sdf, scene_sdf(s, st.particles.row(i).transpose()));
  CHECK(min_sdf >= cfg.rope_radius - 1e-4);
}

TEST_CASE("segment lengths stay within 10 percent over random steps") {
  SceneSpec s = default_cable_scene(6);
  SimConfig cfg = sim_config();
  icd::Rng rng(15);
  SimState st = initial_state(s, cfg, rng);
  ScriptedPolicy policy;
  double rest = cfg.rest_segment();
  for (int k = 0; k < 100; ++k) {
    st = step(st, policy.act(st, s, cfg, rng), s, cfg);
    for (Eigen::Index i = 0; i + 1 < st.particles.rows(); ++i) {
      double len = (st.particles.row(i + 1) - st.particles.row(i)).norm();
      CHECK(std::abs(len - rest) <= 0.1 * rest);
    }
  }
}

TEST_CASE("dynamics are bitwise deterministic") {
  SceneSpec s = default_cable_scene(2);
  SimConfig cfg = sim_config();
  icd::Rng rng(3);
  SimState st = initial_state(s, cfg, rng);
  Action a;
  a.delta = Vec3(0.004, -0.006, 0.002);
  SimState n1 = step(st, a, s, cfg);
  SimState n2 = step(st, a, s, cfg);
  CHECK(n1.particles == n2.particles);
  CHECK(n1.gripper_pos == n2.gripper_pos);
}

TEST_CASE("action clamp bounds every step") {
  SceneSpec s = default_cable_scene(2);
  SimConfig cfg = sim_config();
  icd::Rng rng(3);
  SimState st = initial_state(s, cfg, rng);
  Action a;
  a.delta = Vec3(5, 5, 5);
  SimState n = step(st, a, s, cfg);
  CHECK((n.gripper_pos - st.gripper_pos).norm() <= cfg.a_max + 1e-12);
}

TEST_CASE("object point cloud keeps material correspondence") {
  SimConfig cfg = sim_config();
  // synthetic straight rope: the sampled cloud must be collinear with
  // uniform spacing between consecutive points
  SimState st;
  st.grasped_index = cfg.rope_particles - 1;
  st.particles.resize(cfg.rope_particles, 3);
  Vec3 a(-0.2, -0.1, 0.05), dir = Vec3(2, 1, 0.2).normalized();
  for (int i = 0; i < cfg.rope_particles; ++i)
    st.particles.row(i) = a + double(i) * cfg.rest_segment() * dir;
  Points c = object_point_cloud(st, 200, cfg);
  CHECK(c.rows() == 200);
  Vec3 step01 = c.row(1) - c.row(0);
  for (int i = 1; i < 200; ++i) {
    Vec3 di = c.row(i) - c.row(i - 1);
    CHECK((di - step01).norm() < 1e-9);
    CHECK(di.normalized().dot(dir) > 1.0 - 1e-9);
  }
  // endpoints track the anchor-end and gripper-end particles exactly
  CHECK((c.row(0) - st.particles.row(0)).norm() < 1e-12);
  CHECK((c.row(199) - st.particles.row(cfg.rope_particles - 1)).norm() < 1e-12);
  // the same material coordinates are used in any configuration: bend the
  // rope and check cloud points still interpolate their bracketing segment
  SceneSpec s = default_cable_scene(2);
  icd::Rng rng(3);
  SimState st2 = initial_state(s, cfg, rng);
  ScriptedPolicy policy;
  for (int k = 0; k < 20; ++k) st2 = step(st2, policy.act(st2, s, cfg, rng), s, cfg);
  Points c2 = object_point_cloud(st2, 200, cfg);
  CHECK((c2.row(0) - st2.particles.row(0)).norm() < 1e-12);
  CHECK((c2.row(199) - st2.particles.row(cfg.rope_particles - 1)).norm() < 1e-12);
  for (int j = 0; j < 200; ++j) {
    double u = double(j) / 199.0 * double(cfg.rope_particles - 1);
    int i = std::min(int(u), cfg.rope_particles - 2);
    double f = u - i;
    Vec3 expect = (1.0 - f) * st2.particles.row(i) + f * st2.particles.row(i + 1);
    CHECK((c2.row(j).transpose() - expect).norm() < 1e-12);
  }
}

TEST_CASE("notebook flat configuration yields a planar cloud") {
  SceneGenConfig g;
  g.task = TaskTag::notebook_folding;
  icd::Rng rng(5);
  SceneSpec s = make_notebook_scene(g, rng);
  SimConfig cfg;
  NotebookPose pose;
  pose.center = Vec3(-0.15, 0.02, cfg.panel_clearance);
  pose.yaw = 0.4;
  // kinematic check: a flat pose maps to a planar cloud at the pose height
  SimState st;
  st.grasped_index = -1;
  st.notebook = pose;
  st.particles = notebook_samples(pose, cfg, cfg.panel_rows, cfg.panel_cols);
  Points c = object_point_cloud(st, 200, cfg);
  CHECK((c.col(2).array() - cfg.panel_clearance).abs().maxCoeff() < 1e-12);
  // and the settled state near a flat pose stays nearly flat
  SimState settled = make_notebook_state(s, cfg, pose);
  CHECK(settled.hinge_angle > 3.0);
  Points cs = object_point_cloud(settled, 200, cfg);
  CHECK((cs.col(2).array() - cs.col(2).mean()).abs().maxCoeff() < 0.01);
}

TEST_CASE("scripted policy respects the action bound and is seeded") {
  SceneSpec s = default_cable_scene(9);
  SimConfig cfg = sim_config();
  icd::Rng rng(31);
  SimState st = initial_state(s, cfg, rng);
  ScriptedPolicy p1;
  icd::Rng ra(77), rb(77);
  ScriptedPolicy p2;
  SimState sa = st, sb = st;
  for (int k = 0; k < 50; ++k) {
    Action a = p1.act(sa, s, cfg, ra);
    Action b = p2.act(sb, s, cfg, rb);
    CHECK(a.delta == b.delta);
    CHECK(a.delta.norm() <= cfg.a_max + 1e-12);
    sa = step(sa, a, s, cfg);
    sb = step(sb, b, s, cfg);
  }
}

TEST_CASE("scripted trajectories make fixture contact often enough") {
  SimConfig cfg = sim_config();
  SceneGenConfig g;
  icd::Rng root(123);
  int with_contact = 0;
  const int trials = 30;
  for (int i = 0; i < trials; ++i) {
    icd::Rng rng = root.fork(uint64_t(i));
    SceneSpec s = make_cable_scene(g, rng);
    SimState st = initial_state(s, cfg, rng);
    ScriptedPolicy policy;
    bool contact = false;
    for (int k = 0; k < 100 && !contact; ++k) {
      st = step(st, policy.act(st, s, cfg, rng), s, cfg);
      for (int id : s.fixture_ids)
        for (Eigen::Index j = 0; j < st.particles.rows(); ++j) {
          double d = primitive_sdf(s.primitives[size_t(id)], st.particles.row(j).transpose());
          double d2 =
              primitive_sdf(s.primitives[size_t(id) + 1], st.particles.row(j).transpose());
          if (std::min(d, d2) < cfg.rope_radius + 1e-3) contact = true;
        }
    }
    if (contact) ++with_contact;
  }
  CHECK(double(with_contact) / trials >= 0.3);
}

TEST_CASE("routing predicate counts signed crossings") {
  SceneSpec s = default_cable_scene(1);
  FixtureOpening o = fixture_opening(s, s.fixture_ids[0]);
  Vec3 mid = o.center + 0.5 * (o.lat_lo + o.lat_hi) * o.lateral + Vec3(0, 0, 0.0);
  mid.z() = 0.5 * (o.z_lo + o.z_hi);
  Points through(2, 3);
  through.row(0) = mid - 0.1 * o.normal;
  through.row(1) = mid + 0.1 * o.normal;
  CHECK(net_crossings(through, o) == 1);
  Points back = through.colwise().reverse();
  CHECK(net_crossings(back, o) == -1);
  // outside the gap: no crossing
  Points miss(2, 3);
  miss.row(0) = Vec3(o.center + (o.lat_hi + 0.05) * o.lateral - 0.1 * o.normal);
  miss.row(1) = Vec3(o.center + (o.lat_hi + 0.05) * o.lateral + 0.1 * o.normal);
  miss(0, 2) = miss(1, 2) = mid.z();
  CHECK(net_crossings(miss, o) == 0);
  // in-and-back cancels
  Points inback(3, 3);
  inback.row(0) = through.row(0);
  inback.row(1) = through.row(1);
  inback.row(2) = through.row(0);
  CHECK(net_crossings(inback, o) == 0);
}

TEST_CASE("task success definitions for cable routing") {
  SceneSpec s = default_cable_scene(1);
  SimConfig cfg = sim_config();
  // synthetic goal polyline routed through both fixtures
  auto thread_points = [&](int id) {
    FixtureOpening o = fixture_opening(s, id);
    Vec3 mid = o.center + 0.5 * (o.lat_lo + o.lat_hi) * o.lateral;
    mid.z() = 0.02;
    return std::pair<Vec3, Vec3>(mid - 0.08 * o.normal, mid + 0.08 * o.normal);
  };
  auto [a0, a1] = thread_points(s.fixture_ids[0]);
  auto [b0, b1] = thread_points(s.fixture_ids[1]);
  GoalSpec goal;
  goal.object_cloud.resize(4, 3);
  goal.object_cloud.row(0) = a0;
  goal.object_cloud.row(1) = a1;
  goal.object_cloud.row(2) = b0;
  goal.object_cloud.row(3) = b1;

  SimState st;
  st.grasped_index = 0;
  st.particles = goal.object_cloud;  // rope exactly on the goal polyline
  SuccessResult both = task_success(st, goal, s, cfg, 4);
  CHECK(both.success);
  CHECK(both.complete_rate == 1.0);

  st.particles.resize(2, 3);  // only through the first fixture
  st.particles.row(0) = a0;
  st.particles.row(1) = a1;
  SuccessResult one = task_success(st, goal, s, cfg, 4);
  CHECK_FALSE(one.success);
  CHECK(one.complete_rate == 0.5);
}

TEST_CASE("notebook success at zero distance") {
  SceneGenConfig g;
  g.task = TaskTag::notebook_folding;
  icd::Rng rng(5);
  SceneSpec s = make_notebook_scene(g, rng);
  SimConfig cfg;
  SimState st = initial_state(s, cfg, rng);
  GoalSpec goal;
  goal.object_cloud = object_point_cloud(st, 200, cfg);
  SuccessResult r = task_success(st, goal, s, cfg, 200);
  CHECK(r.success);
}

TEST_CASE("dataset collection: bookkeeping, determinism, ranges") {
  namespace fs = std::filesystem;
  CollectConfig cfg;
  cfg.num_trajectories = 10;
  cfg.traj_len = 20;
  cfg.cloud_points = 50;
  cfg.seed = 5;
  cfg.sim.gripper_min_z = cfg.sim.rope_radius;
  fs::path dir1 = fs::temp_directory_path() / "icd_ds_test1";
  fs::path dir2 = fs::temp_directory_path() / "icd_ds_test2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  Dataset ds = collect_dataset(cfg, dir1.string());
  CHECK(ds.records.size() == 10);
  for (const auto& r : ds.records) {
    CHECK(r.clouds.size() == 21);
    CHECK(r.actions.size() == 20);
    CHECK(r.grippers.size() == 21);
  }
  collect_dataset(cfg, dir2.string());
  std::ifstream m1(dir1 / "manifest"), m2(dir2 / "manifest");
  std::string s1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  // fixture randomization stays inside the configured corridor ranges
  for (const auto& scene : ds.scenes) {
    CHECK(scene.rope_anchor.x() >= cfg.scene_gen.anchor_x_lo - 1e-12);
    CHECK(scene.rope_anchor.x() <= cfg.scene_gen.anchor_x_hi + 1e-12);
    CHECK(scene.rope_anchor.y() >= cfg.scene_gen.anchor_y_lo - 1e-12);
    CHECK(scene.rope_anchor.y() <= cfg.scene_gen.anchor_y_hi + 1e-12);
    for (size_t f = 0; f < scene.fixture_ids.size(); ++f) {
      FixtureOpening o = fixture_opening(scene, scene.fixture_ids[f]);
      Vec3 mid = o.center + 0.5 * (o.lat_lo + o.lat_hi) * o.lateral;
      double t = (mid - scene.rope_anchor).head<2>().norm();
      double pad = cfg.scene_gen.fixture_lateral_jitter + 1e-9;
      CHECK(t >= cfg.scene_gen.fixture_t_lo[f % 2] - pad);
      CHECK(t <= cfg.scene_gen.fixture_t_hi[f % 2] + pad);
    }
  }
  // round trip through the binary container
  Dataset loaded = load_dataset(dir1.string());
  CHECK(loaded.records.size() == ds.records.size());
  for (size_t i = 0; i < loaded.records.size(); ++i)
    CHECK(loaded.records[i].clouds[0].cast<float>() == ds.records[i].clouds[0].cast<float>());
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("goal script routes both fixtures") {
  SimConfig cfg = sim_config();
  SceneGenConfig g;
  int ok = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    icd::Rng rng(seed + 100);
    SceneSpec s = make_cable_scene(g, rng);
    SimState st = initial_state(s, cfg, rng);
    if (run_goal_script(s, cfg, st)) ++ok;
  }
  CHECK(ok >= 4);
}
