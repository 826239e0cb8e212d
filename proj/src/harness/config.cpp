#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "icd/harness/harness.hpp"

namespace icd::harness {

namespace {

// FNV-1a, stable across platforms
uint64_t fnv1a(const std::string& s) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void check_keys(const json& j, const std::set<std::string>& known, const std::string& ctx) {
  if (!j.is_object()) throw std::invalid_argument("config: " + ctx + " must be an object");
  for (const auto& [key, val] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " + ctx);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

json points_to_json(const Points& p) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    rows.push_back(json::array({p(i, 0), p(i, 1), p(i, 2)}));
  return rows;
}

Points points_from_json(const json& j) {
  Points p(j.size(), 3);
  for (size_t i = 0; i < j.size(); ++i)
    for (int c = 0; c < 3; ++c) p(Eigen::Index(i), c) = j.at(i).at(size_t(c)).get<double>();
  return p;
}

}  // namespace

MethodSpec method_from_name(const std::string& name) {
  using mpc::CostMode;
  if (name == "icd") return {name, CostMode::ndf_subgoals, true, true, true, false};
  if (name == "global-ndf") return {name, CostMode::ndf_subgoals, true, true, true, true};
  if (name == "subgoal-pc") return {name, CostMode::pc_subgoals, false, true, true, false};
  if (name == "ndf-mppi") return {name, CostMode::ndf_goal_only, true, false, false, false};
  if (name == "pc-mppi") return {name, CostMode::pc_goal_only, false, false, false, false};
  throw std::invalid_argument("unknown method \"" + name + "\"; expected one of icd, " +
                              "subgoal-pc, pc-mppi, ndf-mppi, global-ndf");
}

std::vector<std::string> method_names() {
  return {"icd", "subgoal-pc", "pc-mppi", "ndf-mppi", "global-ndf"};
}

sim::TaskTag ExperimentConfig::task_tag() const {
  if (task == "cable") return sim::TaskTag::cable_routing;
  if (task == "notebook") return sim::TaskTag::notebook_folding;
  throw std::invalid_argument("unknown task \"" + task + "\"; expected cable or notebook");
}

void ExperimentConfig::validate() const {
  task_tag();
  method_from_name(method);
  if (cloud_points < 2) throw std::invalid_argument("config: cloud_points must be >= 2");
  if (scene_points < 8) throw std::invalid_argument("config: scene_points must be >= 8");
  if (eval_cases < 1 || eval_seeds < 1)
    throw std::invalid_argument("config: eval cases and seeds must be positive");
  if (holdout_records < 1)
    throw std::invalid_argument("config: holdout_records must be positive");
  if (adapt_pos_range < 0.0 || adapt_yaw_range < 0.0)
    throw std::invalid_argument("config: adaptation ranges must be non-negative");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.mppi.support_primitive = 0;  // primitive 0 is the table in both tasks
  check_keys(j,
             {"seed", "task", "method", "paths", "sim", "scene_gen", "collect", "ndf",
              "ndf_train", "vae", "vae_train", "diffusion", "diffusion_train", "mppi", "eval",
              "adapt"},
             "top level");
  get_if(j, "seed", c.seed);
  get_if(j, "task", c.task);
  get_if(j, "method", c.method);

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    check_keys(p, {"run_root", "dataset", "ndf", "vae", "ldm", "cache", "cases"}, "paths");
    get_if(p, "run_root", c.run_root);
    get_if(p, "dataset", c.dataset_dir);
    get_if(p, "ndf", c.ndf_path);
    get_if(p, "vae", c.vae_path);
    get_if(p, "ldm", c.ldm_path);
    get_if(p, "cache", c.cache_path);
    get_if(p, "cases", c.cases_path);
  }
  if (j.contains("sim")) {
    const json& s = j.at("sim");
    check_keys(s,
               {"a_max", "rope_radius", "rope_length", "rope_particles", "gravity_step",
                "solver_iterations", "residual_tol", "panel_len", "panel_width",
                "panel_clearance", "panel_rows", "panel_cols", "gripper_min_z"},
               "sim");
    get_if(s, "a_max", c.sim.a_max);
    get_if(s, "rope_radius", c.sim.rope_radius);
    get_if(s, "rope_length", c.sim.rope_length);
    get_if(s, "rope_particles", c.sim.rope_particles);
    get_if(s, "gravity_step", c.sim.gravity_step);
    get_if(s, "solver_iterations", c.sim.solver_iterations);
    get_if(s, "residual_tol", c.sim.residual_tol);
    get_if(s, "panel_len", c.sim.panel_len);
    get_if(s, "panel_width", c.sim.panel_width);
    get_if(s, "panel_clearance", c.sim.panel_clearance);
    get_if(s, "panel_rows", c.sim.panel_rows);
    get_if(s, "panel_cols", c.sim.panel_cols);
    if (s.contains("gripper_min_z")) {
      if (s.at("gripper_min_z").is_null())
        c.sim.gripper_min_z.reset();
      else
        c.sim.gripper_min_z = s.at("gripper_min_z").get<double>();
    }
  }
  if (j.contains("scene_gen")) {
    const json& g = j.at("scene_gen");
    check_keys(g,
               {"num_fixtures", "anchor_x_lo", "anchor_x_hi", "anchor_y_lo", "anchor_y_hi",
                "corridor_angle_lo", "corridor_angle_hi", "fixture_t_lo", "fixture_t_hi",
                "fixture_lateral_jitter", "fixture_yaw_jitter", "table_x_lo", "table_x_hi",
                "table_y_lo", "table_y_hi"},
               "scene_gen");
    get_if(g, "num_fixtures", c.scene_gen.num_fixtures);
    get_if(g, "anchor_x_lo", c.scene_gen.anchor_x_lo);
    get_if(g, "anchor_x_hi", c.scene_gen.anchor_x_hi);
    get_if(g, "anchor_y_lo", c.scene_gen.anchor_y_lo);
    get_if(g, "anchor_y_hi", c.scene_gen.anchor_y_hi);
    get_if(g, "corridor_angle_lo", c.scene_gen.corridor_angle_lo);
    get_if(g, "corridor_angle_hi", c.scene_gen.corridor_angle_hi);
    if (g.contains("fixture_t_lo"))
      for (int i = 0; i < 2; ++i) c.scene_gen.fixture_t_lo[i] = g.at("fixture_t_lo").at(i);
    if (g.contains("fixture_t_hi"))
      for (int i = 0; i < 2; ++i) c.scene_gen.fixture_t_hi[i] = g.at("fixture_t_hi").at(i);
    get_if(g, "fixture_lateral_jitter", c.scene_gen.fixture_lateral_jitter);
    get_if(g, "fixture_yaw_jitter", c.scene_gen.fixture_yaw_jitter);
    get_if(g, "table_x_lo", c.scene_gen.table_x_lo);
    get_if(g, "table_x_hi", c.scene_gen.table_x_hi);
    get_if(g, "table_y_lo", c.scene_gen.table_y_lo);
    get_if(g, "table_y_hi", c.scene_gen.table_y_hi);
  }
  if (j.contains("collect")) {
    const json& l = j.at("collect");
    check_keys(l, {"num_trajectories", "traj_len", "cloud_points", "seed"}, "collect");
    get_if(l, "num_trajectories", c.collect.num_trajectories);
    get_if(l, "traj_len", c.collect.traj_len);
    get_if(l, "cloud_points", c.collect.cloud_points);
    get_if(l, "seed", c.collect.seed);
  }
  if (j.contains("ndf")) {
    const json& n = j.at("ndf");
    check_keys(n,
               {"knn", "scene_knn", "normal_knn", "hidden", "desc_dim", "c_z", "knn_eps",
                "global_mean"},
               "ndf");
    get_if(n, "knn", c.ndf.knn);
    get_if(n, "scene_knn", c.ndf.scene_knn);
    get_if(n, "normal_knn", c.ndf.normal_knn);
    get_if(n, "hidden", c.ndf.hidden);
    get_if(n, "desc_dim", c.ndf.desc_dim);
    get_if(n, "c_z", c.ndf.c_z);
    get_if(n, "knn_eps", c.ndf.knn_eps);
    get_if(n, "global_mean", c.ndf.global_mean);
  }
  if (j.contains("ndf_train")) {
    const json& n = j.at("ndf_train");
    check_keys(n,
               {"epochs", "steps_per_epoch", "batch_queries", "scene_points", "lr", "near_band",
                "seed"},
               "ndf_train");
    get_if(n, "epochs", c.ndf_train.epochs);
    get_if(n, "steps_per_epoch", c.ndf_train.steps_per_epoch);
    get_if(n, "batch_queries", c.ndf_train.batch_queries);
    get_if(n, "scene_points", c.ndf_train.scene_points);
    get_if(n, "lr", c.ndf_train.lr);
    get_if(n, "near_band", c.ndf_train.near_band);
    get_if(n, "seed", c.ndf_train.seed);
  }
  if (j.contains("vae")) {
    const json& v = j.at("vae");
    check_keys(v, {"d_z", "hidden", "desc_dim", "bins", "bin_lo", "bin_hi", "gamma", "beta"},
               "vae");
    get_if(v, "d_z", c.vae.d_z);
    get_if(v, "hidden", c.vae.hidden);
    get_if(v, "desc_dim", c.vae.desc_dim);
    get_if(v, "bins", c.vae.bins);
    get_if(v, "bin_lo", c.vae.bin_lo);
    get_if(v, "bin_hi", c.vae.bin_hi);
    get_if(v, "gamma", c.vae.gamma);
    get_if(v, "beta", c.vae.beta);
  }
  if (j.contains("vae_train")) {
    const json& v = j.at("vae_train");
    check_keys(v,
               {"epochs", "steps_per_epoch", "batch_recon", "batch_pairs", "lr", "lambda_recon",
                "lambda_kl", "lambda_reach", "seed"},
               "vae_train");
    get_if(v, "epochs", c.vae_train.epochs);
    get_if(v, "steps_per_epoch", c.vae_train.steps_per_epoch);
    get_if(v, "batch_recon", c.vae_train.batch_recon);
    get_if(v, "batch_pairs", c.vae_train.batch_pairs);
    get_if(v, "lr", c.vae_train.lr);
    get_if(v, "lambda_recon", c.vae_train.lambda_recon);
    get_if(v, "lambda_kl", c.vae_train.lambda_kl);
    get_if(v, "lambda_reach", c.vae_train.lambda_reach);
    get_if(v, "seed", c.vae_train.seed);
  }
  if (j.contains("diffusion")) {
    const json& d = j.at("diffusion");
    check_keys(d,
               {"d_z", "hidden", "scene_dim", "steps", "l_max", "rho_reach", "beta_lo", "beta_hi",
                "goal_eps"},
               "diffusion");
    get_if(d, "d_z", c.diffusion.d_z);
    get_if(d, "hidden", c.diffusion.hidden);
    get_if(d, "scene_dim", c.diffusion.scene_dim);
    get_if(d, "steps", c.diffusion.steps);
    get_if(d, "l_max", c.diffusion.l_max);
    get_if(d, "rho_reach", c.diffusion.rho_reach);
    get_if(d, "beta_lo", c.diffusion.beta_lo);
    get_if(d, "beta_hi", c.diffusion.beta_hi);
    get_if(d, "goal_eps", c.diffusion.goal_eps);
  }
  if (j.contains("diffusion_train")) {
    const json& d = j.at("diffusion_train");
    check_keys(d, {"epochs", "steps_per_epoch", "batch", "lr", "min_level", "seed"},
               "diffusion_train");
    get_if(d, "epochs", c.diffusion_train.epochs);
    get_if(d, "steps_per_epoch", c.diffusion_train.steps_per_epoch);
    get_if(d, "batch", c.diffusion_train.batch);
    get_if(d, "lr", c.diffusion_train.lr);
    get_if(d, "min_level", c.diffusion_train.min_level);
    get_if(d, "seed", c.diffusion_train.seed);
  }
  if (j.contains("mppi")) {
    const json& m = j.at("mppi");
    check_keys(m,
               {"num_samples", "horizon", "noise_scale", "temperature", "lambda_col",
                "subgoal_reach_threshold", "replan_period", "step_cap", "support_primitive"},
               "mppi");
    get_if(m, "num_samples", c.mppi.num_samples);
    get_if(m, "horizon", c.mppi.horizon);
    get_if(m, "noise_scale", c.mppi.noise_scale);
    get_if(m, "temperature", c.mppi.temperature);
    get_if(m, "lambda_col", c.mppi.lambda_col);
    get_if(m, "subgoal_reach_threshold", c.mppi.subgoal_reach_threshold);
    get_if(m, "replan_period", c.mppi.replan_period);
    get_if(m, "step_cap", c.mppi.step_cap);
    get_if(m, "support_primitive", c.mppi.support_primitive);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"cloud_points", "scene_points", "cases", "seeds", "holdout_records"}, "eval");
    get_if(e, "cloud_points", c.cloud_points);
    get_if(e, "scene_points", c.scene_points);
    get_if(e, "cases", c.eval_cases);
    get_if(e, "seeds", c.eval_seeds);
    get_if(e, "holdout_records", c.holdout_records);
  }
  if (j.contains("adapt")) {
    const json& a = j.at("adapt");
    check_keys(a, {"pos_range", "yaw_range"}, "adapt");
    get_if(a, "pos_range", c.adapt_pos_range);
    get_if(a, "yaw_range", c.adapt_yaw_range);
  }
  c.scene_gen.task = c.task_tag();
  c.collect.scene_gen = c.scene_gen;
  c.collect.sim = c.sim;
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["task"] = c.task;
  j["method"] = c.method;
  j["paths"] = {{"run_root", c.run_root}, {"dataset", c.dataset_dir}, {"ndf", c.ndf_path},
                {"vae", c.vae_path},      {"ldm", c.ldm_path},        {"cache", c.cache_path},
                {"cases", c.cases_path}};
  j["sim"] = {{"a_max", c.sim.a_max},
              {"rope_radius", c.sim.rope_radius},
              {"rope_length", c.sim.rope_length},
              {"rope_particles", c.sim.rope_particles},
              {"gravity_step", c.sim.gravity_step},
              {"solver_iterations", c.sim.solver_iterations},
              {"residual_tol", c.sim.residual_tol},
              {"panel_len", c.sim.panel_len},
              {"panel_width", c.sim.panel_width},
              {"panel_clearance", c.sim.panel_clearance},
              {"panel_rows", c.sim.panel_rows},
              {"panel_cols", c.sim.panel_cols},
              {"gripper_min_z",
               c.sim.gripper_min_z ? json(*c.sim.gripper_min_z) : json(nullptr)}};
  j["scene_gen"] = {{"num_fixtures", c.scene_gen.num_fixtures},
                    {"anchor_x_lo", c.scene_gen.anchor_x_lo},
                    {"anchor_x_hi", c.scene_gen.anchor_x_hi},
                    {"anchor_y_lo", c.scene_gen.anchor_y_lo},
                    {"anchor_y_hi", c.scene_gen.anchor_y_hi},
                    {"corridor_angle_lo", c.scene_gen.corridor_angle_lo},
                    {"corridor_angle_hi", c.scene_gen.corridor_angle_hi},
                    {"fixture_t_lo", {c.scene_gen.fixture_t_lo[0], c.scene_gen.fixture_t_lo[1]}},
                    {"fixture_t_hi", {c.scene_gen.fixture_t_hi[0], c.scene_gen.fixture_t_hi[1]}},
                    {"fixture_lateral_jitter", c.scene_gen.fixture_lateral_jitter},
                    {"fixture_yaw_jitter", c.scene_gen.fixture_yaw_jitter},
                    {"table_x_lo", c.scene_gen.table_x_lo},
                    {"table_x_hi", c.scene_gen.table_x_hi},
                    {"table_y_lo", c.scene_gen.table_y_lo},
                    {"table_y_hi", c.scene_gen.table_y_hi}};
  j["collect"] = {{"num_trajectories", c.collect.num_trajectories},
                  {"traj_len", c.collect.traj_len},
                  {"cloud_points", c.collect.cloud_points},
                  {"seed", c.collect.seed}};
  j["ndf"] = {{"knn", c.ndf.knn},         {"scene_knn", c.ndf.scene_knn},
              {"normal_knn", c.ndf.normal_knn}, {"hidden", c.ndf.hidden},
              {"desc_dim", c.ndf.desc_dim},     {"c_z", c.ndf.c_z},
              {"knn_eps", c.ndf.knn_eps},       {"global_mean", c.ndf.global_mean}};
  j["ndf_train"] = {{"epochs", c.ndf_train.epochs},
                    {"steps_per_epoch", c.ndf_train.steps_per_epoch},
                    {"batch_queries", c.ndf_train.batch_queries},
                    {"scene_points", c.ndf_train.scene_points},
                    {"lr", c.ndf_train.lr},
                    {"near_band", c.ndf_train.near_band},
                    {"seed", c.ndf_train.seed}};
  j["vae"] = {{"d_z", c.vae.d_z},     {"hidden", c.vae.hidden}, {"desc_dim", c.vae.desc_dim},
              {"bins", c.vae.bins},   {"bin_lo", c.vae.bin_lo}, {"bin_hi", c.vae.bin_hi},
              {"gamma", c.vae.gamma}, {"beta", c.vae.beta}};
  j["vae_train"] = {{"epochs", c.vae_train.epochs},
                    {"steps_per_epoch", c.vae_train.steps_per_epoch},
                    {"batch_recon", c.vae_train.batch_recon},
                    {"batch_pairs", c.vae_train.batch_pairs},
                    {"lr", c.vae_train.lr},
                    {"lambda_recon", c.vae_train.lambda_recon},
                    {"lambda_kl", c.vae_train.lambda_kl},
                    {"lambda_reach", c.vae_train.lambda_reach},
                    {"seed", c.vae_train.seed}};
  j["diffusion"] = {{"d_z", c.diffusion.d_z},       {"hidden", c.diffusion.hidden},
                    {"scene_dim", c.diffusion.scene_dim}, {"steps", c.diffusion.steps},
                    {"l_max", c.diffusion.l_max},         {"rho_reach", c.diffusion.rho_reach},
                    {"beta_lo", c.diffusion.beta_lo},     {"beta_hi", c.diffusion.beta_hi},
                    {"goal_eps", c.diffusion.goal_eps}};
  j["diffusion_train"] = {{"epochs", c.diffusion_train.epochs},
                          {"steps_per_epoch", c.diffusion_train.steps_per_epoch},
                          {"batch", c.diffusion_train.batch},
                          {"lr", c.diffusion_train.lr},
                          {"min_level", c.diffusion_train.min_level},
                          {"seed", c.diffusion_train.seed}};
  j["mppi"] = {{"num_samples", c.mppi.num_samples},
               {"horizon", c.mppi.horizon},
               {"noise_scale", c.mppi.noise_scale},
               {"temperature", c.mppi.temperature},
               {"lambda_col", c.mppi.lambda_col},
               {"subgoal_reach_threshold", c.mppi.subgoal_reach_threshold},
               {"replan_period", c.mppi.replan_period},
               {"step_cap", c.mppi.step_cap},
               {"support_primitive", c.mppi.support_primitive}};
  j["eval"] = {{"cloud_points", c.cloud_points},
               {"scene_points", c.scene_points},
               {"cases", c.eval_cases},
               {"seeds", c.eval_seeds},
               {"holdout_records", c.holdout_records}};
  j["adapt"] = {{"pos_range", c.adapt_pos_range}, {"yaw_range", c.adapt_yaw_range}};
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void write_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config file: " + path);
  os << config_to_json(cfg).dump(2) << "\n";
}

uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a(config_to_json(cfg).dump()); }

// --- test cases ------------------------------------------------------------

sim::SimState case_start_state(const TestCase& tc, const sim::SimConfig& sim_cfg,
                               uint64_t eval_seed) {
  icd::Rng rng(tc.init_seed ^ (0x9e3779b97f4a7c15ULL * (eval_seed + 1)));
  return sim::initial_state(tc.scene, sim_cfg, rng);
}

CaseSet generate_cases(const ExperimentConfig& cfg, int n, uint64_t seed, int* rejected) {
  CaseSet cs;
  cs.task = cfg.task;
  cs.seed = seed;
  sim::SceneGenConfig gen = cfg.scene_gen;
  gen.task = cfg.task_tag();
  icd::Rng rng(seed);
  int rej = 0;
  for (int attempt = 0; int(cs.cases.size()) < n; ++attempt) {
    if (attempt > 100 * n + 100)
      throw std::runtime_error("gen-testcases: too many rejected scenes (" +
                               std::to_string(rej) + "); check scene_gen ranges");
    icd::Rng srng = rng.fork(100 + uint64_t(attempt));
    TestCase tc;
    tc.scene = sim::make_scene(gen, srng);
    tc.init_seed = seed + uint64_t(attempt) * 7919;
    sim::SimState goal_state = case_start_state(tc, cfg.sim, 0);
    if (!sim::run_goal_script(tc.scene, cfg.sim, goal_state)) {
      ++rej;
      continue;
    }
    tc.goal.object_cloud = sim::object_point_cloud(goal_state, cfg.cloud_points, cfg.sim);
    icd::Rng grng = rng.fork(20000 + uint64_t(attempt));
    tc.goal.scene_cloud = sim::sample_scene_point_cloud(tc.scene, cfg.scene_points, grng);
    // the recorded goal must satisfy its own success predicate
    if (!sim::task_success(goal_state, tc.goal, tc.scene, cfg.sim, cfg.cloud_points).success) {
      ++rej;
      continue;
    }
    cs.cases.push_back(std::move(tc));
  }
  if (rejected != nullptr) *rejected = rej;
  return cs;
}

void write_cases(const std::string& path, const CaseSet& cs) {
  json j;
  j["task"] = cs.task;
  j["seed"] = cs.seed;
  json arr = json::array();
  for (const TestCase& tc : cs.cases) {
    json c;
    c["scene"] = sim::format_scene(tc.scene);
    c["init_seed"] = tc.init_seed;
    c["goal"] = {{"object_cloud", points_to_json(tc.goal.object_cloud)},
                 {"scene_cloud", points_to_json(tc.goal.scene_cloud)},
                 {"goal_threshold", tc.goal.goal_threshold}};
    arr.push_back(std::move(c));
  }
  j["cases"] = std::move(arr);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write case file: " + path);
  os << j.dump(2) << "\n";
}

CaseSet read_cases(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open case file: " + path + " (run gen-testcases)");
  json j;
  is >> j;
  check_keys(j, {"task", "seed", "cases"}, "case file");
  CaseSet cs;
  j.at("task").get_to(cs.task);
  j.at("seed").get_to(cs.seed);
  for (const json& c : j.at("cases")) {
    check_keys(c, {"scene", "init_seed", "goal"}, "case entry");
    TestCase tc;
    tc.scene = sim::parse_scene(c.at("scene").get<std::string>());
    c.at("init_seed").get_to(tc.init_seed);
    const json& g = c.at("goal");
    check_keys(g, {"object_cloud", "scene_cloud", "goal_threshold"}, "case goal");
    tc.goal.object_cloud = points_from_json(g.at("object_cloud"));
    tc.goal.scene_cloud = points_from_json(g.at("scene_cloud"));
    g.at("goal_threshold").get_to(tc.goal.goal_threshold);
    cs.cases.push_back(std::move(tc));
  }
  return cs;
}

// --- checkpoints -------------------------------------------------------

mpc::Models LoadedModels::view() const {
  mpc::Models m;
  m.ndf = ndf ? &*ndf : nullptr;
  m.vae = vae ? &*vae : nullptr;
  m.ldm = ldm ? &*ldm : nullptr;
  return m;
}

namespace {

ParamSet load_named(const std::string& path, const std::string& role, const std::string& kind,
                    const std::string& command) {
  if (path.empty())
    throw std::runtime_error("method needs a " + role + " checkpoint but paths." + role +
                             " is not set in the config");
  ParamSet p;
  try {
    p = learn::load_checkpoint(path);
  } catch (const std::exception& e) {
    throw std::runtime_error(role + " checkpoint " + path + " unavailable (" + e.what() +
                             "); produce it with `" + command + "`");
  }
  if (!p.meta.count("model_kind") || p.meta.at("model_kind") != kind)
    throw std::runtime_error(role + " checkpoint " + path + " has model_kind \"" +
                             (p.meta.count("model_kind") ? p.meta.at("model_kind") : "?") +
                             "\", expected \"" + kind + "\"");
  return p;
}

}  // namespace

LoadedModels load_models(const ExperimentConfig& cfg) {
  MethodSpec ms = method_from_name(cfg.method);
  LoadedModels lm;
  if (ms.needs_ndf) {
    lm.ndf = load_named(cfg.ndf_path, "ndf", "ndf", "icd train-ndf");
    bool global = fields::ndf_config_from_params(*lm.ndf).global_mean;
    if (global != ms.global_field)
      throw std::runtime_error("method " + cfg.method + " expects an NDF trained with " +
                               std::string(ms.global_field ? "global_mean=true" :
                                                             "global_mean=false") +
                               "; checkpoint " + cfg.ndf_path + " disagrees");
  }
  if (ms.needs_vae) lm.vae = load_named(cfg.vae_path, "vae", "vae", "icd train-vae");
  if (ms.needs_ldm) lm.ldm = load_named(cfg.ldm_path, "ldm", "ldm", "icd train-diffusion");

  lm.reach_threshold = cfg.mppi.subgoal_reach_threshold;
  if (lm.reach_threshold <= 0.0 && ms.needs_vae) {
    if (!lm.vae->meta.count("recon_floor"))
      throw std::runtime_error("subgoal_reach_threshold is auto but vae checkpoint " +
                               cfg.vae_path + " records no recon_floor; retrain with " +
                               "`icd train-vae`");
    lm.reach_threshold = 1.2 * std::stod(lm.vae->meta.at("recon_floor"));
  }
  return lm;
}

vae::DescriptorCache build_pointcloud_cache(const sim::Dataset& dataset,
                                            const sim::SimConfig& sim_cfg, int scene_points,
                                            uint64_t seed) {
  vae::DescriptorCache cache;
  cache.canon = vae::canonical_object(dataset.task, sim_cfg, dataset.cloud_points);
  cache.field_hash = 0;  // no field involved
  fields::NdfConfig stats_cfg;  // scene summaries need only the invariant stats
  icd::Rng rng(seed);
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    icd::Rng r = rng.fork(9000 + i);
    fields::SceneEncoding enc = fields::encode_scene(
        sim::sample_scene_point_cloud(dataset.scenes[i], scene_points, r), stats_cfg);
    std::vector<learn::Mat> per_t(dataset.records[i].clouds.begin(),
                                  dataset.records[i].clouds.end());
    cache.desc.push_back(std::move(per_t));
    cache.scene_feats.push_back(vae::scene_summary(enc));
  }
  return cache;
}

std::vector<int> holdout_indices(int num_records, int holdout) {
  std::vector<int> idx;
  for (int i = std::max(0, num_records - holdout); i < num_records; ++i) idx.push_back(i);
  return idx;
}

double vae_recon_floor(const ParamSet& vae_params, const vae::DescriptorCache& cache,
                       const std::vector<int>& holdout) {
  double total = 0.0;
  long count = 0;
  for (int r : holdout) {
    const auto& rec = cache.desc.at(size_t(r));
    for (size_t t = 0; t < rec.size(); t += 5) {  // every 5th frame is plenty
      vae::LatentState ls = vae::encode(vae_params, cache.canon, rec[t]);
      learn::Mat recon = vae::decode(vae_params, ls.z, cache.canon);
      total += (recon - rec[t]).squaredNorm() / double(rec[t].size());
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("vae_recon_floor: empty holdout");
  return total / double(count);
}

}  // namespace icd::harness
