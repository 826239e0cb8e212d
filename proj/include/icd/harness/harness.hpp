#pragma once

#include <json.hpp>
#include <optional>

#include "icd/mpc/mpc.hpp"

namespace icd::harness {

using learn::ParamSet;
using nlohmann::json;
using sim::Points;

// --- experiment configuration --------------------------------------------

// Method rows of the evaluation tables. Each selects a cost mode and the
// set of checkpoints it needs; global-ndf is the icd pipeline with the
// field's KNN aggregation replaced by a global mean.
struct MethodSpec {
  std::string name;
  mpc::CostMode cost_mode = mpc::CostMode::pc_goal_only;
  bool needs_ndf = false;
  bool needs_vae = false;
  bool needs_ldm = false;
  bool global_field = false;
};

MethodSpec method_from_name(const std::string& name);
std::vector<std::string> method_names();

// Full resolved configuration of one experiment. Parsed strictly: unknown
// keys anywhere in the document are rejected, and the resolved form is
// echoed into every output directory.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::string task = "cable";  // "cable" | "notebook"
  std::string method = "icd";

  // paths (relative paths resolve against the current directory)
  std::string run_root = "runs";
  std::string dataset_dir;
  std::string ndf_path;
  std::string vae_path;
  std::string ldm_path;
  std::string cache_path;
  std::string cases_path;

  sim::SimConfig sim;
  sim::SceneGenConfig scene_gen;  // task field kept in sync with `task`
  sim::CollectConfig collect;
  fields::NdfConfig ndf;
  fields::NdfTrainConfig ndf_train;
  vae::VaeConfig vae;
  vae::VaeTrainConfig vae_train;
  diffusion::DiffusionConfig diffusion;
  diffusion::DiffusionTrainConfig diffusion_train;
  mpc::MppiConfig mppi;  // subgoal_reach_threshold <= 0 selects "auto"

  int cloud_points = 60;   // object points for control and goals
  int scene_points = 400;  // scene cloud size for field encodings
  int eval_cases = 10;
  int eval_seeds = 2;
  int holdout_records = 4;  // dataset records reserved for validation
  double adapt_pos_range = 0.05;  // fixture perturbation, meters
  double adapt_yaw_range = 0.5235987755982988;  // radians (30 degrees)

  sim::TaskTag task_tag() const;
  void validate() const;  // throws std::invalid_argument on violations
};

// strict parse: every key must be known, every group must be an object
ExperimentConfig config_from_json(const json& j);
json config_to_json(const ExperimentConfig& cfg);  // full resolved document
ExperimentConfig load_config(const std::string& path);
void write_config(const std::string& path, const ExperimentConfig& cfg);
// hash of the resolved document, used for idempotence checks
uint64_t config_hash(const ExperimentConfig& cfg);

// --- test cases ------------------------------------------------------------

struct TestCase {
  sim::SceneSpec scene;
  uint64_t init_seed = 0;  // seed regenerating the start state
  sim::GoalSpec goal;      // recorded from the scripted goal policy
};

struct CaseSet {
  std::string task = "cable";
  uint64_t seed = 0;
  std::vector<TestCase> cases;
};

// runs the deterministic goal script on freshly sampled scenes until n
// valid (scene, start, goal) triples are recorded; rejected scenes are
// counted via the optional out-parameter
CaseSet generate_cases(const ExperimentConfig& cfg, int n, uint64_t seed,
                       int* rejected = nullptr);
void write_cases(const std::string& path, const CaseSet& cs);
CaseSet read_cases(const std::string& path);

// start state of a case for a given eval seed (deterministic)
sim::SimState case_start_state(const TestCase& tc, const sim::SimConfig& sim_cfg,
                               uint64_t eval_seed);

// --- checkpoints -----------------------------------------------------------

struct LoadedModels {
  std::optional<ParamSet> ndf, vae, ldm;
  double reach_threshold = 0.0;  // resolved delta_sg
  mpc::Models view() const;
};

// loads exactly the checkpoints the configured method needs; throws
// std::runtime_error with the missing path and the command producing it.
// With mppi.subgoal_reach_threshold <= 0 the threshold resolves to
// 1.2 x the VAE's recorded validation reconstruction floor.
LoadedModels load_models(const ExperimentConfig& cfg);

// descriptor cache of raw object point clouds (the subgoal-pc baseline
// trains its VAE in point-cloud space; scene summaries still come from the
// scene encoding, which needs no trained field)
vae::DescriptorCache build_pointcloud_cache(const sim::Dataset& dataset,
                                            const sim::SimConfig& sim_cfg, int scene_points,
                                            uint64_t seed);

// record indices reserved for validation: the last `holdout` records
std::vector<int> holdout_indices(int num_records, int holdout);

// mean reconstruction msd of a trained VAE over held-out cache records
double vae_recon_floor(const ParamSet& vae_params, const vae::DescriptorCache& cache,
                       const std::vector<int>& holdout);

// --- evaluation --------------------------------------------------------

struct EpisodeSummary {
  int case_index = 0;
  uint64_t eval_seed = 0;
  bool success = false;
  double complete_rate = 0.0;
  int steps = 0;
};

struct EvalReport {
  std::string method, task;
  bool perturbed = false;  // adaptation test
  std::vector<EpisodeSummary> episodes;
  double success_rate = 0.0;
  double complete_rate = 0.0;
  std::map<uint64_t, double> per_seed_success;

  void validate() const;  // success <= complete, rates recomputable
};

json report_to_json(const EvalReport& r);
EvalReport report_from_json(const json& j);

struct EvalOptions {
  bool perturb = false;      // adaptation test: perturb fixtures per case
  std::string run_dir;       // when set, traces and the report are written
  int* perturb_resamples = nullptr;  // rejected perturbations, logged
};

// runs every (case, eval seed) episode for the configured method. In the
// adaptation test the goal object cloud recorded on the unperturbed scene
// is re-encoded against the perturbed scene inside the episode, so the
// contact relationship rather than the positions is what transfers.
EvalReport run_eval(const ExperimentConfig& cfg, const CaseSet& cases,
                    const LoadedModels& models, const EvalOptions& opts = {});

// single episode of one case (the `run` command)
mpc::EpisodeResult run_case(const ExperimentConfig& cfg, const TestCase& tc,
                            const LoadedModels& models, uint64_t eval_seed,
                            bool perturb = false);

// --- reporting ----------------------------------------------------------

// merges report.json files from run directories into a markdown table
// (Success / Complete columns, one row per method) and emits an SVG plot
// of the first stored trace of each run; throws on schema mismatches.
std::string report_table(const std::vector<EvalReport>& reports);
std::string trace_svg(const sim::TrajectoryRecord& trace);
void write_report(const std::string& out_dir, const std::vector<std::string>& run_dirs);

}  // namespace icd::harness
