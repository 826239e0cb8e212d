// Command-line entry point: dataset collection, the training pipeline,
// test-case generation, evaluation sweeps, the adaptation test, and report
// aggregation. Every command is idempotent given identical config + seed.
#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "icd/harness/harness.hpp"

namespace fs = std::filesystem;
using namespace icd;
using harness::ExperimentConfig;

namespace {

std::string hash_str(const ExperimentConfig& cfg) {
  return std::to_string(harness::config_hash(cfg));
}

// a produced artifact is current when its recorded config hash matches
bool up_to_date(const std::string& marker, const std::string& hash) {
  std::ifstream is(marker);
  std::string stored;
  return is && std::getline(is, stored) && stored == hash;
}

void write_marker(const std::string& marker, const std::string& hash) {
  std::ofstream(marker) << hash << "\n";
}

bool checkpoint_current(const std::string& path, const std::string& hash) {
  if (!fs::exists(path)) return false;
  try {
    learn::ParamSet p = learn::load_checkpoint(path);
    return p.meta.count("config_hash") && p.meta.at("config_hash") == hash;
  } catch (const std::exception&) {
    return false;
  }
}

sim::Dataset require_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset_dir.empty())
    throw std::runtime_error("paths.dataset is not set in the config");
  try {
    return sim::load_dataset(cfg.dataset_dir);
  } catch (const std::exception& e) {
    throw std::runtime_error("dataset at " + cfg.dataset_dir + " unavailable (" + e.what() +
                             "); produce it with `icd collect`");
  }
}

vae::DescriptorCache require_cache(const ExperimentConfig& cfg) {
  if (cfg.cache_path.empty()) throw std::runtime_error("paths.cache is not set in the config");
  return vae::load_descriptor_cache(cfg.cache_path);  // names cache-descriptors when missing
}

int cmd_collect(const ExperimentConfig& cfg) {
  std::string marker = cfg.dataset_dir + "/collect.hash";
  if (up_to_date(marker, hash_str(cfg))) {
    std::cout << "collect: dataset at " << cfg.dataset_dir << " is up to date\n";
    return 0;
  }
  sim::CollectConfig cc = cfg.collect;
  cc.scene_gen = cfg.scene_gen;
  cc.sim = cfg.sim;
  fs::create_directories(cfg.dataset_dir);
  sim::Dataset ds = sim::collect_dataset(cc, cfg.dataset_dir);
  harness::write_config(cfg.dataset_dir + "/config.json", cfg);
  write_marker(marker, hash_str(cfg));
  std::cout << "collect: " << ds.records.size() << " trajectories (" << ds.resamples
            << " resampled) -> " << cfg.dataset_dir << "\n";
  return 0;
}

int cmd_train_ndf(const ExperimentConfig& cfg) {
  if (cfg.ndf_path.empty()) throw std::runtime_error("paths.ndf is not set in the config");
  if (checkpoint_current(cfg.ndf_path, hash_str(cfg))) {
    std::cout << "train-ndf: " << cfg.ndf_path << " is up to date\n";
    return 0;
  }
  sim::Dataset ds = require_dataset(cfg);
  icd::Rng rng(cfg.ndf_train.seed);
  fields::NdfConfig ncfg = cfg.ndf;
  if (harness::method_from_name(cfg.method).global_field) ncfg.global_mean = true;
  learn::ParamSet params = fields::init_ndf_params(ncfg, rng);
  learn::TrainReport rep = fields::train_ndf(params, ds.scenes, cfg.ndf_train);
  params.meta["config_hash"] = hash_str(cfg);
  learn::save_checkpoint(params, cfg.ndf_path);
  std::cout << "train-ndf: final loss " << rep.epoch_losses.back() << " ("
            << rep.wall_seconds << " s) -> " << cfg.ndf_path << "\n";
  return 0;
}

int cmd_cache_descriptors(const ExperimentConfig& cfg) {
  if (cfg.cache_path.empty()) throw std::runtime_error("paths.cache is not set in the config");
  std::string marker = cfg.cache_path + ".hash";
  if (fs::exists(cfg.cache_path) && up_to_date(marker, hash_str(cfg))) {
    std::cout << "cache-descriptors: " << cfg.cache_path << " is up to date\n";
    return 0;
  }
  sim::Dataset ds = require_dataset(cfg);
  harness::MethodSpec ms = harness::method_from_name(cfg.method);
  vae::DescriptorCache cache;
  if (ms.needs_ndf) {
    learn::ParamSet ndf = learn::load_checkpoint(cfg.ndf_path);
    cache = vae::build_descriptor_cache(ds, ndf, cfg.sim, cfg.scene_points, cfg.seed);
  } else {
    // subgoal-pc plans in raw point-cloud space
    cache = harness::build_pointcloud_cache(ds, cfg.sim, cfg.scene_points, cfg.seed);
  }
  vae::write_descriptor_cache(cfg.cache_path, cache);
  write_marker(marker, hash_str(cfg));
  std::cout << "cache-descriptors: " << cache.desc.size() << " records -> " << cfg.cache_path
            << "\n";
  return 0;
}

int cmd_train_vae(const ExperimentConfig& cfg) {
  if (cfg.vae_path.empty()) throw std::runtime_error("paths.vae is not set in the config");
  if (checkpoint_current(cfg.vae_path, hash_str(cfg))) {
    std::cout << "train-vae: " << cfg.vae_path << " is up to date\n";
    return 0;
  }
  vae::DescriptorCache cache = require_cache(cfg);
  vae::VaeConfig vcfg = cfg.vae;
  vcfg.desc_dim = int(cache.desc.at(0).at(0).cols());
  vae::VaeTrainConfig tcfg = cfg.vae_train;
  if (tcfg.holdout.empty())
    tcfg.holdout = harness::holdout_indices(int(cache.desc.size()), cfg.holdout_records);
  icd::Rng rng(tcfg.seed);
  learn::ParamSet params = vae::init_vae_params(vcfg, rng);
  learn::TrainReport rep = vae::train_vae(params, cache, tcfg);
  double floor = harness::vae_recon_floor(params, cache, tcfg.holdout);
  params.meta["recon_floor"] = std::to_string(floor);
  params.meta["config_hash"] = hash_str(cfg);
  learn::save_checkpoint(params, cfg.vae_path);
  std::cout << "train-vae: final loss " << rep.epoch_losses.back() << ", recon floor " << floor
            << " -> " << cfg.vae_path << "\n";
  return 0;
}

int cmd_train_diffusion(const ExperimentConfig& cfg) {
  if (cfg.ldm_path.empty()) throw std::runtime_error("paths.ldm is not set in the config");
  if (checkpoint_current(cfg.ldm_path, hash_str(cfg))) {
    std::cout << "train-diffusion: " << cfg.ldm_path << " is up to date\n";
    return 0;
  }
  vae::DescriptorCache cache = require_cache(cfg);
  learn::ParamSet vae_params = learn::load_checkpoint(cfg.vae_path);
  diffusion::LatentCache lat = diffusion::build_latent_cache(cache, vae_params);
  diffusion::DiffusionConfig dcfg = cfg.diffusion;
  dcfg.d_z = vae::vae_config_from_params(vae_params).d_z;
  diffusion::DiffusionTrainConfig tcfg = cfg.diffusion_train;
  if (tcfg.holdout.empty())
    tcfg.holdout = harness::holdout_indices(int(lat.z.size()), cfg.holdout_records);
  icd::Rng rng(tcfg.seed);
  learn::ParamSet params = diffusion::init_diffusion_params(dcfg, rng);
  learn::TrainReport rep = diffusion::train_diffusion(params, lat, tcfg);
  params.meta["config_hash"] = hash_str(cfg);
  learn::save_checkpoint(params, cfg.ldm_path);
  std::cout << "train-diffusion: final loss " << rep.epoch_losses.back() << " -> "
            << cfg.ldm_path << "\n";
  return 0;
}

int cmd_gen_testcases(const ExperimentConfig& cfg, int n, uint64_t seed) {
  if (cfg.cases_path.empty()) throw std::runtime_error("paths.cases is not set in the config");
  int rejected = 0;
  harness::CaseSet cs = harness::generate_cases(cfg, n, seed, &rejected);
  harness::write_cases(cfg.cases_path, cs);
  std::cout << "gen-testcases: " << cs.cases.size() << " cases (" << rejected
            << " scenes rejected) -> " << cfg.cases_path << "\n";
  return 0;
}

std::string default_run_dir(const ExperimentConfig& cfg, bool perturb) {
  return cfg.run_root + "/" + cfg.task + "_" + cfg.method + (perturb ? "_adapt" : "");
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& run_dir_arg, bool perturb) {
  std::string run_dir = run_dir_arg.empty() ? default_run_dir(cfg, perturb) : run_dir_arg;
  if (up_to_date(run_dir + "/eval.hash", hash_str(cfg))) {
    std::cout << "eval: " << run_dir << " is up to date\n";
    return 0;
  }
  harness::CaseSet cases = harness::read_cases(cfg.cases_path);
  harness::LoadedModels models = harness::load_models(cfg);
  harness::EvalOptions opts;
  opts.perturb = perturb;
  opts.run_dir = run_dir;
  int resamples = 0;
  opts.perturb_resamples = &resamples;
  auto t0 = std::chrono::steady_clock::now();
  harness::EvalReport rep = harness::run_eval(cfg, cases, models, opts);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // wall-clock stats live outside report.json so reruns reproduce it bitwise
  std::ofstream(run_dir + "/timings.json")
      << nlohmann::json{{"wall_seconds", secs}, {"episodes", rep.episodes.size()}}.dump(2)
      << "\n";
  write_marker(run_dir + "/eval.hash", hash_str(cfg));
  std::cout << (perturb ? "adapt-test" : "eval") << ": " << cfg.method << " success "
            << 100.0 * rep.success_rate << "% complete " << 100.0 * rep.complete_rate << "% ("
            << rep.episodes.size() << " episodes";
  if (perturb) std::cout << ", " << resamples << " perturbations resampled";
  std::cout << ") -> " << run_dir << "\n";
  return 0;
}

int cmd_run(const ExperimentConfig& cfg, int case_index, uint64_t eval_seed) {
  harness::CaseSet cases = harness::read_cases(cfg.cases_path);
  if (case_index < 0 || case_index >= int(cases.cases.size()))
    throw std::runtime_error("run: case index out of range (have " +
                             std::to_string(cases.cases.size()) + " cases)");
  harness::LoadedModels models = harness::load_models(cfg);
  mpc::EpisodeResult er =
      harness::run_case(cfg, cases.cases[size_t(case_index)], models, eval_seed);
  std::cout << "run: case " << case_index << " seed " << eval_seed << " -> "
            << (er.success ? "success" : "failure") << " (complete " << er.complete_rate
            << ", " << er.steps << " steps)\n";
  return er.success ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contact-aware subgoal diffusion experiments"};
  app.require_subcommand(1);

  std::string config_path, method_override, cases_override, out_dir;
  int n_cases = 10, case_index = 0;
  uint64_t gen_seed = 7, eval_seed = 0;
  int seeds_override = 0;
  std::vector<std::string> run_dirs;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config JSON")->required();
    sub->add_option("--method", method_override, "override config method");
  };
  auto* collect = app.add_subcommand("collect", "record scripted-policy trajectories");
  add_config(collect);
  auto* train_ndf = app.add_subcommand("train-ndf", "train the descriptor field");
  add_config(train_ndf);
  auto* cache_cmd = app.add_subcommand("cache-descriptors", "precompute descriptor clouds");
  add_config(cache_cmd);
  auto* train_vae = app.add_subcommand("train-vae", "train the point-cloud VAE");
  add_config(train_vae);
  auto* train_diff = app.add_subcommand("train-diffusion", "train the subgoal diffusion model");
  add_config(train_diff);
  auto* gen = app.add_subcommand("gen-testcases", "record evaluation cases");
  add_config(gen);
  gen->add_option("--n", n_cases, "number of cases");
  gen->add_option("--seed", gen_seed, "case generation seed");
  auto* eval_cmd = app.add_subcommand("eval", "run the evaluation sweep");
  add_config(eval_cmd);
  eval_cmd->add_option("--cases", cases_override, "case file override");
  eval_cmd->add_option("--seeds", seeds_override, "eval seeds override");
  eval_cmd->add_option("--out", out_dir, "run directory");
  auto* adapt = app.add_subcommand("adapt-test", "evaluation under fixture perturbation");
  add_config(adapt);
  adapt->add_option("--cases", cases_override, "case file override");
  adapt->add_option("--seeds", seeds_override, "eval seeds override");
  adapt->add_option("--out", out_dir, "run directory");
  auto* run_cmd = app.add_subcommand("run", "run a single episode");
  add_config(run_cmd);
  run_cmd->add_option("--case", case_index, "case index");
  run_cmd->add_option("--eval-seed", eval_seed, "evaluation seed");
  auto* report = app.add_subcommand("report", "aggregate run directories");
  report->add_option("--out", out_dir, "output directory")->required();
  report->add_option("dirs", run_dirs, "completed run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      harness::write_report(out_dir, run_dirs);
      std::cout << "report: " << run_dirs.size() << " runs -> " << out_dir << "/table.md\n";
      return 0;
    }
    ExperimentConfig cfg = harness::load_config(config_path);
    if (!method_override.empty()) {
      cfg.method = method_override;
      cfg.validate();
    }
    if (!cases_override.empty()) cfg.cases_path = cases_override;
    if (seeds_override > 0) cfg.eval_seeds = seeds_override;

    if (collect->parsed()) return cmd_collect(cfg);
    if (train_ndf->parsed()) return cmd_train_ndf(cfg);
    if (cache_cmd->parsed()) return cmd_cache_descriptors(cfg);
    if (train_vae->parsed()) return cmd_train_vae(cfg);
    if (train_diff->parsed()) return cmd_train_diffusion(cfg);
    if (gen->parsed()) return cmd_gen_testcases(cfg, n_cases, gen_seed);
    if (eval_cmd->parsed()) return cmd_eval(cfg, out_dir, false);
    if (adapt->parsed()) return cmd_eval(cfg, out_dir, true);
    if (run_cmd->parsed()) return cmd_run(cfg, case_index, eval_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
