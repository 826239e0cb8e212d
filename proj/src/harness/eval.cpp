#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "icd/harness/harness.hpp"

namespace icd::harness {

namespace fs = std::filesystem;

namespace {

// perturbed copy of a case; resamples until the fixtures stay valid and the
// recorded goal polyline still routes every fixture opening
TestCase perturb_case(const ExperimentConfig& cfg, const TestCase& tc, icd::Rng& rng,
                      int* resamples) {
  for (int attempt = 0; attempt < 500; ++attempt) {
    sim::SceneSpec scene = tc.scene;
    icd::Rng r = rng.fork(uint64_t(attempt));
    if (sim::perturb_fixtures(scene, cfg.adapt_pos_range, cfg.adapt_yaw_range, r)) {
      bool goal_ok = true;
      for (int id : scene.fixture_ids)
        if (sim::net_crossings(tc.goal.object_cloud, sim::fixture_opening(scene, id)) == 0)
          goal_ok = false;
      if (goal_ok) {
        TestCase out = tc;
        out.scene = std::move(scene);
        return out;
      }
    }
    if (resamples != nullptr) ++*resamples;
  }
  throw std::runtime_error("adapt-test: could not find a valid fixture perturbation; "
                           "reduce adapt.pos_range / adapt.yaw_range");
}

std::string trace_name(int case_index, uint64_t eval_seed) {
  return "trace_case" + std::to_string(case_index) + "_seed" + std::to_string(eval_seed) +
         ".bin";
}

}  // namespace

void EvalReport::validate() const {
  if (episodes.empty()) throw std::invalid_argument("EvalReport: no episodes");
  double succ = 0.0, comp = 0.0;
  for (const EpisodeSummary& e : episodes) {
    if (e.success && e.complete_rate < 1.0)
      throw std::invalid_argument("EvalReport: successful episode with complete < 1");
    succ += e.success ? 1.0 : 0.0;
    comp += e.complete_rate;
  }
  succ /= double(episodes.size());
  comp /= double(episodes.size());
  if (std::abs(succ - success_rate) > 1e-9 || std::abs(comp - complete_rate) > 1e-9)
    throw std::invalid_argument("EvalReport: aggregate rates disagree with the episodes");
  if (success_rate > complete_rate + 1e-9)
    throw std::invalid_argument("EvalReport: success rate exceeds complete rate");
}

json report_to_json(const EvalReport& r) {
  json j;
  j["schema"] = 1;
  j["method"] = r.method;
  j["task"] = r.task;
  j["perturbed"] = r.perturbed;
  j["success_rate"] = r.success_rate;
  j["complete_rate"] = r.complete_rate;
  json eps = json::array();
  for (const EpisodeSummary& e : r.episodes)
    eps.push_back({{"case", e.case_index},
                   {"seed", e.eval_seed},
                   {"success", e.success},
                   {"complete", e.complete_rate},
                   {"steps", e.steps}});
  j["episodes"] = std::move(eps);
  json per_seed = json::object();
  for (const auto& [s, v] : r.per_seed_success) per_seed[std::to_string(s)] = v;
  j["per_seed_success"] = std::move(per_seed);
  return j;
}

EvalReport report_from_json(const json& j) {
  if (!j.contains("schema") || j.at("schema").get<int>() != 1)
    throw std::runtime_error("report: unsupported schema version");
  EvalReport r;
  j.at("method").get_to(r.method);
  j.at("task").get_to(r.task);
  j.at("perturbed").get_to(r.perturbed);
  j.at("success_rate").get_to(r.success_rate);
  j.at("complete_rate").get_to(r.complete_rate);
  for (const json& e : j.at("episodes")) {
    EpisodeSummary s;
    e.at("case").get_to(s.case_index);
    e.at("seed").get_to(s.eval_seed);
    e.at("success").get_to(s.success);
    e.at("complete").get_to(s.complete_rate);
    e.at("steps").get_to(s.steps);
    r.episodes.push_back(s);
  }
  for (const auto& [key, val] : j.at("per_seed_success").items())
    r.per_seed_success[std::stoull(key)] = val.get<double>();
  r.validate();
  return r;
}

mpc::EpisodeResult run_case(const ExperimentConfig& cfg, const TestCase& tc,
                            const LoadedModels& models, uint64_t eval_seed, bool perturb) {
  MethodSpec ms = method_from_name(cfg.method);
  TestCase active = tc;
  if (perturb) {
    icd::Rng prng(tc.init_seed + 0x51ed270b);
    active = perturb_case(cfg, tc, prng, nullptr);
  }
  mpc::EpisodeConfig ec;
  ec.sim = cfg.sim;
  ec.mppi = cfg.mppi;
  ec.mppi.cost_mode = ms.cost_mode;
  if (models.reach_threshold > 0.0) ec.mppi.subgoal_reach_threshold = models.reach_threshold;
  ec.cloud_points = cfg.cloud_points;
  ec.scene_points = cfg.scene_points;
  ec.seed = tc.init_seed ^ (0x2545f4914f6cdd1dULL * (eval_seed + 1)) ^ cfg.seed;
  sim::SimState start = case_start_state(active, cfg.sim, eval_seed);
  return mpc::run_episode(active.scene, start, active.goal, models.view(), ec);
}

EvalReport run_eval(const ExperimentConfig& cfg, const CaseSet& cases,
                    const LoadedModels& models, const EvalOptions& opts) {
  if (cases.task != cfg.task)
    throw std::invalid_argument("case file task \"" + cases.task + "\" does not match config task \"" +
                                cfg.task + "\"");
  MethodSpec ms = method_from_name(cfg.method);
  EvalReport rep;
  rep.method = cfg.method;
  rep.task = cfg.task;
  rep.perturbed = opts.perturb;

  if (!opts.run_dir.empty()) {
    fs::create_directories(opts.run_dir + "/traces");
    write_config(opts.run_dir + "/config.json", cfg);
    json prov;
    prov["config_hash"] = config_hash(cfg);
    prov["reach_threshold"] = models.reach_threshold;
    if (models.ndf) prov["ndf_hash"] = models.ndf->content_hash();
    if (models.vae) prov["vae_hash"] = models.vae->content_hash();
    if (models.ldm) prov["ldm_hash"] = models.ldm->content_hash();
    std::ofstream(opts.run_dir + "/checkpoints.json") << prov.dump(2) << "\n";
  }

  std::map<uint64_t, std::pair<double, int>> per_seed;
  for (size_t i = 0; i < cases.cases.size(); ++i) {
    TestCase tc = cases.cases[i];
    if (opts.perturb) {
      icd::Rng prng(tc.init_seed + 0x51ed270b);
      tc = perturb_case(cfg, cases.cases[i], prng, opts.perturb_resamples);
    }
    for (int s = 0; s < cfg.eval_seeds; ++s) {
      uint64_t eval_seed = uint64_t(s);
      mpc::EpisodeConfig ec;
      ec.sim = cfg.sim;
      ec.mppi = cfg.mppi;
      ec.mppi.cost_mode = ms.cost_mode;
      if (models.reach_threshold > 0.0)
        ec.mppi.subgoal_reach_threshold = models.reach_threshold;
      ec.cloud_points = cfg.cloud_points;
      ec.scene_points = cfg.scene_points;
      ec.seed = tc.init_seed ^ (0x2545f4914f6cdd1dULL * (eval_seed + 1)) ^ cfg.seed;
      sim::SimState start = case_start_state(tc, cfg.sim, eval_seed);
      mpc::EpisodeResult er = mpc::run_episode(tc.scene, start, tc.goal, models.view(), ec);

      EpisodeSummary sum;
      sum.case_index = int(i);
      sum.eval_seed = eval_seed;
      sum.success = er.success;
      sum.complete_rate = er.complete_rate;
      sum.steps = er.steps;
      rep.episodes.push_back(sum);
      auto& [acc, cnt] = per_seed[eval_seed];
      acc += er.success ? 1.0 : 0.0;
      ++cnt;
      if (!opts.run_dir.empty())
        sim::write_record(opts.run_dir + "/traces/" + trace_name(int(i), eval_seed), er.trace);
    }
  }
  double succ = 0.0, comp = 0.0;
  for (const EpisodeSummary& e : rep.episodes) {
    succ += e.success ? 1.0 : 0.0;
    comp += e.complete_rate;
  }
  rep.success_rate = succ / double(rep.episodes.size());
  rep.complete_rate = comp / double(rep.episodes.size());
  for (const auto& [seed, sc] : per_seed) rep.per_seed_success[seed] = sc.first / sc.second;
  rep.validate();
  if (!opts.run_dir.empty())
    std::ofstream(opts.run_dir + "/report.json") << report_to_json(rep).dump(2) << "\n";
  return rep;
}

// --- reporting -------------------------------------------------------------

std::string report_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("report: no completed runs");
  const std::string& task = reports.front().task;
  std::ostringstream os;
  os << "| Method | Task | Perturbed | Success | Complete |\n";
  os << "|--------|------|-----------|---------|----------|\n";
  os.setf(std::ios::fixed);
  os.precision(1);
  for (const EvalReport& r : reports) {
    if (r.task != task)
      throw std::runtime_error("report: runs mix tasks (" + task + " vs " + r.task + ")");
    r.validate();
    os << "| " << r.method << " | " << r.task << " | " << (r.perturbed ? "yes" : "no") << " | "
       << 100.0 * r.success_rate << " | " << 100.0 * r.complete_rate << " |\n";
  }
  return os.str();
}

std::string trace_svg(const sim::TrajectoryRecord& trace) {
  if (trace.clouds.empty()) throw std::invalid_argument("trace_svg: empty trace");
  double lo_x = 1e30, hi_x = -1e30, lo_y = 1e30, hi_y = -1e30;
  auto grow = [&](double x, double y) {
    lo_x = std::min(lo_x, x);
    hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y);
    hi_y = std::max(hi_y, y);
  };
  for (const auto& g : trace.grippers) grow(g.x(), g.y());
  for (const Points& c : {trace.clouds.front(), trace.clouds.back()})
    for (Eigen::Index i = 0; i < c.rows(); ++i) grow(c(i, 0), c(i, 1));
  double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-6});
  auto px = [&](double x) { return 20.0 + 460.0 * (x - lo_x) / span; };
  auto py = [&](double y) { return 480.0 - 460.0 * (y - lo_y) / span; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" "
        "viewBox=\"0 0 500 500\">\n";
  auto cloud = [&](const Points& c, const char* color) {
    for (Eigen::Index i = 0; i < c.rows(); ++i)
      os << "<circle cx=\"" << px(c(i, 0)) << "\" cy=\"" << py(c(i, 1))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
  };
  cloud(trace.clouds.front(), "#bbbbbb");
  cloud(trace.clouds.back(), "#222222");
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (const auto& g : trace.grippers) os << px(g.x()) << "," << py(g.y()) << " ";
  os << "\"/>\n</svg>\n";
  return os.str();
}

void write_report(const std::string& out_dir, const std::vector<std::string>& run_dirs) {
  std::vector<EvalReport> reports;
  fs::create_directories(out_dir);
  for (const std::string& dir : run_dirs) {
    std::ifstream is(dir + "/report.json");
    if (!is) throw std::runtime_error("report: " + dir + " has no report.json (run eval first)");
    json j;
    is >> j;
    EvalReport r = report_from_json(j);
    // plot the first stored trace, when traces were recorded
    std::string tr = dir + "/traces/" + trace_name(0, r.episodes.front().eval_seed);
    if (fs::exists(tr)) {
      sim::TrajectoryRecord rec = sim::read_record(tr);
      std::ofstream(out_dir + "/trace_" + r.method + (r.perturbed ? "_adapt" : "") + ".svg")
          << trace_svg(rec);
    }
    reports.push_back(std::move(r));
  }
  std::ofstream(out_dir + "/table.md") << report_table(reports);
}

}  // namespace icd::harness
