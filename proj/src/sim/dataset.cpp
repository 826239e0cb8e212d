#include "icd/sim/dataset.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace icd::sim {

namespace fs = std::filesystem;

void TrajectoryRecord::validate() const {
  if (clouds.size() != actions.size() + 1 || clouds.size() != grippers.size())
    throw std::runtime_error("trajectory record: length bookkeeping violated");
  Eigen::Index m = cloud_points();
  for (const auto& c : clouds) {
    if (c.rows() != m) throw std::runtime_error("trajectory record: cloud size varies");
    if (!c.allFinite()) throw std::runtime_error("trajectory record: non-finite cloud");
  }
}

namespace {

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw std::runtime_error("trajectory file truncated");
  return v;
}
void write_points(std::ostream& os, const Points& p) {
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int k = 0; k < 3; ++k) {
      float f = float(p(i, k));
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
}
Points read_points(std::istream& is, Eigen::Index n) {
  Points p(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      float f = 0;
      is.read(reinterpret_cast<char*>(&f), 4);
      p(i, k) = double(f);
    }
  if (!is) throw std::runtime_error("trajectory file truncated");
  return p;
}

}  // namespace

void write_record(const std::string& path, const TrajectoryRecord& rec) {
  rec.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write trajectory file: " + path);
  os.write("ICD1", 4);
  write_u32(os, uint32_t(rec.cloud_points()));
  write_u32(os, uint32_t(rec.length()));
  for (const auto& c : rec.clouds) write_points(os, c);
  for (const auto& g : rec.grippers) {
    Points p(1, 3);
    p.row(0) = g;
    write_points(os, p);
  }
  for (const auto& a : rec.actions) {
    Points p(1, 3);
    p.row(0) = a;
    write_points(os, p);
  }
}

TrajectoryRecord read_record(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open trajectory file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ICD1", 4) != 0)
    throw std::runtime_error("bad trajectory magic in " + path);
  uint32_t m = read_u32(is);
  uint32_t len = read_u32(is);
  TrajectoryRecord rec;
  for (uint32_t t = 0; t <= len; ++t) rec.clouds.push_back(read_points(is, m));
  for (uint32_t t = 0; t <= len; ++t) rec.grippers.push_back(read_points(is, 1).row(0));
  for (uint32_t t = 0; t < len; ++t) rec.actions.push_back(read_points(is, 1).row(0));
  rec.validate();
  return rec;
}

namespace {
std::string record_filename(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "traj_%05d.bin", i);
  return buf;
}
}  // namespace

void write_manifest(const std::string& dir, const Dataset& ds,
                    const std::vector<uint64_t>& record_seeds) {
  std::ofstream os(fs::path(dir) / "manifest");
  if (!os) throw std::runtime_error("cannot write manifest in " + dir);
  os << "icd_manifest v1\n";
  os << "task " << task_tag_name(ds.task) << "\n";
  os << "seed " << ds.seed << "\n";
  os << "cloud_points " << ds.cloud_points << "\n";
  os << "resamples " << ds.resamples << "\n";
  os << "records " << ds.records.size() << "\n";
  for (size_t i = 0; i < ds.scenes.size(); ++i)
    os << "scene " << i << "\n" << format_scene(ds.scenes[i]) << "endscene\n";
  for (size_t i = 0; i < ds.records.size(); ++i)
    os << "record " << i << " scene " << ds.records[i].scene_index << " file "
       << record_filename(int(i)) << " len " << ds.records[i].length() << " seed "
       << record_seeds[i] << "\n";
}

Dataset collect_dataset(const CollectConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  Dataset ds;
  ds.task = cfg.scene_gen.task;
  ds.seed = cfg.seed;
  ds.cloud_points = cfg.cloud_points;
  icd::Rng root(cfg.seed);
  std::vector<uint64_t> record_seeds;
  uint64_t attempt = 0;
  while (int(ds.records.size()) < cfg.num_trajectories) {
    uint64_t traj_seed = root.fork(attempt++).next_u64();
    icd::Rng rng(traj_seed);
    SceneSpec scene = make_scene(cfg.scene_gen, rng);
    SimState state = initial_state(scene, cfg.sim, rng);
    ScriptedPolicy policy;
    TrajectoryRecord rec;
    rec.scene_index = int(ds.records.size());
    rec.clouds.push_back(object_point_cloud(state, cfg.cloud_points, cfg.sim));
    rec.grippers.push_back(state.gripper_pos);
    bool aborted = false;
    for (int t = 0; t < cfg.traj_len; ++t) {
      Action a = policy.act(state, scene, cfg.sim, rng);
      state = step(state, a, scene, cfg.sim);
      if (state.stuck) {
        aborted = true;
        break;
      }
      rec.actions.push_back(a.delta);
      rec.clouds.push_back(object_point_cloud(state, cfg.cloud_points, cfg.sim));
      rec.grippers.push_back(state.gripper_pos);
    }
    if (aborted) {
      ++ds.resamples;
      continue;
    }
    write_record((fs::path(dir) / record_filename(int(ds.records.size()))).string(), rec);
    ds.scenes.push_back(std::move(scene));
    ds.records.push_back(std::move(rec));
    record_seeds.push_back(traj_seed);
  }
  write_manifest(dir, ds, record_seeds);
  return ds;
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest");
  if (!is) throw std::runtime_error("missing manifest in " + dir + " (run `collect` first)");
  std::string line;
  std::getline(is, line);
  if (line != "icd_manifest v1") throw std::runtime_error("unsupported manifest version");
  Dataset ds;
  std::vector<std::string> files;
  std::vector<int> scene_of_record;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "task") {
      std::string t;
      ls >> t;
      ds.task = task_tag_from_name(t);
    } else if (key == "seed") {
      ls >> ds.seed;
    } else if (key == "cloud_points") {
      ls >> ds.cloud_points;
    } else if (key == "resamples") {
      ls >> ds.resamples;
    } else if (key == "records") {
      // count line, sizes recovered from record lines
    } else if (key == "scene") {
      std::string block, sl;
      while (std::getline(is, sl) && sl != "endscene") block += sl + "\n";
      ds.scenes.push_back(parse_scene(block));
    } else if (key == "record") {
      int idx, scene_idx, len;
      std::string kw, file;
      uint64_t seed;
      ls >> idx >> kw >> scene_idx >> kw >> file >> kw >> len >> kw >> seed;
      files.push_back(file);
      scene_of_record.push_back(scene_idx);
    }
  }
  for (size_t i = 0; i < files.size(); ++i) {
    TrajectoryRecord rec = read_record((fs::path(dir) / files[i]).string());
    rec.scene_index = scene_of_record[i];
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace icd::sim
