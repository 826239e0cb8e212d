#pragma once

#include <string>
#include <vector>

#include "icd/sim/policy.hpp"
#include "icd/sim/tasks.hpp"

namespace icd::sim {

struct TrajectoryRecord {
  int scene_index = 0;
  std::vector<Points> clouds;    // len+1 object clouds, M x 3 each
  std::vector<Vec3> grippers;    // len+1
  std::vector<Vec3> actions;     // len

  int length() const { return int(actions.size()); }
  Eigen::Index cloud_points() const { return clouds.empty() ? 0 : clouds[0].rows(); }
  void validate() const;  // throws on invariant violation
};

struct CollectConfig {
  SceneGenConfig scene_gen;
  SimConfig sim;
  int num_trajectories = 300;
  int traj_len = 100;
  int cloud_points = 200;
  uint64_t seed = 1;
};

struct Dataset {
  TaskTag task = TaskTag::cable_routing;
  uint64_t seed = 0;
  int cloud_points = 0;
  int resamples = 0;
  std::vector<SceneSpec> scenes;          // one per record
  std::vector<TrajectoryRecord> records;  // record i uses scene i
};

// binary trajectory container: magic "ICD1", u32 M, u32 L, then float32
// little-endian clouds, gripper positions, actions
void write_record(const std::string& path, const TrajectoryRecord& rec);
TrajectoryRecord read_record(const std::string& path);

void write_manifest(const std::string& dir, const Dataset& ds,
                    const std::vector<uint64_t>& record_seeds);

// runs the scripted policy over randomized scenes; trajectories hitting a
// stuck state are aborted and resampled (counted in the manifest)
Dataset collect_dataset(const CollectConfig& cfg, const std::string& dir);

Dataset load_dataset(const std::string& dir);

}  // namespace icd::sim
