#pragma once

#include <deque>

#include "icd/sim/tasks.hpp"

namespace icd::sim {

// Noisy waypoint-following data-collection policy. Makes and breaks
// fixture/table contact often but does not try to finish the task.
class ScriptedPolicy {
 public:
  Action act(const SimState& state, const SceneSpec& scene, const SimConfig& cfg,
             icd::Rng& rng);

 private:
  void resample(const SimState& state, const SceneSpec& scene, const SimConfig& cfg,
                icd::Rng& rng);
  std::deque<Vec3> waypoints_;
};

}  // namespace icd::sim
