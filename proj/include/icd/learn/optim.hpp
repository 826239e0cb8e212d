#pragma once

#include <functional>
#include <vector>

#include "icd/learn/params.hpp"
#include "icd/learn/tape.hpp"
#include "icd/rng.hpp"

namespace icd::learn {

struct TrainReport {
  std::vector<double> epoch_losses;
  double wall_seconds = 0.0;
  std::map<std::string, double> validation;  // final validation metrics
};

struct OptimConfig {
  int epochs = 10;
  int steps_per_epoch = 100;
  double lr = 1e-3;
  uint64_t seed = 0;
  double grad_clip = 10.0;  // max-norm per tensor, 0 disables
};

// Builds the loss for one minibatch on a fresh tape. `step` is the global
// step index; batch selection must be driven by `rng` so runs are
// reproducible from the seed alone.
using Objective =
    std::function<Var(Tape&, std::map<std::string, Var>& params, int step, icd::Rng& rng)>;

// Adam over a ParamSet. Moments are keyed by tensor name.
class Adam {
 public:
  // eps small enough that loss terms scaled by tiny weights (e.g. 1e-5)
  // still make progress: Adam is only scale-invariant while eps << sqrt(v)
  Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-12)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& params, const std::map<std::string, Mat>& grads);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<std::string, Mat> m_, v_;
};

// Single-writer training loop; throws on non-finite loss with the step
// index of the offending batch.
std::pair<ParamSet, TrainReport> optimize(const Objective& objective, ParamSet params,
                                          const OptimConfig& config);

// Max relative error of analytic parameter gradients vs central
// differences at step h, over every entry of every tensor.
double grad_check(const std::function<Var(Tape&, std::map<std::string, Var>&)>& f,
                  const ParamSet& params, double h);

}  // namespace icd::learn
