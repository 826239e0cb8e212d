#include "icd/learn/optim.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace icd::learn {

void Adam::step(ParamSet& params, const std::map<std::string, Mat>& grads) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (auto& [name, p] : params.tensors) {
    auto it = grads.find(name);
    if (it == grads.end() || it->second.size() == 0) continue;
    const Mat& g = it->second;
    Mat& m = m_[name];
    Mat& v = v_[name];
    if (m.size() == 0) {
      m = Mat::Zero(p.rows(), p.cols());
      v = Mat::Zero(p.rows(), p.cols());
    }
    m = beta1_ * m + (1.0f - beta1_) * g;
    v = beta2_ * v + (1.0f - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  }
}

std::pair<ParamSet, TrainReport> optimize(const Objective& objective, ParamSet params,
                                          const OptimConfig& config) {
  auto t0 = std::chrono::steady_clock::now();
  Adam adam(config.lr);
  icd::Rng rng(config.seed);
  TrainReport report;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int s = 0; s < config.steps_per_epoch; ++s, ++step) {
      Tape tape;
      auto vars = register_params(tape, params);
      Var loss = objective(tape, vars, step, rng);
      double lv = loss.value()(0, 0);
      if (!std::isfinite(lv))
        throw std::runtime_error("optimize: non-finite loss at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(s));
      tape.backward(loss);
      std::map<std::string, Mat> grads;
      for (auto& [name, var] : vars) {
        Mat g = var.grad();
        if (g.size() != 0 && config.grad_clip > 0.0f) {
          double n = g.norm();
          if (n > config.grad_clip) g *= config.grad_clip / n;
        }
        grads[name] = std::move(g);
      }
      adam.step(params, grads);
      epoch_loss += double(lv);
    }
    report.epoch_losses.push_back(epoch_loss / config.steps_per_epoch);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  params.quantize_f32();
  return {std::move(params), std::move(report)};
}

double grad_check(const std::function<Var(Tape&, std::map<std::string, Var>&)>& f,
                  const ParamSet& params, double h) {
  // analytic pass
  std::map<std::string, Mat> analytic;
  {
    Tape tape;
    auto vars = register_params(tape, params);
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (auto& [name, var] : vars)
      analytic[name] = var.grad().size() ? var.grad()
                                         : Mat::Zero(var.rows(), var.cols());
  }
  auto eval = [&f](const ParamSet& p) {
    Tape tape;
    auto vars = register_params(tape, p);
    return double(f(tape, vars).value()(0, 0));
  };
  double max_rel = 0.0;
  ParamSet probe = params;
  for (auto& [name, m] : probe.tensors) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double orig = m.data()[i];
      m.data()[i] = orig + h;
      double fp = eval(probe);
      m.data()[i] = orig - h;
      double fm = eval(probe);
      m.data()[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = double(analytic[name].data()[i]);
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace icd::learn
