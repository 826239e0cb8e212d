#include <cmath>

#include "doctest.h"
#include "icd/diffusion/diffusion.hpp"

using namespace icd::diffusion;
namespace vae = icd::vae;
namespace learn = icd::learn;
using icd::Rng;

namespace {

Mat random_mat(Eigen::Index rows, Eigen::Index cols, Rng& rng, double s = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = s * rng.normal();
  return m;
}

ParamSet small_model(int d_z = 6, uint64_t seed = 3) {
  DiffusionConfig cfg;
  cfg.d_z = d_z;
  cfg.hidden = 64;
  Rng rng(seed);
  return init_diffusion_params(cfg, rng);
}

}  // namespace

TEST_CASE("noise schedule coefficients and cumulative decay") {
  DiffusionConfig cfg;
  CHECK(cfg.steps == 100);  // K_diff default
  DiffusionSchedule s = make_schedule(cfg);
  REQUIRE(s.beta.size() == cfg.steps + 1);
  REQUIRE(s.abar.size() == cfg.steps + 1);
  CHECK(s.abar(0) == 1.0);
  for (int k = 1; k <= cfg.steps; ++k) {
    CHECK(s.beta(k) > 0.0);
    CHECK(s.beta(k) < 1.0);
    CHECK(s.gamma(k) > 0.0);
    CHECK(s.gamma(k) <= 1.0);
    CHECK(s.sigma(k) >= 0.0);
    CHECK(s.sigma(k) < 1.0);
    CHECK(s.abar(k) > 0.0);
    CHECK(s.abar(k) < s.abar(k - 1));  // monotone cumulative signal decay
    CHECK(s.alpha(k) == doctest::Approx(1.0 / std::sqrt(1.0 - s.beta(k))).epsilon(1e-12));
  }
  CHECK(s.sigma(1) == 0.0);  // final reverse step is noise-free

  // composing single forward steps must reproduce the closed-form cumulative
  // coefficients: signal' = prod sqrt(1-beta), noise var = 1 - abar
  double signal2 = 1.0, var = 0.0;
  for (int k = 1; k <= cfg.steps; ++k) {
    signal2 *= 1.0 - s.beta(k);
    var = (1.0 - s.beta(k)) * var + s.beta(k);
    CHECK(std::abs(signal2 - s.abar(k)) < 1e-6);
    CHECK(std::abs(var - (1.0 - s.abar(k))) < 1e-6);
  }
}

TEST_CASE("forward noising: identity at k=0, unit Gaussian at k=K") {
  DiffusionConfig cfg;
  DiffusionSchedule s = make_schedule(cfg);
  Rng rng(1);
  Mat x0 = random_mat(5, 8, rng);

  Mat same = forward_noise(x0, 0, s, rng);
  CHECK((same - x0).cwiseAbs().maxCoeff() == 0.0);  // bitwise identity

  // 10^4 draws from q(x^K | x0 = 1): statistics of a unit Gaussian
  Mat ones = Mat::Ones(100, 100);
  Mat eps;
  Mat xk = forward_noise(ones, cfg.steps, s, rng, &eps);
  CHECK(std::abs(xk.mean()) < 0.05);
  double var = (xk.array() - xk.mean()).square().mean();
  CHECK(var > 0.9);
  CHECK(var < 1.1);
  // the q-sample is exactly sqrt(abar) x0 + sqrt(1-abar) eps
  Mat recon = std::sqrt(s.abar(cfg.steps)) * ones + std::sqrt(1.0 - s.abar(cfg.steps)) * eps;
  CHECK((xk - recon).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(forward_noise(x0, cfg.steps + 1, s, rng), std::invalid_argument);
}

TEST_CASE("reverse update rule: zero noise prediction scales by alpha_k") {
  DiffusionConfig cfg;
  DiffusionSchedule s = make_schedule(cfg);
  Rng rng(2);
  Mat tau = random_mat(7, 6, rng);
  Mat zero = Mat::Zero(7, 6);
  for (int k : {1, 2, 50, 100}) {
    Mat out = reverse_update(tau, zero, zero, k, s);
    Mat expected = s.alpha(k) * tau;  // evaluated first so no FMA refolds it
    CHECK((out - expected).cwiseAbs().maxCoeff() == 0.0);  // exact
  }
  CHECK_THROWS_AS(reverse_update(tau, zero, zero, 0, s), std::invalid_argument);
}

TEST_CASE("chain length recurrence and temporally uniform subsampling") {
  CHECK(chain_length(0) == 2);
  CHECK(chain_length(1) == 3);
  CHECK(chain_length(2) == 5);
  CHECK(chain_length(3) == 9);
  CHECK(chain_length(4) == 17);
  for (int l = 0; l < 4; ++l) CHECK(chain_length(l + 1) == 2 * chain_length(l) - 1);

  CHECK(subsample_indices(0, 16, 5) == std::vector<int>{0, 4, 8, 12, 16});
  CHECK(subsample_indices(3, 7, 3) == std::vector<int>{3, 5, 7});
  CHECK(subsample_indices(0, 2, 3) == std::vector<int>{0, 1, 2});
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    int t0 = int(rng.uniform_index(40));
    int t1 = t0 + 1 + int(rng.uniform_index(60));
    int len = 2 + int(rng.uniform_index(16));
    auto idx = subsample_indices(t0, t1, len);
    REQUIRE(int(idx.size()) == len);
    CHECK(idx.front() == t0);  // endpoints = segment ends
    CHECK(idx.back() == t1);
    for (size_t j = 1; j < idx.size(); ++j) CHECK(idx[j] >= idx[j - 1]);
  }
}

TEST_CASE("conditioning tokens interleave the previous level") {
  Rng rng(5);
  Mat prev = random_mat(3, 6, rng);
  Mat c = cond_tokens(prev);
  REQUIRE(c.rows() == 5);
  for (int i = 0; i < 3; ++i) CHECK((c.row(2 * i) - prev.row(i)).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 2; ++i)
    CHECK((c.row(2 * i + 1) - 0.5 * (prev.row(i) + prev.row(i + 1))).cwiseAbs().maxCoeff() <
          1e-15);
}

TEST_CASE("generate_level: growth, endpoint clamping, determinism, shape") {
  ParamSet params = small_model();
  Rng rng(6);
  Vec scene = Vec::Zero(8);
  Mat prev = random_mat(3, 6, rng);

  Rng g1(7);
  Mat out = generate_level(params, prev, scene, 2, g1);
  REQUIRE(out.rows() == 2 * prev.rows() - 1);
  REQUIRE(out.cols() == 6);
  CHECK(out.allFinite());
  // endpoints equal the conditioning endpoints bitwise
  CHECK((out.row(0) - prev.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.row(4) - prev.row(2)).cwiseAbs().maxCoeff() == 0.0);

  Rng g2(7);
  Mat again = generate_level(params, prev, scene, 2, g2);
  CHECK((out - again).cwiseAbs().maxCoeff() == 0.0);  // bitwise reproducible

  // denoise_step output shape equals input shape
  DiffusionSchedule sched = make_schedule(diffusion_config_from_params(params));
  Mat tau = random_mat(5, 6, rng);
  Mat step = denoise_step(params, tau, 50, cond_tokens(prev), scene, 2, sched, rng);
  CHECK(step.rows() == tau.rows());
  CHECK(step.cols() == tau.cols());
}

TEST_CASE("generate_chain: stopping rule, degenerate goal, level cap") {
  ParamSet params = small_model();
  DiffusionConfig cfg = diffusion_config_from_params(params);
  CHECK(cfg.rho_reach == 10.0);
  CHECK(cfg.l_max == 4);
  Rng rng(8);
  Vec scene = Vec::Zero(8);
  Vec z0 = random_mat(6, 1, rng).col(0);
  Vec z1 = random_mat(6, 1, rng).col(0);

  int calls = 0;
  // z_cur within the goal threshold: length-2 chain, estimator never consulted
  Rng g0(9);
  SubgoalChain trivial = generate_chain(
      params, z0, z0, scene, [&](const Vec&, const Vec&) { return ++calls, 1e9; }, g0);
  CHECK(trivial.latents.rows() == 2);
  CHECK(trivial.level == 0);
  CHECK(calls == 0);

  // all pairs reachable: no refinement
  Rng g1(9);
  SubgoalChain flat =
      generate_chain(params, z0, z1, scene, [](const Vec&, const Vec&) { return 1.0; }, g1);
  CHECK(flat.latents.rows() == 2);
  CHECK(flat.level == 0);

  // first three adjacent-pair queries exceed rho_reach (levels 0 and 1),
  // every later pair is reachable: refinement stops after level 2, length 5
  calls = 0;
  Rng g2(9);
  SubgoalChain mid = generate_chain(
      params, z0, z1, scene, [&](const Vec&, const Vec&) { return ++calls <= 3 ? 11.0 : 1.0; },
      g2);
  CHECK(mid.level == 2);
  CHECK(mid.latents.rows() == 5);
  CHECK((mid.latents.row(0).transpose() - z0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mid.latents.row(4).transpose() - z1).cwiseAbs().maxCoeff() == 0.0);

  // never-reachable estimate: l_max cap respected, 2^l + 1 invariant
  Rng g3(9);
  SubgoalChain deep =
      generate_chain(params, z0, z1, scene, [](const Vec&, const Vec&) { return 1e9; }, g3);
  CHECK(deep.level == cfg.l_max);
  CHECK(deep.latents.rows() == chain_length(cfg.l_max));
  CHECK((deep.latents.row(0).transpose() - z0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((deep.latents.row(16).transpose() - z1).cwiseAbs().maxCoeff() == 0.0);

  // bitwise reproducible from the seed
  Rng g4(9);
  SubgoalChain deep2 =
      generate_chain(params, z0, z1, scene, [](const Vec&, const Vec&) { return 1e9; }, g4);
  CHECK((deep.latents - deep2.latents).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decode_chain: shapes, endpoint decode, idempotent caching") {
  vae::VaeConfig vcfg;
  vcfg.d_z = 6;
  vcfg.desc_dim = 4;
  Rng prng(10);
  ParamSet vae_params = vae::init_vae_params(vcfg, prng);
  Rng rng(11);
  Points canon = random_mat(10, 3, rng);

  SubgoalChain chain;
  chain.latents = random_mat(5, 6, rng);
  chain.level = 2;
  const auto& clouds = decode_chain(chain, vae_params, canon);
  REQUIRE(clouds.size() == 5);
  for (const Mat& c : clouds) {
    CHECK(c.rows() == 10);
    CHECK(c.cols() == 4);
  }
  // endpoint decode matches a direct decoder call bitwise
  Mat direct = vae::decode(vae_params, chain.latents.row(4).transpose(), canon);
  CHECK((clouds[4] - direct).cwiseAbs().maxCoeff() == 0.0);

  const auto& cached = decode_chain(chain, vae_params, canon);
  CHECK(&cached == &clouds);
  CHECK(&cached[0] == &clouds[0]);  // same storage, not recomputed
}

TEST_CASE("training on two fixed chains reproduces both modes") {
  DiffusionConfig cfg;
  cfg.d_z = 6;
  cfg.hidden = 64;
  Rng prng(3);
  ParamSet params = init_diffusion_params(cfg, prng);

  Rng drng(7);
  Mat mode_a = random_mat(3, 6, drng, 0.8);
  Mat mode_b = random_mat(3, 6, drng, 0.8);
  REQUIRE((mode_a.row(1) - mode_b.row(1)).norm() > 1.0);  // distinct interiors

  LatentCache cache;
  cache.z = {mode_a, mode_b};
  cache.scene_feats = {Vec::Zero(8), Vec::Zero(8)};

  DiffusionTrainConfig tc;
  tc.epochs = 400;
  tc.steps_per_epoch = 40;
  tc.batch = 8;
  tc.lr = 2e-3;
  tc.seed = 5;
  auto report = train_diffusion(params, cache, tc);
  REQUIRE(report.epoch_losses.size() == 400);
  CHECK(std::isfinite(report.epoch_losses.back()));
  // noise-prediction error drops at least 5x over training
  CHECK(report.epoch_losses.back() * 5.0 < report.epoch_losses.front());

  // sampling conditioned on each mode's endpoints lands within 0.1 of that
  // mode's interior latent at least 95% of the time
  Rng srng(11);
  for (const Mat* mode : {&mode_a, &mode_b}) {
    Mat prev(2, 6);
    prev.row(0) = mode->row(0);
    prev.row(1) = mode->row(2);
    int hits = 0;
    for (int s = 0; s < 100; ++s) {
      Mat out = generate_level(params, prev, Vec::Zero(8), 1, srng);
      if ((out.row(1) - mode->row(1)).norm() < 0.1) ++hits;
    }
    CHECK(hits >= 95);
  }
}

TEST_CASE("checkpoint round trip and training preconditions") {
  ParamSet params = small_model();
  params.quantize_f32();
  std::string path = "/tmp/icd_test_ldm.ckpt";
  learn::save_checkpoint(params, path);
  ParamSet back = learn::load_checkpoint(path);
  DiffusionConfig cfg = diffusion_config_from_params(back);
  CHECK(cfg.d_z == 6);
  CHECK(cfg.steps == 100);
  Rng rng(12);
  Mat prev = random_mat(2, 6, rng);
  Vec scene = Vec::Zero(8);
  Rng g1(13), g2(13);
  Mat a = generate_level(params, prev, scene, 1, g1);
  Mat b = generate_level(back, prev, scene, 1, g2);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);  // saved model samples identically

  // a VAE checkpoint is rejected
  vae::VaeConfig vcfg;
  Rng vrng(14);
  ParamSet vae_params = vae::init_vae_params(vcfg, vrng);
  CHECK_THROWS_AS(diffusion_config_from_params(vae_params), std::runtime_error);

  // no record long enough to hold even a level-1 chain
  LatentCache tiny;
  tiny.z = {Mat::Zero(2, 6)};
  tiny.scene_feats = {Vec::Zero(8)};
  DiffusionTrainConfig tc;
  CHECK_THROWS_AS(train_diffusion(params, tiny, tc), std::invalid_argument);
}
