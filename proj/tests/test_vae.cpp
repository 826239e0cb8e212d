#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "icd/vae/vae.hpp"

using namespace icd::vae;
namespace learn = icd::learn;
namespace sim = icd::sim;
namespace fields = icd::fields;

namespace {

// rank-based correlation, oracle implementation
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (size_t k = 0; k < idx.size(); ++k) r[idx[k]] = double(k);
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) ma += ra[i], mb += rb[i];
  ma /= ra.size();
  mb /= rb.size();
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("gap binning partitions the label range") {
  VaeConfig cfg;
  cfg.bins = 10;
  cfg.bin_lo = 1.0;
  cfg.bin_hi = 100.0;
  Vec centers = bin_centers(cfg);
  CHECK(centers.size() == 10);
  CHECK(centers(0) == doctest::Approx(1.0 + 99.0 / 20.0));
  int prev = 0;
  int hits[10] = {0};
  for (int gap = 1; gap <= 100; ++gap) {
    int k = bin_of_gap(double(gap), cfg);
    CHECK(k >= 0);
    CHECK(k < 10);
    CHECK(k >= prev);  // monotone
    prev = k;
    ++hits[k];
  }
  for (int k = 0; k < 10; ++k) CHECK(hits[k] > 0);  // every bin reachable
}

TEST_CASE("softmin estimator matches closed forms") {
  VaeConfig cfg;
  cfg.bins = 2;
  cfg.bin_lo = 1.0;
  cfg.bin_hi = 3.0;  // centers 1.5 and 2.5
  cfg.beta = 1.0;

  ReachabilityDistribution point;
  point.probs = Vec::Zero(2);
  point.probs(1) = 1.0;
  CHECK(reachability_softmin(point, cfg) == doctest::Approx(2.5));

  ReachabilityDistribution mixed;
  mixed.probs = Vec(2);
  mixed.probs << 0.25, 0.75;
  // hand-computed: w1 = 0.25, w2 = 0.75 e^{-1} (exponent shifted by c_min)
  double w2 = 0.75 * std::exp(-1.0);
  CHECK(reachability_softmin(mixed, cfg) ==
        doctest::Approx((1.5 * 0.25 + 2.5 * w2) / (0.25 + w2)).epsilon(1e-12));

  ReachabilityDistribution uni;
  uni.probs = Vec::Constant(2, 0.5);
  cfg.beta = 1e6;  // beta -> infinity selects the lowest bin
  CHECK(reachability_softmin(uni, cfg) == doctest::Approx(1.5).epsilon(1e-9));
  cfg.beta = -1.0;
  CHECK_THROWS(reachability_softmin(uni, cfg));
}

TEST_CASE("discounted pair sampling matches the truncated geometric law") {
  sim::TrajectoryRecord rec;
  const int L = 40;
  rec.actions.resize(L);

  icd::Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    auto [t1, t2] = sample_pair_discounted(rec, 1e-6, rng);  // gamma -> 0 limit
    CHECK(t2 - t1 == 1);
    CHECK(t1 >= 0);
    CHECK(t2 <= L);
  }

  const double g = 0.99;
  const int draws = 100000;
  std::vector<int> counts(L + 1, 0);
  for (int i = 0; i < draws; ++i) {
    auto [t1, t2] = sample_pair_discounted(rec, g, rng);
    REQUIRE(t2 > t1);
    ++counts[t2 - t1];
  }
  // oracle pmf: t1 uniform over L starts, gap geometric truncated to L - t1
  std::vector<double> pmf(L + 1, 0.0);
  for (int t1 = 0; t1 < L; ++t1) {
    int n = L - t1;
    double norm = g * (1.0 - std::pow(g, n)) / (1.0 - g);
    for (int j = 1; j <= n; ++j) pmf[j] += (1.0 / L) * std::pow(g, j) / norm;
  }
  // chi-square against the analytic law, tail bins grouped to keep
  // expected counts >= 5
  double chi2 = 0.0;
  int cells = 0, obs_tail = counts[0];
  double exp_tail = 0.0;
  for (int j = 1; j <= L; ++j) {
    double e = pmf[j] * draws;
    if (e >= 5.0) {
      chi2 += (counts[j] - e) * (counts[j] - e) / e;
      ++cells;
    } else {
      obs_tail += counts[j];
      exp_tail += e;
    }
  }
  if (exp_tail > 0.0) {
    chi2 += (obs_tail - exp_tail) * (obs_tail - exp_tail) / exp_tail;
    ++cells;
  }
  int dof = cells - 1;
  // Wilson-Hilferty approximation of the chi-square 0.99 quantile
  double z = 2.3263478740408408;
  double crit = dof * std::pow(1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof)), 3.0);
  CHECK(chi2 < crit);

  rec.actions.clear();
  CHECK_THROWS(sample_pair_discounted(rec, g, rng));
}

TEST_CASE("kl and exp paths pass a finite-difference gradient check") {
  using namespace learn;
  icd::Rng rng(7);
  ParamSet p;
  p["mean"] = glorot(3, 4, rng);
  p["logvar"] = glorot(3, 4, rng);
  auto f = [](Tape& t, std::map<std::string, Var>& v) {
    Var terms = sub(add_const(add(exp_op(v.at("logvar")), square(v.at("mean"))),
                              Mat::Constant(3, 4, -1.0)),
                    v.at("logvar"));
    return scale(sum_all(terms), 0.5 / 3.0);
  };
  CHECK(grad_check(f, p, 1e-5) < 1e-4);
}

TEST_CASE("encoder is deterministic and validates inputs") {
  VaeConfig cfg;
  cfg.desc_dim = 8;
  cfg.d_z = 16;
  icd::Rng rng(5);
  ParamSet p = init_vae_params(cfg, rng);
  sim::SimConfig sc;
  Points canon = canonical_object(sim::TaskTag::cable_routing, sc, 20);
  Mat desc(20, 8);
  for (Eigen::Index i = 0; i < desc.size(); ++i) desc.data()[i] = rng.normal();

  LatentState a = encode(p, canon, desc);
  LatentState b = encode(p, canon, desc);
  CHECK(a.z == b.z);
  CHECK(a.z == a.mean);  // inference uses the posterior mean
  CHECK(a.z.size() == 16);

  Mat wrong_channels(20, 7);
  wrong_channels.setZero();
  CHECK_THROWS(encode(p, canon, wrong_channels));
  Mat wrong_rows(19, 8);
  wrong_rows.setZero();
  CHECK_THROWS(encode(p, canon, wrong_rows));

  // permutation invariance of the set pooling: shuffling (canon, desc)
  // rows together leaves the latent unchanged up to float noise
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  Points canon_p(20, 3);
  Mat desc_p(20, 8);
  for (int i = 0; i < 20; ++i) {
    canon_p.row(i) = canon.row(perm[i]);
    desc_p.row(i) = desc.row(perm[i]);
  }
  CHECK((encode(p, canon_p, desc_p).z - a.z).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("decoder is a point-wise map and does not collapse") {
  VaeConfig cfg;
  cfg.desc_dim = 8;
  cfg.d_z = 16;
  icd::Rng rng(6);
  ParamSet p = init_vae_params(cfg, rng);
  sim::SimConfig sc;
  Points canon = canonical_object(sim::TaskTag::notebook_folding, sc, 24);
  Vec z(16);
  for (int i = 0; i < 16; ++i) z(i) = rng.normal();

  Mat out = decode(p, z, canon);
  CHECK(out.rows() == 24);
  CHECK(out.cols() == 8);

  // permuting the canonical rows permutes the output rows identically
  std::vector<int> perm(24);
  std::iota(perm.begin(), perm.end(), 0);
  std::rotate(perm.begin(), perm.begin() + 7, perm.end());
  Points canon_p(24, 3);
  for (int i = 0; i < 24; ++i) canon_p.row(i) = canon.row(perm[i]);
  Mat out_p = decode(p, z, canon_p);
  for (int i = 0; i < 24; ++i) CHECK(out_p.row(i) == out.row(perm[i]));

  // prior samples decode to distinct clouds
  double pairwise = 0.0;
  int n = 0;
  std::vector<Mat> outs;
  for (int s = 0; s < 6; ++s) {
    Vec zs(16);
    for (int i = 0; i < 16; ++i) zs(i) = rng.normal();
    outs.push_back(decode(p, zs, canon));
  }
  for (size_t i = 0; i < outs.size(); ++i)
    for (size_t j = i + 1; j < outs.size(); ++j) {
      pairwise += (outs[i] - outs[j]).norm() / std::sqrt(double(outs[i].size()));
      ++n;
    }
  CHECK(pairwise / n > 0.01);
}

TEST_CASE("vae checkpoint round trip preserves behavior") {
  VaeConfig cfg;
  cfg.desc_dim = 8;
  cfg.d_z = 12;
  cfg.bins = 4;
  icd::Rng rng(9);
  ParamSet p = init_vae_params(cfg, rng);
  p.quantize_f32();
  auto path = std::filesystem::temp_directory_path() / "icd_vae_ckpt.bin";
  learn::save_checkpoint(p, path.string());
  ParamSet loaded = learn::load_checkpoint(path.string());
  std::filesystem::remove(path);

  VaeConfig c2 = vae_config_from_params(loaded);
  CHECK(c2.d_z == 12);
  CHECK(c2.bins == 4);
  sim::SimConfig sc;
  Points canon = canonical_object(sim::TaskTag::cable_routing, sc, 10);
  Vec z = Vec::LinSpaced(12, -1.0, 1.0);
  CHECK(decode(loaded, z, canon) == decode(p, z, canon));
}

TEST_CASE("descriptor cache round trips and reports missing files") {
  CHECK_THROWS_WITH_AS(load_descriptor_cache("/nonexistent/cache.bin"),
                       doctest::Contains("cache-descriptors"), std::runtime_error);

  sim::CollectConfig cc;
  cc.num_trajectories = 2;
  cc.traj_len = 5;
  cc.cloud_points = 16;
  cc.seed = 11;
  auto dir = std::filesystem::temp_directory_path() / "icd_vae_cache_ds";
  std::filesystem::create_directories(dir);
  sim::Dataset ds = sim::collect_dataset(cc, dir.string());

  fields::NdfConfig ncfg;
  icd::Rng nrng(2);
  ParamSet ndf = fields::init_ndf_params(ncfg, nrng);
  ndf.quantize_f32();
  DescriptorCache cache = build_descriptor_cache(ds, ndf, cc.sim, 200, 3);
  CHECK(cache.canon.rows() == 16);
  CHECK(cache.desc.size() == 2);
  CHECK(cache.desc[0].size() == 6);
  CHECK(cache.field_hash == ndf.content_hash());

  auto path = dir / "descriptors.bin";
  write_descriptor_cache(path.string(), cache);
  DescriptorCache loaded = load_descriptor_cache(path.string());
  CHECK(loaded.field_hash == cache.field_hash);
  REQUIRE(loaded.desc.size() == cache.desc.size());
  double worst = 0.0;
  for (size_t i = 0; i < cache.desc.size(); ++i)
    for (size_t t = 0; t < cache.desc[i].size(); ++t)
      worst = std::max(worst, (loaded.desc[i][t] - cache.desc[i][t]).cwiseAbs().maxCoeff());
  worst = std::max(worst, (loaded.canon - cache.canon).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-6);  // float32 container
  std::filesystem::remove_all(dir);
}

TEST_CASE("trained vae reconstructs and ranks reachability on held-out data") {
  // small cable dataset driven by the scripted policy
  sim::CollectConfig cc;
  cc.num_trajectories = 24;
  cc.traj_len = 30;
  cc.cloud_points = 60;
  cc.seed = 4;
  auto dir = std::filesystem::temp_directory_path() / "icd_vae_train_ds";
  std::filesystem::create_directories(dir);
  sim::Dataset ds = sim::collect_dataset(cc, dir.string());
  std::filesystem::remove_all(dir);

  // frozen field (deterministic random features are enough for the VAE)
  fields::NdfConfig ncfg;
  icd::Rng nrng(8);
  ParamSet ndf = fields::init_ndf_params(ncfg, nrng);
  ndf.quantize_f32();
  DescriptorCache cache = build_descriptor_cache(ds, ndf, cc.sim, 400, 17);

  VaeConfig vcfg;
  vcfg.d_z = 64;
  vcfg.desc_dim = 3 + ncfg.desc_dim;  // positions + descriptors
  vcfg.bins = 6;
  vcfg.bin_lo = 1.0;
  vcfg.bin_hi = double(cc.traj_len);
  icd::Rng prng(1);
  ParamSet params = init_vae_params(vcfg, prng);

  VaeTrainConfig tcfg;
  tcfg.seed = 2;
  tcfg.epochs = 24;
  tcfg.holdout = {21, 22, 23};
  learn::TrainReport rep = train_vae(params, cache, tcfg);
  CHECK(rep.epoch_losses.back() < rep.epoch_losses.front());

  std::vector<double> pool_est, pool_truth;
  double mse = 0.0;
  int n_clouds = 0;
  double step1 = 0.0, step10 = 0.0;
  int n1 = 0, n10 = 0;
  for (int r : tcfg.holdout) {
    const auto& held = cache.desc[r];
    std::vector<Vec> zs;
    for (const Mat& d : held) {
      LatentState ls = encode(params, cache.canon, d);
      zs.push_back(ls.z);
      Mat rec = decode(params, ls.z, cache.canon);
      mse += (rec - d).squaredNorm() / double(d.size());
      ++n_clouds;
      // KL of the posterior is finite and non-negative
      double kl = 0.5 * (ls.logvar.array().exp() + ls.mean.array().square() - 1.0 -
                         ls.logvar.array())
                            .sum();
      CHECK(std::isfinite(kl));
      CHECK(kl >= 0.0);
    }

    // latent temporal smoothness
    for (size_t t = 0; t + 1 < zs.size(); ++t) {
      step1 += (zs[t + 1] - zs[t]).norm();
      ++n1;
    }
    for (size_t t = 0; t + 10 < zs.size(); ++t) {
      step10 += (zs[t + 10] - zs[t]).norm();
      ++n10;
    }

    // reachability: identical latents map to the smallest bin
    const Vec& feat = cache.scene_feats[r];
    ReachabilityDistribution same = predict_reachability(params, zs[0], zs[0], feat);
    CHECK(std::abs(same.probs.sum() - 1.0) < 1e-6);
    int argmax = 0;
    same.probs.maxCoeff(&argmax);
    CHECK(argmax == 0);

    // softmin estimates vs the effective temporal gap (minimum steps
    // between configurations equivalent to the endpoints, so revisits
    // and stationary segments keep the label honest)
    const auto& clouds = ds.records[r].clouds;
    auto close = [&](size_t a, size_t b) {
      return (clouds[a] - clouds[b]).norm() / std::sqrt(double(clouds[a].size())) < 0.005;
    };
    for (size_t t1 = 0; t1 < zs.size(); t1 += 2)
      for (size_t t2 = t1 + 1; t2 < zs.size(); t2 += 3) {
        ReachabilityDistribution dist = predict_reachability(params, zs[t1], zs[t2], feat);
        pool_est.push_back(reachability_softmin(dist, vcfg));
        int eff = int(t2 - t1);
        for (size_t a = 0; a < zs.size(); ++a) {
          if (!close(a, t1)) continue;
          for (size_t b = 0; b < zs.size(); ++b)
            if (close(b, t2)) eff = std::min(eff, int(std::abs(double(b) - double(a))));
        }
        pool_truth.push_back(double(eff));
      }
  }
  mse /= double(n_clouds);
  CHECK(mse < 0.05);
  CHECK(step1 / n1 < step10 / n10);
  CHECK(spearman(pool_est, pool_truth) >= 0.8);
}
