#include "icd/fields/ndf.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace icd::fields {

namespace {

// indices of the k nearest rows of pts to x, ties broken by index
std::vector<int> knn_indices(const Points& pts, const Vec3& x, int k) {
  const int n = int(pts.rows());
  k = std::min(k, n);
  std::vector<std::pair<double, int>> d(n);
  for (int i = 0; i < n; ++i)
    d[i] = {(pts.row(i).transpose() - x).squaredNorm(), i};
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = d[i].second;
  return idx;
}

}  // namespace

SceneEncoding encode_scene(const Points& cloud, const NdfConfig& cfg) {
  if (cloud.rows() < 2) throw std::invalid_argument("scene cloud too small");
  SceneEncoding enc;
  enc.points = cloud;
  enc.cfg = cfg;
  const int n = int(cloud.rows());
  enc.stats.resize(n, NdfConfig::kStatDim);
  for (int i = 0; i < n; ++i) {
    Vec3 p = cloud.row(i);
    std::vector<int> nb = knn_indices(cloud, p, cfg.scene_knn + 1);
    double mean = 0.0, mn = 1e18, m2 = 0.0, dz = 0.0;
    int cnt = 0;
    for (int j : nb) {
      if (j == i) continue;
      double d = (cloud.row(j).transpose() - p).norm();
      mean += d;
      m2 += d * d;
      mn = std::min(mn, d);
      dz += cloud(j, 2) - p.z();
      ++cnt;
    }
    if (cnt == 0) cnt = 1;
    mean /= cnt;
    m2 /= cnt;
    enc.stats(i, 0) = mean;
    enc.stats(i, 1) = mn;
    enc.stats(i, 2) = dz / cnt + cfg.c_z;
    enc.stats(i, 3) = std::sqrt(std::max(0.0, m2 - mean * mean));
  }
  enc.normals.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    Vec3 p = cloud.row(i);
    std::vector<int> nb = knn_indices(cloud, p, cfg.normal_knn + 1);
    Vec3 cen = Vec3::Zero();
    for (int j : nb) cen += cloud.row(j).transpose();
    cen /= double(nb.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int j : nb) {
      Vec3 r = cloud.row(j).transpose() - cen;
      cov += r * r.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    Vec3 nrm = es.eigenvectors().col(0);
    // canonical sign only; neighbors re-orient toward the query per pair
    if (nrm.z() < 0 || (nrm.z() == 0 && (nrm.x() < 0 || (nrm.x() == 0 && nrm.y() < 0))))
      nrm = -nrm;
    enc.normals.row(i) = nrm;
  }
  return enc;
}

ParamSet init_ndf_params(const NdfConfig& cfg, icd::Rng& rng) {
  using learn::glorot;
  ParamSet p;
  p["pair_w1"] = glorot(NdfConfig::kPairDim, cfg.hidden, rng);
  p["pair_b1"] = Mat::Zero(1, cfg.hidden);
  p["pair_w2"] = glorot(cfg.hidden, cfg.hidden, rng);
  p["pair_b2"] = Mat::Zero(1, cfg.hidden);
  p["desc_w1"] = glorot(cfg.hidden, cfg.hidden, rng);
  p["desc_b1"] = Mat::Zero(1, cfg.hidden);
  p["desc_w2"] = glorot(cfg.hidden, cfg.desc_dim, rng);
  p["desc_b2"] = Mat::Zero(1, cfg.desc_dim);
  p["occ_w1"] = glorot(cfg.desc_dim, cfg.desc_dim, rng);
  p["occ_b1"] = Mat::Zero(1, cfg.desc_dim);
  p["occ_w2"] = glorot(cfg.desc_dim, 1, rng);
  p["occ_b2"] = Mat::Zero(1, 1);
  p["alpha_w1"] = glorot(cfg.hidden + cfg.desc_dim, cfg.hidden, rng);
  p["alpha_b1"] = Mat::Zero(1, cfg.hidden);
  p["alpha_w2"] = glorot(cfg.hidden, 1, rng);
  p["alpha_b2"] = Mat::Zero(1, 1);
  p["gamma_w1"] = glorot(cfg.hidden + cfg.desc_dim, cfg.hidden, rng);
  p["gamma_b1"] = Mat::Zero(1, cfg.hidden);
  p["gamma_w2"] = glorot(cfg.hidden, 1, rng);
  p["gamma_b2"] = Mat::Zero(1, 1);
  p["beta_w"] = glorot(cfg.desc_dim, 1, rng);
  p["beta_b"] = Mat::Zero(1, 1);
  p.meta["model_kind"] = "ndf";
  p.meta["schema_version"] = "1";
  p.meta["knn"] = std::to_string(cfg.knn);
  p.meta["scene_knn"] = std::to_string(cfg.scene_knn);
  p.meta["normal_knn"] = std::to_string(cfg.normal_knn);
  p.meta["hidden"] = std::to_string(cfg.hidden);
  p.meta["desc_dim"] = std::to_string(cfg.desc_dim);
  p.meta["c_z"] = std::to_string(cfg.c_z);
  p.meta["global_mean"] = cfg.global_mean ? "1" : "0";
  return p;
}

NdfConfig ndf_config_from_params(const ParamSet& params) {
  NdfConfig cfg;
  auto get = [&params](const std::string& k) { return params.meta.at(k); };
  if (params.meta.at("model_kind") != "ndf")
    throw std::runtime_error("checkpoint is not an ndf model");
  cfg.knn = std::stoi(get("knn"));
  cfg.scene_knn = std::stoi(get("scene_knn"));
  cfg.normal_knn = std::stoi(get("normal_knn"));
  cfg.hidden = std::stoi(get("hidden"));
  cfg.desc_dim = std::stoi(get("desc_dim"));
  cfg.c_z = std::stod(get("c_z"));
  cfg.global_mean = get("global_mean") == "1";
  return cfg;
}

NdfBatch make_ndf_batch(const SceneEncoding& enc, const Points& queries) {
  const NdfConfig& cfg = enc.cfg;
  const int q = int(queries.rows());
  const int n = int(enc.points.rows());
  const int k = cfg.global_mean ? n : std::min(cfg.knn, n);
  NdfBatch b;
  b.k = k;
  b.pair_feats.resize(q * k, NdfConfig::kPairDim);
  b.dirs.resize(q * k, 3);
  b.normals.resize(q * k, 3);
  b.weights.resize(q * k);
  for (int qi = 0; qi < q; ++qi) {
    Vec3 x = queries.row(qi);
    std::vector<int> nb;
    if (cfg.global_mean) {
      nb.resize(size_t(n));
      std::iota(nb.begin(), nb.end(), 0);
    } else {
      nb = knn_indices(enc.points, x, k);
    }
    double wsum = 0.0, dmin = 1e18;
    for (int j = 0; j < k; ++j) {
      int r = qi * k + j;
      Vec3 p = enc.points.row(nb[size_t(j)]);
      Vec3 off = x - p;
      double d = off.norm();
      double dh = off.head<2>().norm();
      b.pair_feats(r, 0) = d;
      b.pair_feats(r, 1) = off.z() + cfg.c_z;
      b.pair_feats(r, 2) = dh;
      b.pair_feats.row(r).tail<NdfConfig::kStatDim>() = enc.stats.row(nb[size_t(j)]);
      b.dirs.row(r) = d > 1e-9 ? Vec3(off / d) : Vec3(0, 0, 1);
      double w = cfg.global_mean ? 1.0 : 1.0 / (cfg.knn_eps + d);
      b.weights(r) = w;
      wsum += w;
      dmin = std::min(dmin, d);
    }
    Vec3 mean_dir = Vec3::Zero();
    for (int j = 0; j < k; ++j) {
      b.weights(qi * k + j) /= wsum;
      mean_dir += b.weights(qi * k + j) * b.dirs.row(qi * k + j).transpose();
    }
    for (int j = 0; j < k; ++j) {
      int r = qi * k + j;
      // prominence relative to the query's closest neighbor, so the net can
      // single out points on the nearest surface, plus how this neighbor
      // sits relative to the weighted mean direction of the constellation
      b.pair_feats(r, 3) = b.pair_feats(r, 0) - dmin;
      b.pair_feats(r, 4) = b.dirs.row(r).transpose().dot(mean_dir);
      b.pair_feats(r, 5) = mean_dir.norm();
      Vec3 nrm = enc.normals.row(nb[size_t(j)]);
      if (nrm.dot(b.dirs.row(r).transpose()) < 0) nrm = -nrm;
      b.normals.row(r) = nrm;
      b.pair_feats(r, 6) = nrm.dot(b.dirs.row(r).transpose());
      b.pair_feats(r, 7) = nrm.z();
    }
  }
  return b;
}

NdfOut ndf_forward(Tape& t, std::map<std::string, Var>& v, const NdfBatch& batch) {
  using namespace learn;
  Var pf = constant(t, batch.pair_feats);
  Var h1 = relu(linear(pf, v.at("pair_w1"), v.at("pair_b1")));
  Var h2 = relu(linear(h1, v.at("pair_w2"), v.at("pair_b2")));
  Var agg = pool_rows(h2, batch.k, batch.weights);
  Var d1 = relu(linear(agg, v.at("desc_w1"), v.at("desc_b1")));
  NdfOut out;
  out.descriptor = tanh_op(linear(d1, v.at("desc_w2"), v.at("desc_b2")));
  Var o1 = relu(linear(out.descriptor, v.at("occ_w1"), v.at("occ_b1")));
  out.occ_logit = linear(o1, v.at("occ_w2"), v.at("occ_b2"));
  Var ain = concat_cols(h2, repeat_rows(out.descriptor, batch.k));
  Var a1 = relu(linear(ain, v.at("alpha_w1"), v.at("alpha_b1")));
  Var alpha = linear(a1, v.at("alpha_w2"), v.at("alpha_b2"));
  Var alpha3 = matmul(alpha, constant(t, Mat::Ones(1, 3)));
  Var contrib = cmul(alpha3, constant(t, batch.dirs));
  Var gsum = pool_rows(contrib, batch.k, batch.weights);
  Var c1 = relu(linear(ain, v.at("gamma_w1"), v.at("gamma_b1")));
  Var gamma = linear(c1, v.at("gamma_w2"), v.at("gamma_b2"));
  Var gamma3 = matmul(gamma, constant(t, Mat::Ones(1, 3)));
  Var ncontrib = cmul(gamma3, constant(t, batch.normals));
  gsum = add(gsum, pool_rows(ncontrib, batch.k, batch.weights));
  Var beta = linear(out.descriptor, v.at("beta_w"), v.at("beta_b"));
  Mat ez(1, 3);
  ez << 0, 0, 1;
  out.grad_pred = add(gsum, matmul(beta, constant(t, ez)));
  return out;
}

namespace {

struct DenseOut {
  Mat descriptor;
  Mat occ_logit;
  Mat grad_pred;
};

Mat relu_d(Mat x) { return x.cwiseMax(0.0); }
Mat lin_d(const Mat& x, const ParamSet& p, const std::string& w, const std::string& b) {
  return (x * p.at(w)).rowwise() + p.at(b).row(0);
}

DenseOut dense_forward(const ParamSet& p, const NdfBatch& batch) {
  DenseOut out;
  Mat h1 = relu_d(lin_d(batch.pair_feats, p, "pair_w1", "pair_b1"));
  Mat h2 = relu_d(lin_d(h1, p, "pair_w2", "pair_b2"));
  const int q = int(h2.rows()) / batch.k;
  Mat agg = Mat::Zero(q, h2.cols());
  for (int qi = 0; qi < q; ++qi)
    for (int j = 0; j < batch.k; ++j)
      agg.row(qi) += batch.weights(qi * batch.k + j) * h2.row(qi * batch.k + j);
  Mat d1 = relu_d(lin_d(agg, p, "desc_w1", "desc_b1"));
  out.descriptor = lin_d(d1, p, "desc_w2", "desc_b2").array().tanh();
  Mat ain(h2.rows(), h2.cols() + out.descriptor.cols());
  for (int qi = 0; qi < q; ++qi)
    for (int j = 0; j < batch.k; ++j) {
      int r = qi * batch.k + j;
      ain.row(r) << h2.row(r), out.descriptor.row(qi);
    }
  Mat a1 = relu_d(lin_d(ain, p, "alpha_w1", "alpha_b1"));
  Mat alpha = lin_d(a1, p, "alpha_w2", "alpha_b2");
  Mat c1 = relu_d(lin_d(ain, p, "gamma_w1", "gamma_b1"));
  Mat gamma = lin_d(c1, p, "gamma_w2", "gamma_b2");
  Mat gsum = Mat::Zero(q, 3);
  for (int qi = 0; qi < q; ++qi)
    for (int j = 0; j < batch.k; ++j) {
      int r = qi * batch.k + j;
      gsum.row(qi) += batch.weights(r) * (alpha(r, 0) * batch.dirs.row(r) +
                                          gamma(r, 0) * batch.normals.row(r));
    }
  Mat o1 = relu_d(lin_d(out.descriptor, p, "occ_w1", "occ_b1"));
  out.occ_logit = lin_d(o1, p, "occ_w2", "occ_b2");
  Mat beta = lin_d(out.descriptor, p, "beta_w", "beta_b");
  out.grad_pred = gsum;
  out.grad_pred.col(2) += beta.col(0);
  return out;
}

}  // namespace

Mat ndf_descriptors(const ParamSet& params, const SceneEncoding& enc, const Points& queries) {
  NdfBatch b = make_ndf_batch(enc, queries);
  return dense_forward(params, b).descriptor;
}

void ndf_heads(const ParamSet& params, const SceneEncoding& enc, const Points& queries,
               Mat* occ_prob, Points* grad_dirs) {
  NdfBatch b = make_ndf_batch(enc, queries);
  DenseOut out = dense_forward(params, b);
  if (occ_prob) *occ_prob = (1.0 / (1.0 + (-out.occ_logit.array()).exp())).matrix();
  if (grad_dirs) {
    grad_dirs->resize(queries.rows(), 3);
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
      Vec3 g = out.grad_pred.row(i);
      double n = g.norm();
      grad_dirs->row(i) = n > 1e-12 ? Vec3(g / n) : Vec3(0, 0, 1);
    }
  }
}

Mat object_descriptors(const ParamSet& params, const SceneEncoding& enc, const Points& object) {
  return ndf_descriptors(params, enc, object);
}

learn::TrainReport train_ndf(ParamSet& params, const std::vector<SceneSpec>& scenes,
                             const NdfTrainConfig& cfg) {
  using namespace learn;
  if (scenes.empty()) throw std::invalid_argument("train_ndf: no scenes");
  NdfConfig net_cfg = ndf_config_from_params(params);
  icd::Rng data_rng(cfg.seed);

  std::vector<SceneEncoding> encodings;
  encodings.reserve(scenes.size());
  for (size_t i = 0; i < scenes.size(); ++i) {
    icd::Rng r = data_rng.fork(7000 + i);
    encodings.push_back(encode_scene(
        sim::sample_scene_point_cloud(scenes[i], cfg.scene_points, r), net_cfg));
  }

  Objective obj = [&](Tape& t, std::map<std::string, Var>& v, int, icd::Rng& rng) -> Var {
    size_t si = rng.uniform_index(scenes.size());
    const SceneSpec& scene = scenes[si];
    const SceneEncoding& enc = encodings[si];
    const int q = cfg.batch_queries;
    Points queries(q, 3);
    Mat occ(q, 1);
    Mat grad(q, 3);
    for (int i = 0; i < q; ++i) {
      Vec3 x;
      if (i * 4 < q * 3) {  // mostly near-surface, where contact happens
        Vec3 s = sim::sample_on_primitive(
            scene.primitives[rng.uniform_index(scene.primitives.size())], rng);
        Vec3 n = sim::scene_sdf_gradient(scene, s);
        x = s + rng.uniform(-cfg.near_band, cfg.near_band) * n;
      } else {
        for (int d = 0; d < 3; ++d)
          x(d) = rng.uniform(scene.workspace.lo(d), scene.workspace.hi(d));
      }
      queries.row(i) = x;
      occ(i, 0) = sim::scene_sdf(scene, x) < 0.0 ? 1.0 : 0.0;
      grad.row(i) = sim::scene_sdf_gradient(scene, x);
    }
    NdfBatch batch = make_ndf_batch(enc, queries);
    NdfOut out = ndf_forward(t, v, batch);
    // unit-normalizing the prediction makes the second term a pure
    // direction (1 - cos) loss; scale by 3 so both terms are per query
    return add(bce_logits(out.occ_logit, occ),
               scale(mse(row_normalize(out.grad_pred), grad), 3.0));
  };

  OptimConfig ocfg;
  ocfg.epochs = cfg.epochs;
  ocfg.steps_per_epoch = cfg.steps_per_epoch;
  ocfg.lr = cfg.lr;
  ocfg.seed = cfg.seed;
  auto [trained, report] = optimize(obj, std::move(params), ocfg);
  params = std::move(trained);
  return report;
}

}  // namespace icd::fields
