#include "icd/vae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace icd::vae {

namespace {

Mat relu_d(Mat x) { return x.cwiseMax(0.0); }
Mat lin_d(const Mat& x, const ParamSet& p, const std::string& w, const std::string& b) {
  return (x * p.at(w)).rowwise() + p.at(b).row(0);
}

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void put_mat(std::ostream& os, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      float f = float(m(i, j));
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
}
Mat get_mat(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      float f = 0;
      is.read(reinterpret_cast<char*>(&f), 4);
      m(i, j) = double(f);
    }
  return m;
}

// stacked per-point encoder input [canon_i, desc_i] for B clouds
Mat stack_encoder_input(const Points& canon, const std::vector<const Mat*>& clouds) {
  const Eigen::Index m = canon.rows();
  const int d = int(clouds[0]->cols());
  Mat x(Eigen::Index(clouds.size()) * m, 3 + d);
  for (size_t b = 0; b < clouds.size(); ++b) {
    x.block(Eigen::Index(b) * m, 0, m, 3) = canon;
    x.block(Eigen::Index(b) * m, 3, m, d) = *clouds[b];
  }
  return x;
}

struct EncVars {
  Var mean;
  Var logvar;
};

EncVars encode_tape(Tape& t, std::map<std::string, Var>& v, const Mat& stacked, int m) {
  using namespace learn;
  Var x = constant(t, stacked);
  Var h1 = relu(linear(x, v.at("enc_w1"), v.at("enc_b1")));
  Var h2 = relu(linear(h1, v.at("enc_w2"), v.at("enc_b2")));
  Vec w = Vec::Constant(stacked.rows(), 1.0 / double(m));
  Var pooled = pool_rows(h2, m, w);
  return {linear(pooled, v.at("mu_w"), v.at("mu_b")),
          linear(pooled, v.at("lv_w"), v.at("lv_b"))};
}

Var decode_tape(Tape& t, std::map<std::string, Var>& v, const Points& canon, Var z) {
  using namespace learn;
  const int m = int(canon.rows());
  const int b = int(z.value().rows());
  Mat canon_tiled(Eigen::Index(b) * m, 3);
  for (int i = 0; i < b; ++i) canon_tiled.block(Eigen::Index(i) * m, 0, m, 3) = canon;
  Var in = concat_cols(constant(t, canon_tiled), repeat_rows(z, m));
  Var h1 = relu(linear(in, v.at("dec_w1"), v.at("dec_b1")));
  Var h2 = relu(linear(h1, v.at("dec_w2"), v.at("dec_b2")));
  return tanh_op(linear(h2, v.at("dec_w3"), v.at("dec_b3")));
}

}  // namespace

ParamSet init_vae_params(const VaeConfig& cfg, icd::Rng& rng) {
  using learn::glorot;
  ParamSet p;
  p["enc_w1"] = glorot(3 + cfg.desc_dim, cfg.hidden, rng);
  p["enc_b1"] = Mat::Zero(1, cfg.hidden);
  p["enc_w2"] = glorot(cfg.hidden, cfg.hidden, rng);
  p["enc_b2"] = Mat::Zero(1, cfg.hidden);
  p["mu_w"] = glorot(cfg.hidden, cfg.d_z, rng);
  p["mu_b"] = Mat::Zero(1, cfg.d_z);
  p["lv_w"] = glorot(cfg.hidden, cfg.d_z, rng);
  p["lv_b"] = Mat::Zero(1, cfg.d_z);
  p["dec_w1"] = glorot(3 + cfg.d_z, cfg.hidden, rng);
  p["dec_b1"] = Mat::Zero(1, cfg.hidden);
  p["dec_w2"] = glorot(cfg.hidden, cfg.hidden, rng);
  p["dec_b2"] = Mat::Zero(1, cfg.hidden);
  p["dec_w3"] = glorot(cfg.hidden, cfg.desc_dim, rng);
  p["dec_b3"] = Mat::Zero(1, cfg.desc_dim);
  p["reach_w1"] = glorot(2 * cfg.d_z + 8, cfg.hidden, rng);
  p["reach_b1"] = Mat::Zero(1, cfg.hidden);
  p["reach_w2"] = glorot(cfg.hidden, cfg.hidden, rng);
  p["reach_b2"] = Mat::Zero(1, cfg.hidden);
  p["reach_w3"] = glorot(cfg.hidden, cfg.bins, rng);
  p["reach_b3"] = Mat::Zero(1, cfg.bins);
  p.meta["model_kind"] = "vae";
  p.meta["schema_version"] = "1";
  p.meta["d_z"] = std::to_string(cfg.d_z);
  p.meta["hidden"] = std::to_string(cfg.hidden);
  p.meta["desc_dim"] = std::to_string(cfg.desc_dim);
  p.meta["bins"] = std::to_string(cfg.bins);
  p.meta["bin_lo"] = std::to_string(cfg.bin_lo);
  p.meta["bin_hi"] = std::to_string(cfg.bin_hi);
  p.meta["gamma"] = std::to_string(cfg.gamma);
  p.meta["beta"] = std::to_string(cfg.beta);
  return p;
}

VaeConfig vae_config_from_params(const ParamSet& params) {
  if (params.meta.at("model_kind") != "vae")
    throw std::runtime_error("checkpoint is not a vae model");
  VaeConfig cfg;
  cfg.d_z = std::stoi(params.meta.at("d_z"));
  cfg.hidden = std::stoi(params.meta.at("hidden"));
  cfg.desc_dim = std::stoi(params.meta.at("desc_dim"));
  cfg.bins = std::stoi(params.meta.at("bins"));
  cfg.bin_lo = std::stod(params.meta.at("bin_lo"));
  cfg.bin_hi = std::stod(params.meta.at("bin_hi"));
  cfg.gamma = std::stod(params.meta.at("gamma"));
  cfg.beta = std::stod(params.meta.at("beta"));
  return cfg;
}

Points canonical_object(sim::TaskTag task, const sim::SimConfig& cfg, int m) {
  sim::SimState st;
  if (task == sim::TaskTag::cable_routing) {
    st.particles.resize(cfg.rope_particles, 3);
    for (int i = 0; i < cfg.rope_particles; ++i)
      st.particles.row(i) = Vec3(i * cfg.rest_segment(), 0.0, cfg.rope_radius);
    st.grasped_index = cfg.rope_particles - 1;
  } else {
    st.grasped_index = -1;
    st.notebook = sim::NotebookPose{};  // flat open notebook at the origin
  }
  return sim::object_point_cloud(st, m, cfg);
}

LatentState encode(const ParamSet& params, const Points& canon, const Mat& desc_cloud) {
  VaeConfig cfg = vae_config_from_params(params);
  if (desc_cloud.cols() != cfg.desc_dim)
    throw std::invalid_argument("encode: descriptor channel count does not match checkpoint");
  if (desc_cloud.rows() != canon.rows())
    throw std::invalid_argument("encode: cloud row count does not match canonical object");
  Mat x(canon.rows(), 3 + cfg.desc_dim);
  x.leftCols(3) = canon;
  x.rightCols(cfg.desc_dim) = desc_cloud;
  Mat h2 = relu_d(lin_d(relu_d(lin_d(x, params, "enc_w1", "enc_b1")), params, "enc_w2", "enc_b2"));
  Mat pooled = h2.colwise().mean();
  LatentState out;
  out.mean = lin_d(pooled, params, "mu_w", "mu_b").row(0);
  out.logvar = lin_d(pooled, params, "lv_w", "lv_b").row(0);
  out.z = out.mean;  // inference is deterministic
  return out;
}

Mat decode(const ParamSet& params, const Vec& z, const Points& canon) {
  Mat in(canon.rows(), 3 + z.size());
  in.leftCols(3) = canon;
  in.rightCols(z.size()) = z.transpose().replicate(canon.rows(), 1);
  Mat h1 = relu_d(lin_d(in, params, "dec_w1", "dec_b1"));
  Mat h2 = relu_d(lin_d(h1, params, "dec_w2", "dec_b2"));
  return lin_d(h2, params, "dec_w3", "dec_b3").array().tanh();
}

Vec scene_summary(const fields::SceneEncoding& enc) {
  const Mat& s = enc.stats;
  Vec out(2 * s.cols());
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    double mean = s.col(c).mean();
    double var = (s.col(c).array() - mean).square().mean();
    out(c) = mean;
    out(s.cols() + c) = std::sqrt(std::max(0.0, var));
  }
  return out;
}

ReachabilityDistribution predict_reachability(const ParamSet& params, const Vec& z1,
                                              const Vec& z2, const Vec& scene_feat) {
  Mat in(1, z1.size() + z2.size() + scene_feat.size());
  // the difference channel makes latent displacement directly visible
  in << z1.transpose(), (z2 - z1).transpose(), scene_feat.transpose();
  Mat h1 = relu_d(lin_d(in, params, "reach_w1", "reach_b1"));
  Mat h2 = relu_d(lin_d(h1, params, "reach_w2", "reach_b2"));
  Vec logits = lin_d(h2, params, "reach_w3", "reach_b3").row(0);
  Vec p = (logits.array() - logits.maxCoeff()).exp();
  ReachabilityDistribution dist;
  dist.probs = p / p.sum();
  return dist;
}

Vec bin_centers(const VaeConfig& cfg) {
  Vec c(cfg.bins);
  double width = (cfg.bin_hi - cfg.bin_lo) / cfg.bins;
  for (int k = 0; k < cfg.bins; ++k) c(k) = cfg.bin_lo + (k + 0.5) * width;
  return c;
}

int bin_of_gap(double gap, const VaeConfig& cfg) {
  double width = (cfg.bin_hi - cfg.bin_lo) / cfg.bins;
  int k = int(std::floor((gap - cfg.bin_lo) / width));
  return std::clamp(k, 0, cfg.bins - 1);
}

double reachability_softmin(const ReachabilityDistribution& dist, const VaeConfig& cfg) {
  if (cfg.beta <= 0.0) throw std::invalid_argument("reachability_softmin: beta must be > 0");
  Vec c = bin_centers(cfg);
  // shift the exponent for numerical stability; weights are renormalized
  Vec w = (dist.probs.array() * (-cfg.beta * (c.array() - c.minCoeff())).exp()).matrix();
  return w.dot(c) / w.sum();
}

std::pair<int, int> sample_pair_discounted(const sim::TrajectoryRecord& record, double gamma,
                                           icd::Rng& rng) {
  const int len = record.length();
  if (len < 1) throw std::invalid_argument("sample_pair_discounted: record too short");
  if (gamma <= 0.0 || gamma >= 1.0)
    throw std::invalid_argument("sample_pair_discounted: gamma must be in (0,1)");
  int t1 = int(rng.uniform_index(size_t(len)));  // uniform over states with a successor
  int n = len - t1;                              // largest admissible gap
  double u = rng.uniform(0.0, 1.0);
  // inverse CDF of the geometric P(gap) ~ gamma^gap truncated to [1, n]
  int gap = int(std::ceil(std::log(1.0 - u * (1.0 - std::pow(gamma, n))) / std::log(gamma)));
  gap = std::clamp(gap, 1, n);
  return {t1, t1 + gap};
}

DescriptorCache build_descriptor_cache(const sim::Dataset& dataset, const ParamSet& ndf_params,
                                       const sim::SimConfig& sim_cfg, int scene_points,
                                       uint64_t seed) {
  fields::NdfConfig ndf_cfg = fields::ndf_config_from_params(ndf_params);
  DescriptorCache cache;
  cache.canon = canonical_object(dataset.task, sim_cfg, dataset.cloud_points);
  cache.field_hash = ndf_params.content_hash();
  icd::Rng rng(seed);
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    icd::Rng r = rng.fork(9000 + i);
    fields::SceneEncoding enc = fields::encode_scene(
        sim::sample_scene_point_cloud(dataset.scenes[i], scene_points, r), ndf_cfg);
    std::vector<Mat> per_t;
    per_t.reserve(dataset.records[i].clouds.size());
    for (const Points& cloud : dataset.records[i].clouds) {
      // the field cloud carries observed positions plus descriptors: the
      // descriptors are local contact features and free-space motion would
      // otherwise be invisible to the latent
      Mat d = fields::object_descriptors(ndf_params, enc, cloud);
      Mat full(d.rows(), 3 + d.cols());
      full.leftCols(3) = cloud;
      full.rightCols(d.cols()) = d;
      per_t.push_back(std::move(full));
    }
    cache.desc.push_back(std::move(per_t));
    cache.scene_feats.push_back(scene_summary(enc));
  }
  return cache;
}

void write_descriptor_cache(const std::string& path, const DescriptorCache& cache) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write descriptor cache: " + path);
  os.write("ICDC", 4);
  put_u32(os, 1);  // schema version
  put_u64(os, cache.field_hash);
  put_u32(os, uint32_t(cache.desc.size()));
  put_u32(os, uint32_t(cache.canon.rows()));
  put_u32(os, cache.desc.empty() || cache.desc[0].empty() ? 0
                                                          : uint32_t(cache.desc[0][0].cols()));
  put_u32(os, cache.scene_feats.empty() ? 0 : uint32_t(cache.scene_feats[0].size()));
  put_mat(os, cache.canon);
  for (size_t i = 0; i < cache.desc.size(); ++i) {
    put_u32(os, uint32_t(cache.desc[i].size()));
    for (const Mat& m : cache.desc[i]) put_mat(os, m);
    put_mat(os, cache.scene_feats[i].transpose());
  }
}

DescriptorCache load_descriptor_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("descriptor cache missing at " + path +
                             "; generate it with the `cache-descriptors` command");
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "ICDC", 4) != 0)
    throw std::runtime_error("not a descriptor cache: " + path);
  uint32_t version = get_u32(is);
  if (version != 1) throw std::runtime_error("unsupported descriptor cache version");
  DescriptorCache cache;
  cache.field_hash = get_u64(is);
  uint32_t n = get_u32(is), m = get_u32(is), d = get_u32(is), f = get_u32(is);
  cache.canon = get_mat(is, m, 3);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t steps = get_u32(is);
    std::vector<Mat> per_t;
    per_t.reserve(steps);
    for (uint32_t t = 0; t < steps; ++t) per_t.push_back(get_mat(is, m, d));
    cache.desc.push_back(std::move(per_t));
    cache.scene_feats.push_back(get_mat(is, 1, f).row(0).transpose());
  }
  if (!is) throw std::runtime_error("truncated descriptor cache: " + path);
  return cache;
}

learn::TrainReport train_vae(ParamSet& params, const DescriptorCache& cache,
                             const VaeTrainConfig& cfg) {
  using namespace learn;
  VaeConfig net = vae_config_from_params(params);
  const int m = int(cache.canon.rows());
  std::vector<int> train_idx;
  for (int i = 0; i < int(cache.desc.size()); ++i)
    if (std::find(cfg.holdout.begin(), cfg.holdout.end(), i) == cfg.holdout.end())
      train_idx.push_back(i);
  if (train_idx.empty()) throw std::invalid_argument("train_vae: no training records");

  Objective obj = [&](Tape& t, std::map<std::string, Var>& v, int, icd::Rng& rng) -> Var {
    // reconstruction + KL on a batch of clouds
    const int B = cfg.batch_recon;
    std::vector<const Mat*> clouds(B);
    for (int b = 0; b < B; ++b) {
      const auto& rec = cache.desc[train_idx[rng.uniform_index(train_idx.size())]];
      clouds[b] = &rec[rng.uniform_index(rec.size())];
    }
    Mat stacked = stack_encoder_input(cache.canon, clouds);
    EncVars enc = encode_tape(t, v, stacked, m);
    Mat eps(B, net.d_z);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    Var z = add(enc.mean, cmul(constant(t, eps), exp_op(scale(enc.logvar, 0.5))));
    Var recon = decode_tape(t, v, cache.canon, z);
    Mat target(Eigen::Index(B) * m, net.desc_dim);
    for (int b = 0; b < B; ++b) target.block(Eigen::Index(b) * m, 0, m, net.desc_dim) = *clouds[b];
    Var l_recon = mse(recon, target);
    Var kl_terms = sub(add_const(add(exp_op(enc.logvar), square(enc.mean)),
                                 Mat::Constant(B, net.d_z, -1.0)),
                       enc.logvar);
    Var l_kl = scale(sum_all(kl_terms), 0.5 / B);

    // reachability on discounted within-trajectory pairs
    const int P = cfg.batch_pairs;
    std::vector<const Mat*> pair_clouds(2 * P);
    std::vector<int> labels(P), idx1(P), idx2(P);
    Mat feats(P, cache.scene_feats[0].size());
    for (int p = 0; p < P; ++p) {
      int r = train_idx[rng.uniform_index(train_idx.size())];
      const auto& rec = cache.desc[r];
      sim::TrajectoryRecord stub;
      stub.actions.resize(rec.size() - 1);
      auto [t1, t2] = sample_pair_discounted(stub, net.gamma, rng);
      pair_clouds[2 * p] = &rec[t1];
      pair_clouds[2 * p + 1] = &rec[t2];
      labels[p] = bin_of_gap(double(t2 - t1), net);
      idx1[p] = 2 * p;
      idx2[p] = 2 * p + 1;
      feats.row(p) = cache.scene_feats[r].transpose();
    }
    EncVars penc = encode_tape(t, v, stack_encoder_input(cache.canon, pair_clouds), m);
    Var m1 = gather_rows(penc.mean, idx1);
    Var m2 = gather_rows(penc.mean, idx2);
    Var zin = concat_cols(concat_cols(m1, sub(m2, m1)), constant(t, feats));
    Var h1 = relu(linear(zin, v.at("reach_w1"), v.at("reach_b1")));
    Var h2 = relu(linear(h1, v.at("reach_w2"), v.at("reach_b2")));
    Var l_reach = cross_entropy_rows(linear(h2, v.at("reach_w3"), v.at("reach_b3")), labels);

    return add(add(scale(l_recon, cfg.lambda_recon), scale(l_kl, cfg.lambda_kl)),
               scale(l_reach, cfg.lambda_reach));
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

}  // namespace icd::vae
