#include "icd/learn/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace icd::learn {

bool ParamSet::all_finite() const {
  for (const auto& [name, m] : tensors)
    if (!m.allFinite()) return false;
  return true;
}

uint64_t ParamSet::content_hash() const {
  // FNV-1a over metadata and tensor bytes
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, v] : meta) {
    mix(k.data(), k.size());
    mix(v.data(), v.size());
  }
  for (const auto& [name, m] : tensors) {
    mix(name.data(), name.size());
    Eigen::MatrixXf f = m.cast<float>();  // hash the stored representation
    mix(f.data(), sizeof(float) * size_t(f.size()));
  }
  return h;
}

namespace {

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}
std::string read_str(std::istream& is) {
  uint32_t n = read_u32(is);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint corrupt: oversized string");
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write("ICKP", 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, uint32_t(params.meta.size()));
  for (const auto& [k, v] : params.meta) {
    write_str(os, k);
    write_str(os, v);
  }
  write_u32(os, uint32_t(params.tensors.size()));
  for (const auto& [name, m] : params.tensors) {
    write_str(os, name);
    write_u32(os, uint32_t(m.rows()));
    write_u32(os, uint32_t(m.cols()));
    Eigen::MatrixXf f = m.cast<float>();
    os.write(reinterpret_cast<const char*>(f.data()),
             std::streamsize(sizeof(float) * size_t(f.size())));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ICKP", 4) != 0)
    throw std::runtime_error("checkpoint corrupt: bad magic in " + path);
  uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint schema version mismatch: file has v" +
                             std::to_string(version) + ", code expects v" +
                             std::to_string(kCheckpointVersion));
  ParamSet p;
  uint32_t n_meta = read_u32(is);
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = read_str(is);
    p.meta[k] = read_str(is);
  }
  uint32_t n_tensors = read_u32(is);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = read_str(is);
    uint32_t rows = read_u32(is);
    uint32_t cols = read_u32(is);
    if (uint64_t(rows) * cols > (1ull << 28))
      throw std::runtime_error("checkpoint corrupt: tensor too large");
    Eigen::MatrixXf f(rows, cols);
    is.read(reinterpret_cast<char*>(f.data()),
            std::streamsize(sizeof(float) * size_t(f.size())));
    if (!is) throw std::runtime_error("checkpoint truncated: " + path);
    p.tensors[name] = f.cast<double>();
  }
  return p;
}

Mat glorot(int rows, int cols, icd::Rng& rng) {
  Mat m(rows, cols);
  double s = 1.0 / std::sqrt(double(rows));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = s * rng.normal();
  return m;
}

std::map<std::string, Var> register_params(Tape& tape, const ParamSet& params) {
  std::map<std::string, Var> vars;
  for (const auto& [name, m] : params.tensors) vars.emplace(name, tape.leaf(m, true));
  return vars;
}

}  // namespace icd::learn
