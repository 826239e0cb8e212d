#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

#include "icd/learn/tape.hpp"
#include "icd/rng.hpp"

namespace icd::learn {

// Named tensors plus checkpoint metadata. Every trained model is one of
// these; the binary layout is shared by all model kinds.
struct ParamSet {
  std::map<std::string, Mat> tensors;
  std::map<std::string, std::string> meta;  // model_kind, schema_version, ...

  Mat& operator[](const std::string& name) { return tensors[name]; }
  const Mat& at(const std::string& name) const { return tensors.at(name); }
  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  bool all_finite() const;

  // snap every tensor to float32 precision, so in-memory values match the
  // checkpoint representation bit for bit
  void quantize_f32() {
    for (auto& [name, m] : tensors) m = m.cast<float>().cast<double>();
  }

  // content hash over metadata and tensor bytes, for provenance records
  uint64_t content_hash() const;
};

// Checkpoint container: magic "ICKP", u32 schema version, metadata
// key/value strings, then named float32 tensors (little-endian).
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

// Gaussian init scaled by 1/sqrt(fan_in)
Mat glorot(int rows, int cols, icd::Rng& rng);

// registers every tensor of `params` as a grad-requiring leaf
std::map<std::string, Var> register_params(Tape& tape, const ParamSet& params);

}  // namespace icd::learn
