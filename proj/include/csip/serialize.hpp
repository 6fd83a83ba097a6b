#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csip/tensor.hpp"

namespace csip {

/// Ordered flat container of (path, tensor) used for checkpoints and as the
/// optimizer's parameter list. Paths are hierarchical, "sgtm.atd.q_proj.weight"
/// style. Binary layout documented in docs/FORMATS.md.
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& path, const Tensor& t) { items.emplace_back(path, t); }
  void merge(const std::string& prefix, const ParamMap& other);
  Tensor* find(const std::string& path);
  const Tensor* find(const std::string& path) const;
  std::size_t size() const { return items.size(); }
  void zero_grad();
  void set_requires_grad(bool rg);
};

void save_checkpoint(const std::string& path, const ParamMap& params);
ParamMap load_checkpoint(const std::string& path);
/// Copies stored values into the existing tensors of dst, matching by path.
/// Throws on missing path or shape mismatch.
void load_checkpoint_into(const std::string& path, ParamMap& dst);

/// Single tensor with shape header + raw 64-bit little-endian values.
void save_matrix(const std::string& path, const Tensor& t);
Tensor load_matrix(const std::string& path);

/// Feature file = matrix (N x C) plus a JSON sidecar "<path>.meta.json"
/// holding per-row identity and camera labels.
void save_features(const std::string& path, const Tensor& feats,
                   const std::vector<int>& pids, const std::vector<int>& camids);
struct FeatureFile {
  Tensor feats;
  std::vector<int> pids;
  std::vector<int> camids;
};
FeatureFile load_features(const std::string& path);

}  // namespace csip
