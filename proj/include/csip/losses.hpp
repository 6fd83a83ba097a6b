#pragma once

#include <random>
#include <vector>

#include "csip/nn.hpp"

namespace csip {

struct CEConfig {
  double smoothing = 0.1;  // epsilon in [0, 1)
  std::size_t classes = 0;
  Linear classifier;  // C -> K

  CEConfig() = default;
  CEConfig(std::size_t dim, std::size_t classes, double smoothing, std::mt19937_64& rng);
  void validate() const;
};

struct TripletConfig {
  double margin = 0.3;
  bool squared = false;  // Euclidean by default
};

/// Cross-entropy with targets (1 - eps) * onehot + eps / K, mean over batch.
Tensor ce_label_smoothing(const Tensor& features, const std::vector<int>& labels,
                          const CEConfig& cfg);

/// Batch-hard mining: per anchor the farthest same-identity sample and the
/// closest other-identity sample, hinge at the margin, mean over anchors.
/// Requires PK structure (every identity >= 2 samples, >= 2 identities).
Tensor batch_hard_triplet(const Tensor& features, const std::vector<int>& labels,
                          const TripletConfig& cfg);

}  // namespace csip
