#pragma once

#include <random>
#include <vector>

#include "csip/nn.hpp"

namespace csip {

/// Projection heads into the shared space plus the contrast temperature.
struct AlignmentHeads {
  Linear visual_proj;    // C -> C_shared
  Linear skeleton_proj;  // C -> C_shared
  double tau = 0.07;

  AlignmentHeads() = default;
  AlignmentHeads(std::size_t dim, std::size_t shared_dim, double tau, std::mt19937_64& rng);
  ParamMap params() const;
};

/// Paired sequence-level features with identity labels.
struct AlignedBatch {
  Tensor visual;    // B x C
  Tensor skeleton;  // B x C
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

/// Entry (i, j) = visual_proj(v_i) . skeleton_proj(s_j).
Tensor similarity_matrix(const AlignedBatch& batch, const AlignmentHeads& heads);

struct ContrastivePair {
  Tensor v2s;
  Tensor s2v;
};

/// Supervised contrastive losses over the projected similarity matrix,
/// positives = same identity, denominators over the full batch; each loss
/// averaged over samples.
ContrastivePair contrastive_losses(const AlignedBatch& batch, const AlignmentHeads& heads);

/// Same losses evaluated on a caller-supplied similarity matrix (lets tests
/// inject constants after the similarity step).
ContrastivePair contrastive_losses_from_similarity(const Tensor& sim,
                                                   const std::vector<int>& labels, double tau);

}  // namespace csip
