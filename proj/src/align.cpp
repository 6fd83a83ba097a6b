#include "csip/align.hpp"

namespace csip {

AlignmentHeads::AlignmentHeads(std::size_t dim, std::size_t shared_dim, double tau,
                               std::mt19937_64& rng)
    : visual_proj(dim, shared_dim, rng), skeleton_proj(dim, shared_dim, rng), tau(tau) {
  if (tau <= 0.0) tensor_error("alignment heads: tau must be positive");
}

ParamMap AlignmentHeads::params() const {
  ParamMap p;
  p.merge("visual_proj", visual_proj.params());
  p.merge("skeleton_proj", skeleton_proj.params());
  return p;
}

void AlignedBatch::validate() const {
  if (visual.ndim() != 2 || skeleton.ndim() != 2 || visual.shape[0] != labels.size() ||
      skeleton.shape[0] != labels.size()) {
    tensor_error("aligned batch: visual " + shape_str(visual.shape) + ", skeleton " +
                 shape_str(skeleton.shape) + " and " + std::to_string(labels.size()) +
                 " labels disagree");
  }
}

Tensor similarity_matrix(const AlignedBatch& batch, const AlignmentHeads& heads) {
  batch.validate();
  Tensor pv = heads.visual_proj.forward(batch.visual);
  Tensor ps = heads.skeleton_proj.forward(batch.skeleton);
  return matmul(pv, transpose(ps));  // (i, j) = projected dot
}

ContrastivePair contrastive_losses_from_similarity(const Tensor& sim,
                                                   const std::vector<int>& labels, double tau) {
  if (tau <= 0.0) tensor_error("contrastive loss: tau must be positive");
  const std::size_t b = labels.size();
  if (sim.ndim() != 2 || sim.shape[0] != b || sim.shape[1] != b) {
    tensor_error("contrastive loss: similarity must be " + std::to_string(b) + " x " +
                 std::to_string(b) + ", got " + shape_str(sim.shape));
  }
  Tensor scaled = scalar_mul(sim, 1.0 / tau);
  // v2s: rows are visual anchors; s2v: columns are skeleton anchors.
  Tensor lsm_rows = log_softmax(scaled);
  Tensor lsm_cols = log_softmax(transpose(scaled));

  auto supervised = [&](const Tensor& lsm) {
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<std::pair<std::size_t, std::size_t>> positives;
      for (std::size_t j = 0; j < b; ++j) {
        if (labels[j] == labels[i]) positives.emplace_back(i, j);
      }
      total = add(total, mean_all(gather_rc(lsm, positives)));
    }
    return scalar_mul(total, -1.0 / static_cast<double>(b));
  };

  return {supervised(lsm_rows), supervised(lsm_cols)};
}

ContrastivePair contrastive_losses(const AlignedBatch& batch, const AlignmentHeads& heads) {
  return contrastive_losses_from_similarity(similarity_matrix(batch, heads), batch.labels,
                                            heads.tau);
}

}  // namespace csip
