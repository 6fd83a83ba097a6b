#pragma once

#include <random>
#include <vector>

#include "csip/nn.hpp"

namespace csip {

/// Row c = mean of features with label c. Every identity needs a sample.
Tensor intra_id_pool(const Tensor& features, const std::vector<int>& labels,
                     std::size_t classes);

/// Per-class fusion weight from the concatenated modality prototypes:
/// alpha = sigmoid(MLP([P_S | P_V])), strictly inside (0, 1).
struct FusionGate {
  Mlp2 mlp;  // 2C -> C -> 1

  FusionGate() = default;
  FusionGate(std::size_t dim, std::mt19937_64& rng);
  ParamMap params() const;
};

struct FusionResult {
  Tensor fused;  // K x C
  Tensor alpha;  // K x 1
};

/// P_F = alpha * P_S + (1 - alpha) * P_V, rowwise.
FusionResult fuse(const Tensor& p_s, const Tensor& p_v, const FusionGate& gate);

/// Transformer-style per-sample refinement:
/// P_hat = P_F + MLP(CrossAttn(SelfAttn(P_F), F)).
/// The final MLP layer is zero-initialized so the update starts as the
/// identity map.
struct PrototypeUpdater {
  MultiHeadAttention self_attn;
  MultiHeadAttention cross_attn;
  Mlp2 mlp;

  PrototypeUpdater() = default;
  PrototypeUpdater(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
  /// fused_tokens: (L_vis + L_ske) x C multimodal token sequence of one sample.
  Tensor update(const Tensor& p_f, const Tensor& fused_tokens) const;
  ParamMap params() const;
};

/// Cross-entropy of each sample's feature against its per-sample prototype
/// set (one K x C matrix per sample), one-hot targets, averaged over batch.
Tensor csip_loss(const Tensor& features, const std::vector<int>& labels,
                 const std::vector<Tensor>& prototypes_per_sample);

}  // namespace csip
