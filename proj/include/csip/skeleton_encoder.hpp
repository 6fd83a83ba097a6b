#pragma once

#include <random>
#include <vector>

#include "csip/nn.hpp"
#include "csip/skeleton_graph.hpp"

namespace csip {

/// One person's joint sequence: T frames of J joints with (x, y, z) coords.
/// Frames flagged invalid carry all-zero joints.
struct SkeletonSequence {
  std::size_t frames = 0, joints = 0;
  std::vector<double> coords;  // T * J * 3 row-major
  std::vector<char> valid;     // per frame, 1 = usable
  int pid = -1;
  int camid = -1;

  const double* frame_ptr(std::size_t t) const { return coords.data() + t * joints * 3; }
  bool frame_all_zero(std::size_t t) const;
  bool frame_usable(std::size_t t) const { return valid[t] && !frame_all_zero(t); }
};

struct SGTConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t pe_dim = 4;
  double gpc_alpha = 0.5;   // sequence/skeleton mix
  double gpc_tau1 = 0.07;
  double gpc_tau2 = 0.07;
  double stpr_beta = 0.5;   // structure/trajectory mix
  double sgt_lambda = 0.5;  // gpc/stpr mix
  double mask_ratio = 0.2;

  void validate() const;
};

/// Per-identity centroids of sequence features, row k = identity k.
struct GraphPrototypeBank {
  Tensor prototypes;  // K x C
  std::size_t classes() const { return prototypes.defined() ? prototypes.shape[0] : 0; }
};

struct SkeletonEncoding {
  std::vector<Tensor> frame_tokens;  // per usable frame, (1+J) x C
  Tensor frame_feats;                // T x C
  Tensor seq_feat;                   // C
};

/// Graph transformer over joint graphs: coordinate embedding plus Laplacian
/// positional encoding, full-relation attention (no adjacency masking),
/// frame features from joint-token means, sequence feature from temporal
/// mean. A learnable summary token is prepended where the (1+J) token
/// shape is consumed.
struct SkeletonEncoder {
  SGTConfig cfg;
  SkeletonGraph graph;
  Tensor pe;            // J x pe_dim, constant
  Mlp2 coord_embed;     // 3 -> C -> C
  Linear pos_proj;      // pe_dim -> C
  std::vector<TransformerBlock> blocks;
  Tensor summary_token; // 1 x C
  Tensor mask_token;    // 1 x C, substituted at masked positions
  Linear recon_struct;  // C -> 3
  Linear recon_traj;    // C -> 3
  Linear gpc_f1, gpc_f2;

  SkeletonEncoder() = default;
  SkeletonEncoder(const SGTConfig& cfg, const SkeletonGraph& graph, std::mt19937_64& rng);

  Tensor graph_embed(const Tensor& frame_coords) const;  // J x 3 -> J x C
  SkeletonEncoding encode_sequence(const SkeletonSequence& seq) const;

  /// Prototype contrast at two granularities, mixed by gpc_alpha.
  Tensor gpc_loss(const Tensor& seq_feats, const std::vector<int>& seq_labels,
                  const Tensor& frame_feats, const std::vector<int>& frame_labels,
                  const GraphPrototypeBank& bank) const;

  /// Masked-joint (structure) and masked-frame (trajectory) L1 reconstruction,
  /// mixed by stpr_beta. Mask selection comes from the supplied stream.
  Tensor stpr_loss(const SkeletonSequence& seq, std::mt19937_64& rng) const;

  ParamMap params() const;
};

/// Affine mix lambda * gpc + (1 - lambda) * stpr.
Tensor sgt_objective(const Tensor& gpc, const Tensor& stpr, double lambda);

/// Centroids of rows sharing a label; rows indexed 0..classes-1.
GraphPrototypeBank build_prototype_bank(const Tensor& seq_feats, const std::vector<int>& labels);

}  // namespace csip
