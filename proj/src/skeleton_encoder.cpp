#include "csip/skeleton_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csip/rng.hpp"

namespace csip {

bool SkeletonSequence::frame_all_zero(std::size_t t) const {
  const double* p = frame_ptr(t);
  for (std::size_t i = 0; i < joints * 3; ++i)
    if (p[i] != 0.0) return false;
  return true;
}

void SGTConfig::validate() const {
  if (heads == 0 || dim % heads != 0) {
    tensor_error("sgt: dim " + std::to_string(dim) + " not divisible by " +
                 std::to_string(heads) + " heads");
  }
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(gpc_alpha) || !in01(stpr_beta) || !in01(sgt_lambda)) {
    tensor_error("sgt: mixing weights must lie in [0, 1]");
  }
  if (gpc_tau1 <= 0.0 || gpc_tau2 <= 0.0) tensor_error("sgt: temperatures must be positive");
  if (mask_ratio <= 0.0 || mask_ratio >= 1.0) {
    tensor_error("sgt: mask ratio must lie strictly inside (0, 1)");
  }
}

SkeletonEncoder::SkeletonEncoder(const SGTConfig& cfg, const SkeletonGraph& graph,
                                 std::mt19937_64& rng)
    : cfg(cfg), graph(graph) {
  cfg.validate();
  pe = laplacian_pe(graph, cfg.pe_dim);
  coord_embed = Mlp2(3, cfg.dim, cfg.dim, rng);
  pos_proj = Linear(cfg.pe_dim, cfg.dim, rng);
  blocks.reserve(cfg.layers);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    blocks.emplace_back(cfg.dim, cfg.heads, cfg.dim * 2, rng);
  }
  summary_token = rand_uniform({1, cfg.dim}, -0.1, 0.1, rng, true);
  mask_token = rand_uniform({1, cfg.dim}, -0.1, 0.1, rng, true);
  recon_struct = Linear(cfg.dim, 3, rng);
  recon_traj = Linear(cfg.dim, 3, rng);
  gpc_f1 = Linear(cfg.dim, cfg.dim, rng);
  gpc_f2 = Linear(cfg.dim, cfg.dim, rng);
}

Tensor SkeletonEncoder::graph_embed(const Tensor& frame_coords) const {
  if (frame_coords.ndim() != 2 || frame_coords.shape[0] != graph.joints ||
      frame_coords.shape[1] != 3) {
    tensor_error("graph_embed: expected " + std::to_string(graph.joints) + " x 3 coords, got " +
                 shape_str(frame_coords.shape));
  }
  return add(coord_embed.forward(frame_coords), pos_proj.forward(pe));
}

SkeletonEncoding SkeletonEncoder::encode_sequence(const SkeletonSequence& seq) const {
  if (seq.joints != graph.joints) {
    tensor_error("skeleton encoder: sequence has " + std::to_string(seq.joints) +
                 " joints, graph has " + std::to_string(graph.joints));
  }
  SkeletonEncoding out;
  std::vector<Tensor> feats;
  for (std::size_t t = 0; t < seq.frames; ++t) {
    if (!seq.frame_usable(t)) continue;
    Tensor coords = Tensor::from_data({seq.joints, 3},
                                      std::vector<double>(seq.frame_ptr(t),
                                                          seq.frame_ptr(t) + seq.joints * 3));
    Tensor tokens = graph_embed(coords);
    for (const TransformerBlock& b : blocks) tokens = b.forward(tokens);
    Tensor frame_feat = mean(tokens, 0);  // C
    out.frame_tokens.push_back(concat({summary_token, tokens}, 0));
    feats.push_back(frame_feat);
  }
  if (feats.empty()) tensor_error("empty tracklet");
  out.frame_feats = stack_rows(feats);        // T x C
  out.seq_feat = mean(out.frame_feats, 0);    // C
  return out;
}

namespace {

Tensor prototype_contrast(const Tensor& feats, const std::vector<int>& labels,
                          const Tensor& prototypes, double tau) {
  const std::size_t k = prototypes.shape[0];
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      tensor_error("gpc: label " + std::to_string(y) + " outside prototype bank of " +
                   std::to_string(k));
    }
  }
  if (feats.shape[0] != labels.size()) {
    tensor_error("gpc: " + std::to_string(feats.shape[0]) + " features vs " +
                 std::to_string(labels.size()) + " labels");
  }
  Tensor logits = scalar_mul(matmul(feats, transpose(prototypes)), 1.0 / tau);
  Tensor lsm = log_softmax(logits);
  std::vector<std::pair<std::size_t, std::size_t>> own;
  own.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    own.emplace_back(i, static_cast<std::size_t>(labels[i]));
  }
  return scalar_mul(mean_all(gather_rc(lsm, own)), -1.0);
}

}  // namespace

Tensor SkeletonEncoder::gpc_loss(const Tensor& seq_feats, const std::vector<int>& seq_labels,
                                 const Tensor& frame_feats,
                                 const std::vector<int>& frame_labels,
                                 const GraphPrototypeBank& bank) const {
  if (bank.classes() == 0) tensor_error("gpc: empty prototype bank");
  Tensor l_seq = prototype_contrast(seq_feats, seq_labels, bank.prototypes.detach(),
                                    cfg.gpc_tau1);
  Tensor l_ske = prototype_contrast(gpc_f1.forward(frame_feats), frame_labels,
                                    gpc_f2.forward(bank.prototypes.detach()), cfg.gpc_tau2);
  return add(scalar_mul(l_seq, cfg.gpc_alpha), scalar_mul(l_ske, 1.0 - cfg.gpc_alpha));
}

namespace {

std::vector<std::size_t> sample_subset(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t mask_count(double ratio, std::size_t n) {
  const auto c = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  return std::clamp<std::size_t>(c, 1, n - 1);
}

}  // namespace

Tensor SkeletonEncoder::stpr_loss(const SkeletonSequence& seq, std::mt19937_64& rng) const {
  cfg.validate();
  std::vector<std::size_t> usable;
  for (std::size_t t = 0; t < seq.frames; ++t)
    if (seq.frame_usable(t)) usable.push_back(t);
  if (usable.empty()) tensor_error("empty tracklet");
  if (usable.size() < 2) tensor_error("stpr: trajectory term needs at least 2 usable frames");
  const std::size_t tcount = usable.size();
  const std::size_t j = seq.joints;

  // Masked joint sets: structure masks joints per frame, trajectory masks
  // frames per joint; both reduce to a per-frame joint set.
  std::vector<std::vector<char>> struct_mask(tcount, std::vector<char>(j, 0));
  for (std::size_t ti = 0; ti < tcount; ++ti) {
    for (std::size_t m : sample_subset(j, mask_count(cfg.mask_ratio, j), rng)) {
      struct_mask[ti][m] = 1;
    }
  }
  std::vector<std::vector<char>> traj_mask(tcount, std::vector<char>(j, 0));
  for (std::size_t jj = 0; jj < j; ++jj) {
    for (std::size_t m : sample_subset(tcount, mask_count(cfg.mask_ratio, tcount), rng)) {
      traj_mask[m][jj] = 1;
    }
  }

  Tensor pos_rows = pos_proj.forward(pe);  // J x C

  auto reconstruct = [&](const std::vector<std::vector<char>>& masks, const Linear& head) {
    Tensor total = Tensor::scalar(0.0);
    std::size_t masked_elems = 0;
    for (std::size_t ti = 0; ti < tcount; ++ti) {
      const std::size_t t = usable[ti];
      Tensor coords = Tensor::from_data({j, 3},
                                        std::vector<double>(seq.frame_ptr(t),
                                                            seq.frame_ptr(t) + j * 3));
      Tensor base = graph_embed(coords);
      std::vector<Tensor> rows;
      rows.reserve(j);
      std::vector<std::size_t> masked;
      for (std::size_t jj = 0; jj < j; ++jj) {
        if (masks[ti][jj]) {
          rows.push_back(add(mask_token, slice(pos_rows, 0, jj, 1)));
          masked.push_back(jj);
        } else {
          rows.push_back(slice(base, 0, jj, 1));
        }
      }
      if (masked.empty()) continue;
      Tensor tokens = concat(rows, 0);
      for (const TransformerBlock& b : blocks) tokens = b.forward(tokens);
      std::vector<Tensor> masked_tokens, targets;
      for (std::size_t m : masked) {
        masked_tokens.push_back(slice(tokens, 0, m, 1));
        targets.push_back(slice(coords.detach(), 0, m, 1));
      }
      Tensor hat = head.forward(concat(masked_tokens, 0));
      total = add(total, l1_norm(sub(hat, concat(targets, 0))));
      masked_elems += masked.size() * 3;
    }
    if (masked_elems == 0) tensor_error("stpr: no positions were masked");
    return scalar_mul(total, 1.0 / static_cast<double>(masked_elems));
  };

  Tensor l_struct = reconstruct(struct_mask, recon_struct);
  Tensor l_traj = reconstruct(traj_mask, recon_traj);
  return add(scalar_mul(l_struct, cfg.stpr_beta), scalar_mul(l_traj, 1.0 - cfg.stpr_beta));
}

Tensor sgt_objective(const Tensor& gpc, const Tensor& stpr, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) tensor_error("sgt objective: lambda must lie in [0, 1]");
  return add(scalar_mul(gpc, lambda), scalar_mul(stpr, 1.0 - lambda));
}

GraphPrototypeBank build_prototype_bank(const Tensor& seq_feats,
                                        const std::vector<int>& labels) {
  if (seq_feats.ndim() != 2 || seq_feats.shape[0] != labels.size()) {
    tensor_error("prototype bank: need N x C features with N labels");
  }
  int max_label = -1;
  for (int y : labels) max_label = std::max(max_label, y);
  if (max_label < 0) tensor_error("prototype bank: no labels");
  const std::size_t k = static_cast<std::size_t>(max_label) + 1;
  const std::size_t c = seq_feats.shape[1];
  GraphPrototypeBank bank;
  bank.prototypes = Tensor::zeros({k, c});
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    ++counts[y];
    for (std::size_t d = 0; d < c; ++d) {
      (*bank.prototypes.data)[y * c + d] += seq_feats.at(i, d);
    }
  }
  for (std::size_t y = 0; y < k; ++y) {
    if (counts[y] == 0) tensor_error("prototype bank: identity " + std::to_string(y) +
                                     " has no samples");
    for (std::size_t d = 0; d < c; ++d) {
      (*bank.prototypes.data)[y * c + d] /= static_cast<double>(counts[y]);
    }
  }
  return bank;
}

ParamMap SkeletonEncoder::params() const {
  ParamMap p;
  p.merge("coord_embed", coord_embed.params());
  p.merge("pos_proj", pos_proj.params());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    p.merge("block" + std::to_string(i), blocks[i].params());
  }
  p.add("summary_token", summary_token);
  p.add("mask_token", mask_token);
  p.merge("recon_struct", recon_struct.params());
  p.merge("recon_traj", recon_traj.params());
  p.merge("gpc_f1", gpc_f1.params());
  p.merge("gpc_f2", gpc_f2.params());
  return p;
}

}  // namespace csip
