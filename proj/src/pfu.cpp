#include "csip/pfu.hpp"

namespace csip {

Tensor intra_id_pool(const Tensor& features, const std::vector<int>& labels,
                     std::size_t classes) {
  if (features.ndim() != 2 || features.shape[0] != labels.size()) {
    tensor_error("intra_id_pool: need N x C features with N labels");
  }
  const std::size_t c = features.shape[1];
  std::vector<std::vector<Tensor>> buckets(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      tensor_error("intra_id_pool: label " + std::to_string(y) + " outside " +
                   std::to_string(classes) + " classes");
    }
    buckets[static_cast<std::size_t>(y)].push_back(slice(features, 0, i, 1));
  }
  std::vector<Tensor> rows;
  rows.reserve(classes);
  for (std::size_t y = 0; y < classes; ++y) {
    if (buckets[y].empty()) {
      tensor_error("intra_id_pool: identity " + std::to_string(y) + " has no samples");
    }
    rows.push_back(mean(concat(buckets[y], 0), 0));
  }
  return stack_rows(rows);
}

FusionGate::FusionGate(std::size_t dim, std::mt19937_64& rng)
    : mlp(2 * dim, dim, 1, rng, Activation::kRelu) {}

ParamMap FusionGate::params() const {
  ParamMap p;
  p.merge("mlp", mlp.params());
  return p;
}

FusionResult fuse(const Tensor& p_s, const Tensor& p_v, const FusionGate& gate) {
  if (p_s.shape != p_v.shape || p_s.ndim() != 2) {
    tensor_error("fuse: prototype shapes differ: " + shape_str(p_s.shape) + " vs " +
                 shape_str(p_v.shape));
  }
  Tensor alpha = sigmoid(gate.mlp.forward(concat({p_s, p_v}, 1)));  // K x 1
  Tensor one_minus = add_scalar(scalar_mul(alpha, -1.0), 1.0);
  Tensor fused = add(scale_rows(p_s, alpha), scale_rows(p_v, one_minus));
  return {fused, alpha};
}

PrototypeUpdater::PrototypeUpdater(std::size_t dim, std::size_t heads, std::mt19937_64& rng)
    : self_attn(dim, heads, rng), cross_attn(dim, heads, rng),
      mlp(dim, dim, dim, rng, Activation::kRelu) {
  mlp.fc2.zero_init();  // update starts as the identity on P_F
}

Tensor PrototypeUpdater::update(const Tensor& p_f, const Tensor& fused_tokens) const {
  if (fused_tokens.ndim() != 2 || fused_tokens.shape[1] != p_f.shape[1]) {
    tensor_error("prototype update: token dim " + shape_str(fused_tokens.shape) +
                 " does not match prototypes " + shape_str(p_f.shape));
  }
  Tensor ctx = cross_attn.cross_forward(self_attn.self_forward(p_f), fused_tokens);
  return add(p_f, mlp.forward(ctx));
}

ParamMap PrototypeUpdater::params() const {
  ParamMap p;
  p.merge("self_attn", self_attn.params());
  p.merge("cross_attn", cross_attn.params());
  p.merge("mlp", mlp.params());
  return p;
}

Tensor csip_loss(const Tensor& features, const std::vector<int>& labels,
                 const std::vector<Tensor>& prototypes_per_sample) {
  const std::size_t b = labels.size();
  if (features.ndim() != 2 || features.shape[0] != b || prototypes_per_sample.size() != b) {
    tensor_error("csip_loss: batch sizes disagree");
  }
  std::vector<Tensor> terms;
  terms.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor& protos = prototypes_per_sample[i];  // K x C
    const std::size_t k = protos.shape[0];
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      tensor_error("csip_loss: label " + std::to_string(labels[i]) + " outside " +
                   std::to_string(k) + " prototypes");
    }
    Tensor f = slice(features, 0, i, 1);                       // 1 x C
    Tensor logits = matmul(f, transpose(protos));              // 1 x K
    Tensor lsm = log_softmax(logits);
    terms.push_back(gather_rc(lsm, {{0, static_cast<std::size_t>(labels[i])}}));
  }
  return scalar_mul(mean_all(concat(terms, 0)), -1.0);
}

}  // namespace csip
