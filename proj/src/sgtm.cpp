#include "csip/sgtm.hpp"

#include "csip/rng.hpp"

namespace csip {

void SgtmConfig::validate() const {
  if (heads == 0 || dim % heads != 0) {
    tensor_error("sgtm: dim " + std::to_string(dim) + " not divisible by " +
                 std::to_string(heads) + " heads");
  }
}

Sgtm::Sgtm(const SgtmConfig& cfg, std::mt19937_64& rng) : cfg(cfg) {
  cfg.validate();
  vis_msg_proj = Linear(cfg.dim, cfg.dim, rng);
  ske_msg_proj = Linear(cfg.dim, cfg.dim, rng);
  vis_temporal = MultiHeadAttention(cfg.dim, cfg.heads, rng);
  ske_temporal = MultiHeadAttention(cfg.dim, cfg.heads, rng);
  distill = MultiHeadAttention(cfg.dim, cfg.heads, rng);
  distill.out_proj.zero_init();  // identity residual at init
  type_embed = rand_uniform({4, cfg.dim}, -0.1, 0.1, rng, true);
  aggregate_block = TransformerBlock(cfg.dim, cfg.heads, cfg.dim * 2, rng);
  pool_query = rand_uniform({cfg.dim}, -0.1, 0.1, rng, true);
  if (cfg.classes > 0) frame_classifier = Linear(cfg.dim, cfg.classes, rng);
}

Tensor Sgtm::message_tokens(const FrameTokens& tokens, const Linear& proj,
                            const MultiHeadAttention& temporal) const {
  if (tokens.per_frame.empty()) tensor_error("sgtm: empty token sequence");
  std::vector<Tensor> pooled;
  pooled.reserve(tokens.frames());
  for (const Tensor& f : tokens.per_frame) pooled.push_back(mean(f, 0));  // C per frame
  Tensor frames = proj.forward(stack_rows(pooled));  // T x C
  return temporal.self_forward(frames);
}

Tensor Sgtm::mte_visual(const FrameTokens& tokens) const {
  return message_tokens(tokens, vis_msg_proj, vis_temporal);
}

Tensor Sgtm::mte_skeleton(const std::vector<Tensor>& frame_tokens) const {
  FrameTokens wrap;
  wrap.per_frame = frame_tokens;
  return message_tokens(wrap, ske_msg_proj, ske_temporal);
}

Tensor Sgtm::atd(const Tensor& vis_messages, const Tensor& ske_messages) const {
  if (vis_messages.shape != ske_messages.shape) {
    tensor_error("atd: message shapes differ: " + shape_str(vis_messages.shape) + " vs " +
                 shape_str(ske_messages.shape));
  }
  return add(vis_messages, distill.cross_forward(vis_messages, ske_messages));
}

UnifiedTokenSequence Sgtm::assemble(const FrameTokens& visual, const Tensor& vis_messages,
                                    const std::vector<Tensor>& skeleton_frame_tokens,
                                    const Tensor& ske_messages, SgtmMode mode) const {
  const std::size_t t = visual.frames();
  if (t == 0 || vis_messages.shape[0] != t) {
    tensor_error("assemble: need one visual message per frame");
  }
  const bool train = mode == SgtmMode::kTrain;
  if (train && (skeleton_frame_tokens.size() != t || ske_messages.shape[0] != t)) {
    tensor_error("assemble: training mode needs skeleton tokens and messages per frame");
  }
  Tensor e_vis = embedding(type_embed, {kVisualToken});
  Tensor e_vmsg = embedding(type_embed, {kVisualMessage});
  Tensor e_ske = embedding(type_embed, {kSkeletonToken});
  Tensor e_smsg = embedding(type_embed, {kSkeletonMessage});

  UnifiedTokenSequence out;
  out.mode = mode;
  out.per_frame.reserve(t);
  for (std::size_t i = 0; i < t; ++i) {
    std::vector<Tensor> parts;
    parts.push_back(add_row_vector(visual.per_frame[i], reshape(e_vis, {cfg.dim})));
    parts.push_back(add_row_vector(slice(vis_messages, 0, i, 1), reshape(e_vmsg, {cfg.dim})));
    if (train) {
      parts.push_back(
          add_row_vector(skeleton_frame_tokens[i], reshape(e_ske, {cfg.dim})));
      parts.push_back(add_row_vector(slice(ske_messages, 0, i, 1), reshape(e_smsg, {cfg.dim})));
    }
    out.per_frame.push_back(concat(parts, 0));
  }
  return out;
}

UnifiedTokenSequence Sgtm::temporal_aggregate(const UnifiedTokenSequence& x) const {
  UnifiedTokenSequence out;
  out.mode = x.mode;
  out.per_frame.reserve(x.per_frame.size());
  for (const Tensor& col : x.per_frame) out.per_frame.push_back(aggregate_block.forward(col));
  return out;
}

Sgtm::FrameLoss Sgtm::frame_logits_and_loss(const UnifiedTokenSequence& x, int label) const {
  if (cfg.classes == 0 || !frame_classifier.weight.defined()) {
    tensor_error("sgtm: frame classifier not configured");
  }
  if (label < 0 || static_cast<std::size_t>(label) >= cfg.classes) {
    tensor_error("sgtm: label " + std::to_string(label) + " outside " +
                 std::to_string(cfg.classes) + " classes");
  }
  std::vector<Tensor> pooled;
  std::vector<Tensor> terms;
  pooled.reserve(x.per_frame.size());
  for (const Tensor& tokens : x.per_frame) {
    Tensor scores = matmul(tokens, reshape(pool_query, {cfg.dim, 1}));        // L x 1
    Tensor weights = softmax(transpose(scores));                              // 1 x L
    Tensor z = matmul(weights, tokens);                                       // 1 x C
    pooled.push_back(z);
    Tensor lsm = log_softmax(frame_classifier.forward(z));                    // 1 x K
    terms.push_back(gather_rc(lsm, {{0, static_cast<std::size_t>(label)}}));
  }
  FrameLoss out;
  out.pooled = concat(pooled, 0);  // T x C
  out.loss = scalar_mul(mean_all(concat(terms, 0)), -1.0);
  return out;
}

Tensor Sgtm::inference_features(const FrameTokens& visual) const {
  // Test path: the enhanced message is the visual message itself; skeleton
  // data never enters.
  Tensor messages = mte_visual(visual);
  UnifiedTokenSequence seq = assemble(visual, messages, {}, Tensor(), SgtmMode::kTest);
  seq = temporal_aggregate(seq);
  std::vector<Tensor> flat;
  flat.reserve(seq.per_frame.size());
  for (const Tensor& f : seq.per_frame) flat.push_back(f);
  return mean(concat(flat, 0), 0);  // C
}

Tensor batch_frame_loss(const std::vector<Tensor>& per_sample_losses) {
  if (per_sample_losses.empty()) tensor_error("batch_frame_loss: empty batch");
  return mean_all(concat(per_sample_losses, 0));
}

ParamMap Sgtm::params() const {
  ParamMap p;
  p.merge("vis_msg_proj", vis_msg_proj.params());
  p.merge("ske_msg_proj", ske_msg_proj.params());
  p.merge("vis_temporal", vis_temporal.params());
  p.merge("ske_temporal", ske_temporal.params());
  p.merge("atd", distill.params());
  p.add("type_embed", type_embed);
  p.merge("aggregate", aggregate_block.params());
  p.add("pool_query", pool_query);
  if (frame_classifier.weight.defined()) p.merge("frame_classifier", frame_classifier.params());
  return p;
}

}  // namespace csip
