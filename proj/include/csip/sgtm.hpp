#pragma once

#include <random>
#include <vector>

#include "csip/nn.hpp"
#include "csip/visual_encoder.hpp"

namespace csip {

enum class SgtmMode { kTrain, kTest };

/// Token-type rows: visual token, enhanced visual message, skeleton token,
/// skeleton message.
enum TokenType : std::size_t {
  kVisualToken = 0,
  kVisualMessage = 1,
  kSkeletonToken = 2,
  kSkeletonMessage = 3,
};

struct SgtmConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t classes = 0;  // identities, set at finetune time

  void validate() const;
};

/// Unified per-frame token sequences (Eq.-style concatenation order), one
/// L x C matrix per (sample, frame) column.
struct UnifiedTokenSequence {
  std::vector<Tensor> per_frame;  // each L x C
  SgtmMode mode = SgtmMode::kTrain;
};

/// Skeleton-guided temporal modeling. Message tokens summarize each frame,
/// cross-frame attention enriches them, distillation injects skeleton
/// motion cues into visual messages during training only, and a unified
/// token sequence is aggregated per frame. Test mode never consumes
/// skeleton inputs.
struct Sgtm {
  SgtmConfig cfg;
  Linear vis_msg_proj;               // W for the visual message path
  Linear ske_msg_proj;               // separate parameters per modality
  MultiHeadAttention vis_temporal;   // MHSA across frame positions
  MultiHeadAttention ske_temporal;
  MultiHeadAttention distill;        // cross-attn, out projection zero-init
  Tensor type_embed;                 // 4 x C
  TransformerBlock aggregate_block;
  Tensor pool_query;                 // C
  Linear frame_classifier;           // C -> K

  Sgtm() = default;
  Sgtm(const SgtmConfig& cfg, std::mt19937_64& rng);

  /// Per frame: mean over tokens, project, temporal MHSA across T rows.
  Tensor message_tokens(const FrameTokens& tokens, const Linear& proj,
                        const MultiHeadAttention& temporal) const;
  Tensor mte_visual(const FrameTokens& tokens) const;
  Tensor mte_skeleton(const std::vector<Tensor>& frame_tokens) const;

  /// Skeleton-to-visual message distillation with a residual from the
  /// visual messages. Zero-initialized output projection makes it the
  /// identity at init.
  Tensor atd(const Tensor& vis_messages, const Tensor& ske_messages) const;

  /// Eq.-order concatenation with one type-embedding row added per token.
  /// Test mode includes only visual tokens and the enhanced visual message;
  /// skeleton arguments are ignored there and may be empty.
  UnifiedTokenSequence assemble(const FrameTokens& visual, const Tensor& vis_messages,
                                const std::vector<Tensor>& skeleton_frame_tokens,
                                const Tensor& ske_messages, SgtmMode mode) const;

  /// Self-attention over the L token positions of each (sample, frame)
  /// column, then the feed-forward, both with residuals.
  UnifiedTokenSequence temporal_aggregate(const UnifiedTokenSequence& x) const;

  struct FrameLoss {
    Tensor pooled;      // T x C frame logits z
    Tensor loss;        // scalar
  };
  /// Attention pooling over tokens per frame, shared linear classifier,
  /// cross-entropy against the sample label, normalized by frame count.
  FrameLoss frame_logits_and_loss(const UnifiedTokenSequence& x, int label) const;

  /// Test path: assemble(test) -> temporal_aggregate -> mean over all
  /// tokens and frames.
  Tensor inference_features(const FrameTokens& visual) const;

  ParamMap params() const;
};

/// Batch frame loss normalized by B*T (mean over all frames of all samples).
Tensor batch_frame_loss(const std::vector<Tensor>& per_sample_losses);

}  // namespace csip
