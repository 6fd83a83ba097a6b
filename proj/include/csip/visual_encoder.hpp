#pragma once

#include <cstdint>
#include <vector>

#include "csip/nn.hpp"

namespace csip {

/// One person's image sequence: T frames of H x W x 3 reals in [0, 1],
/// row-major (frame, row, col, channel).
struct ImageSequence {
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<double> pixels;
  int pid = -1;
  int camid = -1;

  std::size_t frame_size() const { return height * width * 3; }
  const double* frame_ptr(std::size_t t) const { return pixels.data() + t * frame_size(); }
};

struct VisualEncoderConfig {
  std::size_t height = 32, width = 16;
  std::size_t patch_h = 8, patch_w = 8;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t dim = 64;

  std::size_t patches() const { return (height / patch_h) * (width / patch_w); }
  void validate() const;
};

/// Frame tokens for a sequence: per frame a (1+N_p) x C matrix, plus the
/// packed T x (1+N_p) x C view.
struct FrameTokens {
  std::vector<Tensor> per_frame;  // each (1+N_p) x C

  std::size_t frames() const { return per_frame.size(); }
  Tensor packed() const;          // T x L x C
  Tensor token_mean() const;      // L x C, tokens averaged over frames per position
};

/// Mini vision transformer: patchify, linear patch embedding, class token,
/// learnable grid positional embedding, then `depth` transformer blocks.
/// Frames are encoded independently.
struct VisualEncoder {
  VisualEncoderConfig cfg;
  Linear patch_embed;   // (ph*pw*3) -> C
  Tensor cls_token;     // 1 x C
  Tensor pos_embed;     // (1+N_p) x C
  std::vector<TransformerBlock> blocks;

  VisualEncoder() = default;
  VisualEncoder(const VisualEncoderConfig& cfg, std::mt19937_64& rng);

  FrameTokens encode_frames(const ImageSequence& seq) const;
  ParamMap params() const;
};

/// Mean over both token and frame axes.
Tensor sequence_feature(const FrameTokens& tokens);

}  // namespace csip
