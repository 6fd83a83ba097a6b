#include "csip/visual_encoder.hpp"

#include "csip/rng.hpp"

namespace csip {

void VisualEncoderConfig::validate() const {
  if (patch_h == 0 || patch_w == 0 || height % patch_h != 0 || width % patch_w != 0) {
    tensor_error("visual encoder: frame " + std::to_string(height) + "x" +
                 std::to_string(width) + " not divisible by patch " + std::to_string(patch_h) +
                 "x" + std::to_string(patch_w));
  }
  if (heads == 0 || dim % heads != 0) {
    tensor_error("visual encoder: dim " + std::to_string(dim) + " not divisible by " +
                 std::to_string(heads) + " heads");
  }
}

Tensor FrameTokens::packed() const {
  if (per_frame.empty()) tensor_error("frame tokens: empty sequence");
  const std::size_t l = per_frame[0].shape[0], c = per_frame[0].shape[1];
  std::vector<Tensor> flat;
  flat.reserve(per_frame.size());
  for (const Tensor& f : per_frame) flat.push_back(reshape(f, {1, l, c}));
  return concat(flat, 0);
}

Tensor FrameTokens::token_mean() const {
  if (per_frame.empty()) tensor_error("frame tokens: empty sequence");
  return mean(packed(), 0);
}

VisualEncoder::VisualEncoder(const VisualEncoderConfig& cfg, std::mt19937_64& rng) : cfg(cfg) {
  cfg.validate();
  const std::size_t patch_dim = cfg.patch_h * cfg.patch_w * 3;
  patch_embed = Linear(patch_dim, cfg.dim, rng);
  cls_token = rand_uniform({1, cfg.dim}, -0.1, 0.1, rng, true);
  pos_embed = rand_uniform({1 + cfg.patches(), cfg.dim}, -0.1, 0.1, rng, true);
  blocks.reserve(cfg.depth);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    blocks.emplace_back(cfg.dim, cfg.heads, cfg.dim * 2, rng);
  }
}

FrameTokens VisualEncoder::encode_frames(const ImageSequence& seq) const {
  cfg.validate();
  if (seq.height != cfg.height || seq.width != cfg.width) {
    tensor_error("visual encoder: sequence frames are " + std::to_string(seq.height) + "x" +
                 std::to_string(seq.width) + ", config expects " + std::to_string(cfg.height) +
                 "x" + std::to_string(cfg.width));
  }
  if (seq.frames == 0) tensor_error("visual encoder: empty sequence");
  const std::size_t gh = cfg.height / cfg.patch_h;
  const std::size_t gw = cfg.width / cfg.patch_w;
  const std::size_t np = gh * gw;
  const std::size_t patch_dim = cfg.patch_h * cfg.patch_w * 3;

  FrameTokens out;
  out.per_frame.reserve(seq.frames);
  for (std::size_t t = 0; t < seq.frames; ++t) {
    const double* frame = seq.frame_ptr(t);
    std::vector<double> patches(np * patch_dim);
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        double* dst = patches.data() + (py * gw + px) * patch_dim;
        for (std::size_t r = 0; r < cfg.patch_h; ++r) {
          for (std::size_t c = 0; c < cfg.patch_w; ++c) {
            const std::size_t row = py * cfg.patch_h + r;
            const std::size_t col = px * cfg.patch_w + c;
            const double* px3 = frame + (row * cfg.width + col) * 3;
            double* d3 = dst + (r * cfg.patch_w + c) * 3;
            d3[0] = px3[0];
            d3[1] = px3[1];
            d3[2] = px3[2];
          }
        }
      }
    }
    Tensor patch_mat = Tensor::from_data({np, patch_dim}, std::move(patches));
    Tensor tokens = concat({cls_token, patch_embed.forward(patch_mat)}, 0);
    tokens = add(tokens, pos_embed);
    for (const TransformerBlock& b : blocks) tokens = b.forward(tokens);
    out.per_frame.push_back(tokens);
  }
  return out;
}

ParamMap VisualEncoder::params() const {
  ParamMap p;
  p.merge("patch_embed", patch_embed.params());
  p.add("cls_token", cls_token);
  p.add("pos_embed", pos_embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    p.merge("block" + std::to_string(i), blocks[i].params());
  }
  return p;
}

Tensor sequence_feature(const FrameTokens& tokens) {
  return mean(tokens.token_mean(), 0);  // C
}

}  // namespace csip
