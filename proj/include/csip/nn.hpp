#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "csip/ops.hpp"
#include "csip/serialize.hpp"
#include "csip/tensor.hpp"

namespace csip {

enum class Activation { kRelu, kSigmoid, kTanh, kNone };

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  /// Centered uniform init with scale 1/sqrt(fan_in).
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  static Linear zeros(std::size_t in, std::size_t out);

  Tensor forward(const Tensor& x) const;  // rows x in -> rows x out
  void zero_init();
  ParamMap params() const;
  std::size_t in_dim() const { return weight.shape[0]; }
  std::size_t out_dim() const { return weight.shape[1]; }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor forward(const Tensor& x) const;
  ParamMap params() const;
};

/// Two fully connected layers with an activation in between.
struct Mlp2 {
  Linear fc1;
  Linear fc2;
  Activation act = Activation::kRelu;

  Mlp2() = default;
  Mlp2(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
       Activation act = Activation::kRelu);
  Tensor forward(const Tensor& x) const;
  ParamMap params() const;
};

struct MultiHeadAttention {
  std::size_t heads = 0;
  std::size_t dim = 0;  // model dim C, heads * head_dim
  Linear q_proj, k_proj, v_proj, out_proj;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, std::mt19937_64& rng);

  Tensor self_forward(const Tensor& x) const;                      // L x C -> L x C
  Tensor cross_forward(const Tensor& q, const Tensor& kv) const;   // Lq x C, Lk x C -> Lq x C
  ParamMap params() const;
};

/// Pre-norm transformer block: x + attn(ln1(x)), then y + ffn(ln2(y)).
/// Zeroing both residual-final projections makes it the identity map.
struct TransformerBlock {
  MultiHeadAttention attn;
  Mlp2 ffn;
  LayerNorm ln1, ln2;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ffn_hidden,
                   std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void zero_residual_init();
  ParamMap params() const;
};

Tensor apply_activation(const Tensor& x, Activation act);

}  // namespace csip
