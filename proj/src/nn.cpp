#include "csip/nn.hpp"

#include <cmath>

#include "csip/rng.hpp"

namespace csip {

Tensor apply_activation(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kNone: return x;
  }
  tensor_error("unknown activation");
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  weight = rand_uniform({in, out}, -scale, scale, rng, true);
  bias = rand_uniform({out}, -scale, scale, rng, true);
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  Linear l;
  l.weight = Tensor::zeros({in, out}, true);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.ndim() != 2 || x.shape[1] != weight.shape[0]) {
    tensor_error("linear: input " + shape_str(x.shape) + " does not match weight " +
                 shape_str(weight.shape));
  }
  return add_row_vector(matmul(x, weight), bias);
}

void Linear::zero_init() {
  std::fill(weight.data->begin(), weight.data->end(), 0.0);
  std::fill(bias.data->begin(), bias.data->end(), 0.0);
}

ParamMap Linear::params() const {
  ParamMap p;
  p.add("weight", weight);
  p.add("bias", bias);
  return p;
}

LayerNorm::LayerNorm(std::size_t dim) {
  gamma = Tensor::full({dim}, 1.0, true);
  beta = Tensor::zeros({dim}, true);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

ParamMap LayerNorm::params() const {
  ParamMap p;
  p.add("gamma", gamma);
  p.add("beta", beta);
  return p;
}

Mlp2::Mlp2(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
           Activation act)
    : fc1(in, hidden, rng), fc2(hidden, out, rng), act(act) {}

Tensor Mlp2::forward(const Tensor& x) const {
  return fc2.forward(apply_activation(fc1.forward(x), act));
}

ParamMap Mlp2::params() const {
  ParamMap p;
  p.merge("fc1", fc1.params());
  p.merge("fc2", fc2.params());
  return p;
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, std::mt19937_64& rng)
    : heads(heads), dim(dim) {
  if (heads == 0 || dim % heads != 0) {
    tensor_error("attention: model dim " + std::to_string(dim) + " not divisible by " +
                 std::to_string(heads) + " heads");
  }
  q_proj = Linear(dim, dim, rng);
  k_proj = Linear(dim, dim, rng);
  v_proj = Linear(dim, dim, rng);
  out_proj = Linear(dim, dim, rng);
}

Tensor MultiHeadAttention::cross_forward(const Tensor& q_tokens, const Tensor& kv_tokens) const {
  if (q_tokens.ndim() != 2 || kv_tokens.ndim() != 2 || q_tokens.shape[1] != dim ||
      kv_tokens.shape[1] != dim) {
    tensor_error("attention: token dims " + shape_str(q_tokens.shape) + " / " +
                 shape_str(kv_tokens.shape) + " do not match model dim " + std::to_string(dim));
  }
  const std::size_t hd = dim / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor q = q_proj.forward(q_tokens);
  Tensor k = k_proj.forward(kv_tokens);
  Tensor v = v_proj.forward(kv_tokens);
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 1, h * hd, hd);
    Tensor kh = slice(k, 1, h * hd, hd);
    Tensor vh = slice(v, 1, h * hd, hd);
    Tensor logits = scalar_mul(matmul(qh, transpose(kh)), inv_sqrt_d);
    head_outs.push_back(matmul(softmax(logits), vh));
  }
  return out_proj.forward(concat(head_outs, 1));
}

Tensor MultiHeadAttention::self_forward(const Tensor& x) const { return cross_forward(x, x); }

ParamMap MultiHeadAttention::params() const {
  ParamMap p;
  p.merge("q_proj", q_proj.params());
  p.merge("k_proj", k_proj.params());
  p.merge("v_proj", v_proj.params());
  p.merge("out_proj", out_proj.params());
  return p;
}

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads, std::size_t ffn_hidden,
                                   std::mt19937_64& rng)
    : attn(dim, heads, rng), ffn(dim, ffn_hidden, dim, rng), ln1(dim), ln2(dim) {}

Tensor TransformerBlock::forward(const Tensor& x) const {
  Tensor y = add(x, attn.self_forward(ln1.forward(x)));
  return add(y, ffn.forward(ln2.forward(y)));
}

void TransformerBlock::zero_residual_init() {
  attn.out_proj.zero_init();
  ffn.fc2.zero_init();
}

ParamMap TransformerBlock::params() const {
  ParamMap p;
  p.merge("attn", attn.params());
  p.merge("ffn", ffn.params());
  p.merge("ln1", ln1.params());
  p.merge("ln2", ln2.params());
  return p;
}

}  // namespace csip
