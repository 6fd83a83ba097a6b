#include <cmath>

#include "csip/align.hpp"
#include "csip/gradcheck.hpp"
#include "csip/losses.hpp"
#include "csip/pfu.hpp"
#include "csip/rng.hpp"
#include "csip/sgtm.hpp"
#include "csip/skeleton_encoder.hpp"
#include "csip/visual_encoder.hpp"

namespace csip {

namespace {

// Weighted sum with fixed coefficients turns any output into a scalar with
// non-uniform upstream gradients.
Tensor weighted_sum(const Tensor& t, const Tensor& w) {
  return sum_all(mul(t, reshape(w, t.shape)));
}

Tensor slice_flat(const Tensor& x, std::size_t offset, Shape shape) {
  const std::size_t count = shape_numel(shape);
  return reshape(slice(x, 0, offset, count), std::move(shape));
}

using CaseFn = std::function<double(std::uint64_t)>;

SkeletonGraph toy_graph() {
  return SkeletonGraph::from_edges(5, {{0, 1}, {0, 2}, {1, 3}, {1, 4}});
}

SkeletonSequence toy_sequence(std::mt19937_64& rng) {
  SkeletonSequence s;
  s.frames = 3;
  s.joints = 5;
  s.coords = *rand_uniform({3 * 5 * 3}, -1.0, 1.0, rng).data;
  s.valid.assign(3, 1);
  return s;
}

double check_elementwise(std::uint64_t seed, const char* name,
                         const std::function<Tensor(const Tensor&)>& op, double lo, double hi) {
  auto rng = rng_stream(seed, name);
  Tensor x = rand_uniform({3, 4}, lo, hi, rng);
  Tensor w = rand_uniform({12}, -1.0, 1.0, rng);
  return finite_diff_check([&](const Tensor& t) { return weighted_sum(op(t), w); }, x);
}

std::vector<GradCheckCase> make_suite() {
  std::vector<GradCheckCase> cases;
  auto reg = [&cases](std::string name, CaseFn fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  // ---- primitives ----
  reg("op.add", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.add");
    Tensor b = rand_uniform({3, 4}, -1, 1, rng);
    Tensor w = rand_uniform({12}, -1, 1, rng);
    Tensor x = rand_uniform({3, 4}, -1, 1, rng);
    return finite_diff_check([&](const Tensor& t) { return weighted_sum(add(t, b), w); }, x);
  });
  reg("op.sub", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.sub");
    Tensor b = rand_uniform({3, 4}, -1, 1, rng);
    Tensor w = rand_uniform({12}, -1, 1, rng);
    Tensor x = rand_uniform({3, 4}, -1, 1, rng);
    return finite_diff_check([&](const Tensor& t) { return weighted_sum(sub(b, t), w); }, x);
  });
  reg("op.mul", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.mul");
    Tensor w = rand_uniform({12}, -1, 1, rng);
    Tensor x = rand_uniform({3, 4}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor a = slice_flat(reshape(t, {t.numel()}), 0, {3, 4});
          return weighted_sum(mul(a, a), w);
        },
        x);
  });
  reg("op.scalar_mul", [](std::uint64_t s) {
    return check_elementwise(s, "gc.smul", [](const Tensor& t) { return scalar_mul(t, -1.7); },
                             -1, 1);
  });
  reg("op.add_scalar", [](std::uint64_t s) {
    return check_elementwise(s, "gc.sadd", [](const Tensor& t) { return add_scalar(t, 0.9); },
                             -1, 1);
  });
  reg("op.exp", [](std::uint64_t s) {
    return check_elementwise(s, "gc.exp", [](const Tensor& t) { return exp(t); }, -1.5, 1.5);
  });
  reg("op.log", [](std::uint64_t s) {
    return check_elementwise(s, "gc.log", [](const Tensor& t) { return log(t); }, 0.3, 2.5);
  });
  reg("op.sqrt", [](std::uint64_t s) {
    return check_elementwise(s, "gc.sqrt", [](const Tensor& t) { return sqrt(t); }, 0.3, 2.5);
  });
  reg("op.relu", [](std::uint64_t s) {
    // keep coordinates away from the kink
    auto rng = rng_stream(s, "gc.relu");
    Tensor x = rand_uniform({3, 4}, 0.1, 1.0, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (i % 2 == 0) (*x.data)[i] *= -1.0;
    }
    Tensor w = rand_uniform({12}, -1, 1, rng);
    return finite_diff_check([&](const Tensor& t) { return weighted_sum(relu(t), w); }, x);
  });
  reg("op.sigmoid", [](std::uint64_t s) {
    return check_elementwise(s, "gc.sigmoid", [](const Tensor& t) { return sigmoid(t); }, -2, 2);
  });
  reg("op.tanh", [](std::uint64_t s) {
    return check_elementwise(s, "gc.tanh", [](const Tensor& t) { return tanh(t); }, -2, 2);
  });
  reg("op.softmax", [](std::uint64_t s) {
    return check_elementwise(s, "gc.softmax", [](const Tensor& t) { return softmax(t); }, -2, 2);
  });
  reg("op.log_softmax", [](std::uint64_t s) {
    return check_elementwise(s, "gc.lsm", [](const Tensor& t) { return log_softmax(t); }, -2, 2);
  });
  reg("op.matmul", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.matmul");
    Tensor x = rand_uniform({3 * 4 + 4 * 2}, -1, 1, rng);
    Tensor w = rand_uniform({6}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor a = slice_flat(t, 0, {3, 4});
          Tensor b = slice_flat(t, 12, {4, 2});
          return weighted_sum(matmul(a, b), w);
        },
        x);
  });
  reg("op.transpose", [](std::uint64_t s) {
    return check_elementwise(s, "gc.transpose",
                             [](const Tensor& t) { return transpose(t); }, -1, 1);
  });
  reg("op.reshape", [](std::uint64_t s) {
    return check_elementwise(s, "gc.reshape",
                             [](const Tensor& t) { return reshape(t, {2, 6}); }, -1, 1);
  });
  reg("op.concat_slice", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.concat");
    Tensor x = rand_uniform({4, 3}, -1, 1, rng);
    Tensor w = rand_uniform({2 * 3}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor top = slice(t, 0, 0, 2);
          Tensor bottom = slice(t, 0, 2, 2);
          Tensor swapped = concat({bottom, top}, 0);
          return weighted_sum(slice(swapped, 0, 1, 2), w);
        },
        x);
  });
  reg("op.sum_mean_axis", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.sumax");
    Tensor x = rand_uniform({2, 3, 4}, -1, 1, rng);
    Tensor w = rand_uniform({2 * 4}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          return add(weighted_sum(sum(t, 1), w), weighted_sum(mean(t, 1), w));
        },
        x);
  });
  reg("op.mean_all", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.meanall");
    Tensor x = rand_uniform({3, 4}, -1, 1, rng);
    return finite_diff_check([&](const Tensor& t) { return mean_all(t); }, x);
  });
  reg("op.l1_norm", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.l1");
    Tensor x = rand_uniform({3, 4}, 0.2, 1.0, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (i % 3 == 0) (*x.data)[i] *= -1.0;
    }
    return finite_diff_check([&](const Tensor& t) { return l1_norm(t); }, x);
  });
  reg("op.l2_norm", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.l2");
    Tensor x = rand_uniform({3, 4}, 0.2, 1.0, rng);
    return finite_diff_check([&](const Tensor& t) { return l2_norm(t); }, x);
  });
  reg("op.pairwise_sqdist", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.psd");
    Tensor x = rand_uniform({3 * 4 + 2 * 4}, -1, 1, rng);
    Tensor w = rand_uniform({6}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor a = slice_flat(t, 0, {3, 4});
          Tensor b = slice_flat(t, 12, {2, 4});
          return weighted_sum(pairwise_sqdist(a, b), w);
        },
        x);
  });
  reg("op.layer_norm", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.ln");
    Tensor x = rand_uniform({2 * 5 + 5 + 5}, -1, 1, rng);
    Tensor w = rand_uniform({10}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor xs = slice_flat(t, 0, {2, 5});
          Tensor gamma = slice_flat(t, 10, {5});
          Tensor beta = slice_flat(t, 15, {5});
          return weighted_sum(layer_norm(xs, gamma, beta, 1e-5), w);
        },
        x);
  });
  reg("op.embedding", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.emb");
    Tensor x = rand_uniform({4, 3}, -1, 1, rng);
    Tensor w = rand_uniform({9}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) { return weighted_sum(embedding(t, {1, 3, 1}), w); }, x);
  });
  reg("op.add_row_vector", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.arv");
    Tensor x = rand_uniform({3 * 4 + 4}, -1, 1, rng);
    Tensor w = rand_uniform({12}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          return weighted_sum(add_row_vector(slice_flat(t, 0, {3, 4}), slice_flat(t, 12, {4})),
                              w);
        },
        x);
  });
  reg("op.scale_rows", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.srows");
    Tensor x = rand_uniform({3 * 4 + 3}, -1, 1, rng);
    Tensor w = rand_uniform({12}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          return weighted_sum(scale_rows(slice_flat(t, 0, {3, 4}), slice_flat(t, 12, {3})), w);
        },
        x);
  });
  reg("op.gather_rc", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.grc");
    Tensor x = rand_uniform({3, 4}, -1, 1, rng);
    Tensor w = rand_uniform({3}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          return weighted_sum(gather_rc(t, {{0, 1}, {2, 3}, {1, 1}}), w);
        },
        x);
  });

  // ---- nn layers (gradient w.r.t. the input, fixed random parameters) ----
  reg("nn.linear", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.linear");
    Linear lin(5, 3, rng);
    Tensor x = rand_uniform({4, 5}, -1, 1, rng);
    Tensor w = rand_uniform({12}, -1, 1, rng);
    return finite_diff_check([&](const Tensor& t) { return weighted_sum(lin.forward(t), w); },
                             x);
  });
  reg("nn.mlp2", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.mlp2");
    Mlp2 mlp(5, 7, 3, rng);
    Tensor x = rand_uniform({4, 5}, -1, 1, rng);
    Tensor w = rand_uniform({12}, -1, 1, rng);
    return finite_diff_check([&](const Tensor& t) { return weighted_sum(mlp.forward(t), w); },
                             x, 1e-6);
  });
  reg("nn.self_attention", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.attn");
    MultiHeadAttention attn(8, 2, rng);
    Tensor x = rand_uniform({3, 8}, -1, 1, rng);
    Tensor w = rand_uniform({24}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) { return weighted_sum(attn.self_forward(t), w); }, x);
  });
  reg("nn.cross_attention", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.xattn");
    MultiHeadAttention attn(8, 2, rng);
    Tensor x = rand_uniform({2 * 8 + 3 * 8}, -1, 1, rng);
    Tensor w = rand_uniform({16}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor q = slice_flat(t, 0, {2, 8});
          Tensor kv = slice_flat(t, 16, {3, 8});
          return weighted_sum(attn.cross_forward(q, kv), w);
        },
        x);
  });
  reg("nn.transformer_block", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.block");
    TransformerBlock block(8, 2, 16, rng);
    Tensor x = rand_uniform({3, 8}, -1, 1, rng);
    Tensor w = rand_uniform({24}, -1, 1, rng);
    return finite_diff_check([&](const Tensor& t) { return weighted_sum(block.forward(t), w); },
                             x, 1e-6);
  });

  // ---- encoders (checked against their own parameters; the raw inputs are
  // pixels/coords, not tensors) ----
  reg("encoder.visual", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.vit");
    VisualEncoderConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.patch_h = 4;
    cfg.patch_w = 4;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.dim = 8;
    VisualEncoder enc(cfg, rng);
    ImageSequence seq;
    seq.frames = 2;
    seq.height = 8;
    seq.width = 8;
    seq.pixels = *rand_uniform({2 * 8 * 8 * 3}, 0.0, 1.0, rng).data;
    Tensor w = rand_uniform({8}, -1, 1, rng);
    auto fwd = [&]() { return weighted_sum(sequence_feature(enc.encode_frames(seq)), w); };
    return std::max(finite_diff_check_param(fwd, enc.cls_token, 1e-6),
                    finite_diff_check_param(fwd, enc.patch_embed.bias, 1e-6));
  });
  reg("encoder.skeleton", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.sgt");
    SGTConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.pe_dim = 2;
    SkeletonEncoder enc(cfg, toy_graph(), rng);
    SkeletonSequence seq = toy_sequence(rng);
    Tensor w = rand_uniform({16}, -1, 1, rng);
    auto fwd = [&]() { return weighted_sum(enc.encode_sequence(seq).seq_feat, w); };
    return std::max(finite_diff_check_param(fwd, enc.coord_embed.fc1.bias, 1e-6),
                    finite_diff_check_param(fwd, enc.pos_proj.weight, 1e-6));
  });

  // ---- losses ----
  reg("loss.v2s_s2v", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.align");
    AlignmentHeads heads(6, 6, 0.2, rng);
    const std::vector<int> labels{0, 0, 1, 1};
    Tensor x = rand_uniform({2 * 4 * 6}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          AlignedBatch batch{slice_flat(t, 0, {4, 6}), slice_flat(t, 24, {4, 6}), labels};
          ContrastivePair pair = contrastive_losses(batch, heads);
          return add(pair.v2s, pair.s2v);
        },
        x, 1e-6);
  });
  reg("loss.csip", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.csip");
    const std::vector<int> labels{0, 2, 1};
    Tensor x = rand_uniform({3 * 5 + 3 * 5}, -0.8, 0.8, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor feats = slice_flat(t, 0, {3, 5});
          Tensor protos = slice_flat(t, 15, {3, 5});
          return csip_loss(feats, labels, {protos, protos, protos});
        },
        x, 1e-6);
  });
  reg("loss.frame", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.frame");
    SgtmConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.classes = 3;
    Sgtm sgtm(cfg, rng);
    Tensor x = rand_uniform({2 * 4 * 8}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          UnifiedTokenSequence seq;
          seq.per_frame = {slice_flat(t, 0, {4, 8}), slice_flat(t, 32, {4, 8})};
          return sgtm.frame_logits_and_loss(seq, 1).loss;
        },
        x, 1e-6);
  });
  reg("loss.ce_label_smoothing", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.ce");
    CEConfig cfg(6, 4, 0.1, rng);
    const std::vector<int> labels{0, 3, 1, 2};
    Tensor x = rand_uniform({4, 6}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) { return ce_label_smoothing(t, labels, cfg); }, x, 1e-6);
  });
  reg("loss.triplet", [](std::uint64_t s) {
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    TripletConfig cfg{0.3, false};
    // resample until every anchor sits clear of the hinge kink
    for (std::uint64_t attempt = 0;; ++attempt) {
      auto rng = rng_stream(s, "gc.triplet", attempt);
      Tensor x = rand_uniform({6, 4}, -1, 1, rng);
      bool safe = true;
      {
        NoGradGuard ng;
        const auto& xv = *x.data;
        for (std::size_t a = 0; a < 6 && safe; ++a) {
          double dp = -1.0, dn = 1e300;
          for (std::size_t o = 0; o < 6; ++o) {
            if (o == a) continue;
            double d2 = 0;
            for (std::size_t c = 0; c < 4; ++c) {
              const double d = xv[a * 4 + c] - xv[o * 4 + c];
              d2 += d * d;
            }
            const double d1 = std::sqrt(d2);
            if (labels[o] == labels[a]) {
              dp = std::max(dp, d1);
            } else {
              dn = std::min(dn, d1);
            }
          }
          if (std::abs(dp - dn + cfg.margin) < 1e-2) safe = false;
        }
      }
      if (!safe && attempt < 32) continue;
      return finite_diff_check(
          [&](const Tensor& t) { return batch_hard_triplet(t, labels, cfg); }, x, 1e-6);
    }
  });
  reg("loss.gpc", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.gpc");
    SGTConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.dim = 6;
    cfg.pe_dim = 2;
    SkeletonEncoder enc(cfg, toy_graph(), rng);
    GraphPrototypeBank bank;
    bank.prototypes = rand_uniform({3, 6}, -0.5, 0.5, rng);
    const std::vector<int> seq_labels{0, 2, 1};
    const std::vector<int> frame_labels{0, 0, 2, 1};
    Tensor x = rand_uniform({3 * 6 + 4 * 6}, -1, 1, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          return enc.gpc_loss(slice_flat(t, 0, {3, 6}), seq_labels, slice_flat(t, 18, {4, 6}),
                              frame_labels, bank);
        },
        x, 1e-6);
  });
  reg("loss.stpr", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.stpr");
    SGTConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.pe_dim = 2;
    SkeletonEncoder enc(cfg, toy_graph(), rng);
    SkeletonSequence seq = toy_sequence(rng);
    auto fwd = [&]() {
      auto mask_rng = rng_stream(s, "gc.stpr.mask");
      return enc.stpr_loss(seq, mask_rng);
    };
    return std::max(finite_diff_check_param(fwd, enc.mask_token, 1e-6),
                    finite_diff_check_param(fwd, enc.recon_struct.weight, 1e-6));
  });
  reg("loss.sgt_objective", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.sgtobj");
    Tensor x = rand_uniform({2}, 0.1, 2.0, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          return sgt_objective(slice(t, 0, 0, 1), slice(t, 0, 1, 1), 0.3);
        },
        x);
  });

  // ---- stage-2 composite: fuse -> update -> csip ----
  reg("composite.pfu", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.pfu");
    FusionGate gate(5, rng);
    PrototypeUpdater updater(5, 1, rng);
    // exercise the full path, not the identity shortcut
    auto wrng = rng_stream(s, "gc.pfu.w");
    updater.mlp.fc2 = Linear(5, 5, wrng);
    const std::vector<int> labels{1, 0};
    Tensor x = rand_uniform({2 * 3 * 5 + 2 * 5 + 4 * 5}, -0.7, 0.7, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          Tensor p_s = slice_flat(t, 0, {3, 5});
          Tensor p_v = slice_flat(t, 15, {3, 5});
          Tensor feats = slice_flat(t, 30, {2, 5});
          Tensor tokens = slice_flat(t, 40, {4, 5});
          FusionResult fr = fuse(p_s, p_v, gate);
          Tensor p_hat = updater.update(fr.fused, tokens);
          return csip_loss(feats, labels, {p_hat, p_hat});
        },
        x, 1e-6);
  });

  // ---- sgtm composite: mte -> atd -> assemble -> aggregate -> frame loss ----
  reg("composite.sgtm", [](std::uint64_t s) {
    auto rng = rng_stream(s, "gc.sgtmfull");
    SgtmConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.classes = 2;
    Sgtm sgtm(cfg, rng);
    auto wrng = rng_stream(s, "gc.sgtmfull.w");
    sgtm.distill.out_proj = Linear(8, 8, wrng);  // move off the identity init
    Tensor x = rand_uniform({2 * 3 * 8 + 2 * 2 * 8}, -0.8, 0.8, rng);
    return finite_diff_check(
        [&](const Tensor& t) {
          FrameTokens vis;
          vis.per_frame = {slice_flat(t, 0, {3, 8}), slice_flat(t, 24, {3, 8})};
          std::vector<Tensor> ske = {slice_flat(t, 48, {2, 8}), slice_flat(t, 64, {2, 8})};
          Tensor m_vis = sgtm.mte_visual(vis);
          Tensor m_ske = sgtm.mte_skeleton(ske);
          Tensor m_hat = sgtm.atd(m_vis, m_ske);
          UnifiedTokenSequence seq =
              sgtm.assemble(vis, m_hat, ske, m_ske, SgtmMode::kTrain);
          seq = sgtm.temporal_aggregate(seq);
          return sgtm.frame_logits_and_loss(seq, 1).loss;
        },
        x, 1e-6);
  });

  return cases;
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_suite() {
  static const std::vector<GradCheckCase> suite = make_suite();
  return suite;
}

}  // namespace csip
