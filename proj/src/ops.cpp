#include "csip/ops.hpp"

#include <algorithm>
#include <cmath>

namespace csip {

namespace {

bool want_grad(const Tensor& t) { return grad_enabled() && t.requires_grad; }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    tensor_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                 shape_str(b.shape));
  }
}

Tensor make_out(Shape s, bool rg, const char* op, std::vector<Tensor> parents) {
  Tensor out = Tensor::zeros(std::move(s), rg);
  if (out.requires_grad) {
    out.node = std::make_shared<Node>();
    out.node->op = op;
    out.node->parents = std::move(parents);
    out.node->out_grad = out.grad;
  }
  return out;
}

void accumulate(const Tensor& parent, std::size_t i, double v) {
  if (parent.requires_grad) (*parent.grad)[i] += v;
}

// Row count when the tensor is viewed as (rows x last_axis).
std::size_t last_axis_rows(const Tensor& t, const char* op) {
  if (t.ndim() == 0 || t.shape.empty()) tensor_error(std::string(op) + ": scalar input");
  return t.numel() / t.shape.back();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_out(a.shape, want_grad(a) || want_grad(b), "add", {a, b});
  const auto& av = *a.data;
  const auto& bv = *b.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.node) {
    out.node->backward = [](Node& n) {
      const auto& g = *n.out_grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        accumulate(n.parents[0], i, g[i]);
        accumulate(n.parents[1], i, g[i]);
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_out(a.shape, want_grad(a) || want_grad(b), "sub", {a, b});
  const auto& av = *a.data;
  const auto& bv = *b.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (out.node) {
    out.node->backward = [](Node& n) {
      const auto& g = *n.out_grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        accumulate(n.parents[0], i, g[i]);
        accumulate(n.parents[1], i, -g[i]);
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_out(a.shape, want_grad(a) || want_grad(b), "mul", {a, b});
  const auto& av = *a.data;
  const auto& bv = *b.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.node) {
    out.node->backward = [](Node& n) {
      const auto& g = *n.out_grad;
      const auto& av = *n.parents[0].data;
      const auto& bv = *n.parents[1].data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        accumulate(n.parents[0], i, g[i] * bv[i]);
        accumulate(n.parents[1], i, g[i] * av[i]);
      }
    };
  }
  return out;
}

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = make_out(a.shape, want_grad(a), "scalar_mul", {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (out.node) {
    out.node->backward = [c](Node& n) {
      const auto& g = *n.out_grad;
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(n.parents[0], i, g[i] * c);
    };
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_out(a.shape, want_grad(a), "add_scalar", {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  if (out.node) {
    out.node->backward = [](Node& n) {
      const auto& g = *n.out_grad;
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(n.parents[0], i, g[i]);
    };
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* op, Fwd fwd, Bwd bwd) {
  Tensor out = make_out(a.shape, want_grad(a), op, {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  if (out.node) {
    auto saved = out.data;  // forward values, handy for exp/sigmoid/tanh rules
    out.node->backward = [bwd, saved](Node& n) {
      const auto& g = *n.out_grad;
      const auto& xv = *n.parents[0].data;
      const auto& yv = *saved;
      for (std::size_t i = 0; i < g.size(); ++i) {
        accumulate(n.parents[0], i, g[i] * bwd(xv[i], yv[i]));
      }
    };
  }
  return out;
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, "sqrt", [](double x) { return x > 0.0 ? std::sqrt(x) : 0.0; },
                  [](double x, double y) { return x > 0.0 ? 0.5 / y : 0.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid",
                  [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                 : std::exp(x) / (1.0 + std::exp(x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor reshape(const Tensor& a, Shape target) {
  if (shape_numel(target) != a.numel()) {
    tensor_error("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(target));
  }
  Tensor out = make_out(target, want_grad(a), "reshape", {a});
  *out.data = *a.data;
  if (out.node) {
    out.node->backward = [](Node& n) {
      const auto& g = *n.out_grad;
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(n.parents[0], i, g[i]);
    };
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) tensor_error("transpose: expected 2-D, got " + shape_str(a.shape));
  const std::size_t r = a.shape[0], c = a.shape[1];
  Tensor out = make_out({c, r}, want_grad(a), "transpose", {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];
  if (out.node) {
    out.node->backward = [r, c](Node& n) {
      const auto& g = *n.out_grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) accumulate(n.parents[0], i * c + j, g[j * r + i]);
    };
  }
  return out;
}

namespace {

// Split a shape at `axis` into (outer, extent, inner) stride blocks.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    tensor_error(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                 shape_str(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) tensor_error("concat: no inputs");
  const Shape& base = parts[0].shape;
  std::size_t total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.ndim() != base.size()) {
      tensor_error("concat: rank mismatch " + shape_str(base) + " vs " + shape_str(p.shape));
    }
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (i != axis && p.shape[i] != base[i]) {
        tensor_error("concat: shape mismatch off axis " + std::to_string(axis) + ": " +
                     shape_str(base) + " vs " + shape_str(p.shape));
      }
    }
    total += p.shape[axis];
    rg = rg || want_grad(p);
  }
  Shape out_shape = base;
  out_shape[axis] = total;
  Tensor out = make_out(out_shape, rg, "concat", parts);
  const AxisSplit sp = split_axis(out_shape, axis, "concat");
  auto& ov = *out.data;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t ext = p.shape[axis];
    const auto& pv = *p.data;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < ext; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i)
          ov[(o * sp.extent + offset + e) * sp.inner + i] = pv[(o * ext + e) * sp.inner + i];
    offset += ext;
  }
  if (out.node) {
    out.node->backward = [sp, axis](Node& n) {
      const auto& g = *n.out_grad;
      std::size_t off = 0;
      for (Tensor& p : n.parents) {
        const std::size_t ext = p.shape[axis];
        if (p.requires_grad) {
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < ext; ++e)
              for (std::size_t i = 0; i < sp.inner; ++i)
                (*p.grad)[(o * ext + e) * sp.inner + i] +=
                    g[(o * sp.extent + off + e) * sp.inner + i];
        }
        off += ext;
      }
    };
  }
  return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  const AxisSplit sp = split_axis(a.shape, axis, "slice");
  if (start + len > sp.extent) {
    tensor_error("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                 ") exceeds axis " + std::to_string(axis) + " of " + shape_str(a.shape));
  }
  Shape out_shape = a.shape;
  out_shape[axis] = len;
  Tensor out = make_out(out_shape, want_grad(a), "slice", {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < len; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i)
        ov[(o * len + e) * sp.inner + i] = av[(o * sp.extent + start + e) * sp.inner + i];
  if (out.node) {
    out.node->backward = [sp, start, len](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const auto& g = *n.out_grad;
      auto& pg = *n.parents[0].grad;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < len; ++e)
          for (std::size_t i = 0; i < sp.inner; ++i)
            pg[(o * sp.extent + start + e) * sp.inner + i] += g[(o * len + e) * sp.inner + i];
    };
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) tensor_error("stack_rows: no inputs");
  std::vector<Tensor> as_rows;
  as_rows.reserve(rows.size());
  for (const Tensor& r : rows) {
    if (r.ndim() == 1) {
      as_rows.push_back(reshape(r, {1, r.shape[0]}));
    } else if (r.ndim() == 2 && r.shape[0] == 1) {
      as_rows.push_back(r);
    } else {
      tensor_error("stack_rows: expected vectors or 1 x C rows, got " + shape_str(r.shape));
    }
  }
  return concat(as_rows, 0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    tensor_error("matmul: expected 2-D inputs, got " + shape_str(a.shape) + " and " +
                 shape_str(b.shape));
  }
  if (a.shape[1] != b.shape[0]) {
    tensor_error("matmul: inner dimensions differ: " + shape_str(a.shape) + " x " +
                 shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = make_out({m, n}, want_grad(a) || want_grad(b), "matmul", {a, b});
  const double* av = a.data->data();
  const double* bv = b.data->data();
  double* ov = out.data->data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = ov + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  if (out.node) {
    out.node->backward = [m, k, n](Node& nd) {
      const auto& g = *nd.out_grad;
      const Tensor& a = nd.parents[0];
      const Tensor& b = nd.parents[1];
      if (a.requires_grad) {
        auto& ag = *a.grad;
        const auto& bv = *b.data;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            if (gij == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) ag[i * k + p] += gij * bv[p * n + j];
          }
      }
      if (b.requires_grad) {
        auto& bg = *b.grad;
        const auto& av = *a.data;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) bg[p * n + j] += aip * g[i * n + j];
          }
      }
    };
  }
  return out;
}

Tensor add_row_vector(const Tensor& m, const Tensor& v) {
  if (m.ndim() != 2 || v.ndim() > 2) {
    tensor_error("add_row_vector: expected matrix and vector, got " + shape_str(m.shape) +
                 " and " + shape_str(v.shape));
  }
  const std::size_t cols = m.shape[1];
  if (v.numel() != cols) {
    tensor_error("add_row_vector: width mismatch " + shape_str(m.shape) + " vs " +
                 shape_str(v.shape));
  }
  const std::size_t rows = m.shape[0];
  Tensor out = make_out(m.shape, want_grad(m) || want_grad(v), "add_row_vector", {m, v});
  const auto& mv = *m.data;
  const auto& vv = *v.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) ov[i * cols + j] = mv[i * cols + j] + vv[j];
  if (out.node) {
    out.node->backward = [rows, cols](Node& n) {
      const auto& g = *n.out_grad;
      if (n.parents[0].requires_grad) {
        auto& mg = *n.parents[0].grad;
        for (std::size_t i = 0; i < g.size(); ++i) mg[i] += g[i];
      }
      if (n.parents[1].requires_grad) {
        auto& vg = *n.parents[1].grad;
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) vg[j] += g[i * cols + j];
      }
    };
  }
  return out;
}

Tensor scale_rows(const Tensor& m, const Tensor& s) {
  if (m.ndim() != 2) tensor_error("scale_rows: expected matrix, got " + shape_str(m.shape));
  const std::size_t rows = m.shape[0], cols = m.shape[1];
  if (s.numel() != rows) {
    tensor_error("scale_rows: need one factor per row: " + shape_str(m.shape) + " vs " +
                 shape_str(s.shape));
  }
  Tensor out = make_out(m.shape, want_grad(m) || want_grad(s), "scale_rows", {m, s});
  const auto& mv = *m.data;
  const auto& sv = *s.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) ov[i * cols + j] = mv[i * cols + j] * sv[i];
  if (out.node) {
    out.node->backward = [rows, cols](Node& n) {
      const auto& g = *n.out_grad;
      const auto& mv = *n.parents[0].data;
      const auto& sv = *n.parents[1].data;
      if (n.parents[0].requires_grad) {
        auto& mg = *n.parents[0].grad;
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) mg[i * cols + j] += g[i * cols + j] * sv[i];
      }
      if (n.parents[1].requires_grad) {
        auto& sg = *n.parents[1].grad;
        for (std::size_t i = 0; i < rows; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j] * mv[i * cols + j];
          sg[i] += acc;
        }
      }
    };
  }
  return out;
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[1]) {
    tensor_error("pairwise_sqdist: expected N x C and M x C, got " + shape_str(a.shape) +
                 " and " + shape_str(b.shape));
  }
  const std::size_t n = a.shape[0], m = b.shape[0], c = a.shape[1];
  Tensor out = make_out({n, m}, want_grad(a) || want_grad(b), "pairwise_sqdist", {a, b});
  const auto& av = *a.data;
  const auto& bv = *b.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < c; ++p) {
        const double d = av[i * c + p] - bv[j * c + p];
        acc += d * d;
      }
      ov[i * m + j] = acc;
    }
  if (out.node) {
    out.node->backward = [n, m, c](Node& nd) {
      const auto& g = *nd.out_grad;
      const auto& av = *nd.parents[0].data;
      const auto& bv = *nd.parents[1].data;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g[i * m + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < c; ++p) {
            const double d = 2.0 * (av[i * c + p] - bv[j * c + p]) * gij;
            accumulate(nd.parents[0], i * c + p, d);
            accumulate(nd.parents[1], j * c + p, -d);
          }
        }
    };
  }
  return out;
}

Tensor sum(const Tensor& a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape, axis, "sum");
  Shape out_shape;
  for (std::size_t i = 0; i < a.ndim(); ++i)
    if (i != axis) out_shape.push_back(a.shape[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = make_out(out_shape, want_grad(a), "sum", {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i)
        ov[o * sp.inner + i] += av[(o * sp.extent + e) * sp.inner + i];
  if (out.node) {
    out.node->backward = [sp](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const auto& g = *n.out_grad;
      auto& pg = *n.parents[0].grad;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
          for (std::size_t i = 0; i < sp.inner; ++i)
            pg[(o * sp.extent + e) * sp.inner + i] += g[o * sp.inner + i];
    };
  }
  return out;
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape, axis, "mean");
  if (sp.extent == 0) tensor_error("mean: empty axis in " + shape_str(a.shape));
  return scalar_mul(sum(a, axis), 1.0 / static_cast<double>(sp.extent));
}

Tensor sum_all(const Tensor& a) {
  Tensor out = make_out({1}, want_grad(a), "sum_all", {a});
  double acc = 0.0;
  for (double v : *a.data) acc += v;
  (*out.data)[0] = acc;
  if (out.node) {
    out.node->backward = [](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const double g = (*n.out_grad)[0];
      for (double& gv : *n.parents[0].grad) gv += g;
    };
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) tensor_error("mean_all: empty tensor");
  return scalar_mul(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor l1_norm(const Tensor& a) {
  Tensor out = make_out({1}, want_grad(a), "l1_norm", {a});
  double acc = 0.0;
  for (double v : *a.data) acc += std::abs(v);
  (*out.data)[0] = acc;
  if (out.node) {
    out.node->backward = [](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const double g = (*n.out_grad)[0];
      const auto& xv = *n.parents[0].data;
      auto& pg = *n.parents[0].grad;
      for (std::size_t i = 0; i < xv.size(); ++i) {
        pg[i] += g * (xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0));
      }
    };
  }
  return out;
}

Tensor l2_norm(const Tensor& a) {
  Tensor out = make_out({1}, want_grad(a), "l2_norm", {a});
  double acc = 0.0;
  for (double v : *a.data) acc += v * v;
  const double norm = std::sqrt(acc);
  (*out.data)[0] = norm;
  if (out.node) {
    out.node->backward = [norm](Node& n) {
      if (!n.parents[0].requires_grad || norm == 0.0) return;
      const double g = (*n.out_grad)[0];
      const auto& xv = *n.parents[0].data;
      auto& pg = *n.parents[0].grad;
      for (std::size_t i = 0; i < xv.size(); ++i) pg[i] += g * xv[i] / norm;
    };
  }
  return out;
}

Tensor softmax(const Tensor& a) {
  const std::size_t rows = last_axis_rows(a, "softmax");
  const std::size_t cols = a.shape.back();
  Tensor out = make_out(a.shape, want_grad(a), "softmax", {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = ov.data() + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  if (out.node) {
    auto saved = out.data;
    out.node->backward = [rows, cols, saved](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const auto& g = *n.out_grad;
      const auto& y = *saved;
      auto& pg = *n.parents[0].grad;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j)
          pg[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
      }
    };
  }
  return out;
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t rows = last_axis_rows(a, "log_softmax");
  const std::size_t cols = a.shape.back();
  Tensor out = make_out(a.shape, want_grad(a), "log_softmax", {a});
  const auto& av = *a.data;
  auto& ov = *out.data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = ov.data() + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
  }
  if (out.node) {
    auto saved = out.data;
    out.node->backward = [rows, cols, saved](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const auto& g = *n.out_grad;
      const auto& y = *saved;
      auto& pg = *n.parents[0].grad;
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) gsum += g[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j)
          pg[r * cols + j] += g[r * cols + j] - std::exp(y[r * cols + j]) * gsum;
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t rows = last_axis_rows(x, "layer_norm");
  const std::size_t cols = x.shape.back();
  if (gamma.numel() != cols || beta.numel() != cols) {
    tensor_error("layer_norm: gamma/beta must have " + std::to_string(cols) + " elements, got " +
                 shape_str(gamma.shape) + " and " + shape_str(beta.shape));
  }
  Tensor out =
      make_out(x.shape, want_grad(x) || want_grad(gamma) || want_grad(beta), "layer_norm",
               {x, gamma, beta});
  const auto& xv = *x.data;
  const auto& gv = *gamma.data;
  const auto& bv = *beta.data;
  auto& ov = *out.data;
  auto stats = std::make_shared<std::vector<double>>(rows * 2);  // mean, inv std per row
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xv[r * cols + j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = xv[r * cols + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = inv;
    for (std::size_t j = 0; j < cols; ++j)
      ov[r * cols + j] = (xv[r * cols + j] - mu) * inv * gv[j] + bv[j];
  }
  if (out.node) {
    out.node->backward = [rows, cols, stats](Node& n) {
      const auto& g = *n.out_grad;
      const Tensor& x = n.parents[0];
      const Tensor& gamma = n.parents[1];
      const Tensor& beta = n.parents[2];
      const auto& xv = *x.data;
      const auto& gv = *gamma.data;
      for (std::size_t r = 0; r < rows; ++r) {
        const double mu = (*stats)[2 * r];
        const double inv = (*stats)[2 * r + 1];
        double sum_gg = 0.0, sum_ggx = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          const double xhat = (xv[r * cols + j] - mu) * inv;
          const double gg = g[r * cols + j] * gv[j];
          sum_gg += gg;
          sum_ggx += gg * xhat;
          if (gamma.requires_grad) (*gamma.grad)[j] += g[r * cols + j] * xhat;
          if (beta.requires_grad) (*beta.grad)[j] += g[r * cols + j];
        }
        if (x.requires_grad) {
          const double cn = static_cast<double>(cols);
          for (std::size_t j = 0; j < cols; ++j) {
            const double xhat = (xv[r * cols + j] - mu) * inv;
            const double gg = g[r * cols + j] * gv[j];
            (*x.grad)[r * cols + j] += inv * (gg - sum_gg / cn - xhat * sum_ggx / cn);
          }
        }
      }
    };
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  if (table.ndim() != 2) {
    tensor_error("embedding: table must be 2-D, got " + shape_str(table.shape));
  }
  const std::size_t rows = table.shape[0], cols = table.shape[1];
  for (std::size_t id : ids) {
    if (id >= rows) {
      tensor_error("embedding: id " + std::to_string(id) + " out of range for " +
                   shape_str(table.shape));
    }
  }
  Tensor out = make_out({ids.size(), cols}, want_grad(table), "embedding", {table});
  const auto& tv = *table.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) ov[i * cols + j] = tv[ids[i] * cols + j];
  if (out.node) {
    out.node->backward = [ids, cols](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const auto& g = *n.out_grad;
      auto& tg = *n.parents[0].grad;
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) tg[ids[i] * cols + j] += g[i * cols + j];
    };
  }
  return out;
}

Tensor gather_rc(const Tensor& m, const std::vector<std::pair<std::size_t, std::size_t>>& idx) {
  if (m.ndim() != 2) tensor_error("gather_rc: expected matrix, got " + shape_str(m.shape));
  const std::size_t rows = m.shape[0], cols = m.shape[1];
  for (const auto& [r, c] : idx) {
    if (r >= rows || c >= cols) {
      tensor_error("gather_rc: index (" + std::to_string(r) + ", " + std::to_string(c) +
                   ") out of range for " + shape_str(m.shape));
    }
  }
  Tensor out = make_out({idx.size()}, want_grad(m), "gather_rc", {m});
  const auto& mv = *m.data;
  auto& ov = *out.data;
  for (std::size_t i = 0; i < idx.size(); ++i) ov[i] = mv[idx[i].first * cols + idx[i].second];
  if (out.node) {
    out.node->backward = [idx, cols](Node& n) {
      if (!n.parents[0].requires_grad) return;
      const auto& g = *n.out_grad;
      auto& mg = *n.parents[0].grad;
      for (std::size_t i = 0; i < idx.size(); ++i)
        mg[idx[i].first * cols + idx[i].second] += g[i];
    };
  }
  return out;
}

}  // namespace csip
