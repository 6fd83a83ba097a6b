#pragma once

#include <utility>
#include <vector>

#include "csip/tensor.hpp"

namespace csip {

// Elementwise (shapes must match exactly; no implicit broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);  // d/dx at x<=0 taken as 0
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape target);
Tensor transpose(const Tensor& a);  // 2-D
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
Tensor stack_rows(const std::vector<Tensor>& rows);  // n vectors of C -> n x C

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D x 2-D
Tensor add_row_vector(const Tensor& m, const Tensor& v);  // R x C plus C, rowwise
Tensor scale_rows(const Tensor& m, const Tensor& s);      // row i scaled by s[i]
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b); // N x C, M x C -> N x M

// Reductions.
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor l1_norm(const Tensor& a);
Tensor l2_norm(const Tensor& a);

// Last-axis row transforms.
Tensor softmax(const Tensor& a);      // max-subtracted, rows sum to 1
Tensor log_softmax(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Indexed access.
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);
Tensor gather_rc(const Tensor& m, const std::vector<std::pair<std::size_t, std::size_t>>& idx);

}  // namespace csip
