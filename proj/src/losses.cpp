#include "csip/losses.hpp"

#include <limits>
#include <map>

namespace csip {

CEConfig::CEConfig(std::size_t dim, std::size_t classes, double smoothing, std::mt19937_64& rng)
    : smoothing(smoothing), classes(classes), classifier(dim, classes, rng) {
  validate();
}

void CEConfig::validate() const {
  if (smoothing < 0.0 || smoothing >= 1.0) {
    tensor_error("ce: smoothing must lie in [0, 1)");
  }
  if (classes == 0) tensor_error("ce: class count not set");
}

Tensor ce_label_smoothing(const Tensor& features, const std::vector<int>& labels,
                          const CEConfig& cfg) {
  cfg.validate();
  const std::size_t b = labels.size();
  if (features.ndim() != 2 || features.shape[0] != b) {
    tensor_error("ce: features " + shape_str(features.shape) + " vs " + std::to_string(b) +
                 " labels");
  }
  const std::size_t k = cfg.classes;
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      tensor_error("ce: label " + std::to_string(y) + " outside " + std::to_string(k) +
                   " classes");
    }
  }
  Tensor lsm = log_softmax(cfg.classifier.forward(features));  // B x K
  // -sum_k q_k log p_k = -(1-eps) log p_y - (eps/K) sum_k log p_k
  std::vector<std::pair<std::size_t, std::size_t>> own;
  own.reserve(b);
  for (std::size_t i = 0; i < b; ++i) own.emplace_back(i, static_cast<std::size_t>(labels[i]));
  Tensor own_term = scalar_mul(mean_all(gather_rc(lsm, own)), -(1.0 - cfg.smoothing));
  if (cfg.smoothing == 0.0) return own_term;
  Tensor smooth_term = scalar_mul(mean_all(sum(lsm, 1)),
                                  -cfg.smoothing / static_cast<double>(k));
  return add(own_term, smooth_term);
}

Tensor batch_hard_triplet(const Tensor& features, const std::vector<int>& labels,
                          const TripletConfig& cfg) {
  const std::size_t b = labels.size();
  if (features.ndim() != 2 || features.shape[0] != b) {
    tensor_error("triplet: features " + shape_str(features.shape) + " vs " + std::to_string(b) +
                 " labels");
  }
  std::map<int, std::size_t> per_id;
  for (int y : labels) ++per_id[y];
  if (per_id.size() < 2) tensor_error("triplet: PK structure required (need >= 2 identities)");
  for (const auto& [y, n] : per_id) {
    if (n < 2) {
      tensor_error("triplet: PK structure required (identity " + std::to_string(y) +
                   " has a single sample)");
    }
  }
  Tensor dist = pairwise_sqdist(features, features);
  if (!cfg.squared) dist = sqrt(dist);
  const auto& dv = *dist.data;

  std::vector<std::pair<std::size_t, std::size_t>> hardest_pos, hardest_neg;
  hardest_pos.reserve(b);
  hardest_neg.reserve(b);
  for (std::size_t a = 0; a < b; ++a) {
    std::size_t best_p = a, best_n = 0;
    double dp = -1.0, dn = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < b; ++o) {
      if (o == a) continue;
      const double d = dv[a * b + o];
      if (labels[o] == labels[a]) {
        if (d > dp) {
          dp = d;
          best_p = o;
        }
      } else if (d < dn) {
        dn = d;
        best_n = o;
      }
    }
    hardest_pos.emplace_back(a, best_p);
    hardest_neg.emplace_back(a, best_n);
  }
  Tensor pos = gather_rc(dist, hardest_pos);
  Tensor neg = gather_rc(dist, hardest_neg);
  Tensor hinge = relu(add_scalar(sub(pos, neg), cfg.margin));
  return mean_all(hinge);
}

}  // namespace csip
