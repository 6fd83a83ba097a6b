#include "csip/eval.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "csip/ops.hpp"

namespace csip {

Tensor pairwise_distances(const Tensor& queries, const Tensor& gallery) {
  NoGradGuard ng;
  return sqrt(pairwise_sqdist(queries, gallery));
}

RankingResult evaluate(const Tensor& distances, const std::vector<int>& query_pids,
                       const std::vector<int>& query_camids,
                       const std::vector<int>& gallery_pids,
                       const std::vector<int>& gallery_camids, bool exclude_same_camera) {
  const std::size_t nq = query_pids.size();
  const std::size_t ng = gallery_pids.size();
  if (ng == 0) tensor_error("evaluate: empty gallery");
  if (distances.ndim() != 2 || distances.shape[0] != nq || distances.shape[1] != ng ||
      query_camids.size() != nq || gallery_camids.size() != ng) {
    tensor_error("evaluate: distance matrix " + shape_str(distances.shape) +
                 " does not match " + std::to_string(nq) + " queries and " + std::to_string(ng) +
                 " gallery entries");
  }
  RankingResult res;
  res.cmc.assign(ng, 0.0);
  res.per_query_ap.assign(nq, -1.0);
  double ap_sum = 0.0;

  std::vector<std::size_t> order(ng);
  for (std::size_t q = 0; q < nq; ++q) {
    const double* row = distances.data->data() + q * ng;
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Ascending distance; ties fall back to the permutation-invariant
    // (pid, camid) attributes before the gallery index, which keeps the
    // metrics exact under gallery reordering even on tie-heavy inputs.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (row[a] != row[b]) return row[a] < row[b];
      if (gallery_pids[a] != gallery_pids[b]) return gallery_pids[a] < gallery_pids[b];
      if (gallery_camids[a] != gallery_camids[b]) return gallery_camids[a] < gallery_camids[b];
      return a < b;
    });

    std::size_t kept = 0, relevant = 0, hits = 0;
    double precision_sum = 0.0;
    std::size_t first_hit = ng;  // position among kept entries
    for (std::size_t g : order) {
      if (exclude_same_camera && gallery_pids[g] == query_pids[q] &&
          gallery_camids[g] == query_camids[q]) {
        continue;
      }
      ++kept;
      if (gallery_pids[g] == query_pids[q]) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(kept);
        if (first_hit == ng) first_hit = kept - 1;
        ++relevant;
      }
    }
    if (relevant == 0) {
      ++res.skipped_queries;
      std::cerr << "warning: query " << q << " has no valid gallery match, skipped\n";
      continue;
    }
    ++res.evaluated_queries;
    const double ap = precision_sum / static_cast<double>(relevant);
    res.per_query_ap[q] = ap;
    ap_sum += ap;
    for (std::size_t k = first_hit; k < ng; ++k) res.cmc[k] += 1.0;
  }
  if (res.evaluated_queries == 0) tensor_error("evaluate: no query had a valid match");
  for (double& v : res.cmc) v /= static_cast<double>(res.evaluated_queries);
  res.map = ap_sum / static_cast<double>(res.evaluated_queries);
  return res;
}

std::string metrics_json(const RankingResult& r, const std::vector<int>& cmc_ranks,
                         bool per_query) {
  nlohmann::json j;
  j["mAP"] = r.map;
  nlohmann::json cmc;
  for (int k : cmc_ranks) {
    if (k >= 1 && static_cast<std::size_t>(k) <= r.cmc.size()) {
      cmc["rank-" + std::to_string(k)] = r.cmc[static_cast<std::size_t>(k) - 1];
    }
  }
  j["cmc"] = std::move(cmc);
  j["evaluated_queries"] = r.evaluated_queries;
  j["skipped_queries"] = r.skipped_queries;
  if (per_query) j["per_query_ap"] = r.per_query_ap;
  return j.dump(2);
}

}  // namespace csip
