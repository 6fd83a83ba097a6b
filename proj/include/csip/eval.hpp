#pragma once

#include <string>
#include <vector>

#include "csip/tensor.hpp"

namespace csip {

/// Euclidean distances between query and gallery rows.
Tensor pairwise_distances(const Tensor& queries, const Tensor& gallery);

struct RankingResult {
  double map = 0.0;
  std::vector<double> cmc;          // cmc[k-1] = Rank-(k) rate
  std::vector<double> per_query_ap; // skipped queries carry -1
  std::size_t evaluated_queries = 0;
  std::size_t skipped_queries = 0;
};

/// Standard retrieval protocol: sort gallery by ascending distance (ties by
/// ascending gallery index), drop same-pid same-cam entries when the flag is
/// set, AP = mean precision at each relevant hit, CMC over the remaining
/// list. Queries with no valid match are skipped with a warning.
RankingResult evaluate(const Tensor& distances, const std::vector<int>& query_pids,
                       const std::vector<int>& query_camids, const std::vector<int>& gallery_pids,
                       const std::vector<int>& gallery_camids, bool exclude_same_camera = true);

std::string metrics_json(const RankingResult& r, const std::vector<int>& cmc_ranks,
                         bool per_query = false);

}  // namespace csip
