#pragma once

#include <string>
#include <vector>

#include "csip/tensor.hpp"

namespace csip {

/// Joint graph: J nodes, symmetric 0/1 adjacency with zero diagonal.
struct SkeletonGraph {
  std::size_t joints = 0;
  std::vector<double> adjacency;  // J x J row-major
  std::vector<std::string> names;

  double adj(std::size_t i, std::size_t j) const { return adjacency[i * joints + j]; }
  void validate() const;
  bool connected() const;

  static SkeletonGraph from_edges(std::size_t joints, const std::vector<std::pair<int, int>>& edges,
                                  std::vector<std::string> names = {});
  /// Reads the JSON graph format: {"joints": [names...], "edges": [[a,b]...]}.
  static SkeletonGraph load(const std::string& path);
  /// The 17-joint body graph shipped in data/h36m_17.json.
  static const SkeletonGraph& human36m();
};

/// Eigenvectors of the symmetric normalized Laplacian for the k smallest
/// nonzero eigenvalues. Columns are unit norm with the first nonzero
/// component of each made positive. Errors when k exceeds the nonzero
/// spectrum (disconnected graphs shrink it).
Tensor laplacian_pe(const SkeletonGraph& graph, std::size_t k);

}  // namespace csip
