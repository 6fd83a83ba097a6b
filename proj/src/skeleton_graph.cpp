#include "csip/skeleton_graph.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Dense>
#include <json.hpp>

namespace csip {

void SkeletonGraph::validate() const {
  if (adjacency.size() != joints * joints) {
    tensor_error("skeleton graph: adjacency size does not match " + std::to_string(joints) +
                 " joints");
  }
  for (std::size_t i = 0; i < joints; ++i) {
    if (adj(i, i) != 0.0) tensor_error("skeleton graph: nonzero diagonal at joint " +
                                       std::to_string(i));
    for (std::size_t j = 0; j < joints; ++j) {
      const double v = adj(i, j);
      if (v != 0.0 && v != 1.0) tensor_error("skeleton graph: adjacency must be 0/1");
      if (v != adj(j, i)) tensor_error("skeleton graph: adjacency not symmetric");
    }
  }
  if (!names.empty() && names.size() != joints) {
    tensor_error("skeleton graph: name table size does not match joint count");
  }
}

bool SkeletonGraph::connected() const {
  if (joints == 0) return false;
  std::vector<char> seen(joints, 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v = 0; v < joints; ++v) {
      if (adj(u, v) != 0.0 && !seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == joints;
}

SkeletonGraph SkeletonGraph::from_edges(std::size_t joints,
                                        const std::vector<std::pair<int, int>>& edges,
                                        std::vector<std::string> names) {
  SkeletonGraph g;
  g.joints = joints;
  g.adjacency.assign(joints * joints, 0.0);
  g.names = std::move(names);
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= joints ||
        static_cast<std::size_t>(b) >= joints || a == b) {
      tensor_error("skeleton graph: bad edge (" + std::to_string(a) + ", " + std::to_string(b) +
                   ") for " + std::to_string(joints) + " joints");
    }
    g.adjacency[static_cast<std::size_t>(a) * joints + static_cast<std::size_t>(b)] = 1.0;
    g.adjacency[static_cast<std::size_t>(b) * joints + static_cast<std::size_t>(a)] = 1.0;
  }
  g.validate();
  return g;
}

SkeletonGraph SkeletonGraph::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) tensor_error("cannot open graph file: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  const auto names = j.at("joints").get<std::vector<std::string>>();
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : j.at("edges")) {
    edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  }
  return from_edges(names.size(), edges, names);
}

const SkeletonGraph& SkeletonGraph::human36m() {
  static const SkeletonGraph g = load(std::string(CSIP_DATA_DIR) + "/h36m_17.json");
  return g;
}

Tensor laplacian_pe(const SkeletonGraph& graph, std::size_t k) {
  graph.validate();
  const std::size_t j = graph.joints;
  if (k >= j) {
    tensor_error("laplacian_pe: k = " + std::to_string(k) + " must be below joint count " +
                 std::to_string(j));
  }
  Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(j),
                                                  static_cast<Eigen::Index>(j));
  std::vector<double> dinv(j, 0.0);
  for (std::size_t i = 0; i < j; ++i) {
    double deg = 0.0;
    for (std::size_t c = 0; c < j; ++c) deg += graph.adj(i, c);
    dinv[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  for (std::size_t r = 0; r < j; ++r)
    for (std::size_t c = 0; c < j; ++c)
      if (graph.adj(r, c) != 0.0) {
        lap(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) -=
            dinv[r] * dinv[c];
      }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) tensor_error("laplacian_pe: eigendecomposition failed");
  const auto& evals = solver.eigenvalues();   // ascending
  const auto& evecs = solver.eigenvectors();

  constexpr double kZeroTol = 1e-9;
  std::vector<std::size_t> keep;
  for (Eigen::Index i = 0; i < evals.size() && keep.size() < k; ++i) {
    if (evals(i) > kZeroTol) keep.push_back(static_cast<std::size_t>(i));
  }
  if (keep.size() < k) {
    tensor_error("laplacian_pe: requested " + std::to_string(k) +
                 " nonzero eigenvalues but the spectrum has only " +
                 std::to_string(keep.size()));
  }

  Tensor pe = Tensor::zeros({j, k});
  for (std::size_t col = 0; col < k; ++col) {
    const Eigen::Index src = static_cast<Eigen::Index>(keep[col]);
    double sign = 1.0;
    for (Eigen::Index r = 0; r < evecs.rows(); ++r) {
      const double v = evecs(r, src);
      if (std::abs(v) > 1e-12) {
        sign = v > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t r = 0; r < j; ++r) {
      (*pe.data)[r * k + col] = sign * evecs(static_cast<Eigen::Index>(r), src);
    }
  }
  return pe;
}

}  // namespace csip
