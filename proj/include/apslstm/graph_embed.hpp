#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "apslstm/tensor.hpp"

namespace apslstm {

/// Undirected weighted station graph. Row-major N x N adjacency.
struct StationGraph {
  std::size_t n_stations = 0;
  std::vector<double> adjacency;
  std::vector<std::string> station_names;
  std::size_t flow_station = 0;

  double weight(std::size_t i, std::size_t j) const { return adjacency[i * n_stations + j]; }
  // Throws DataError on asymmetry, nonzero diagonal, negative weights or a bad flow index.
  void validate() const;
  std::size_t index_of(const std::string& name) const;  // DataError when absent
};

// Header row of station names followed by N rows of N weights. The flow
// station defaults to the last column when `flow_station` is empty.
StationGraph load_adjacency_csv(const std::filesystem::path& path, const std::string& flow_station = {});
void write_adjacency_csv(const std::filesystem::path& path, const StationGraph& graph);

// I - D^{-1/2} A D^{-1/2}; isolated nodes get D^{-1/2} = 0.
Tensor normalized_laplacian(const StationGraph& graph);

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  Tensor vectors;              // [N,N], column j pairs with values[j]
};

// Cyclic Jacobi rotations. Each eigenvector is sign-normalized so that its
// first largest-magnitude component is positive.
EigenDecomposition symmetric_eigendecomposition(const Tensor& matrix);

/// Per-station positional signal from the smallest nontrivial Laplacian
/// eigenvectors, mapped to one value per station by a learnable projection.
struct LaplacianEmbedding {
  Tensor eigvecs;  // [N,m]; undefined when m == 0
  std::vector<double> eigvals;
  Tensor projection_w;  // [m,1] learnable
  Tensor projection_b;  // [1]   learnable
  std::size_t n_stations = 0;

  std::size_t dims() const { return eigvals.size(); }
  Tensor embedding() const;  // [N]
};

inline constexpr double kTrivialEigenvalue = 1e-8;

// Projection starts at zero; init_parameters draws the real initial values.
LaplacianEmbedding laplacian_embedding(const StationGraph& graph, std::size_t m);

// x: [T,N] -> x + X_s on every row.
Tensor fuse_embedding(const Tensor& x, const LaplacianEmbedding& emb);

}  // namespace apslstm
