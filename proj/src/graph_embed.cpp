#include "apslstm/graph_embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "apslstm/csv.hpp"
#include "apslstm/errors.hpp"

namespace apslstm {

void StationGraph::validate() const {
  if (n_stations == 0) throw DataError("graph has no stations");
  if (adjacency.size() != n_stations * n_stations)
    throw DataError("adjacency has " + std::to_string(adjacency.size()) + " entries, expected " +
                    std::to_string(n_stations * n_stations));
  if (station_names.size() != n_stations) throw DataError("station name count does not match N");
  if (flow_station >= n_stations) throw DataError("flow station index out of range");
  for (std::size_t i = 0; i < n_stations; ++i) {
    if (weight(i, i) != 0.0) throw DataError("adjacency diagonal must be zero at station " + station_names[i]);
    for (std::size_t j = 0; j < n_stations; ++j) {
      if (weight(i, j) < 0.0 || !std::isfinite(weight(i, j)))
        throw DataError("adjacency weight (" + station_names[i] + ", " + station_names[j] +
                        ") must be finite and nonnegative");
      if (std::abs(weight(i, j) - weight(j, i)) > 1e-12)
        throw DataError("adjacency is not symmetric at (" + station_names[i] + ", " +
                        station_names[j] + ")");
    }
  }
}

std::size_t StationGraph::index_of(const std::string& name) const {
  auto it = std::find(station_names.begin(), station_names.end(), name);
  if (it == station_names.end()) throw DataError("unknown station '" + name + "'");
  return static_cast<std::size_t>(it - station_names.begin());
}

StationGraph load_adjacency_csv(const std::filesystem::path& path, const std::string& flow_station) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open adjacency file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("adjacency file " + path.string() + " is empty");
  StationGraph g;
  g.station_names = csv::split_line(line);
  g.n_stations = g.station_names.size();
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != g.n_stations)
      throw DataError("adjacency row " + std::to_string(row + 2) + " has " +
                      std::to_string(fields.size()) + " fields, expected " + std::to_string(g.n_stations));
    for (const auto& f : fields) {
      double v;
      if (!csv::parse_double(f, v))
        throw DataError("adjacency row " + std::to_string(row + 2) + ": bad number '" + f + "'");
      g.adjacency.push_back(v);
    }
    ++row;
  }
  if (row != g.n_stations)
    throw DataError("adjacency has " + std::to_string(row) + " rows for " +
                    std::to_string(g.n_stations) + " stations");
  g.flow_station = flow_station.empty() ? g.n_stations - 1 : g.index_of(flow_station);
  g.validate();
  return g;
}

void write_adjacency_csv(const std::filesystem::path& path, const StationGraph& graph) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write adjacency file " + path.string());
  for (std::size_t i = 0; i < graph.n_stations; ++i) out << (i ? "," : "") << graph.station_names[i];
  out << '\n';
  for (std::size_t i = 0; i < graph.n_stations; ++i) {
    for (std::size_t j = 0; j < graph.n_stations; ++j)
      out << (j ? "," : "") << csv::format_double(graph.weight(i, j));
    out << '\n';
  }
}

Tensor normalized_laplacian(const StationGraph& graph) {
  graph.validate();
  const std::size_t n = graph.n_stations;
  std::vector<double> inv_sqrt_deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += graph.weight(i, j);
    if (deg > 0.0) inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  std::vector<double> lap(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      lap[i * n + j] = (i == j ? 1.0 : 0.0) - inv_sqrt_deg[i] * graph.weight(i, j) * inv_sqrt_deg[j];
  return Tensor({n, n}, std::move(lap));
}

EigenDecomposition symmetric_eigendecomposition(const Tensor& matrix) {
  if (matrix.rank() != 2 || matrix.dim(0) != matrix.dim(1))
    throw ContractError("eigendecomposition needs a square matrix, got " + shape_str(matrix.shape()));
  const std::size_t n = matrix.dim(0);
  std::vector<double> a(matrix.data().begin(), matrix.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a[i * n + j] - a[j * n + i]) > 1e-10)
        throw ContractError("eigendecomposition input is not symmetric at (" + std::to_string(i) +
                            ", " + std::to_string(j) + ")");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  double scale_sq = 0.0;
  for (double x : a) scale_sq += x * x;
  constexpr int kMaxSweeps = 100;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off <= 1e-26 * scale_sq || off == 0.0) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  if (!converged) throw NumericalError("Jacobi eigensolver did not converge in " + std::to_string(kMaxSweeps) + " sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i * n + i] < a[j * n + j]; });

  EigenDecomposition out;
  std::vector<double> vecs(n * n);
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = order[col];
    out.values.push_back(a[src * n + src]);
    double biggest = 0.0;
    for (std::size_t k = 0; k < n; ++k) biggest = std::max(biggest, std::abs(v[k * n + src]));
    double sign = 1.0;
    for (std::size_t k = 0; k < n; ++k)
      if (std::abs(v[k * n + src]) >= biggest - 1e-9) {
        sign = v[k * n + src] < 0.0 ? -1.0 : 1.0;
        break;
      }
    for (std::size_t k = 0; k < n; ++k) vecs[k * n + col] = sign * v[k * n + src];
  }
  out.vectors = Tensor({n, n}, std::move(vecs));
  return out;
}

Tensor LaplacianEmbedding::embedding() const {
  if (dims() == 0) return add(Tensor({n_stations}, 0.0), projection_b);
  return reshape(add(matmul(eigvecs, projection_w), projection_b), {n_stations});
}

LaplacianEmbedding laplacian_embedding(const StationGraph& graph, std::size_t m) {
  const std::size_t n = graph.n_stations;
  const auto eig = symmetric_eigendecomposition(normalized_laplacian(graph));
  std::vector<std::size_t> nontrivial;
  for (std::size_t j = 0; j < n; ++j)
    if (eig.values[j] >= kTrivialEigenvalue) nontrivial.push_back(j);
  if (m > nontrivial.size())
    throw ConfigError("embedding dimension m=" + std::to_string(m) + " exceeds the " +
                      std::to_string(nontrivial.size()) + " nontrivial Laplacian eigenvectors");

  LaplacianEmbedding emb;
  emb.n_stations = n;
  if (m > 0) {
    std::vector<double> cols(n * m);
    for (std::size_t c = 0; c < m; ++c) {
      const std::size_t src = nontrivial[c];
      emb.eigvals.push_back(eig.values[src]);
      for (std::size_t r = 0; r < n; ++r) cols[r * m + c] = eig.vectors[r * n + src];
    }
    emb.eigvecs = Tensor({n, m}, std::move(cols));
    emb.projection_w = Tensor({m, 1}, 0.0);
    emb.projection_w.set_requires_grad();
  }
  emb.projection_b = Tensor({1}, 0.0);
  emb.projection_b.set_requires_grad();
  return emb;
}

Tensor fuse_embedding(const Tensor& x, const LaplacianEmbedding& emb) {
  if (x.rank() != 2 || x.dim(1) != emb.n_stations)
    throw ShapeError("fuse_embedding: input " + shape_str(x.shape()) + " does not match " +
                     std::to_string(emb.n_stations) + " stations");
  return add(x, emb.embedding());
}

}  // namespace apslstm
