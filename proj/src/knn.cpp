#include "hgg/knn.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace hgg {
namespace {

struct SpaceView {
  const double* data;
  std::size_t dim;
};

SpaceView space_view(const EntitySet& nodes, KnnSpace space) {
  if (space == KnnSpace::Spatial) return {nodes.positions.data(), 2};
  return {nodes.features.data(), nodes.dim};
}

double sq_dist(const SpaceView& v, std::size_t a, std::size_t b) {
  const double* pa = v.data + a * v.dim;
  const double* pb = v.data + b * v.dim;
  double s = 0.0;
  for (std::size_t j = 0; j < v.dim; ++j) {
    const double d = pa[j] - pb[j];
    s += d * d;
  }
  return s;
}

void check_k(const EntitySet& nodes, const KnnConfig& cfg) {
  if (cfg.k == 0) throw std::invalid_argument("knn: k must be positive");
  if (cfg.k >= nodes.n)
    throw std::invalid_argument("knn: k = " + std::to_string(cfg.k) + " requires at least " +
                                std::to_string(cfg.k + 1) + " nodes, got " +
                                std::to_string(nodes.n));
}

RelationEdges symmetrize(std::vector<std::pair<std::size_t, std::size_t>> edges) {
  const std::size_t m = edges.size();
  edges.reserve(2 * m);
  for (std::size_t i = 0; i < m; ++i) edges.push_back({edges[i].second, edges[i].first});
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  RelationEdges out;
  out.src.reserve(edges.size());
  out.dst.reserve(edges.size());
  for (const auto& [s, d] : edges) out.push(s, d);
  return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> knn_neighbors(const EntitySet& nodes, const KnnConfig& cfg) {
  check_k(nodes, cfg);
  const SpaceView view = space_view(nodes, cfg.space);
  const std::size_t n = nodes.n;
  std::vector<std::vector<std::size_t>> result(n);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    cand.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.push_back({sq_dist(view, i, j), j});
    std::nth_element(cand.begin(), cand.begin() + (cfg.k - 1), cand.end());
    std::sort(cand.begin(), cand.begin() + cfg.k);
    result[i].reserve(cfg.k);
    for (std::size_t t = 0; t < cfg.k; ++t) result[i].push_back(cand[t].second);
  }
  return result;
}

RelationEdges knn_edges(const EntitySet& nodes, const KnnConfig& cfg) {
  const auto neighbors = knn_neighbors(nodes, cfg);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(nodes.n * cfg.k);
  for (std::size_t i = 0; i < neighbors.size(); ++i)
    for (std::size_t j : neighbors[i]) edges.push_back({j, i});
  RelationEdges out = symmetrize(std::move(edges));
  out.relation = nodes.kind == EntityKind::Cell ? Relation::CellCell : Relation::TissueTissue;
  return out;
}

RelationEdges brute_force_knn(const EntitySet& nodes, const KnnConfig& cfg) {
  check_k(nodes, cfg);
  const SpaceView view = space_view(nodes, cfg.space);
  const std::size_t n = nodes.n;
  // full distance matrix, full sort per row
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist[i * n + j] = sq_dist(view, i, j);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::pair<double, std::size_t>> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row.push_back({dist[i * n + j], j});
    std::sort(row.begin(), row.end());
    for (std::size_t t = 0; t < cfg.k; ++t) edges.push_back({row[t].second, i});
  }
  RelationEdges out = symmetrize(std::move(edges));
  out.relation = nodes.kind == EntityKind::Cell ? Relation::CellCell : Relation::TissueTissue;
  return out;
}

RelationEdges assignment_edges(const EntitySet& cells, const EntitySet& tissues,
                               const std::optional<std::vector<std::size_t>>& explicit_map) {
  RelationEdges out;
  out.relation = Relation::CellTissue;
  if (explicit_map) {
    if (explicit_map->size() != cells.n)
      throw std::invalid_argument("assignment_edges: map has " +
                                  std::to_string(explicit_map->size()) + " entries for " +
                                  std::to_string(cells.n) + " cells");
    for (std::size_t c = 0; c < cells.n; ++c) {
      const std::size_t t = (*explicit_map)[c];
      if (t >= tissues.n)
        throw std::invalid_argument("assignment_edges: tissue index " + std::to_string(t) +
                                    " for cell " + std::to_string(c) + " out of range (" +
                                    std::to_string(tissues.n) + " tissues)");
      out.push(c, t);
    }
    return out;
  }
  for (std::size_t c = 0; c < cells.n; ++c) {
    std::size_t best = 0;
    double best_d = 0.0;
    for (std::size_t t = 0; t < tissues.n; ++t) {
      const double dx = cells.x(c) - tissues.x(t);
      const double dy = cells.y(c) - tissues.y(t);
      const double d = dx * dx + dy * dy;
      if (t == 0 || d < best_d) {
        best = t;
        best_d = d;
      }
    }
    out.push(c, best);
  }
  return out;
}

HeteroGraph build_hetero_graph(EntitySet cells, EntitySet tissues,
                               const std::optional<std::vector<std::size_t>>& assignment,
                               EdgeMode mode, std::size_t k, std::optional<int> label) {
  const KnnSpace space = mode == EdgeMode::FeatureKnn ? KnnSpace::Feature : KnnSpace::Spatial;
  HeteroGraph g;
  g.cell_tissue = assignment_edges(cells, tissues, assignment);
  if (cells.n > 1)
    g.cell_cell = knn_edges(cells, {std::min(k, cells.n - 1), space});
  if (tissues.n > 1)
    g.tissue_tissue = knn_edges(tissues, {std::min(k, tissues.n - 1), space});
  g.cells = std::move(cells);
  g.tissues = std::move(tissues);
  g.label = label;
  return g;
}

}  // namespace hgg
