#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "hgg/graph.hpp"

namespace hgg {

enum class KnnSpace { Feature, Spatial };

struct KnnConfig {
  std::size_t k = 5;
  KnnSpace space = KnnSpace::Feature;
};

/// The k nearest neighbors of every node under Euclidean distance in the
/// chosen space, self excluded, ties broken toward the lower node index.
/// Result lists are sorted by (distance, index), each of length exactly k.
std::vector<std::vector<std::size_t>> knn_neighbors(const EntitySet& nodes, const KnnConfig& cfg);

/// Neighbor edges (j -> i) for each node i's k nearest j, then symmetrized
/// (every emitted (a -> b) also appears as (b -> a)), deduplicated and sorted
/// by (src, dst). Rejects k >= n.
RelationEdges knn_edges(const EntitySet& nodes, const KnnConfig& cfg);

/// Exhaustive O(n^2) reference with identical tie-breaking; the correctness
/// oracle knn_edges is tested against.
RelationEdges brute_force_knn(const EntitySet& nodes, const KnnConfig& cfg);

/// One cell -> tissue edge per cell: the explicit assignment when given,
/// otherwise the tissue with the nearest centroid (ties toward lower index).
RelationEdges assignment_edges(const EntitySet& cells, const EntitySet& tissues,
                               const std::optional<std::vector<std::size_t>>& explicit_map);

enum class EdgeMode { FeatureKnn, SpatialKnn };

/// Assembles the full heterogeneous graph: intra-type kNN edges in the chosen
/// space plus the cell -> tissue assignment edges. k is clamped to n - 1 per
/// node set so small graphs stay buildable.
HeteroGraph build_hetero_graph(EntitySet cells, EntitySet tissues,
                               const std::optional<std::vector<std::size_t>>& assignment,
                               EdgeMode mode, std::size_t k, std::optional<int> label);

}  // namespace hgg
