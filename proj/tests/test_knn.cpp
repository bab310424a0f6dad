#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <utility>

#include "hgg/knn.hpp"
#include "hgg/rng.hpp"
#include "test_util.hpp"

using namespace hgg;
using namespace hggtest;

namespace {

std::set<std::pair<std::size_t, std::size_t>> edge_set(const RelationEdges& e) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < e.size(); ++i) out.insert({e.src[i], e.dst[i]});
  return out;
}

EntitySet line_points(std::vector<double> xs) {
  EntitySet s;
  s.kind = EntityKind::Cell;
  s.n = xs.size();
  s.dim = 1;
  for (double x : xs) {
    s.positions.push_back(x);
    s.positions.push_back(0.0);
    s.features.push_back(x);
  }
  return s;
}

}  // namespace

TEST_CASE("spatial kNN on collinear points, k=1") {
  EntitySet s = line_points({0.0, 1.0, 3.0});
  RelationEdges e = knn_edges(s, {1, KnnSpace::Spatial});
  CHECK(edge_set(e) ==
        std::set<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}, {1, 2}, {2, 1}});
}

TEST_CASE("identical feature vectors select each other") {
  EntitySet s;
  s.kind = EntityKind::Cell;
  s.n = 2;
  s.dim = 3;
  s.positions = {0, 0, 5, 5};
  s.features = {0.7, -0.2, 0.1, 0.7, -0.2, 0.1};
  const auto nn = knn_neighbors(s, {1, KnnSpace::Feature});
  CHECK(nn[0] == std::vector<std::size_t>{1});
  CHECK(nn[1] == std::vector<std::size_t>{0});
}

TEST_CASE("equidistant tie breaks toward the lower index") {
  EntitySet s = line_points({0.0, 2.0, 4.0});
  const auto nn = knn_neighbors(s, {1, KnnSpace::Feature});
  CHECK(nn[1] == std::vector<std::size_t>{0});  // |0-2| == |4-2|
}

TEST_CASE("k >= n is rejected with the required node count") {
  EntitySet s = line_points({0.0, 1.0});
  CHECK_THROWS_WITH_AS(knn_edges(s, {2, KnnSpace::Spatial}),
                       "knn: k = 2 requires at least 3 nodes, got 2", std::invalid_argument);
}

TEST_CASE("two nodes, k=1 is the mutual pair") {
  EntitySet s = line_points({0.0, 9.0});
  CHECK(edge_set(brute_force_knn(s, {1, KnnSpace::Spatial})) ==
        std::set<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}});
}

TEST_CASE("knn_edges equals the exhaustive oracle") {
  Rng rng(7);
  for (std::size_t n : {5, 20, 50}) {
    for (std::size_t k : {1, 3}) {
      if (k >= n) continue;
      for (KnnSpace space : {KnnSpace::Feature, KnnSpace::Spatial}) {
        for (int seed_trial = 0; seed_trial < 20; ++seed_trial) {
          EntitySet s = random_entities(rng, n, 6, EntityKind::Cell);
          const KnnConfig cfg{k, space};
          CHECK(edge_set(knn_edges(s, cfg)) == edge_set(brute_force_knn(s, cfg)));
        }
      }
    }
  }
}

TEST_CASE("degree properties around symmetrization") {
  Rng rng(8);
  const std::size_t n = 30, k = 4;
  EntitySet s = random_entities(rng, n, 5, EntityKind::Cell);
  const auto nn = knn_neighbors(s, {k, KnnSpace::Feature});
  for (const auto& lst : nn) CHECK(lst.size() == k);  // in-degree before symmetrization
  RelationEdges e = knn_edges(s, {k, KnnSpace::Feature});
  std::vector<std::size_t> out_degree(n, 0);
  for (std::size_t i = 0; i < e.size(); ++i) ++out_degree[e.src[i]];
  for (std::size_t i = 0; i < n; ++i) CHECK(out_degree[i] >= k);
  // symmetry
  const auto set = edge_set(e);
  for (const auto& [a, b] : set) CHECK(set.count({b, a}) == 1);
}

TEST_CASE("spatial edges are translation invariant, feature edges scale invariant") {
  Rng rng(9);
  EntitySet s = random_entities(rng, 25, 4, EntityKind::Cell);
  const KnnConfig spatial{3, KnnSpace::Spatial};
  const KnnConfig feature{3, KnnSpace::Feature};
  const auto base_spatial = edge_set(knn_edges(s, spatial));
  const auto base_feature = edge_set(knn_edges(s, feature));
  EntitySet shifted = s;
  for (std::size_t i = 0; i < shifted.positions.size(); i += 2) {
    shifted.positions[i] += 173.25;
    shifted.positions[i + 1] -= 55.5;
  }
  CHECK(edge_set(knn_edges(shifted, spatial)) == base_spatial);
  EntitySet scaled = s;
  for (double& v : scaled.features) v *= 7.5;
  CHECK(edge_set(knn_edges(scaled, feature)) == base_feature);
}

TEST_CASE("assignment edges pass an explicit map through") {
  Rng rng(10);
  EntitySet cells = random_entities(rng, 3, 4, EntityKind::Cell);
  EntitySet tissues = random_entities(rng, 2, 4, EntityKind::Tissue);
  RelationEdges e = assignment_edges(cells, tissues, std::vector<std::size_t>{0, 0, 1});
  CHECK(e.src == std::vector<std::size_t>{0, 1, 2});
  CHECK(e.dst == std::vector<std::size_t>{0, 0, 1});
}

TEST_CASE("assignment edges fall back to the nearest tissue centroid") {
  EntitySet cells;
  cells.kind = EntityKind::Cell;
  cells.n = 2;
  cells.dim = 1;
  cells.positions = {0, 0, 10, 10};
  cells.features = {0, 0};
  EntitySet tissues;
  tissues.kind = EntityKind::Tissue;
  tissues.n = 2;
  tissues.dim = 1;
  tissues.positions = {1, 1, 9, 9};
  tissues.features = {0, 0};
  RelationEdges e = assignment_edges(cells, tissues, std::nullopt);
  CHECK(e.dst == std::vector<std::size_t>{0, 1});
}

TEST_CASE("a single tissue absorbs every cell") {
  Rng rng(11);
  EntitySet cells = random_entities(rng, 5, 3, EntityKind::Cell);
  EntitySet tissues = random_entities(rng, 1, 3, EntityKind::Tissue);
  RelationEdges e = assignment_edges(cells, tissues, std::nullopt);
  REQUIRE(e.size() == 5);
  for (std::size_t d : e.dst) CHECK(d == 0);
}

TEST_CASE("an invalid tissue index in the map is rejected") {
  Rng rng(12);
  EntitySet cells = random_entities(rng, 2, 3, EntityKind::Cell);
  EntitySet tissues = random_entities(rng, 2, 3, EntityKind::Tissue);
  CHECK_THROWS_AS(assignment_edges(cells, tissues, std::vector<std::size_t>{0, 2}),
                  std::invalid_argument);
}

TEST_CASE("build_hetero_graph produces a valid graph and clamps k on tiny node sets") {
  Rng rng(13);
  HeteroGraph g = build_hetero_graph(random_entities(rng, 12, 4, EntityKind::Cell),
                                     random_entities(rng, 3, 4, EntityKind::Tissue), std::nullopt,
                                     EdgeMode::FeatureKnn, 5, 2);
  CHECK(validate(g).empty());
  CHECK(g.label == 2);
  CHECK(!g.tissue_tissue.empty());  // k clamped to 2 rather than rejected
  CHECK(!g.cell_cell.empty());
  CHECK(g.cell_tissue.size() == 12);
}
