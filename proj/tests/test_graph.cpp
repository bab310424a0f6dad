#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <string>

#include "hgg/graph.hpp"
#include "hgg/rng.hpp"
#include "test_util.hpp"

using namespace hgg;
using namespace hggtest;

namespace {

bool mentions(const std::vector<std::string>& violations, const std::string& needle) {
  return std::any_of(violations.begin(), violations.end(), [&](const std::string& v) {
    return v.find(needle) != std::string::npos;
  });
}

HeteroGraph small_graph() {
  Rng rng(42);
  return random_graph(rng, 3, 1, 4, 1);
}

}  // namespace

TEST_CASE("validate passes a well-formed graph") {
  CHECK(validate(small_graph()).empty());
}

TEST_CASE("validate reports an out-of-range destination") {
  HeteroGraph g = small_graph();
  g.cell_tissue.push(0, g.tissues.n);  // one past the end
  const auto v = validate(g);
  CHECK(mentions(v, "out of range"));
}

TEST_CASE("validate reports duplicate edges") {
  HeteroGraph g = small_graph();
  REQUIRE(g.cell_cell.size() >= 1);
  g.cell_cell.push(g.cell_cell.src[0], g.cell_cell.dst[0]);
  CHECK(mentions(validate(g), "duplicate edge"));
}

TEST_CASE("validate reports self-loops in intra-type relations") {
  HeteroGraph g = small_graph();
  g.tissue_tissue.push(0, 0);
  CHECK(mentions(validate(g), "self-loop"));
}

TEST_CASE("validate collects every violation, not just the first") {
  HeteroGraph g = small_graph();
  g.cell_cell.push(0, 0);                    // self-loop
  g.cell_cell.push(g.cells.n + 5, 1);        // out of range
  g.cell_tissue.push(0, g.tissues.n);        // out of range
  g.cells.features[0] = std::nan("");        // non-finite
  const auto v = validate(g);
  CHECK(v.size() >= 4);
  CHECK(mentions(v, "self-loop"));
  CHECK(mentions(v, "out of range"));
  CHECK(mentions(v, "non-finite"));
}

TEST_CASE("validate is total on malformed indices") {
  HeteroGraph g;
  g.cells.n = 2;
  g.cells.dim = 1;  // positions/features missing entirely
  g.cell_cell.push(7, 9);
  CHECK_NOTHROW(validate(g));
  CHECK(!validate(g).empty());
}

TEST_CASE("make_batch rejects an empty list") {
  CHECK_THROWS_AS(make_batch({}), std::invalid_argument);
}

TEST_CASE("make_batch rejects mismatched feature dimensions") {
  Rng rng(1);
  HeteroGraph a = random_graph(rng, 3, 1, 4, 1);
  HeteroGraph b = random_graph(rng, 3, 1, 6, 1);
  CHECK_THROWS_AS(make_batch({a, b}), std::invalid_argument);
}

TEST_CASE("batched edges never cross graph boundaries") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<HeteroGraph> graphs;
    const std::size_t n_graphs = 2 + rng.below(4);
    for (std::size_t i = 0; i < n_graphs; ++i)
      graphs.push_back(random_graph(rng, 3 + rng.below(6), 1 + rng.below(3), 5, 2,
                                    static_cast<int>(i)));
    GraphBatch b = make_batch(graphs);
    REQUIRE(b.size() == n_graphs);
    CHECK(b.labels.back() == static_cast<int>(n_graphs - 1));
    auto range_of = [](const std::vector<std::size_t>& offsets, std::size_t node) {
      std::size_t g = 0;
      while (offsets[g + 1] <= node) ++g;
      return g;
    };
    for (std::size_t e = 0; e < b.cell_cell.size(); ++e)
      CHECK(range_of(b.cell_offsets, b.cell_cell.src[e]) ==
            range_of(b.cell_offsets, b.cell_cell.dst[e]));
    for (std::size_t e = 0; e < b.tissue_tissue.size(); ++e)
      CHECK(range_of(b.tissue_offsets, b.tissue_tissue.src[e]) ==
            range_of(b.tissue_offsets, b.tissue_tissue.dst[e]));
    for (std::size_t e = 0; e < b.cell_tissue.size(); ++e)
      CHECK(range_of(b.cell_offsets, b.cell_tissue.src[e]) ==
            range_of(b.tissue_offsets, b.cell_tissue.dst[e]));
    // node counts recoverable from offsets
    std::size_t cells = 0, tissues = 0;
    for (const auto& g : graphs) {
      cells += g.cells.n;
      tissues += g.tissues.n;
    }
    CHECK(b.n_cells() == cells);
    CHECK(b.n_tissues() == tissues);
  }
}
