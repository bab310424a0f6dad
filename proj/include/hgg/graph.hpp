#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace hgg {

enum class EntityKind { Cell, Tissue };

/// Nodes of one type: n spatial positions (x, y) and an n-by-d feature matrix,
/// both row-major.
struct EntitySet {
  EntityKind kind = EntityKind::Cell;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> positions;  // n x 2
  std::vector<double> features;   // n x dim

  double x(std::size_t i) const { return positions[2 * i]; }
  double y(std::size_t i) const { return positions[2 * i + 1]; }
};

enum class Relation { CellCell, TissueTissue, CellTissue };

const char* relation_name(Relation r);

/// Directed edges of one relation as parallel src/dst index lists.
struct RelationEdges {
  Relation relation = Relation::CellCell;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;

  std::size_t size() const { return src.size(); }
  bool empty() const { return src.empty(); }
  void push(std::size_t s, std::size_t d) {
    src.push_back(s);
    dst.push_back(d);
  }
};

/// Two typed node sets plus the three relations connecting them, with an
/// optional graph-level class label.
struct HeteroGraph {
  EntitySet cells{.kind = EntityKind::Cell};
  EntitySet tissues{.kind = EntityKind::Tissue};
  RelationEdges cell_cell{.relation = Relation::CellCell};
  RelationEdges tissue_tissue{.relation = Relation::TissueTissue};
  RelationEdges cell_tissue{.relation = Relation::CellTissue};
  std::optional<int> label;
};

/// Collects every invariant violation in the graph; an empty result means the
/// graph is well-formed. Malformed indices are reported, never followed.
std::vector<std::string> validate(const HeteroGraph& g);

/// Block-diagonal composition of several graphs: node features concatenated,
/// edge indices shifted by per-graph offsets so no edge crosses a graph
/// boundary, per-graph node ranges recoverable from the offset arrays.
struct GraphBatch {
  std::size_t feature_dim = 0;
  std::vector<double> cell_features;    // sum(n_cells) x dim
  std::vector<double> tissue_features;  // sum(n_tissues) x dim
  RelationEdges cell_cell{.relation = Relation::CellCell};
  RelationEdges tissue_tissue{.relation = Relation::TissueTissue};
  RelationEdges cell_tissue{.relation = Relation::CellTissue};
  std::vector<std::size_t> cell_offsets;    // size() + 1 entries
  std::vector<std::size_t> tissue_offsets;  // size() + 1 entries
  std::vector<int> labels;                  // -1 where a graph carries no label

  std::size_t size() const { return labels.size(); }
  std::size_t n_cells() const { return cell_offsets.back(); }
  std::size_t n_tissues() const { return tissue_offsets.back(); }
};

/// Rejects an empty list or mismatched feature dimensions.
GraphBatch make_batch(const std::vector<HeteroGraph>& graphs);

}  // namespace hgg
