#include "hgg/graph.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace hgg {
namespace {

void check_entity_set(const EntitySet& s, const char* what, std::vector<std::string>& out) {
  if (s.n < 1) out.push_back(std::string(what) + ": at least one node required");
  if (s.positions.size() != 2 * s.n)
    out.push_back(std::string(what) + ": expected " + std::to_string(2 * s.n) +
                  " position values, got " + std::to_string(s.positions.size()));
  if (s.features.size() != s.n * s.dim)
    out.push_back(std::string(what) + ": expected " + std::to_string(s.n * s.dim) +
                  " feature values, got " + std::to_string(s.features.size()));
  for (double v : s.features)
    if (!std::isfinite(v)) {
      out.push_back(std::string(what) + ": non-finite feature value");
      break;
    }
}

void check_edges(const RelationEdges& e, std::size_t n_src, std::size_t n_dst, bool intra,
                 std::vector<std::string>& out) {
  const char* name = relation_name(e.relation);
  if (e.src.size() != e.dst.size()) {
    out.push_back(std::string(name) + ": src/dst lists differ in length");
    return;
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < e.src.size(); ++i) {
    const std::size_t s = e.src[i], d = e.dst[i];
    if (s >= n_src)
      out.push_back(std::string(name) + ": src index " + std::to_string(s) +
                    " out of range (edge " + std::to_string(i) + ")");
    if (d >= n_dst)
      out.push_back(std::string(name) + ": dst index " + std::to_string(d) +
                    " out of range (edge " + std::to_string(i) + ")");
    if (intra && s == d)
      out.push_back(std::string(name) + ": self-loop at node " + std::to_string(s));
    if (!seen.insert({s, d}).second)
      out.push_back(std::string(name) + ": duplicate edge (" + std::to_string(s) + ", " +
                    std::to_string(d) + ")");
  }
}

}  // namespace

const char* relation_name(Relation r) {
  switch (r) {
    case Relation::CellCell:
      return "cell->cell";
    case Relation::TissueTissue:
      return "tissue->tissue";
    case Relation::CellTissue:
      return "cell->tissue";
  }
  return "?";
}

std::vector<std::string> validate(const HeteroGraph& g) {
  std::vector<std::string> out;
  check_entity_set(g.cells, "cells", out);
  check_entity_set(g.tissues, "tissues", out);
  if (g.cell_cell.relation != Relation::CellCell ||
      g.tissue_tissue.relation != Relation::TissueTissue ||
      g.cell_tissue.relation != Relation::CellTissue)
    out.push_back("relation tags do not match their slots");
  check_edges(g.cell_cell, g.cells.n, g.cells.n, true, out);
  check_edges(g.tissue_tissue, g.tissues.n, g.tissues.n, true, out);
  check_edges(g.cell_tissue, g.cells.n, g.tissues.n, false, out);
  return out;
}

GraphBatch make_batch(const std::vector<HeteroGraph>& graphs) {
  if (graphs.empty()) throw std::invalid_argument("make_batch: empty graph list");
  GraphBatch b;
  b.feature_dim = graphs[0].cells.dim;
  b.cell_offsets.push_back(0);
  b.tissue_offsets.push_back(0);
  for (const HeteroGraph& g : graphs) {
    if (g.cells.dim != b.feature_dim || g.tissues.dim != b.feature_dim)
      throw std::invalid_argument(
          "make_batch: feature dimension mismatch: expected " + std::to_string(b.feature_dim) +
          ", got cells " + std::to_string(g.cells.dim) + " / tissues " +
          std::to_string(g.tissues.dim));
    const std::size_t c0 = b.cell_offsets.back();
    const std::size_t t0 = b.tissue_offsets.back();
    b.cell_features.insert(b.cell_features.end(), g.cells.features.begin(),
                           g.cells.features.end());
    b.tissue_features.insert(b.tissue_features.end(), g.tissues.features.begin(),
                             g.tissues.features.end());
    for (std::size_t i = 0; i < g.cell_cell.size(); ++i)
      b.cell_cell.push(g.cell_cell.src[i] + c0, g.cell_cell.dst[i] + c0);
    for (std::size_t i = 0; i < g.tissue_tissue.size(); ++i)
      b.tissue_tissue.push(g.tissue_tissue.src[i] + t0, g.tissue_tissue.dst[i] + t0);
    for (std::size_t i = 0; i < g.cell_tissue.size(); ++i)
      b.cell_tissue.push(g.cell_tissue.src[i] + c0, g.cell_tissue.dst[i] + t0);
    b.cell_offsets.push_back(c0 + g.cells.n);
    b.tissue_offsets.push_back(t0 + g.tissues.n);
    b.labels.push_back(g.label.value_or(-1));
  }
  return b;
}

}  // namespace hgg
