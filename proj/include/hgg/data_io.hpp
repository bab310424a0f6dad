#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hgg/graph.hpp"
#include "hgg/layers.hpp"

namespace hgg {

// --- entity tables -----------------------------------------------------------
//
// UTF-8 comma-separated text. Header line `kind,n,d`, then one row per entity:
// `id,x,y,f_1,...,f_d[,tissue_id]`, ids dense 0..n-1. The trailing tissue
// assignment column may appear on cell tables, on every row or none.

struct EntityTable {
  EntitySet entities;
  std::optional<std::vector<std::size_t>> assignment;
};

EntityTable load_entities(const std::string& path);
void save_entities(const std::string& path, const EntitySet& entities,
                   const std::optional<std::vector<std::size_t>>& assignment = std::nullopt);

// --- synthetic dataset --------------------------------------------------------

enum class Split { Train, Val, Test };
const char* split_name(Split s);
std::optional<Split> parse_split(const std::string& s);

/// Planted-signal generator: class c shifts cell features by a separation
/// vector along coordinate c; tissue features are noisy means of their
/// member cells; cells sit spatially clustered around their tissue anchor.
struct SynthSpec {
  std::size_t n_classes = 6;
  std::size_t graphs_per_class = 60;
  std::size_t min_cells = 30;
  std::size_t max_cells = 60;
  std::size_t min_tissues = 5;
  std::size_t max_tissues = 10;
  std::size_t feature_dim = 512;
  double class_separation = 4.0;  // pairwise centroid distance >= this
  double noise = 0.4;
  double cell_spread = 0.05;  // spatial jitter around the assigned tissue
  std::uint64_t seed = 0;
};

struct SynthSample {
  std::string id;
  int label = 0;
  Split split = Split::Train;
  EntitySet cells{.kind = EntityKind::Cell};
  EntitySet tissues{.kind = EntityKind::Tissue};
  std::vector<std::size_t> assignment;  // per cell, tissue index
};

struct SynthDataset {
  SynthSpec spec;
  std::vector<SynthSample> samples;
};

/// Deterministic per seed; the split is stratified 70/15/15 per class.
SynthDataset synth_generate(const SynthSpec& spec);

// --- binary containers ----------------------------------------------------------
//
// Graphs: magic HGG1; checkpoints: magic HGC1. Both follow with a u32 version
// and length-prefixed sections of little-endian payloads; f64 payloads round-trip
// bitwise. Writes are whole-file atomic (temp file + rename).

void save_graph(const std::string& path, const HeteroGraph& g);
HeteroGraph load_graph(const std::string& path);

void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

// --- dataset directories ---------------------------------------------------------

struct ManifestEntry {
  std::string id;
  int label = 0;
  Split split = Split::Train;
};

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

/// manifest.csv plus `<id>.cells.csv` / `<id>.tissues.csv` per sample.
void save_dataset(const std::string& dir, const SynthDataset& ds);

struct EntitySample {
  ManifestEntry meta;
  EntitySet cells{.kind = EntityKind::Cell};
  EntitySet tissues{.kind = EntityKind::Tissue};
  std::optional<std::vector<std::size_t>> assignment;
};

std::vector<EntitySample> load_entity_dir(const std::string& dir);

/// manifest.csv plus `<id>.hgg` per sample.
struct GraphSample {
  ManifestEntry meta;
  HeteroGraph graph;
};

void save_graph_dir(const std::string& dir, const std::vector<GraphSample>& samples);
std::vector<GraphSample> load_graph_dir(const std::string& dir);

}  // namespace hgg
