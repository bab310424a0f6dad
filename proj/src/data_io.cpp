#include "hgg/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hgg/rng.hpp"

namespace fs = std::filesystem;

namespace hgg {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void io_fail(const std::string& path, const std::string& msg) {
  throw std::runtime_error(path + ": " + msg);
}

[[noreturn]] void line_fail(const std::string& path, std::size_t line, const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& s, const std::string& path, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    line_fail(path, line, "cannot parse number '" + s + "'");
  return v;
}

long long parse_int(const std::string& s, const std::string& path, std::size_t line) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    line_fail(path, line, "cannot parse integer '" + s + "'");
  return v;
}

void atomic_write(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_fail(tmp, "cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) io_fail(tmp, "write failed");
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// binary buffer helpers

struct ByteWriter {
  std::string buf;
  void u32(std::uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
  void u64(std::uint64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
  void i64(std::int64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
  void f64s(const std::vector<double>& v) {
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * 8);
  }
  void u64s(const std::vector<std::size_t>& v) {
    for (std::size_t x : v) u64(x);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf.append(s);
  }
};

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) {
    if (pos + n > buf.size()) io_fail(path, "unexpected end of file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::int64_t i64() {
    need(8);
    std::int64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::vector<double> f64s(std::size_t n) {
    need(n * 8);
    std::vector<double> v(n);
    std::memcpy(v.data(), buf.data() + pos, n * 8);
    pos += n * 8;
    return v;
  }
  std::vector<std::size_t> u64s(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::size_t>(u64());
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void write_section(ByteWriter& out, std::uint32_t tag, const std::string& payload) {
  out.u32(tag);
  out.u64(payload.size());
  out.buf.append(payload);
}

std::string read_section(ByteReader& in, std::uint32_t expected_tag) {
  const std::uint32_t tag = in.u32();
  if (tag != expected_tag)
    io_fail(in.path, "unexpected section tag " + std::to_string(tag) + ", expected " +
                         std::to_string(expected_tag));
  const std::uint64_t len = in.u64();
  in.need(len);
  std::string payload = in.buf.substr(in.pos, len);
  in.pos += len;
  return payload;
}

std::string entity_payload(const EntitySet& s) {
  ByteWriter w;
  w.u64(s.n);
  w.u64(s.dim);
  w.f64s(s.positions);
  w.f64s(s.features);
  return std::move(w.buf);
}

EntitySet entity_from_payload(const std::string& payload, EntityKind kind,
                              const std::string& path) {
  ByteReader r{payload, 0, path};
  EntitySet s;
  s.kind = kind;
  s.n = static_cast<std::size_t>(r.u64());
  s.dim = static_cast<std::size_t>(r.u64());
  s.positions = r.f64s(2 * s.n);
  s.features = r.f64s(s.n * s.dim);
  if (r.pos != payload.size()) io_fail(path, "trailing bytes in entity section");
  return s;
}

std::string edges_payload(const RelationEdges& e) {
  ByteWriter w;
  w.u64(e.size());
  w.u64s(e.src);
  w.u64s(e.dst);
  return std::move(w.buf);
}

RelationEdges edges_from_payload(const std::string& payload, Relation rel,
                                 const std::string& path) {
  ByteReader r{payload, 0, path};
  RelationEdges e;
  e.relation = rel;
  const std::size_t m = static_cast<std::size_t>(r.u64());
  e.src = r.u64s(m);
  e.dst = r.u64s(m);
  if (r.pos != payload.size()) io_fail(path, "trailing bytes in edge section");
  return e;
}

constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// entity tables

void save_entities(const std::string& path, const EntitySet& entities,
                   const std::optional<std::vector<std::size_t>>& assignment) {
  if (assignment && assignment->size() != entities.n)
    throw std::invalid_argument("save_entities: assignment has " +
                                std::to_string(assignment->size()) + " entries for " +
                                std::to_string(entities.n) + " entities");
  std::string out = entities.kind == EntityKind::Cell ? "cell" : "tissue";
  out += "," + std::to_string(entities.n) + "," + std::to_string(entities.dim) + "\n";
  for (std::size_t i = 0; i < entities.n; ++i) {
    out += std::to_string(i);
    out += "," + fmt_double(entities.x(i)) + "," + fmt_double(entities.y(i));
    for (std::size_t j = 0; j < entities.dim; ++j)
      out += "," + fmt_double(entities.features[i * entities.dim + j]);
    if (assignment) out += "," + std::to_string((*assignment)[i]);
    out += "\n";
  }
  atomic_write(path, out);
}

EntityTable load_entities(const std::string& path) {
  std::ifstream in(path);
  if (!in) io_fail(path, "cannot open");
  std::string line;
  if (!std::getline(in, line)) io_fail(path, "empty file");
  auto header = split_commas(line);
  if (header.size() != 3) line_fail(path, 1, "header must be kind,n,d");
  EntityTable table;
  if (header[0] == "cell")
    table.entities.kind = EntityKind::Cell;
  else if (header[0] == "tissue")
    table.entities.kind = EntityKind::Tissue;
  else
    line_fail(path, 1, "unknown entity kind '" + header[0] + "'");
  const std::size_t n = static_cast<std::size_t>(parse_int(header[1], path, 1));
  const std::size_t d = static_cast<std::size_t>(parse_int(header[2], path, 1));
  if (n == 0) line_fail(path, 1, "entity count must be positive");
  table.entities.n = n;
  table.entities.dim = d;
  table.entities.positions.reserve(2 * n);
  table.entities.features.reserve(n * d);
  bool has_assignment = false;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_commas(line);
    if (row == 0) has_assignment = fields.size() == d + 4;
    const std::size_t expected = d + 3 + (has_assignment ? 1 : 0);
    if (fields.size() != expected)
      line_fail(path, line_no, "expected " + std::to_string(expected) + " fields, got " +
                                   std::to_string(fields.size()));
    if (row >= n) line_fail(path, line_no, "more rows than the declared " + std::to_string(n));
    const long long id = parse_int(fields[0], path, line_no);
    if (id != static_cast<long long>(row))
      line_fail(path, line_no, "ids must be dense and ascending: expected " +
                                   std::to_string(row) + ", got " + std::to_string(id));
    for (std::size_t f = 1; f < d + 3; ++f) {
      const double v = parse_double(fields[f], path, line_no);
      if (!std::isfinite(v)) line_fail(path, line_no, "non-finite value '" + fields[f] + "'");
      if (f <= 2)
        table.entities.positions.push_back(v);
      else
        table.entities.features.push_back(v);
    }
    if (has_assignment) {
      if (!table.assignment) table.assignment.emplace();
      const long long t = parse_int(fields[d + 3], path, line_no);
      if (t < 0) line_fail(path, line_no, "negative tissue assignment");
      table.assignment->push_back(static_cast<std::size_t>(t));
    }
    ++row;
  }
  if (row != n)
    io_fail(path, "declared " + std::to_string(n) + " rows, found " + std::to_string(row));
  return table;
}

// ---------------------------------------------------------------------------
// synthetic data

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

SynthDataset synth_generate(const SynthSpec& spec) {
  if (spec.n_classes < 2) throw std::invalid_argument("synth_generate: need at least 2 classes");
  if (spec.graphs_per_class == 0)
    throw std::invalid_argument("synth_generate: need at least one graph per class");
  if (spec.min_cells == 0 || spec.min_tissues == 0 || spec.min_cells > spec.max_cells ||
      spec.min_tissues > spec.max_tissues)
    throw std::invalid_argument("synth_generate: malformed cell/tissue count ranges");
  if (spec.max_tissues > spec.max_cells)
    throw std::invalid_argument(
        "synth_generate: infeasible spec: tissue count range [" +
        std::to_string(spec.min_tissues) + ", " + std::to_string(spec.max_tissues) +
        "] can exceed the cell count range, but every graph needs at least as many cells as "
        "tissues");
  if (spec.feature_dim < spec.n_classes)
    throw std::invalid_argument("synth_generate: feature_dim must be >= n_classes");
  if (spec.noise < 0.0 || spec.class_separation < 0.0)
    throw std::invalid_argument("synth_generate: negative noise or separation");

  Rng rng(spec.seed);
  SynthDataset ds;
  ds.spec = spec;
  std::size_t next_id = 0;
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t g = 0; g < spec.graphs_per_class; ++g) {
      SynthSample sample;
      char idbuf[16];
      std::snprintf(idbuf, sizeof(idbuf), "g%04zu", next_id++);
      sample.id = idbuf;
      sample.label = static_cast<int>(c);

      const std::size_t n_t =
          spec.min_tissues + static_cast<std::size_t>(rng.below(spec.max_tissues - spec.min_tissues + 1));
      const std::size_t lo_c = std::max(spec.min_cells, n_t);
      const std::size_t n_c =
          lo_c + static_cast<std::size_t>(rng.below(spec.max_cells - lo_c + 1));

      sample.tissues.n = n_t;
      sample.tissues.dim = spec.feature_dim;
      sample.tissues.positions.resize(2 * n_t);
      for (double& v : sample.tissues.positions) v = rng.uniform();

      // round-robin base assignment keeps every tissue non-empty
      sample.assignment.resize(n_c);
      for (std::size_t i = 0; i < n_c; ++i) sample.assignment[i] = i % n_t;
      rng.shuffle(sample.assignment);

      sample.cells.n = n_c;
      sample.cells.dim = spec.feature_dim;
      sample.cells.positions.resize(2 * n_c);
      for (std::size_t i = 0; i < n_c; ++i) {
        const std::size_t t = sample.assignment[i];
        sample.cells.positions[2 * i] = sample.tissues.x(t) + spec.cell_spread * rng.normal();
        sample.cells.positions[2 * i + 1] = sample.tissues.y(t) + spec.cell_spread * rng.normal();
      }
      sample.cells.features.resize(n_c * spec.feature_dim);
      for (std::size_t i = 0; i < n_c; ++i) {
        double* row = sample.cells.features.data() + i * spec.feature_dim;
        for (std::size_t j = 0; j < spec.feature_dim; ++j) row[j] = spec.noise * rng.normal();
        row[c] += spec.class_separation;
      }
      // tissue features: noisy means of member cells
      sample.tissues.features.assign(n_t * spec.feature_dim, 0.0);
      std::vector<double> counts(n_t, 0.0);
      for (std::size_t i = 0; i < n_c; ++i) {
        const std::size_t t = sample.assignment[i];
        counts[t] += 1.0;
        const double* row = sample.cells.features.data() + i * spec.feature_dim;
        double* trow = sample.tissues.features.data() + t * spec.feature_dim;
        for (std::size_t j = 0; j < spec.feature_dim; ++j) trow[j] += row[j];
      }
      for (std::size_t t = 0; t < n_t; ++t) {
        double* trow = sample.tissues.features.data() + t * spec.feature_dim;
        for (std::size_t j = 0; j < spec.feature_dim; ++j)
          trow[j] = trow[j] / counts[t] + spec.noise * rng.normal();
      }
      ds.samples.push_back(std::move(sample));
    }
  }
  // stratified 70/15/15
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      if (ds.samples[i].label == static_cast<int>(c)) idx.push_back(i);
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    const std::size_t n_test = n * 15 / 100;
    const std::size_t n_val = n * 15 / 100;
    for (std::size_t i = 0; i < n; ++i) {
      Split s = Split::Train;
      if (i < n_test)
        s = Split::Test;
      else if (i < n_test + n_val)
        s = Split::Val;
      ds.samples[idx[i]].split = s;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// binary containers

void save_graph(const std::string& path, const HeteroGraph& g) {
  ByteWriter out;
  out.buf.append("HGG1");
  out.u32(kFormatVersion);
  write_section(out, 1, entity_payload(g.cells));
  write_section(out, 2, entity_payload(g.tissues));
  write_section(out, 3, edges_payload(g.cell_cell));
  write_section(out, 4, edges_payload(g.tissue_tissue));
  write_section(out, 5, edges_payload(g.cell_tissue));
  ByteWriter label;
  label.i64(g.label ? *g.label : -1);
  write_section(out, 6, label.buf);
  atomic_write(path, out.buf);
}

HeteroGraph load_graph(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader in{data, 0, path};
  in.need(4);
  if (data.compare(0, 4, "HGG1") != 0) io_fail(path, "bad magic, not a graph file");
  in.pos = 4;
  const std::uint32_t version = in.u32();
  if (version != kFormatVersion)
    io_fail(path, "unsupported version " + std::to_string(version));
  HeteroGraph g;
  g.cells = entity_from_payload(read_section(in, 1), EntityKind::Cell, path);
  g.tissues = entity_from_payload(read_section(in, 2), EntityKind::Tissue, path);
  g.cell_cell = edges_from_payload(read_section(in, 3), Relation::CellCell, path);
  g.tissue_tissue = edges_from_payload(read_section(in, 4), Relation::TissueTissue, path);
  g.cell_tissue = edges_from_payload(read_section(in, 5), Relation::CellTissue, path);
  {
    const std::string payload = read_section(in, 6);
    ByteReader lr{payload, 0, path};
    const std::int64_t label = lr.i64();
    if (label >= 0) g.label = static_cast<int>(label);
  }
  if (in.pos != data.size()) io_fail(path, "trailing data");
  const auto violations = validate(g);
  if (!violations.empty()) io_fail(path, "invalid graph: " + violations.front());
  return g;
}

void save_checkpoint(const std::string& path, const Model& m) {
  ByteWriter out;
  out.buf.append("HGC1");
  out.u32(kFormatVersion);
  ByteWriter cfg;
  cfg.u32(static_cast<std::uint32_t>(m.config.variant));
  cfg.u64(m.config.n_classes);
  cfg.u64(m.config.in_dim);
  cfg.u64(m.config.hidden);
  cfg.u64(m.config.heads);
  cfg.u64(m.config.ffn_dim);
  cfg.u64(m.config.mlp_hidden);
  cfg.u64(m.config.awa_taps);
  cfg.u32(static_cast<std::uint32_t>(m.config.aggregation));
  write_section(out, 1, cfg.buf);
  ByteWriter params;
  const auto named = m.named_params();
  params.u64(named.size());
  for (const auto& [name, t] : named) {
    params.str(name);
    params.u64(t.rank());
    for (std::size_t d : t.shape()) params.u64(d);
    params.f64s(t.value());
  }
  write_section(out, 2, params.buf);
  atomic_write(path, out.buf);
}

Model load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader in{data, 0, path};
  in.need(4);
  if (data.compare(0, 4, "HGC1") != 0) io_fail(path, "bad magic, not a checkpoint file");
  in.pos = 4;
  const std::uint32_t version = in.u32();
  if (version != kFormatVersion)
    io_fail(path, "unsupported version " + std::to_string(version));
  const std::string cfg_payload = read_section(in, 1);
  ByteReader cfg{cfg_payload, 0, path};
  ModelConfig mc;
  const std::uint32_t variant = cfg.u32();
  if (variant > 3) io_fail(path, "unknown variant tag " + std::to_string(variant));
  mc.variant = static_cast<Variant>(variant);
  mc.n_classes = static_cast<std::size_t>(cfg.u64());
  mc.in_dim = static_cast<std::size_t>(cfg.u64());
  mc.hidden = static_cast<std::size_t>(cfg.u64());
  mc.heads = static_cast<std::size_t>(cfg.u64());
  mc.ffn_dim = static_cast<std::size_t>(cfg.u64());
  mc.mlp_hidden = static_cast<std::size_t>(cfg.u64());
  mc.awa_taps = static_cast<std::size_t>(cfg.u64());
  const std::uint32_t agg = cfg.u32();
  if (agg > 1) io_fail(path, "unknown aggregation tag " + std::to_string(agg));
  mc.aggregation = static_cast<Aggregation>(agg);

  Model m = make_model(mc, 0);
  const std::string params_payload = read_section(in, 2);
  if (in.pos != data.size()) io_fail(path, "trailing data");
  ByteReader pr{params_payload, 0, path};
  const std::uint64_t count = pr.u64();
  auto named = m.named_params();
  if (count != named.size())
    io_fail(path, "checkpoint has " + std::to_string(count) + " parameters, model wants " +
                      std::to_string(named.size()));
  for (auto& [name, t] : named) {
    const std::string stored = pr.str();
    if (stored != name)
      io_fail(path, "checkpoint parameter '" + stored + "' where '" + name + "' was expected");
    const std::size_t rank = static_cast<std::size_t>(pr.u64());
    std::vector<std::size_t> shape(rank);
    for (std::size_t d = 0; d < rank; ++d) shape[d] = static_cast<std::size_t>(pr.u64());
    if (shape != t.shape()) io_fail(path, "shape mismatch for parameter '" + name + "'");
    t.mutable_value() = pr.f64s(t.numel());
  }
  if (pr.pos != params_payload.size()) io_fail(path, "trailing bytes in parameter section");
  return m;
}

// ---------------------------------------------------------------------------
// dataset directories

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::string out = "id,label,split\n";
  for (const auto& e : entries)
    out += e.id + "," + std::to_string(e.label) + "," + split_name(e.split) + "\n";
  atomic_write(path, out);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) io_fail(path, "cannot open");
  std::string line;
  if (!std::getline(in, line) || line != "id,label,split")
    io_fail(path, "manifest must start with 'id,label,split'");
  std::vector<ManifestEntry> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_commas(line);
    if (fields.size() != 3) line_fail(path, line_no, "expected id,label,split");
    ManifestEntry e;
    e.id = fields[0];
    const long long label = parse_int(fields[1], path, line_no);
    if (label < 0) line_fail(path, line_no, "negative label");
    e.label = static_cast<int>(label);
    auto split = parse_split(fields[2]);
    if (!split) line_fail(path, line_no, "unknown split '" + fields[2] + "'");
    e.split = *split;
    out.push_back(std::move(e));
  }
  return out;
}

void save_dataset(const std::string& dir, const SynthDataset& ds) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> manifest;
  for (const SynthSample& s : ds.samples) {
    manifest.push_back({s.id, s.label, s.split});
    save_entities(dir + "/" + s.id + ".cells.csv", s.cells, s.assignment);
    save_entities(dir + "/" + s.id + ".tissues.csv", s.tissues);
  }
  save_manifest(dir + "/manifest.csv", manifest);
}

std::vector<EntitySample> load_entity_dir(const std::string& dir) {
  auto manifest = load_manifest(dir + "/manifest.csv");
  std::vector<EntitySample> out;
  out.reserve(manifest.size());
  for (const ManifestEntry& e : manifest) {
    EntitySample s;
    s.meta = e;
    EntityTable cells = load_entities(dir + "/" + e.id + ".cells.csv");
    EntityTable tissues = load_entities(dir + "/" + e.id + ".tissues.csv");
    if (cells.entities.kind != EntityKind::Cell)
      io_fail(dir + "/" + e.id + ".cells.csv", "expected kind cell");
    if (tissues.entities.kind != EntityKind::Tissue)
      io_fail(dir + "/" + e.id + ".tissues.csv", "expected kind tissue");
    s.cells = std::move(cells.entities);
    s.tissues = std::move(tissues.entities);
    s.assignment = std::move(cells.assignment);
    out.push_back(std::move(s));
  }
  return out;
}

void save_graph_dir(const std::string& dir, const std::vector<GraphSample>& samples) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> manifest;
  for (const GraphSample& s : samples) {
    manifest.push_back(s.meta);
    save_graph(dir + "/" + s.meta.id + ".hgg", s.graph);
  }
  save_manifest(dir + "/manifest.csv", manifest);
}

std::vector<GraphSample> load_graph_dir(const std::string& dir) {
  auto manifest = load_manifest(dir + "/manifest.csv");
  std::vector<GraphSample> out;
  out.reserve(manifest.size());
  for (const ManifestEntry& e : manifest) {
    GraphSample s;
    s.meta = e;
    s.graph = load_graph(dir + "/" + e.id + ".hgg");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hgg
