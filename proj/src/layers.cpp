#include "hgg/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "hgg/rng.hpp"

namespace hgg {
namespace {

Tensor he_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(cols));
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (double& v : t.mutable_value()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor xavier_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (double& v : t.mutable_value()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }

SageParams make_sage(Rng& rng, std::size_t d_in, std::size_t d_out) {
  SageParams p;
  p.w_self = he_uniform(rng, d_out, d_in);
  p.w_neigh = he_uniform(rng, d_out, d_in);
  p.bias = zeros_param(d_out);
  return p;
}

HeteroLayerParams make_hetero_layer(Rng& rng, std::size_t d_in, std::size_t d_out,
                                    Aggregation agg) {
  HeteroLayerParams p;
  p.cell_cell = make_sage(rng, d_in, d_out);
  p.tissue_tissue = make_sage(rng, d_in, d_out);
  p.cell_tissue = make_sage(rng, d_in, d_out);
  p.aggregation = agg;
  return p;
}

void push_sage(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const SageParams& p) {
  out.emplace_back(prefix + ".w_self", p.w_self);
  out.emplace_back(prefix + ".w_neigh", p.w_neigh);
  out.emplace_back(prefix + ".bias", p.bias);
}

void name_all(std::vector<std::pair<std::string, Tensor>>& params) {
  for (auto& [name, t] : params) t.set_name(name);
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::HG:
      return "hg";
    case Variant::HG_AWA:
      return "hg-awa";
    case Variant::HG_CROSSVIT:
      return "hg-crossvit";
    case Variant::HG_TRANSFORMER:
      return "hg-transformer";
  }
  return "?";
}

std::optional<Variant> parse_variant(const std::string& s) {
  if (s == "hg") return Variant::HG;
  if (s == "hg-awa") return Variant::HG_AWA;
  if (s == "hg-crossvit") return Variant::HG_CROSSVIT;
  if (s == "hg-transformer") return Variant::HG_TRANSFORMER;
  return std::nullopt;
}

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.hidden % cfg.heads != 0)
    throw std::invalid_argument("make_model: hidden width " + std::to_string(cfg.hidden) +
                                " not divisible by " + std::to_string(cfg.heads) + " heads");
  if (cfg.n_classes < 2) throw std::invalid_argument("make_model: need at least 2 classes");
  if (cfg.awa_taps < 2) throw std::invalid_argument("make_model: need at least 2 fusion taps");
  Rng rng(seed);
  Model m;
  m.config = cfg;
  m.layer1 = make_hetero_layer(rng, cfg.in_dim, cfg.hidden, cfg.aggregation);
  m.layer2 = make_hetero_layer(rng, cfg.hidden, cfg.hidden, cfg.aggregation);
  std::size_t mlp_in = 0;
  switch (cfg.variant) {
    case Variant::HG:
      mlp_in = 2 * cfg.hidden;
      break;
    case Variant::HG_AWA: {
      AwaParams awa;
      const double w0 = 1.0 / static_cast<double>(cfg.awa_taps);
      for (std::size_t i = 0; i < cfg.awa_taps; ++i)
        awa.weights.push_back(Tensor::from({1}, {w0}, true));
      m.awa = std::move(awa);
      mlp_in = cfg.hidden;
      break;
    }
    case Variant::HG_TRANSFORMER: {
      TransformerParams t;
      t.heads = cfg.heads;
      t.attn.wq = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      t.attn.wk = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      t.attn.wv = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      t.attn.wo = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      t.attn.bo = zeros_param(cfg.hidden);
      t.ln1_gamma = Tensor::full({cfg.hidden}, 1.0, true);
      t.ln1_beta = zeros_param(cfg.hidden);
      t.ln2_gamma = Tensor::full({cfg.hidden}, 1.0, true);
      t.ln2_beta = zeros_param(cfg.hidden);
      t.ffn_w1 = he_uniform(rng, cfg.ffn_dim, cfg.hidden);
      t.ffn_b1 = zeros_param(cfg.ffn_dim);
      t.ffn_w2 = xavier_uniform(rng, cfg.hidden, cfg.ffn_dim);
      t.ffn_b2 = zeros_param(cfg.hidden);
      m.transformer = std::move(t);
      mlp_in = cfg.hidden;
      break;
    }
    case Variant::HG_CROSSVIT: {
      CrossAttentionParams c;
      c.cell_wq = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      c.cell_wk = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      c.cell_wv = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      c.tissue_wq = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      c.tissue_wk = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      c.tissue_wv = xavier_uniform(rng, cfg.hidden, cfg.hidden);
      m.cross = std::move(c);
      mlp_in = 2 * cfg.hidden;
      break;
    }
  }
  m.mlp.w1 = he_uniform(rng, cfg.mlp_hidden, mlp_in);
  m.mlp.b1 = zeros_param(cfg.mlp_hidden);
  m.mlp.w2 = xavier_uniform(rng, cfg.n_classes, cfg.mlp_hidden);
  m.mlp.b2 = zeros_param(cfg.n_classes);
  auto named = m.named_params();
  name_all(named);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  push_sage(out, "layer1.cell_cell", layer1.cell_cell);
  push_sage(out, "layer1.tissue_tissue", layer1.tissue_tissue);
  push_sage(out, "layer1.cell_tissue", layer1.cell_tissue);
  push_sage(out, "layer2.cell_cell", layer2.cell_cell);
  push_sage(out, "layer2.tissue_tissue", layer2.tissue_tissue);
  push_sage(out, "layer2.cell_tissue", layer2.cell_tissue);
  if (awa)
    for (std::size_t i = 0; i < awa->weights.size(); ++i)
      out.emplace_back("awa.w" + std::to_string(i), awa->weights[i]);
  if (transformer) {
    const TransformerParams& t = *transformer;
    out.emplace_back("transformer.ln1.gamma", t.ln1_gamma);
    out.emplace_back("transformer.ln1.beta", t.ln1_beta);
    out.emplace_back("transformer.attn.wq", t.attn.wq);
    out.emplace_back("transformer.attn.wk", t.attn.wk);
    out.emplace_back("transformer.attn.wv", t.attn.wv);
    out.emplace_back("transformer.attn.wo", t.attn.wo);
    out.emplace_back("transformer.attn.bo", t.attn.bo);
    out.emplace_back("transformer.ln2.gamma", t.ln2_gamma);
    out.emplace_back("transformer.ln2.beta", t.ln2_beta);
    out.emplace_back("transformer.ffn.w1", t.ffn_w1);
    out.emplace_back("transformer.ffn.b1", t.ffn_b1);
    out.emplace_back("transformer.ffn.w2", t.ffn_w2);
    out.emplace_back("transformer.ffn.b2", t.ffn_b2);
  }
  if (cross) {
    const CrossAttentionParams& c = *cross;
    out.emplace_back("cross.cell.wq", c.cell_wq);
    out.emplace_back("cross.cell.wk", c.cell_wk);
    out.emplace_back("cross.cell.wv", c.cell_wv);
    out.emplace_back("cross.tissue.wq", c.tissue_wq);
    out.emplace_back("cross.tissue.wk", c.tissue_wk);
    out.emplace_back("cross.tissue.wv", c.tissue_wv);
  }
  out.emplace_back("mlp.w1", mlp.w1);
  out.emplace_back("mlp.b1", mlp.b1);
  out.emplace_back("mlp.w2", mlp.w2);
  out.emplace_back("mlp.b2", mlp.b2);
  return out;
}

std::vector<Tensor> Model::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

Model clone_model(const Model& m) {
  Model copy = m;
  auto deep = [](Tensor& t) {
    if (t.defined()) t = Tensor::from(t.shape(), t.value(), t.requires_grad()).set_name(t.name());
  };
  auto deep_sage = [&](SageParams& p) {
    deep(p.w_self);
    deep(p.w_neigh);
    deep(p.bias);
  };
  for (HeteroLayerParams* l : {&copy.layer1, &copy.layer2}) {
    deep_sage(l->cell_cell);
    deep_sage(l->tissue_tissue);
    deep_sage(l->cell_tissue);
  }
  if (copy.awa)
    for (Tensor& w : copy.awa->weights) deep(w);
  if (copy.transformer) {
    TransformerParams& t = *copy.transformer;
    for (Tensor* p : {&t.attn.wq, &t.attn.wk, &t.attn.wv, &t.attn.wo, &t.attn.bo, &t.ln1_gamma,
                      &t.ln1_beta, &t.ln2_gamma, &t.ln2_beta, &t.ffn_w1, &t.ffn_b1, &t.ffn_w2,
                      &t.ffn_b2})
      deep(*p);
  }
  if (copy.cross) {
    CrossAttentionParams& c = *copy.cross;
    for (Tensor* p : {&c.cell_wq, &c.cell_wk, &c.cell_wv, &c.tissue_wq, &c.tissue_wk,
                      &c.tissue_wv})
      deep(*p);
  }
  deep(copy.mlp.w1);
  deep(copy.mlp.b1);
  deep(copy.mlp.w2);
  deep(copy.mlp.b2);
  return copy;
}

// ---------------------------------------------------------------------------
// layer ops

Tensor sage_conv_linear(Tape& tape, const RelationEdges& edges, const Tensor& src_feats,
                        const Tensor& dst_feats, const SageParams& p) {
  Tensor neigh = tape.neighbor_mean(src_feats, edges.src, edges.dst, dst_feats.rows());
  return tape.add(tape.linear(dst_feats, p.w_self, p.bias), tape.matmul_nt(neigh, p.w_neigh));
}

Tensor sage_conv(Tape& tape, const RelationEdges& edges, const Tensor& src_feats,
                 const Tensor& dst_feats, const SageParams& p) {
  return tape.relu(sage_conv_linear(tape, edges, src_feats, dst_feats, p));
}

HeteroOut hetero_conv(Tape& tape, const RelationEdges& cell_cell,
                      const RelationEdges& tissue_tissue, const RelationEdges& cell_tissue,
                      const Tensor& cell_feats, const Tensor& tissue_feats,
                      const HeteroLayerParams& p) {
  const std::size_t d_out = p.cell_cell.w_self.rows();
  Tensor cell_z = cell_cell.empty()
                      ? Tensor::zeros({cell_feats.rows(), d_out})
                      : sage_conv_linear(tape, cell_cell, cell_feats, cell_feats, p.cell_cell);
  std::vector<Tensor> parts;
  if (!tissue_tissue.empty())
    parts.push_back(sage_conv_linear(tape, tissue_tissue, tissue_feats, tissue_feats,
                                     p.tissue_tissue));
  if (!cell_tissue.empty())
    parts.push_back(sage_conv_linear(tape, cell_tissue, cell_feats, tissue_feats, p.cell_tissue));
  Tensor tissue_z;
  if (parts.empty())
    tissue_z = Tensor::zeros({tissue_feats.rows(), d_out});
  else if (parts.size() == 1)
    tissue_z = parts[0];
  else {
    tissue_z = tape.add(parts[0], parts[1]);
    if (p.aggregation == Aggregation::Mean) tissue_z = tape.affine(tissue_z, 0.5, 0.0);
  }
  return {tape.relu(cell_z), tape.relu(tissue_z)};
}

HeteroOut hetero_conv(Tape& tape, const HeteroGraph& g, const Tensor& cell_feats,
                      const Tensor& tissue_feats, const HeteroLayerParams& p) {
  return hetero_conv(tape, g.cell_cell, g.tissue_tissue, g.cell_tissue, cell_feats, tissue_feats,
                     p);
}

Tensor awa_fuse(Tape& tape, const AwaParams& p, const std::vector<Tensor>& features) {
  if (features.size() != p.weights.size())
    throw std::invalid_argument("awa_fuse: " + std::to_string(features.size()) +
                                " features for " + std::to_string(p.weights.size()) + " weights");
  if (features.empty()) throw std::invalid_argument("awa_fuse: no features");
  const std::size_t width = features[0].numel();
  for (const Tensor& f : features)
    if (f.rank() != 1 || f.numel() != width)
      throw std::invalid_argument("awa_fuse: feature width mismatch: expected " +
                                  std::to_string(width) + ", got " + std::to_string(f.numel()));
  Tensor acc = tape.mul(p.weights[0], features[0]);
  for (std::size_t i = 1; i < features.size(); ++i)
    acc = tape.add(acc, tape.mul(p.weights[i], features[i]));
  return acc;
}

Tensor build_token_sequence(Tape& tape, const Tensor& cell_feats, const Tensor& tissue_feats) {
  const std::size_t n_cells = cell_feats.rows(), n_tissues = tissue_feats.rows();
  const std::size_t d = cell_feats.cols();
  if (tissue_feats.cols() != d)
    throw std::invalid_argument("build_token_sequence: width mismatch: " + std::to_string(d) +
                                " vs " + std::to_string(tissue_feats.cols()));
  if (n_tissues > n_cells)
    throw std::invalid_argument("build_token_sequence: " + std::to_string(n_tissues) +
                                " tissue nodes exceed " + std::to_string(n_cells) +
                                " cell nodes; tissue tokens can only be padded, not truncated");
  if (n_tissues == n_cells) return tape.concat({cell_feats, tissue_feats}, 0);
  Tensor pad = Tensor::zeros({n_cells - n_tissues, d});
  return tape.concat({cell_feats, tissue_feats, pad}, 0);
}

Tensor multi_head_attention(Tape& tape, const Tensor& x, const AttentionParams& p,
                            std::size_t heads, std::vector<Tensor>* attention_out) {
  const std::size_t d = x.cols();
  if (heads == 0 || d % heads != 0)
    throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) +
                                " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  Tensor q = tape.matmul_nt(x, p.wq);
  Tensor k = tape.matmul_nt(x, p.wk);
  Tensor v = tape.matmul_nt(x, p.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = tape.slice_cols(q, h * dh, dh);
    Tensor kh = tape.slice_cols(k, h * dh, dh);
    Tensor vh = tape.slice_cols(v, h * dh, dh);
    Tensor attn = tape.softmax(tape.affine(tape.matmul_nt(qh, kh), scale, 0.0));
    if (attention_out) attention_out->push_back(attn);
    head_outs.push_back(tape.matmul(attn, vh));
  }
  Tensor merged = heads == 1 ? head_outs[0] : tape.concat(head_outs, 1);
  return tape.linear(merged, p.wo, p.bo);
}

Tensor transformer_encode(Tape& tape, const Tensor& tokens, const TransformerParams& p) {
  if (tokens.cols() != p.ln1_gamma.numel())
    throw std::invalid_argument("transformer_encode: token width " +
                                std::to_string(tokens.cols()) + " does not match model width " +
                                std::to_string(p.ln1_gamma.numel()));
  Tensor normed = tape.layer_norm(tokens, p.ln1_gamma, p.ln1_beta);
  Tensor after_attn = tape.add(tokens, multi_head_attention(tape, normed, p.attn, p.heads));
  Tensor normed2 = tape.layer_norm(after_attn, p.ln2_gamma, p.ln2_beta);
  Tensor hiddenv = tape.relu(tape.linear(normed2, p.ffn_w1, p.ffn_b1));
  Tensor ffn = tape.linear(hiddenv, p.ffn_w2, p.ffn_b2);
  return tape.add(after_attn, ffn);
}

CrossFused cross_attention_fuse(Tape& tape, const Tensor& cell_feats, const Tensor& tissue_feats,
                                const CrossAttentionParams& p) {
  const std::size_t d = cell_feats.cols();
  if (tissue_feats.cols() != d)
    throw std::invalid_argument("cross_attention_fuse: width mismatch: " + std::to_string(d) +
                                " vs " + std::to_string(tissue_feats.cols()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto branch = [&](const Tensor& own, const Tensor& other, const Tensor& wq, const Tensor& wk,
                    const Tensor& wv) {
    Tensor summary = tape.reshape(readout(tape, own), {1, d});
    Tensor query = tape.matmul_nt(summary, wq);
    Tensor keys = tape.matmul_nt(other, wk);
    Tensor values = tape.matmul_nt(other, wv);
    Tensor attn = tape.softmax(tape.affine(tape.matmul_nt(query, keys), scale, 0.0));
    Tensor fused = tape.add(summary, tape.matmul(attn, values));
    return std::pair<Tensor, Tensor>(tape.reshape(fused, {d}), attn);
  };
  auto [cell_summary, cell_attn] =
      branch(cell_feats, tissue_feats, p.cell_wq, p.cell_wk, p.cell_wv);
  auto [tissue_summary, tissue_attn] =
      branch(tissue_feats, cell_feats, p.tissue_wq, p.tissue_wk, p.tissue_wv);
  return {cell_summary, tissue_summary, cell_attn, tissue_attn};
}

Tensor readout(Tape& tape, const Tensor& node_feats) { return tape.mean(node_feats, 0); }

Tensor mlp_forward(Tape& tape, const MlpParams& p, const Tensor& x) {
  Tensor row = tape.reshape(x, {1, x.numel()});
  Tensor hidden = tape.relu(tape.linear(row, p.w1, p.b1));
  Tensor out = tape.linear(hidden, p.w2, p.b2);
  return tape.reshape(out, {out.numel()});
}

// ---------------------------------------------------------------------------
// whole-model forward

Tensor forward_logits(Tape& tape, const Model& m, const HeteroGraph& g) {
  return forward_logits(tape, m, make_batch({g}))[0];
}

std::vector<Tensor> forward_logits(Tape& tape, const Model& m, const GraphBatch& b) {
  if (b.feature_dim != m.config.in_dim)
    throw std::invalid_argument("forward: feature width " + std::to_string(b.feature_dim) +
                                " does not match model input width " +
                                std::to_string(m.config.in_dim));
  Tensor cf0 = Tensor::from({b.n_cells(), b.feature_dim}, b.cell_features);
  Tensor tf0 = Tensor::from({b.n_tissues(), b.feature_dim}, b.tissue_features);
  HeteroOut l1 = hetero_conv(tape, b.cell_cell, b.tissue_tissue, b.cell_tissue, cf0, tf0,
                             m.layer1);
  HeteroOut l2 = hetero_conv(tape, b.cell_cell, b.tissue_tissue, b.cell_tissue, l1.cells,
                             l1.tissues, m.layer2);
  std::vector<Tensor> logits;
  logits.reserve(b.size());
  for (std::size_t gi = 0; gi < b.size(); ++gi) {
    const std::size_t c0 = b.cell_offsets[gi], cn = b.cell_offsets[gi + 1] - c0;
    const std::size_t t0 = b.tissue_offsets[gi], tn = b.tissue_offsets[gi + 1] - t0;
    Tensor c2 = tape.slice_rows(l2.cells, c0, cn);
    Tensor t2 = tape.slice_rows(l2.tissues, t0, tn);
    Tensor head;
    switch (m.config.variant) {
      case Variant::HG:
        head = tape.concat({readout(tape, c2), readout(tape, t2)}, 0);
        break;
      case Variant::HG_AWA: {
        Tensor c1 = tape.slice_rows(l1.cells, c0, cn);
        Tensor t1 = tape.slice_rows(l1.tissues, t0, tn);
        head = awa_fuse(tape, *m.awa,
                        {readout(tape, c1), readout(tape, t1), readout(tape, c2),
                         readout(tape, t2)});
        break;
      }
      case Variant::HG_TRANSFORMER: {
        Tensor tokens = build_token_sequence(tape, c2, t2);
        head = readout(tape, transformer_encode(tape, tokens, *m.transformer));
        break;
      }
      case Variant::HG_CROSSVIT: {
        CrossFused fused = cross_attention_fuse(tape, c2, t2, *m.cross);
        head = tape.concat({fused.cell_summary, fused.tissue_summary}, 0);
        break;
      }
    }
    logits.push_back(mlp_forward(tape, m.mlp, head));
  }
  return logits;
}

}  // namespace hgg
