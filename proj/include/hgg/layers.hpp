#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hgg/graph.hpp"
#include "hgg/tensor.hpp"

namespace hgg {

/// One GraphSage relation convolution: self transform plus mean of neighbor
/// transforms, h' = relu(W_self h + W_neigh mean_neigh + b).
struct SageParams {
  Tensor w_self;   // d_out x d_in
  Tensor w_neigh;  // d_out x d_in
  Tensor bias;     // d_out
};

enum class Aggregation { Sum, Mean };

/// One heterogeneous layer: a SageParams per relation, plus how messages from
/// several relations landing on the same target node are combined.
struct HeteroLayerParams {
  SageParams cell_cell;
  SageParams tissue_tissue;
  SageParams cell_tissue;
  Aggregation aggregation = Aggregation::Sum;
};

/// Learned scalar weight per fused feature level.
struct AwaParams {
  std::vector<Tensor> weights;  // each shape {1}
};

// Q/K/V projections carry no bias: a key bias shifts every attention score in
// a row by the same amount, which softmax cancels exactly, so it could never
// train. Only the output projection keeps one.
struct AttentionParams {
  Tensor wq, wk, wv, wo, bo;
};

struct TransformerParams {
  AttentionParams attn;
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  std::size_t heads = 4;
};

/// Branch-exchange fusion: each branch's summary token queries the other
/// branch's node tokens through single-head scaled dot-product attention.
/// Unbiased projections, as in AttentionParams.
struct CrossAttentionParams {
  Tensor cell_wq, cell_wk, cell_wv;
  Tensor tissue_wq, tissue_wk, tissue_wv;
};

struct MlpParams {
  Tensor w1, b1, w2, b2;
};

enum class Variant { HG, HG_AWA, HG_CROSSVIT, HG_TRANSFORMER };

const char* variant_name(Variant v);
std::optional<Variant> parse_variant(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::HG;
  std::size_t n_classes = 2;
  std::size_t in_dim = 512;
  std::size_t hidden = 256;
  std::size_t heads = 4;
  std::size_t ffn_dim = 512;
  std::size_t mlp_hidden = 128;
  std::size_t awa_taps = 4;  // cell + tissue readout after each of the two layers
  Aggregation aggregation = Aggregation::Sum;
};

/// A full model variant: two heterogeneous layers, the variant's fusion head,
/// and the classifier MLP.
struct Model {
  ModelConfig config;
  HeteroLayerParams layer1;
  HeteroLayerParams layer2;
  std::optional<AwaParams> awa;
  std::optional<TransformerParams> transformer;
  std::optional<CrossAttentionParams> cross;
  MlpParams mlp;

  /// Every trainable tensor in a stable, documented order; the order defines
  /// the checkpoint layout and the optimizer state alignment.
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;
};

Model make_model(const ModelConfig& cfg, std::uint64_t seed);
Model clone_model(const Model& m);

// --- layer ops -------------------------------------------------------------

/// Pre-activation Sage message: W_self h_dst + W_neigh mean_{src->dst} h_src + b.
/// Targets with no in-edges get a zero neighbor term.
Tensor sage_conv_linear(Tape& tape, const RelationEdges& edges, const Tensor& src_feats,
                        const Tensor& dst_feats, const SageParams& p);

Tensor sage_conv(Tape& tape, const RelationEdges& edges, const Tensor& src_feats,
                 const Tensor& dst_feats, const SageParams& p);

struct HeteroOut {
  Tensor cells;
  Tensor tissues;
};

/// Per-relation Sage messages combined per target type. Cells receive the
/// cell->cell message; tissues combine tissue->tissue and cell->tissue by the
/// configured aggregation. A relation with no edges contributes nothing, and
/// the shared relu is applied after aggregation.
HeteroOut hetero_conv(Tape& tape, const RelationEdges& cell_cell,
                      const RelationEdges& tissue_tissue, const RelationEdges& cell_tissue,
                      const Tensor& cell_feats, const Tensor& tissue_feats,
                      const HeteroLayerParams& p);
HeteroOut hetero_conv(Tape& tape, const HeteroGraph& g, const Tensor& cell_feats,
                      const Tensor& tissue_feats, const HeteroLayerParams& p);

/// Elementwise weighted sum w_1 F_1 + ... + w_n F_n over equal-width vectors.
Tensor awa_fuse(Tape& tape, const AwaParams& p, const std::vector<Tensor>& features);

/// Cell tokens followed by tissue tokens zero-padded to the cell count;
/// rejects more tissue than cell nodes. No attention masking downstream.
Tensor build_token_sequence(Tape& tape, const Tensor& cell_feats, const Tensor& tissue_feats);

Tensor multi_head_attention(Tape& tape, const Tensor& x, const AttentionParams& p,
                            std::size_t heads, std::vector<Tensor>* attention_out = nullptr);

/// One pre-norm encoder block, no positional encodings:
/// x + MHA(LN(x)), then + FFN(LN(.)).
Tensor transformer_encode(Tape& tape, const Tensor& tokens, const TransformerParams& p);

struct CrossFused {
  Tensor cell_summary;       // {d}
  Tensor tissue_summary;     // {d}
  Tensor cell_attention;     // 1 x n_tissues, rows sum to 1
  Tensor tissue_attention;   // 1 x n_cells
};

CrossFused cross_attention_fuse(Tape& tape, const Tensor& cell_feats, const Tensor& tissue_feats,
                                const CrossAttentionParams& p);

/// Mean over nodes.
Tensor readout(Tape& tape, const Tensor& node_feats);

Tensor mlp_forward(Tape& tape, const MlpParams& p, const Tensor& x);

// --- whole-model forward ----------------------------------------------------

/// Class logits for one graph.
Tensor forward_logits(Tape& tape, const Model& m, const HeteroGraph& g);

/// Class logits per graph in a batch. The trunk runs once over the
/// block-diagonal composition; fusion heads run per graph on its node ranges,
/// so results match the single-graph path.
std::vector<Tensor> forward_logits(Tape& tape, const Model& m, const GraphBatch& b);

}  // namespace hgg
