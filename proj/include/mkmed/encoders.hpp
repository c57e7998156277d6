#pragma once

// The six trainable encoders: the cross-modal molecule encoder (two GIN
// towers plus substructure attention) and the five modality encoders
// (image, text, knowledge-graph, properties, 3D structure). All emit a
// 1 x dim row embedding on a Tape so gradients flow to their Params.
//
// Parameter matrices are initialized from seeds derived per parameter
// name, so construction order never changes the values.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mkmed/ad.hpp"
#include "mkmed/molkit.hpp"
#include "mkmed/rng.hpp"

namespace mkmed {

using ad::Param;
using ad::Tape;
using ad::Val;

Mat xavier_init(int rows, int cols, Rng& rng);
Mat table_init(int rows, int cols, Rng& rng);  // U(-0.1, 0.1)

// ---- cross-modal encoder ----

struct GINLayerParams {
  Param msg_w1, msg_b1, msg_w2, msg_b2;      // message mlp on h_u ++ proj-edge
  Param comb_w1, comb_b1, comb_w2, comb_b2;  // combine mlp on (1+eps)h + agg
  Param eps;                                 // 1x1, init 0
};

struct GINTower {
  int dim = 64;
  Param node_w, node_b;  // 9 -> dim
  Param edge_w, edge_b;  // 8 -> dim
  Param out_w, out_b;    // dim -> dim readout projection
  std::vector<GINLayerParams> layers;

  void init(std::uint64_t seed, const std::string& prefix, int dim, int n_layers);
  void collect(std::vector<Param*>& out);
};

struct GINParams {
  GINTower mol, sub;  // towers do not share parameters
  void init(std::uint64_t seed, int dim, int n_layers);
  void collect(std::vector<Param*>& out);
};

struct AttentionFuseParams {
  int dim = 64;
  Param q_w, k_w, v_w;     // dim -> dim projections
  Param ln_gain, ln_bias;  // 1 x dim
  void init(std::uint64_t seed, int dim);
  void collect(std::vector<Param*>& out);
};

struct CrossModalParams {
  GINParams gin;
  AttentionFuseParams fuse;
  void init(std::uint64_t seed, int dim, int gin_layers);
  std::vector<Param*> params();
};

Val gin_encode(Tape& t, const MoleculeGraph& g, const Mat& node_f, const Mat& edge_f,
               GINTower& p);
Val gin_encode(Tape& t, const MoleculeGraph& g, GINTower& p);

// padded[i] nonzero marks row i of sub_embs as padding (logit forced to -1e9).
// Empty mask means no padding.
Val substructure_fuse(Tape& t, Val mol_emb, Val sub_embs, const std::vector<char>& padded,
                      AttentionFuseParams& p);

Val cross_modal_encode(Tape& t, const PreparedGraph& g, CrossModalParams& p);

// ---- transformer building block (shared by image and text encoders) ----

struct TransformerLayerParams {
  Param ln1_g, ln1_b, ln2_g, ln2_b;
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ff_w1, ff_b1, ff_w2, ff_b2;  // dim -> 2*dim -> dim
  void init(std::uint64_t seed, const std::string& prefix, int dim);
  void collect(std::vector<Param*>& out);
};

Val transformer_layer(Tape& t, Val x, TransformerLayerParams& p, int heads);

// ---- image encoder ----

struct ViTParams {
  int dim = 64;
  int patch = 8;
  int heads = 4;
  Param patch_w, patch_b;  // patch*patch*3 -> dim
  Param pos;               // n_patches x dim
  std::vector<TransformerLayerParams> layers;  // 2
  void init(std::uint64_t seed, int dim, int image_size);
  std::vector<Param*> params();
};

Val vit_encode(Tape& t, const MoleculeImage& img, ViTParams& p);

// ---- text encoder ----

struct TextEncParams {
  int dim = 64;
  int heads = 4;
  int max_tokens = 64;
  Param tok;  // vocab x dim
  Param pos;  // max_tokens x dim, positions restart at each segment
  std::vector<TransformerLayerParams> layers;  // 2
  void init(std::uint64_t seed, int dim, int vocab);
  std::vector<Param*> params();
};

Val text_encode(Tape& t, const TextDescription& d, TextEncParams& p);

// ---- knowledge-graph embedding ----

struct KGEmbedding {
  int dim = 64;
  Param entities;   // n_entities x dim, rows clamped to norm <= 1
  Param relations;  // n_relations x dim
  void init(std::uint64_t seed, int dim, int n_entities, int n_relations);
  std::vector<Param*> params();
};

// Margin-ranking TransE: margin 1.0, one uniform negative per positive per
// epoch, SGD lr 0.01, entity rows norm-clamped to 1 after each touched step.
KGEmbedding transe_train(const KGData& kg, int dim, int epochs, std::uint64_t seed);

double transe_score(const KGEmbedding& e, int head, int relation, int tail);

Val kg_lookup(Tape& t, const std::string& mol_id, const KGData& kg, KGEmbedding& e);

// ---- property encoder ----

struct PropEncParams {
  int dim = 64;
  Vec mean, stdev;           // 5 each
  std::vector<char> active;  // channels with positive corpus stdev
  Param w, b;                // 5 -> dim
  void init(std::uint64_t seed, int dim);
  void fit(const std::vector<PropertyVector>& corpus);
  std::vector<Param*> params();
};

Val prop_encode(Tape& t, const PropertyVector& v, PropEncParams& p);

// ---- geometric (3D structure) encoder ----

struct GVPUnitParams {
  Param w_h;              // c_in -> 64 vector-channel mix
  Param w_mu;             // 64 -> c_out vector-channel mix
  Param mlp_w1, mlp_b1;   // (64 + s_in) -> 128
  Param mlp_w2, mlp_b2;   // 128 -> s_out
  void init(std::uint64_t seed, const std::string& prefix, int s_in, int c_in,
            int s_out, int c_out);
  void collect(std::vector<Param*>& out);
};

// One geometric transform. s: m x s_in scalars; v: (3m) x c_in vectors laid
// out as row triples (x,y,z per channel column). Returns {s', v'} with
// s' = mlp(concat(norms(v w_h), s)) and v' = gate(norms(f_v)) * f_v.
std::pair<Val, Val> gvp_unit(Tape& t, Val s, Val v, GVPUnitParams& p);

struct GVPParams {
  int dim = 64;
  static constexpr int kScalarWidth = 128;
  static constexpr int kVectorWidth = 64;
  static constexpr int kEdgeScalarWidth = 32;
  static constexpr int kRBF = 16;
  Param s_in_w, s_in_b;  // 9 -> 128 node-feature lift
  Param edge_w, edge_b;  // 16 RBF -> 32
  Param out_w, out_b;    // 128 -> dim
  std::array<GVPUnitParams, 3> layers;
  void init(std::uint64_t seed, int dim);
  std::vector<Param*> params();
};

Val gvp_encode(Tape& t, const Conformer& c, const MoleculeGraph& g, GVPParams& p);

// ---- the full bundle ----

struct EncoderSet {
  int dim;
  int gin_layers;
  CrossModalParams cross;
  ViTParams vit;
  TextEncParams text;
  KGEmbedding kg;
  PropEncParams prop;
  GVPParams gvp;

  EncoderSet(std::uint64_t seed, int dim, int gin_layers, int vocab, int n_entities,
             int n_relations);

  std::vector<Param*> cross_params();
  // modality in {"image", "text", "kg", "props", "structure"}
  std::vector<Param*> modality_params(const std::string& modality);
  std::vector<Param*> all_params();
};

}  // namespace mkmed
