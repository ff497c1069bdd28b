#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mgb/autodiff.hpp"
#include "mgb/graph.hpp"
#include "mgb/sampler.hpp"

namespace mgb {

struct ModelConfig {
    int64_t input_dim = 768;
    int64_t head_dim = 256;
    int n_heads = 3;
    int n_gat_layers = 2;  // receptive field N_2(v)
    int64_t mlp_dim = 64;
    int32_t num_classes = 2;
    double dropout_input = 0.0;
    double dropout_hidden = 0.0;
    double dropout_attn = 0.0;
    double leaky_slope = 0.2;

    void validate() const;
    int64_t gat_output_dim() const { return static_cast<int64_t>(n_heads) * head_dim; }
};

struct GatHeadParams {
    Tensor w;        // in_dim x head_dim
    Tensor a_left;   // head_dim x 1
    Tensor a_right;  // head_dim x 1
};

// All trainable parameters. Serialisable, byte-round-trippable; the
// classification head is optional (prototype-based paradigms run without).
struct ModelState {
    ModelConfig cfg;
    std::vector<std::vector<GatHeadParams>> gat;  // [layer][head]
    Tensor proj_w, proj_b;                        // gat_out x mlp, 1 x mlp
    Tensor mlp1_w, mlp1_b;                        // mlp x mlp
    Tensor mlp2_w, mlp2_b;
    bool has_head = false;
    Tensor head_w, head_b;  // mlp x C, 1 x C; logits = emb * W + b

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (size_t l = 0; l < gat.size(); ++l) {
            for (size_t h = 0; h < gat[l].size(); ++h) {
                const std::string p = "gat" + std::to_string(l) + ".h" + std::to_string(h) + ".";
                fn(p + "w", gat[l][h].w);
                fn(p + "a_left", gat[l][h].a_left);
                fn(p + "a_right", gat[l][h].a_right);
            }
        }
        fn("proj.w", proj_w);
        fn("proj.b", proj_b);
        fn("mlp1.w", mlp1_w);
        fn("mlp1.b", mlp1_b);
        fn("mlp2.w", mlp2_w);
        fn("mlp2.b", mlp2_b);
        if (has_head) {
            fn("head.w", head_w);
            fn("head.b", head_b);
        }
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        const_cast<ModelState*>(this)->for_each_param(
            [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
    }
};

// Fan-in-scaled uniform init for matrices, zero biases.
ModelState init_model(const ModelConfig& cfg, bool with_head, uint64_t seed);
// Fresh initialisation with identical shapes (ablation support).
ModelState reset_weights(const ModelState& state, uint64_t seed);
void reinit_head(ModelState& state, Rng& rng);

// A subgraph view materialised for message passing: local dense indices,
// initial representations (documents get their feature row, users all
// zeros), and a CSR edge structure over incoming edges that includes a self
// edge for every node plus both directions of each induced edge.
struct NodeBatch {
    std::vector<NodeId> nodes;  // sorted; local index = position
    Tensor features;            // N x input_dim
    std::vector<uint8_t> is_doc;
    std::vector<int64_t> seg_offsets;  // N+1
    std::vector<int64_t> src;          // grouped by destination
    std::vector<int64_t> dst;
    std::vector<int32_t> targets;      // loss rows: class index, -1 elsewhere

    int64_t size() const { return static_cast<int64_t>(nodes.size()); }
    int64_t local_of(NodeId v) const;
};

NodeBatch build_batch(const SocialGraph& g, const SubgraphView& view);

// Marks loss rows: every listed document gets its graph label as target.
void set_targets(NodeBatch& batch, const SocialGraph& g, std::span<const NodeId> docs);

// Model parameters bound onto a tape for one forward/backward pass.
class BoundModel {
  public:
    BoundModel(ad::Tape& tape, const ModelState& state, bool bind_head);

    // Single GAT layer as used by the encoder; exposed for direct testing.
    ad::Value gat_layer(ad::Value h, const NodeBatch& batch, int layer, bool training, Rng* rng) const;

    // Full encoder: input dropout (document rows), GAT stack, linear
    // projection, 2-layer ReLU MLP. rng may be null when training is false.
    ad::Value encode(const NodeBatch& batch, bool training, Rng* rng) const;

    ad::Value head_logits(ad::Value embeddings) const;

    // Gradients after tape.backward(), shaped like the bound state.
    ModelState grads() const;

    ad::Tape& tape() const { return *tape_; }

  private:
    ad::Tape* tape_;
    const ModelState* state_;
    std::vector<std::vector<std::array<ad::Value, 3>>> gat_;  // w, a_left, a_right
    ad::Value proj_w_, proj_b_, mlp1_w_, mlp1_b_, mlp2_w_, mlp2_b_;
    ad::Value head_w_, head_b_;
    bool head_bound_ = false;
};

// ---- baselines ----------------------------------------------------------

// 2-layer MLP over raw document features; ignores the graph.
struct TextModel {
    int64_t input_dim = 0;
    int64_t hidden_dim = 0;
    int32_t num_classes = 0;
    Tensor l1_w, l1_b, l2_w, l2_b, head_w, head_b;

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("l1.w", l1_w);
        fn("l1.b", l1_b);
        fn("l2.w", l2_w);
        fn("l2.b", l2_b);
        fn("head.w", head_w);
        fn("head.b", head_b);
    }
};

TextModel init_text_model(int64_t input_dim, int64_t hidden_dim, int32_t num_classes, uint64_t seed);
ad::Value text_logits(ad::Tape& tape, const TextModel& m, const Tensor& rows);

// Neighbour-vote baseline: each adjacent user votes with the majority class
// of its train-split document neighbours; the document takes the majority
// over user votes, falling back to the global train-majority class on ties
// or zero information. Returns one prediction per document row.
std::vector<int32_t> user_id_baseline(const SocialGraph& g, std::span<const NodeId> train_docs);

// ---- checkpoints ---------------------------------------------------------

// Versioned binary blob: magic "MGBC", u32 version, config record, then
// shape-tagged parameter records. Bit-exact round trip.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace mgb
