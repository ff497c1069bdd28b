#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgb/model.hpp"
#include "mgb/sampler.hpp"

namespace mgb {

enum class Paradigm { Full, Subgraphs, MamlLH, MamlRH, ProtoNet, ProtoMaml };

Paradigm paradigm_from_string(const std::string& s);
std::string paradigm_to_string(Paradigm p);
bool paradigm_is_episodic(Paradigm p);
// Whether the meta state carries a classification head.
bool paradigm_has_meta_head(Paradigm p);

struct TrainConfig {
    Paradigm paradigm = Paradigm::ProtoMaml;
    double outer_lr = 1e-3;
    double weight_decay = 1e-2;
    double inner_lr = 0.05;
    int t_inner = 5;
    int max_steps = 500;
    int episode_batch = 4;   // episodes per outer step
    int batch_docs = 32;     // Full: query targets per step
    int val_episodes = 16;
    int val_every = 0;       // 0 = max(1, max_steps / 20)
    uint64_t seed = 0;

    int64_t decay_every() const { return std::max<int64_t>(1, static_cast<int64_t>(max_steps) * 5 / 100); }
    int64_t patience() const { return std::max<int64_t>(1, static_cast<int64_t>(max_steps) / 10); }
    int64_t effective_val_every() const {
        return val_every > 0 ? val_every : std::max<int64_t>(1, static_cast<int64_t>(max_steps) / 20);
    }

    void validate() const;
};

// Step-wise decay every 5% of max_steps with a floor of 0.01 * outer_lr. The
// factor is chosen so the floor is reached exactly at the 19th drop (95%).
double lr_at(const TrainConfig& cfg, int64_t step);

// Decoupled-weight-decay Adam over a flat parameter list. Moment buffers are
// keyed by position, so the same flatten order must be used on every step.
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, double lr,
              double weight_decay);

  private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

std::vector<Tensor*> flat_params(ModelState& s, bool include_head);
std::vector<const Tensor*> flat_params(const ModelState& s, bool include_head);
std::vector<Tensor*> flat_params(TextModel& m);

// ---- prototypical building blocks ----------------------------------------

// Class means of support embeddings; every class must be represented.
Tensor prototypes(const Tensor& embeddings, const std::vector<int32_t>& labels, int32_t num_classes);

// softmax over negative squared Euclidean distance to each prototype.
Tensor proto_classify(const Tensor& query_embeddings, const Tensor& protos);

// Head initialisation equivalent to prototypical classification: weight
// column y is 2*c_y, bias component y is -||c_y||^2 (the expansion of
// -||f - c||^2 up to the class-independent -||f||^2 term).
std::pair<Tensor, Tensor> protomaml_head_init(const Tensor& protos);

// ---- inner loop -----------------------------------------------------------

struct AdaptationTrace {
    double support_before = 0.0;  // loss before the first inner step
    double support_after = 0.0;   // loss after the last inner step
    double query_loss = 0.0;
    std::optional<double> relative_improvement;  // (before - after) / before when before > 0

    void finalize() {
        if (support_before > 0.0) {
            relative_improvement = (support_before - support_after) / support_before;
        }
    }
};

struct AdaptResult {
    ModelState adapted;
    AdaptationTrace trace;
};

// t_inner plain SGD steps at inner_lr on the support cross-entropy over the
// batch's target rows. Adapts every bound parameter (encoder and head when
// present). training toggles dropout; rng may be null when training is off.
AdaptResult inner_adapt(const ModelState& state, const NodeBatch& support, double inner_lr, int t_inner,
                        bool training, Rng* rng);

// ---- per-episode meta computations ----------------------------------------

struct EpisodeOutcome {
    ModelState grads;  // first-order meta gradient contribution
    AdaptationTrace trace;
    bool skipped = false;  // non-finite loss; logged and excluded
};

// MAML outer contribution for one episode (learned or reset head).
EpisodeOutcome episode_maml(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                            const TrainConfig& cfg, bool reset_head, bool training, Rng rng);
// Prototypical network: no inner loop, query loss through prototypes.
EpisodeOutcome episode_protonet(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                                bool training, Rng rng);
// ProtoMAML: prototype-initialised head (gradient path severed), full inner
// adaptation, first-order outer gradient for the encoder only.
EpisodeOutcome episode_protomaml(const ModelState& meta, const SocialGraph& g, const Episode& ep,
                                 const TrainConfig& cfg, bool training, Rng rng);

// One outer AdamW step over a batch of episodes (used by train_meta and
// exposed for the degenerate-equivalence tests).
void outer_step_maml(ModelState& meta, AdamW& opt, const SocialGraph& g, std::span<const Episode> episodes,
                     const TrainConfig& cfg, bool reset_head, double lr, int workers,
                     std::vector<AdaptationTrace>* traces = nullptr);

// ---- training drivers ------------------------------------------------------

struct TrainResult {
    ModelState state;       // best-validation checkpoint
    double best_val_loss = 0.0;
    int64_t best_step = -1;
    int64_t steps_run = 0;
};

// Dispatches on cfg.paradigm: non-episodic Full/Subgraphs or the episodic
// meta paradigms. Emits one JSONL record per step to log_path (empty = no
// log): step, lr, losses, adaptation-trace means, validation losses.
TrainResult train_model(const SocialGraph& g, const FoldSplit& fold, const ModelConfig& mcfg,
                        const SamplerConfig& scfg, const TrainConfig& tcfg, const std::string& log_path,
                        int workers);

// Text baseline: 2-layer MLP on document features, AdamW, early stopping on
// validation loss.
TextModel train_text_baseline(const SocialGraph& g, const FoldSplit& fold, int64_t hidden_dim,
                              const TrainConfig& tcfg);

}  // namespace mgb
