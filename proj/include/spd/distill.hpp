#pragma once

#include "spd/lm.hpp"
#include "spd/ssm.hpp"

#include <string>
#include <vector>

namespace spd {

// Base transformer with a subset of attention sublayers swapped for SSM
// blocks. Block parameters live in the same ParamStore as the (cloned) base
// parameters under "layer<l>.ssm.", so checkpointing and selective training
// see one flat namespace.
struct HybridModel {
    ToyLM base;                        // cfg + full ParamStore (base + blocks)
    SkipConfig skip;                   // replaced layers
    SsmKind kind = SsmKind::longhorn;
    SsmBlockConfig block_cfg;
    std::vector<int> replaced_layers;
    std::vector<SsmBlock> blocks;      // aligned with replaced_layers

    AttnOverride make_override() const;
    TensorPtr forward(const std::vector<int> & tokens) const;
    std::vector<double> next_dist(const std::vector<int> & tokens) const;

    // self mode: only the replacement blocks train; standard mode: everything
    void set_trainable_for_mode(bool self_mode);
};

HybridModel build_hybrid(const ToyLM & base, const SkipConfig & skip, SsmKind kind,
                         uint64_t seed, bool zero_init = true);

// max |hybrid logits - draft logits| over the given prompts; exact zero is
// expected under zero_init
double init_equivalence_gap(const HybridModel & hybrid, const ToyLM & base,
                            const std::vector<std::vector<int>> & prompts);

void save_hybrid(const std::string & path, const HybridModel & hybrid);
HybridModel load_hybrid(const std::string & path);

// ---- forward KL distillation ----

// mean over rows of KL(softmax(teacher) || softmax(student)); the teacher
// logits must come from a no-grad forward (treated as a constant)
TensorPtr kl_loss(const TensorPtr & teacher_logits, const TensorPtr & student_logits);

struct DistillConfig {
    enum class Mode { self_distill, standard } mode = Mode::self_distill;
    int64_t steps = 150;
    int batch_size = 4;
    int context_len = 64;
    double peak_lr = 2e-4;
    double min_lr = 2e-5;
    // optional per-kind schedule override, applied when the student's blocks
    // are Mamba2 (0 means inherit the shared schedule)
    double mamba2_peak_lr = 0.0;
    double mamba2_min_lr = 0.0;
    double grad_clip = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.95;
    int64_t eval_every = 0;            // 0 disables held-out evals
    int eval_windows = 8;
    int64_t checkpoint_every = 0;      // 0 disables periodic checkpoints
    std::string checkpoint_path;       // pattern target for periodic saves
    int64_t start_step = 0;            // resume offset
    uint64_t seed = 11;
};

struct TrainLogRow {
    int64_t step;
    double lr;
    double loss;        // batch KL before the update at this step
    double grad_norm;   // pre-clip global norm
};

struct EvalLogRow {
    int64_t step;
    double eval_kl;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    std::vector<EvalLogRow> evals;
};

// Batches are drawn per step from a step-forked stream, so runs resumed at
// start_step see the same windows as an uninterrupted run.
TrainLog distill_train(HybridModel & hybrid, const ToyLM & teacher,
                       const std::vector<int> & train_tokens,
                       const std::vector<int> & heldout_tokens, const DistillConfig & cfg);

void write_trainlog_csv(const std::string & path, const TrainLog & log);

// mean KL(teacher || student) over fixed held-out windows, no tape
double eval_kl(const HybridModel & hybrid, const ToyLM & teacher,
               const std::vector<int> & heldout_tokens, int context_len, int windows);

} // namespace spd
