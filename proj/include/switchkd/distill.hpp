#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "switchkd/dbild.hpp"
#include "switchkd/synth_data.hpp"
#include "switchkd/toy_vlm.hpp"

namespace switchkd {

enum class Scheme { PT_SFT, DPT_SFT, PT_DFT, DPT_DFT };
const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& s); // throws ConfigError

enum class StageKind { PT, SFT, DFT, DPT };
const char* to_string(StageKind k);

// Fixed per-stage trainability and distillation contract: PT/DPT update the
// projector only, SFT/DFT update all three groups, distillation is on for
// DPT/DFT.
struct StageSpec {
    StageKind kind = StageKind::PT;
    TrainableFlags trainable;
    bool distill = false;
    static StageSpec of(StageKind kind);
};

struct StageHyper {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 1;
    double warmup_ratio = 0.03;
    std::string schedule = "cosine"; // cosine | constant
};

struct DistillConfig {
    double tau = 3.0;
    double lambda1 = 1.0; // standard alignment weight
    double lambda2 = 1.0; // visual-switch weight
    LossStrategy strategy = LossStrategy::DBiLD_RKL;
    int fixed_k = 8;
    bool switch_enabled = true;
    Scheme scheme = Scheme::PT_DFT;
    int k_cap = 64;
    double ce_weight = 1.0;            // zero disables the CE term (diagnostics)
    bool ce_uses_tau = false;          // CE softmax at tau instead of 1
    bool distill_answer_only = true;   // align/switch losses on answer rows only
    // direct-encoder-substitution variant: student V starts as a copy of the
    // teacher's trained V
    bool init_visual_from_teacher = false;
    double grad_clip = 1.0;            // global norm; <= 0 disables
    double weight_decay = 0.0;
    StageHyper pt{1e-3, 32, 2};  // PT and DPT
    StageHyper ft{2e-5, 16, 3};  // SFT and DFT
    const StageHyper& hyper_for(StageKind kind) const;
};

// cosine-decay-with-warmup schedule; step in [0, total_steps)
double schedule_lr(const StageHyper& h, int step, int total_steps);

// Mean NLL of the target tokens over mask-selected rows. targets[t] is the
// token predicted by row t.
DiffArray ce_loss(const DiffArray& logits, const std::vector<int>& targets,
                  const std::vector<bool>& mask, double temperature = 1.0);

// Teacher-forced (text, targets, mask) view of one sample.
struct EncodedSample {
    std::vector<int> text;     // prompt ++ answer
    std::vector<int> targets;  // targets[t] = text[t + 1]
    std::vector<bool> ce_mask; // rows predicting answer tokens
};
EncodedSample encode_sample(const SyntheticSample& s);

struct LossBreakdown {
    double ce = 0.0, align = 0.0, vsd = 0.0, total = 0.0;
    bool has_align = false, has_vsd = false;
};

// Composite objective over one batch: ce_weight*CE + lambda1*Align (when the
// stage distills) + lambda2*VSD (when additionally switch_enabled and the
// stage is DFT). Zero-weight terms are omitted from the graph entirely so
// collapse identities hold bit for bit.
DiffArray total_loss(Tape& tape, const BoundVLM& student, const BoundVLM* teacher,
                     const Dataset& data, const std::vector<size_t>& batch,
                     const DistillConfig& cfg, const StageSpec& stage, LossBreakdown* breakdown);

struct StepRecord {
    int step = 0;
    StageKind stage = StageKind::PT;
    double lr = 0.0;
    LossBreakdown losses;
};
using MetricsSink = std::function<void(const StepRecord&)>;

struct TrainState {
    int steps_done = 0;
    std::vector<StepRecord> log;
    double teacher_grad_magnitude = 0.0; // asserted 0 every step
};

// Decoupled-weight-decay Adam over the trainable parameter set only.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
          double weight_decay = 0.0);
    // slot identifies the parameter; state is created on first use
    void update(size_t slot, Parameter& p, const std::vector<double>& grad, double lr);

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_, weight_decay_;
    std::vector<Moments> slots_;
    std::vector<long> steps_;
};

// One stage of SGD-style training. Teacher must be present iff the stage
// distills; throws NumericError with a batch dump when the loss goes
// non-finite.
TrainState train_stage(ToyVLM& student, const ToyVLM* teacher, const Dataset& train,
                       StageSpec stage, const DistillConfig& cfg, uint64_t seed,
                       const MetricsSink& sink = {});

struct EvalResult {
    double accuracy = 0.0;
    double teacher_agreement = 0.0;
    bool has_agreement = false;
};

// Exact-match accuracy of greedy-decoded answers; optional top-1 agreement
// with a reference model under teacher forcing.
EvalResult evaluate(const ToyVLM& model, const Dataset& val, const ToyVLM* reference = nullptr);

struct RunMetrics {
    EvalResult eval;
    LossBreakdown final_losses;
    std::vector<StepRecord> log;
};

// Executes the scheme's stage sequence on the student and evaluates on val.
RunMetrics run_scheme(Scheme scheme, ToyVLM& student, const ToyVLM* teacher, const Dataset& train,
                      const Dataset& val, const DistillConfig& cfg, uint64_t seed,
                      const MetricsSink& sink = {});

} // namespace switchkd
