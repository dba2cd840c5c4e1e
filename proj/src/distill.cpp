#include "switchkd/distill.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "switchkd/rng.hpp"

namespace switchkd {

const char* to_string(Scheme s) {
    switch (s) {
    case Scheme::PT_SFT: return "pt-sft";
    case Scheme::DPT_SFT: return "dpt-sft";
    case Scheme::PT_DFT: return "pt-dft";
    case Scheme::DPT_DFT: return "dpt-dft";
    }
    return "?";
}

Scheme scheme_from_string(const std::string& s) {
    if (s == "pt-sft") return Scheme::PT_SFT;
    if (s == "dpt-sft") return Scheme::DPT_SFT;
    if (s == "pt-dft") return Scheme::PT_DFT;
    if (s == "dpt-dft") return Scheme::DPT_DFT;
    throw ConfigError("unknown scheme '" + s + "' (valid: pt-sft, dpt-sft, pt-dft, dpt-dft)");
}

const char* to_string(StageKind k) {
    switch (k) {
    case StageKind::PT: return "PT";
    case StageKind::SFT: return "SFT";
    case StageKind::DFT: return "DFT";
    case StageKind::DPT: return "DPT";
    }
    return "?";
}

StageSpec StageSpec::of(StageKind kind) {
    StageSpec s;
    s.kind = kind;
    switch (kind) {
    case StageKind::PT: s.trainable = {false, true, false}; s.distill = false; break;
    case StageKind::DPT: s.trainable = {false, true, false}; s.distill = true; break;
    case StageKind::SFT: s.trainable = {true, true, true}; s.distill = false; break;
    case StageKind::DFT: s.trainable = {true, true, true}; s.distill = true; break;
    }
    return s;
}

const StageHyper& DistillConfig::hyper_for(StageKind kind) const {
    return (kind == StageKind::PT || kind == StageKind::DPT) ? pt : ft;
}

double schedule_lr(const StageHyper& h, int step, int total_steps) {
    if (total_steps <= 0) throw ContractError("schedule_lr: total_steps must be positive");
    const int warmup = static_cast<int>(std::ceil(h.warmup_ratio * total_steps));
    if (step < warmup)
        return h.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (h.schedule == "constant" || total_steps <= warmup) return h.learning_rate;
    if (h.schedule != "cosine")
        throw ConfigError("schedule_lr: unknown schedule '" + h.schedule + "'");
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return 0.5 * h.learning_rate * (1.0 + std::cos(3.14159265358979323846 * progress));
}

DiffArray ce_loss(const DiffArray& logits, const std::vector<int>& targets,
                  const std::vector<bool>& mask, double temperature) {
    if (logits.shape().size() != 2) throw DimensionError("ce_loss: logits must be [T x N]");
    const int T = logits.rows(), N = logits.cols();
    if (static_cast<int>(targets.size()) != T || static_cast<int>(mask.size()) != T)
        throw DimensionError("ce_loss: targets/mask length must equal T");

    std::vector<int> rows, picks;
    for (int t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        if (targets[t] < 0 || targets[t] >= N)
            throw BoundsError("ce_loss: target token " + std::to_string(targets[t]) +
                              " outside the vocabulary");
        rows.push_back(t);
        picks.push_back(t * N + targets[t]);
    }
    if (rows.empty()) throw ContractError("ce_loss: mask selects no positions");

    DiffArray zz = temperature == 1.0 ? logits : scale(logits, 1.0 / temperature);
    DiffArray lse = gather(logsumexp_rows(zz), rows);
    DiffArray picked = gather(zz, picks);
    return mean(sub(lse, picked));
}

EncodedSample encode_sample(const SyntheticSample& s) {
    if (s.prompt.empty() || s.answer.empty())
        throw ContractError("encode_sample: prompt and answer must be non-empty");
    EncodedSample e;
    e.text = s.prompt;
    e.text.insert(e.text.end(), s.answer.begin(), s.answer.end());
    const int T = static_cast<int>(e.text.size());
    const int p = static_cast<int>(s.prompt.size());
    e.targets.assign(T, 0);
    e.ce_mask.assign(T, false);
    for (int t = 0; t + 1 < T; ++t) {
        e.targets[t] = e.text[t + 1];
        if (t + 1 >= p) e.ce_mask[t] = true; // row t predicts an answer token
    }
    return e;
}

DiffArray total_loss(Tape& tape, const BoundVLM& student, const BoundVLM* teacher,
                     const Dataset& data, const std::vector<size_t>& batch,
                     const DistillConfig& cfg, const StageSpec& stage, LossBreakdown* breakdown) {
    if (batch.empty()) throw ContractError("total_loss: empty batch");
    const bool want_align = stage.distill && cfg.lambda1 != 0.0;
    const bool want_vsd = stage.distill && stage.kind == StageKind::DFT && cfg.switch_enabled &&
                          cfg.lambda2 != 0.0;
    if ((want_align || want_vsd) && teacher == nullptr)
        throw ContractError("total_loss: distillation requires a teacher");

    const double ce_temp = cfg.ce_uses_tau ? cfg.tau : 1.0;
    DiffArray ce_sum, align_sum, vsd_sum;
    auto accumulate = [](DiffArray& acc, const DiffArray& term) {
        acc = acc.defined() ? add(acc, term) : term;
    };

    for (size_t idx : batch) {
        const SyntheticSample& s = data.samples.at(idx);
        const EncodedSample enc = encode_sample(s);
        DiffArray z_s = vlm_forward(tape, student, s.image, enc.text);
        accumulate(ce_sum, ce_loss(z_s, enc.targets, enc.ce_mask, ce_temp));

        if (!want_align && !want_vsd) continue;
        DiffArray z_t = vlm_forward(tape, *teacher, s.image, enc.text);
        const std::vector<bool> dist_mask =
            cfg.distill_answer_only ? enc.ce_mask : std::vector<bool>(enc.text.size(), true);
        if (want_align)
            accumulate(align_sum, sequence_loss(cfg.strategy, z_t, z_s, dist_mask, cfg.tau,
                                                cfg.k_cap, cfg.fixed_k));
        if (want_vsd) {
            DiffArray z_switch = switch_forward(tape, student, *teacher, s.image, enc.text);
            accumulate(vsd_sum, sequence_loss(cfg.strategy, z_t, z_switch, dist_mask, cfg.tau,
                                              cfg.k_cap, cfg.fixed_k));
        }
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    DiffArray ce_mean = scale(ce_sum, inv_b);

    LossBreakdown bd;
    bd.ce = ce_mean.value();

    // zero-weight terms never enter the graph, so collapsed configurations
    // reproduce the plain objective bit for bit
    DiffArray total;
    if (cfg.ce_weight != 0.0)
        total = cfg.ce_weight == 1.0 ? ce_mean : scale(ce_mean, cfg.ce_weight);
    if (want_align) {
        DiffArray align_mean = scale(align_sum, inv_b);
        bd.align = align_mean.value();
        bd.has_align = true;
        DiffArray term = cfg.lambda1 == 1.0 ? align_mean : scale(align_mean, cfg.lambda1);
        total = total.defined() ? add(total, term) : term;
    }
    if (want_vsd) {
        DiffArray vsd_mean = scale(vsd_sum, inv_b);
        bd.vsd = vsd_mean.value();
        bd.has_vsd = true;
        DiffArray term = cfg.lambda2 == 1.0 ? vsd_mean : scale(vsd_mean, cfg.lambda2);
        total = total.defined() ? add(total, term) : term;
    }
    if (!total.defined()) throw ContractError("total_loss: every loss term is disabled");
    bd.total = total.value();
    if (breakdown) *breakdown = bd;
    return total;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::update(size_t slot, Parameter& p, const std::vector<double>& grad, double lr) {
    if (slot >= slots_.size()) {
        slots_.resize(slot + 1);
        steps_.resize(slot + 1, 0);
    }
    Moments& mo = slots_[slot];
    if (mo.m.empty()) {
        mo.m.assign(p.size(), 0.0);
        mo.v.assign(p.size(), 0.0);
    }
    if (grad.size() != p.size()) throw DimensionError("AdamW::update: gradient size mismatch");
    const long t = ++steps_[slot];
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    for (size_t i = 0; i < p.size(); ++i) {
        mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * grad[i];
        mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        p.values[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.values[i]);
    }
}

namespace {

struct TrainableParam {
    int group;
    size_t index;
};

std::vector<TrainableParam> trainable_params(const ToyVLM& model, const TrainableFlags& flags) {
    std::vector<TrainableParam> out;
    const bool on[3] = {flags.V, flags.P, flags.L};
    auto groups = model.groups();
    for (int g = 0; g < 3; ++g) {
        if (!on[g]) continue;
        for (size_t i = 0; i < groups[g]->params.size(); ++i) out.push_back({g, i});
    }
    return out;
}

void dump_batch_diagnostics(StageKind stage, int step, const LossBreakdown& bd,
                            const Dataset& data, const std::vector<size_t>& batch) {
    std::cerr << "non-finite loss in stage " << to_string(stage) << " at step " << step
              << ": ce=" << bd.ce << " align=" << bd.align << " vsd=" << bd.vsd << "\n  batch ids:";
    for (size_t idx : batch) std::cerr << " " << data.samples.at(idx).id;
    std::cerr << "\n";
}

} // namespace

TrainState train_stage(ToyVLM& student, const ToyVLM* teacher, const Dataset& train,
                       StageSpec stage, const DistillConfig& cfg, uint64_t seed,
                       const MetricsSink& sink) {
    if (stage.distill && teacher == nullptr)
        throw ContractError("train_stage: distilling stage needs a teacher");
    if (!stage.distill && teacher != nullptr)
        throw ContractError("train_stage: teacher supplied to a non-distilling stage");
    if (teacher) check_switch_compatible(student.config, teacher->config);
    if (train.samples.empty()) throw ContractError("train_stage: empty training set");

    student.trainable = stage.trainable;
    const StageHyper& h = cfg.hyper_for(stage.kind);
    const int per_epoch =
        static_cast<int>((train.samples.size() + h.batch_size - 1) / h.batch_size);
    const int total_steps = per_epoch * h.epochs;

    AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);
    const auto trainables = trainable_params(student, stage.trainable);
    std::vector<std::vector<double>> grad_buf(trainables.size());

    TrainState state;
    int step = 0;
    for (int epoch = 0; epoch < h.epochs; ++epoch) {
        const auto batches =
            batch_indices(train.samples.size(), h.batch_size, derive_seed(seed, epoch));
        for (const auto& batch : batches) {
            Tape tape;
            BoundVLM sb = bind(tape, student);
            std::optional<BoundVLM> tb;
            if (teacher) tb.emplace(bind(tape, *teacher, TrainableFlags{false, false, false}));

            LossBreakdown bd;
            DiffArray loss =
                total_loss(tape, sb, tb ? &*tb : nullptr, train, batch, cfg, stage, &bd);
            if (!std::isfinite(bd.total)) {
                dump_batch_diagnostics(stage.kind, step, bd, train, batch);
                throw NumericError("train_stage: non-finite loss");
            }
            tape.backward(loss);

            // frozen-teacher invariant, checked against the actual buffers
            if (tb)
                for (const auto& leaves : tb->leaves)
                    for (const auto& leaf : leaves)
                        for (double g : leaf.grad()) state.teacher_grad_magnitude += std::abs(g);
            if (state.teacher_grad_magnitude != 0.0)
                throw ContractError("train_stage: gradient leaked into the frozen teacher");

            double sq_norm = 0.0;
            for (size_t i = 0; i < trainables.size(); ++i) {
                const auto& leaf = sb.leaves[trainables[i].group][trainables[i].index];
                const auto& g = leaf.grad();
                grad_buf[i].assign(leaf.size(), 0.0);
                if (!g.empty()) {
                    grad_buf[i] = g;
                    for (double x : g) sq_norm += x * x;
                }
            }
            const double norm = std::sqrt(sq_norm);
            if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
                const double s = cfg.grad_clip / norm;
                for (auto& g : grad_buf)
                    for (double& x : g) x *= s;
            }

            const double lr = schedule_lr(h, step, total_steps);
            for (size_t i = 0; i < trainables.size(); ++i) {
                Parameter& p =
                    student.groups()[trainables[i].group]->params[trainables[i].index];
                opt.update(i, p, grad_buf[i], lr);
            }

            StepRecord rec{step, stage.kind, lr, bd};
            state.log.push_back(rec);
            if (sink) sink(rec);
            ++step;
        }
    }
    state.steps_done = step;
    return state;
}

EvalResult evaluate(const ToyVLM& model, const Dataset& val, const ToyVLM* reference) {
    if (val.samples.empty()) throw ContractError("evaluate: empty validation set");
    EvalResult r;
    size_t correct = 0;
    for (const auto& s : val.samples) {
        const std::vector<int> decoded =
            greedy_decode(model, s.image, s.prompt, static_cast<int>(s.answer.size()));
        if (decoded == s.answer) ++correct;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(val.samples.size());

    if (reference) {
        check_switch_compatible(model.config, reference->config);
        size_t agree = 0, positions = 0;
        const TrainableFlags frozen{false, false, false};
        for (const auto& s : val.samples) {
            const EncodedSample enc = encode_sample(s);
            Tape tape;
            BoundVLM mb = bind(tape, model, frozen);
            BoundVLM rb = bind(tape, *reference, frozen);
            DiffArray za = vlm_forward(tape, mb, s.image, enc.text);
            DiffArray zb = vlm_forward(tape, rb, s.image, enc.text);
            const int N = za.cols();
            for (size_t t = 0; t < enc.ce_mask.size(); ++t) {
                if (!enc.ce_mask[t]) continue;
                const double* ra = za.values().data() + t * N;
                const double* rbv = zb.values().data() + t * N;
                int ia = 0, ib = 0;
                for (int i = 1; i < N; ++i) {
                    if (ra[i] > ra[ia]) ia = i;
                    if (rbv[i] > rbv[ib]) ib = i;
                }
                agree += ia == ib;
                ++positions;
            }
        }
        r.teacher_agreement = positions ? static_cast<double>(agree) / positions : 0.0;
        r.has_agreement = true;
    }
    return r;
}

RunMetrics run_scheme(Scheme scheme, ToyVLM& student, const ToyVLM* teacher, const Dataset& train,
                      const Dataset& val, const DistillConfig& cfg, uint64_t seed,
                      const MetricsSink& sink) {
    std::vector<StageKind> stages;
    switch (scheme) {
    case Scheme::PT_SFT: stages = {StageKind::PT, StageKind::SFT}; break;
    case Scheme::DPT_SFT: stages = {StageKind::DPT, StageKind::SFT}; break;
    case Scheme::PT_DFT: stages = {StageKind::PT, StageKind::DFT}; break;
    case Scheme::DPT_DFT: stages = {StageKind::DPT, StageKind::DFT}; break;
    }

    RunMetrics rm;
    int offset = 0;
    for (size_t i = 0; i < stages.size(); ++i) {
        const StageSpec spec = StageSpec::of(stages[i]);
        const ToyVLM* stage_teacher = spec.distill ? teacher : nullptr;
        if (spec.distill && teacher == nullptr)
            throw ContractError("run_scheme: scheme requires a teacher");
        MetricsSink offset_sink;
        if (sink)
            offset_sink = [&](const StepRecord& rec) {
                StepRecord shifted = rec;
                shifted.step += offset;
                sink(shifted);
            };
        TrainState st = train_stage(student, stage_teacher, train, spec, cfg,
                                    derive_seed(seed, 1000 + i), offset_sink);
        for (StepRecord rec : st.log) {
            rec.step += offset;
            rm.log.push_back(rec);
        }
        offset += st.steps_done;
    }
    if (!rm.log.empty()) rm.final_losses = rm.log.back().losses;
    rm.eval = evaluate(student, val, teacher);
    return rm;
}

} // namespace switchkd
