#pragma once

#include <functional>
#include <string>
#include <vector>

#include "switchkd/autodiff.hpp"

namespace switchkd {

// Distillation objectives: bidirectional logits-difference alignment with
// knee-detected top-k (the dynamic variants), fixed-k counterparts, and
// full-vocabulary KL baselines.
enum class LossStrategy { FKL, RKL, BiLD_FKL, BiLD_RKL, DBiLD_FKL, DBiLD_RKL };

const char* to_string(LossStrategy s);
LossStrategy strategy_from_string(const std::string& s); // throws ConfigError listing valid names

// Probabilities are floored here before any log to keep underflowed softmax
// tails out of the divergences.
inline constexpr double kProbFloor = 1e-12;

// Leader's top-k logits (descending, stable ties) plus the follower's values
// at the same vocabulary indices.
struct SelectedPair {
    std::vector<int> indices;
    std::vector<double> led;
    std::vector<double> cor;
};

SelectedPair select_led_cor(const std::vector<double>& leader, const std::vector<double>& follower,
                            int k);

// v[m] - v[n] for all m < n, lexicographic pair order; length k(k-1)/2.
std::vector<double> pairwise_differences(const std::vector<double>& v);
std::vector<double> difference_distribution(const std::vector<double>& d, double tau);

// D_RKL[p_ref || q] = sum_i q_i log(q_i / p_ref_i): the divergence of q from
// the reference, mode-seeking in q. The argument convention is fixed only
// here; both loss branches route through these two functions.
double rkl(const std::vector<double>& p_ref, const std::vector<double>& q);
// D_FKL[p_ref || q] = sum_i p_ref_i log(p_ref_i / q_i).
double fkl(const std::vector<double>& p_ref, const std::vector<double>& q);

// Graph counterparts used by the trainable losses.
DiffArray pairwise_differences(const DiffArray& v);
DiffArray difference_distribution(const DiffArray& d, double tau);
DiffArray rkl(const DiffArray& p_ref, const DiffArray& q);
DiffArray fkl(const DiffArray& p_ref, const DiffArray& q);

// One-token losses over logits rows (1-D DiffArrays of equal length).
// The teacher side is detached in every branch: gradients reach z_s only.
DiffArray teacher_guided_loss(const DiffArray& z_t, const DiffArray& z_s, double tau, int k_cap);
DiffArray student_guided_loss(const DiffArray& z_t, const DiffArray& z_s, double tau, int k_cap);
DiffArray dbild_loss(const DiffArray& z_t, const DiffArray& z_s, double tau, int k_cap);

// All six strategies behind one entry point; DBiLD_RKL delegates to
// dbild_loss. fixed_k feeds the BiLD variants only.
DiffArray baseline_loss(LossStrategy strategy, const DiffArray& z_t, const DiffArray& z_s,
                        double tau, int k_cap = 64, int fixed_k = 8);

// Mean per-token loss over mask-selected positions of [T x N] logits.
using TokenLoss = std::function<DiffArray(const DiffArray& z_t_row, const DiffArray& z_s_row)>;
DiffArray sequence_loss(const TokenLoss& loss_fn, const DiffArray& teacher_rows,
                        const DiffArray& student_rows, const std::vector<bool>& mask);
DiffArray sequence_loss(LossStrategy strategy, const DiffArray& teacher_rows,
                        const DiffArray& student_rows, const std::vector<bool>& mask, double tau,
                        int k_cap = 64, int fixed_k = 8);

} // namespace switchkd
