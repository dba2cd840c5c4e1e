#include "switchkd/dbild.hpp"

#include <algorithm>
#include <cmath>

#include "switchkd/knee.hpp"

namespace switchkd {

namespace {

void pair_index_lists(int k, std::vector<int>& ms, std::vector<int>& ns) {
    ms.reserve(static_cast<size_t>(k) * (k - 1) / 2);
    ns.reserve(ms.capacity());
    for (int m = 0; m < k; ++m)
        for (int n = m + 1; n < k; ++n) {
            ms.push_back(m);
            ns.push_back(n);
        }
}

// softmax(differences(z[idx]) / tau) as a graph node.
DiffArray selected_diff_distribution(const DiffArray& z, const std::vector<int>& indices,
                                     double tau) {
    DiffArray sel = gather(z, indices);
    DiffArray d = pairwise_differences(sel);
    return softmax(d, tau);
}

// One alignment branch: reference side from the (detached) teacher, mover
// side from the student, both restricted to `indices`.
DiffArray difference_branch(const DiffArray& z_t, const DiffArray& z_s,
                            const std::vector<int>& indices, double tau, bool reverse_kl) {
    DiffArray p_ref = selected_diff_distribution(detach(z_t), indices, tau);
    DiffArray q = selected_diff_distribution(z_s, indices, tau);
    return reverse_kl ? rkl(p_ref, q) : fkl(p_ref, q);
}

std::vector<int> top_indices(const std::vector<double>& v, int k) {
    std::vector<int> idx = sort_descending_indices(v);
    idx.resize(k);
    return idx;
}

void require_rows(const DiffArray& z_t, const DiffArray& z_s) {
    if (z_t.shape() != z_s.shape()) throw DimensionError("logits rows: shape mismatch");
    if (z_t.shape().size() != 1 || z_t.size() < 2)
        throw DimensionError("logits rows: expected 1-D vectors of length >= 2");
}

} // namespace

const char* to_string(LossStrategy s) {
    switch (s) {
    case LossStrategy::FKL: return "fkl";
    case LossStrategy::RKL: return "rkl";
    case LossStrategy::BiLD_FKL: return "bild-fkl";
    case LossStrategy::BiLD_RKL: return "bild-rkl";
    case LossStrategy::DBiLD_FKL: return "dbild-fkl";
    case LossStrategy::DBiLD_RKL: return "dbild-rkl";
    }
    return "?";
}

LossStrategy strategy_from_string(const std::string& s) {
    if (s == "fkl") return LossStrategy::FKL;
    if (s == "rkl") return LossStrategy::RKL;
    if (s == "bild-fkl") return LossStrategy::BiLD_FKL;
    if (s == "bild-rkl") return LossStrategy::BiLD_RKL;
    if (s == "dbild-fkl") return LossStrategy::DBiLD_FKL;
    if (s == "dbild-rkl") return LossStrategy::DBiLD_RKL;
    throw ConfigError("unknown strategy '" + s +
                      "' (valid: fkl, rkl, bild-fkl, bild-rkl, dbild-fkl, dbild-rkl)");
}

SelectedPair select_led_cor(const std::vector<double>& leader, const std::vector<double>& follower,
                            int k) {
    if (leader.size() != follower.size())
        throw DimensionError("select_led_cor: leader/follower lengths differ");
    if (k < 2 || k > static_cast<int>(leader.size()))
        throw ContractError("select_led_cor: k must lie in [2, N]");
    SelectedPair p;
    p.indices = top_indices(leader, k);
    p.led.resize(k);
    p.cor.resize(k);
    for (int i = 0; i < k; ++i) {
        p.led[i] = leader[p.indices[i]];
        p.cor[i] = follower[p.indices[i]];
    }
    return p;
}

std::vector<double> pairwise_differences(const std::vector<double>& v) {
    const int k = static_cast<int>(v.size());
    if (k < 2) throw ContractError("pairwise_differences: need at least two values");
    std::vector<double> d;
    d.reserve(static_cast<size_t>(k) * (k - 1) / 2);
    for (int m = 0; m < k; ++m)
        for (int n = m + 1; n < k; ++n) d.push_back(v[m] - v[n]);
    return d;
}

std::vector<double> difference_distribution(const std::vector<double>& d, double tau) {
    if (d.empty()) throw ContractError("difference_distribution: empty input");
    if (!(tau > 0.0)) throw ContractError("difference_distribution: tau must be positive");
    for (double x : d)
        if (!std::isfinite(x)) throw NumericError("difference_distribution: non-finite input");
    double m = d[0];
    for (double x : d) m = std::max(m, x);
    std::vector<double> p(d.size());
    double s = 0.0;
    for (size_t i = 0; i < d.size(); ++i) {
        p[i] = std::exp((d[i] - m) / tau);
        s += p[i];
    }
    for (double& x : p) x /= s;
    return p;
}

double rkl(const std::vector<double>& p_ref, const std::vector<double>& q) {
    if (p_ref.size() != q.size()) throw DimensionError("rkl: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < q.size(); ++i) {
        const double qi = std::max(q[i], kProbFloor);
        const double pi = std::max(p_ref[i], kProbFloor);
        acc += qi * std::log(qi / pi);
    }
    return acc;
}

double fkl(const std::vector<double>& p_ref, const std::vector<double>& q) {
    if (p_ref.size() != q.size()) throw DimensionError("fkl: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < q.size(); ++i) {
        const double pi = std::max(p_ref[i], kProbFloor);
        const double qi = std::max(q[i], kProbFloor);
        acc += pi * std::log(pi / qi);
    }
    return acc;
}

DiffArray pairwise_differences(const DiffArray& v) {
    const int k = static_cast<int>(v.size());
    if (v.shape().size() != 1 || k < 2)
        throw ContractError("pairwise_differences: need a 1-D array of length >= 2");
    std::vector<int> ms, ns;
    pair_index_lists(k, ms, ns);
    return sub(gather(v, ms), gather(v, ns));
}

DiffArray difference_distribution(const DiffArray& d, double tau) {
    if (d.size() == 0) throw ContractError("difference_distribution: empty input");
    return softmax(d, tau);
}

// log(q) - log(p) (not log of the quotient) so that bit-equal distributions
// produce an exact zero.
DiffArray rkl(const DiffArray& p_ref, const DiffArray& q) {
    if (p_ref.size() != q.size()) throw DimensionError("rkl: length mismatch");
    DiffArray qc = clamp_min(q, kProbFloor);
    DiffArray pc = clamp_min(p_ref, kProbFloor);
    return sum(mul(qc, sub(log(qc), log(pc))));
}

DiffArray fkl(const DiffArray& p_ref, const DiffArray& q) {
    if (p_ref.size() != q.size()) throw DimensionError("fkl: length mismatch");
    DiffArray pc = clamp_min(p_ref, kProbFloor);
    DiffArray qc = clamp_min(q, kProbFloor);
    return sum(mul(pc, sub(log(pc), log(qc))));
}

DiffArray teacher_guided_loss(const DiffArray& z_t, const DiffArray& z_s, double tau, int k_cap) {
    require_rows(z_t, z_s);
    const KneeResult knee = knee_index(z_t.values(), k_cap);
    std::vector<int> idx(knee.sorted_indices.begin(), knee.sorted_indices.begin() + knee.k);
    return difference_branch(z_t, z_s, idx, tau, /*reverse_kl=*/true);
}

DiffArray student_guided_loss(const DiffArray& z_t, const DiffArray& z_s, double tau, int k_cap) {
    require_rows(z_t, z_s);
    const KneeResult knee = knee_index(z_s.values(), k_cap);
    std::vector<int> idx(knee.sorted_indices.begin(), knee.sorted_indices.begin() + knee.k);
    return difference_branch(z_t, z_s, idx, tau, /*reverse_kl=*/true);
}

DiffArray dbild_loss(const DiffArray& z_t, const DiffArray& z_s, double tau, int k_cap) {
    return add(teacher_guided_loss(z_t, z_s, tau, k_cap),
               student_guided_loss(z_t, z_s, tau, k_cap));
}

DiffArray baseline_loss(LossStrategy strategy, const DiffArray& z_t, const DiffArray& z_s,
                        double tau, int k_cap, int fixed_k) {
    require_rows(z_t, z_s);
    const int n = static_cast<int>(z_t.size());
    switch (strategy) {
    case LossStrategy::FKL: {
        DiffArray p_t = softmax(detach(z_t), tau);
        DiffArray p_s = softmax(z_s, tau);
        return fkl(p_t, p_s);
    }
    case LossStrategy::RKL: {
        DiffArray p_t = softmax(detach(z_t), tau);
        DiffArray p_s = softmax(z_s, tau);
        return rkl(p_t, p_s);
    }
    case LossStrategy::BiLD_FKL:
    case LossStrategy::BiLD_RKL: {
        if (fixed_k < 2) throw ContractError("baseline_loss: fixed_k must be at least 2");
        const int k = std::min(fixed_k, n);
        const bool use_rkl = strategy == LossStrategy::BiLD_RKL;
        std::vector<int> idx_t = top_indices(z_t.values(), k);
        std::vector<int> idx_s = top_indices(z_s.values(), k);
        return add(difference_branch(z_t, z_s, idx_t, tau, use_rkl),
                   difference_branch(z_t, z_s, idx_s, tau, use_rkl));
    }
    case LossStrategy::DBiLD_FKL: {
        const KneeResult kt = knee_index(z_t.values(), k_cap);
        const KneeResult ks = knee_index(z_s.values(), k_cap);
        std::vector<int> idx_t(kt.sorted_indices.begin(), kt.sorted_indices.begin() + kt.k);
        std::vector<int> idx_s(ks.sorted_indices.begin(), ks.sorted_indices.begin() + ks.k);
        return add(difference_branch(z_t, z_s, idx_t, tau, /*reverse_kl=*/false),
                   difference_branch(z_t, z_s, idx_s, tau, /*reverse_kl=*/false));
    }
    case LossStrategy::DBiLD_RKL: return dbild_loss(z_t, z_s, tau, k_cap);
    }
    throw ContractError("baseline_loss: unhandled strategy");
}

DiffArray sequence_loss(const TokenLoss& loss_fn, const DiffArray& teacher_rows,
                        const DiffArray& student_rows, const std::vector<bool>& mask) {
    if (teacher_rows.shape() != student_rows.shape())
        throw DimensionError("sequence_loss: teacher/student shapes differ");
    if (teacher_rows.shape().size() != 2) throw DimensionError("sequence_loss: expected [T x N]");
    const int rows = teacher_rows.rows(), n = teacher_rows.cols();
    if (static_cast<int>(mask.size()) != rows)
        throw DimensionError("sequence_loss: mask length must equal T");

    DiffArray total;
    int count = 0;
    for (int r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        DiffArray zt = reshape(slice_rows(teacher_rows, r, r + 1), {n});
        DiffArray zs = reshape(slice_rows(student_rows, r, r + 1), {n});
        DiffArray l = loss_fn(zt, zs);
        total = count == 0 ? l : add(total, l);
        ++count;
    }
    if (count == 0) throw ContractError("sequence_loss: mask selects no positions");
    return scale(total, 1.0 / static_cast<double>(count));
}

DiffArray sequence_loss(LossStrategy strategy, const DiffArray& teacher_rows,
                        const DiffArray& student_rows, const std::vector<bool>& mask, double tau,
                        int k_cap, int fixed_k) {
    return sequence_loss(
        [&](const DiffArray& zt, const DiffArray& zs) {
            return baseline_loss(strategy, zt, zs, tau, k_cap, fixed_k);
        },
        teacher_rows, student_rows, mask);
}

} // namespace switchkd
