#include "switchkd/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "switchkd/checkpoint.hpp"
#include "switchkd/config.hpp"
#include "switchkd/dbild.hpp"
#include "switchkd/distill.hpp"
#include "switchkd/kernels.hpp"
#include "switchkd/knee.hpp"
#include "switchkd/oracles.hpp"
#include "switchkd/rng.hpp"
#include "switchkd/synth_data.hpp"
#include "switchkd/toy_vlm.hpp"

namespace switchkd {

namespace {

constexpr double kRelTol = 1e-4;
constexpr double kAbsTol = 1e-6;

std::vector<double> rand_vec(Rng& rng, size_t n, double lo = -5.0, double hi = 5.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::vector<double> dyadic_vec(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (auto& x : v)
        x = static_cast<double>(static_cast<int64_t>(rng.bounded(1 << 21)) - (1 << 20)) *
            0x1.0p-18;
    return v;
}

double dyadic_shift(Rng& rng) {
    return static_cast<double>(static_cast<int64_t>(rng.bounded(1 << 16)) - (1 << 15)) * 0x1.0p-10;
}

// |ad - fd| scaled by the acceptance tolerance; values < 1 pass.
double grad_error(double ad, double fd) {
    return std::abs(ad - fd) / std::max(kAbsTol, kRelTol * std::max(std::abs(ad), std::abs(fd)));
}

// Compares tape gradients of a rebuilt scalar graph against central finite
// differences, for every leaf.
double fd_check(const std::vector<std::vector<int>>& shapes,
                const std::vector<std::vector<double>>& inputs,
                const std::function<DiffArray(Tape&, const std::vector<DiffArray>&)>& build,
                double eps = 1e-5) {
    Tape tape;
    std::vector<DiffArray> leaves;
    for (size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(shapes[i], inputs[i], true));
    tape.backward(build(tape, leaves));

    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](const std::vector<double>& x) {
            Tape t2;
            std::vector<DiffArray> l2;
            for (size_t j = 0; j < inputs.size(); ++j)
                l2.push_back(t2.leaf(shapes[j], j == i ? x : inputs[j], false));
            return build(t2, l2).value();
        };
        const auto fd = finite_diff_gradient(f, inputs[i], eps);
        std::vector<double> ad(inputs[i].size(), 0.0);
        if (!leaves[i].grad().empty()) ad = leaves[i].grad();
        for (size_t j = 0; j < fd.size(); ++j) worst = std::max(worst, grad_error(ad[j], fd[j]));
    }
    return worst;
}

bool knee_selection_stable(const std::vector<double>& z, double eps, int k_cap) {
    const auto base = knee_index(z, k_cap);
    auto probe = z;
    for (size_t i = 0; i < z.size(); ++i) {
        for (double delta : {eps, -eps}) {
            probe[i] = z[i] + delta;
            const auto moved = knee_index(probe, k_cap);
            if (moved.k != base.k ||
                !std::equal(base.sorted_indices.begin(), base.sorted_indices.begin() + base.k,
                            moved.sorted_indices.begin()))
                return false;
        }
        probe[i] = z[i];
    }
    return true;
}

CheckResult check_knee_oracle(uint64_t seed) {
    CheckResult r{"knee oracle equivalence (1000 x N in [4,512])"};
    Rng rng(derive_seed(seed, 1));
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 4 + rng.bounded_int(509);
        const int k_cap = trial % 5 == 0 ? 2 + rng.bounded_int(63) : 64;
        const auto z = rand_vec(rng, n, -10, 10);
        const auto got = knee_index(z, k_cap);
        const int want = oracles::brute_force_knee(z, k_cap);
        ++r.cases;
        if (got.k != want || got.k < 2 || got.k > std::min(n, k_cap)) ++r.failures;
        r.max_error = std::max(r.max_error, static_cast<double>(std::abs(got.k - want)));
    }
    return r;
}

CheckResult check_knee_affine(uint64_t seed) {
    CheckResult r{"knee affine invariance (1000 x (z, a>0, b))"};
    Rng rng(derive_seed(seed, 2));
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 4 + rng.bounded_int(250);
        const auto z = rand_vec(rng, n);
        const double a = rng.uniform(0.05, 20.0);
        const double b = rng.uniform(-40.0, 40.0);
        auto z2 = z;
        for (auto& x : z2) x = a * x + b;
        const auto r1 = knee_index(z, 64);
        const auto r2 = knee_index(z2, 64);
        ++r.cases;
        if (r1.k != r2.k || r1.sorted_indices != r2.sorted_indices) ++r.failures;
    }
    return r;
}

CheckResult check_dbild_oracle(uint64_t seed) {
    CheckResult r{"dbild oracle equivalence (200 x N in {8,32,128})"};
    Rng rng(derive_seed(seed, 3));
    const int sizes[3] = {8, 32, 128};
    for (int trial = 0; trial < 200; ++trial) {
        const int n = sizes[trial % 3];
        const auto z_t = rand_vec(rng, n, -6, 6);
        const auto z_s = rand_vec(rng, n, -6, 6);
        Tape t;
        const double got =
            dbild_loss(t.constant({n}, z_t), t.constant({n}, z_s), 3.0, 64).value();
        const double want = oracles::dbild_reference(z_t, z_s, 3.0, 64).total;
        ++r.cases;
        r.max_error = std::max(r.max_error, std::abs(got - want));
        if (std::abs(got - want) > 1e-10) ++r.failures;
    }
    return r;
}

CheckResult check_dbild_invariants(uint64_t seed) {
    CheckResult r{"dbild invariants: zero at equality, shift invariance, >= 0, pair count"};
    Rng rng(derive_seed(seed, 4));
    const LossStrategy all[] = {LossStrategy::FKL,      LossStrategy::RKL,
                                LossStrategy::BiLD_FKL, LossStrategy::BiLD_RKL,
                                LossStrategy::DBiLD_FKL, LossStrategy::DBiLD_RKL};

    for (int trial = 0; trial < 120; ++trial) {
        const int n = 8 + rng.bounded_int(80);
        const auto z = rand_vec(rng, n);
        Tape t;
        auto zt = t.constant({n}, z);
        for (auto s : all) {
            ++r.cases;
            const double v = std::abs(baseline_loss(s, zt, t.constant({n}, z), 3.0).value());
            r.max_error = std::max(r.max_error, v);
            if (v > 1e-10) ++r.failures;
        }
    }

    for (int trial = 0; trial < 500; ++trial) {
        const int n = 6 + rng.bounded_int(60);
        const auto z_t = dyadic_vec(rng, n);
        const auto z_s = dyadic_vec(rng, n);
        const double c = dyadic_shift(rng);
        Tape t;
        auto zt = t.constant({n}, z_t);
        auto zs = t.constant({n}, z_s);
        auto zs_c = z_s;
        for (auto& x : zs_c) x += c;
        auto zt_c = z_t;
        for (auto& x : zt_c) x += c;
        const double base = dbild_loss(zt, zs, 3.0, 64).value();
        ++r.cases;
        if (dbild_loss(zt, t.constant({n}, zs_c), 3.0, 64).value() != base ||
            dbild_loss(t.constant({n}, zt_c), zs, 3.0, 64).value() != base)
            ++r.failures;
        if (base < -1e-12) ++r.failures;
    }

    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + rng.bounded_int(62);
        const auto v = rand_vec(rng, k);
        ++r.cases;
        if (pairwise_differences(v).size() != static_cast<size_t>(k) * (k - 1) / 2) ++r.failures;
    }
    return r;
}

CheckResult check_op_gradients(uint64_t seed) {
    CheckResult r{"op gradients vs finite differences (100 inputs per op)"};
    Rng rng(derive_seed(seed, 5));

    auto run = [&](int trials, auto make) {
        for (int i = 0; i < trials; ++i) {
            ++r.cases;
            const double e = make(rng);
            r.max_error = std::max(r.max_error, e);
            if (e > 1.0) ++r.failures;
        }
    };

    run(100, [](Rng& rng) {
        const int n = 2 + rng.bounded_int(10);
        return fd_check({{n}, {n}}, {rand_vec(rng, n, -3, 3), rand_vec(rng, n, -3, 3)},
                        [](Tape&, const std::vector<DiffArray>& l) {
                            return sum(mul(add(l[0], l[1]), sub(l[0], l[1])));
                        });
    });
    run(100, [](Rng& rng) {
        const int m = 1 + rng.bounded_int(5), k = 1 + rng.bounded_int(5),
                  n = 1 + rng.bounded_int(5);
        return fd_check({{m, k}, {k, n}},
                        {rand_vec(rng, static_cast<size_t>(m) * k, -2, 2),
                         rand_vec(rng, static_cast<size_t>(k) * n, -2, 2)},
                        [](Tape&, const std::vector<DiffArray>& l) {
                            return sum(matmul(l[0], l[1]));
                        });
    });
    run(100, [](Rng& rng) {
        const int n = 1 + rng.bounded_int(10);
        return fd_check({{n}}, {rand_vec(rng, n, -3, 3)},
                        [](Tape&, const std::vector<DiffArray>& l) {
                            return mean(gelu(scale(l[0], 1.3)));
                        });
    });
    run(100, [](Rng& rng) {
        const int n = 1 + rng.bounded_int(8);
        return fd_check({{n}}, {rand_vec(rng, n, 0.2, 3.0)},
                        [](Tape&, const std::vector<DiffArray>& l) {
                            return sum(log(add_scalar(exp(l[0]), 0.5)));
                        });
    });
    run(100, [](Rng& rng) {
        const int n = 3 + rng.bounded_int(10);
        std::vector<int> idx;
        for (int i = 0; i < n + 2; ++i) idx.push_back(rng.bounded_int(n));
        return fd_check({{n}}, {rand_vec(rng, n, -3, 3)},
                        [idx](Tape&, const std::vector<DiffArray>& l) {
                            auto g = gather(l[0], idx);
                            return sum(mul(g, g));
                        });
    });
    run(100, [](Rng& rng) {
        const int n = 2 + rng.bounded_int(16);
        const double tau = rng.uniform(0.5, 4.0);
        const auto w = rand_vec(rng, n, -2, 2);
        return fd_check({{n}}, {rand_vec(rng, n, -4, 4)},
                        [tau, w, n](Tape& t, const std::vector<DiffArray>& l) {
                            return sum(mul(softmax(l[0], tau), t.constant({n}, w)));
                        });
    });
    run(100, [](Rng& rng) {
        const int rows = 1 + rng.bounded_int(4), cols = 2 + rng.bounded_int(7);
        return fd_check({{rows, cols}}, {rand_vec(rng, static_cast<size_t>(rows) * cols, -3, 3)},
                        [](Tape&, const std::vector<DiffArray>& l) {
                            return add(sum(mul(softmax_rows(l[0], 2.0), l[0])),
                                       mean(logsumexp_rows(l[0])));
                        });
    });
    run(100, [](Rng& rng) {
        const int rows = 1 + rng.bounded_int(4), cols = 3 + rng.bounded_int(6);
        return fd_check({{rows, cols}, {cols}, {cols}},
                        {rand_vec(rng, static_cast<size_t>(rows) * cols, -2, 2),
                         rand_vec(rng, cols, 0.5, 1.5), rand_vec(rng, cols, -0.3, 0.3)},
                        [](Tape&, const std::vector<DiffArray>& l) {
                            auto y = layer_norm_rows(l[0], l[1], l[2]);
                            return sum(mul(y, y));
                        });
    });
    run(100, [](Rng& rng) {
        const int rows = 2 + rng.bounded_int(3), cols = 2 + rng.bounded_int(3);
        return fd_check(
            {{rows, cols}, {rows, cols}, {cols}},
            {rand_vec(rng, static_cast<size_t>(rows) * cols, -2, 2),
             rand_vec(rng, static_cast<size_t>(rows) * cols, -2, 2), rand_vec(rng, cols, -1, 1)},
            [rows, cols](Tape&, const std::vector<DiffArray>& l) {
                auto cat = concat_rows(l[0], l[1]);
                auto sl = transpose(slice_rows(cat, 1, rows + 1));
                auto wide = concat_cols(transpose(sl), l[1]);
                return sum(add_rowvec(slice_cols(wide, 1, cols + 1), l[2]));
            });
    });
    run(100, [](Rng& rng) {
        const int v = 4 + rng.bounded_int(6), d = 2 + rng.bounded_int(4);
        std::vector<int> ids;
        for (int i = 0; i < 5; ++i) ids.push_back(rng.bounded_int(v));
        return fd_check({{v, d}}, {rand_vec(rng, static_cast<size_t>(v) * d, -2, 2)},
                        [ids](Tape&, const std::vector<DiffArray>& l) {
                            auto e = embedding_rows(l[0], ids);
                            return sum(mul(e, e));
                        });
    });
    return r;
}

CheckResult check_dbild_gradient(uint64_t seed) {
    CheckResult r{"dbild gradient vs finite differences (50+ x N in {8,32,128})"};
    Rng rng(derive_seed(seed, 6));
    const double eps = 1e-5;
    for (int n : {8, 32, 128}) {
        int done = 0, guard = 0;
        while (done < 20 && ++guard < 500) {
            const auto z_t = rand_vec(rng, n, -4, 4);
            const auto z_s = rand_vec(rng, n, -4, 4);
            if (!knee_selection_stable(z_s, eps, 64)) continue;
            const double e = fd_check({{n}}, {z_s},
                                      [&z_t, n](Tape& t, const std::vector<DiffArray>& l) {
                                          return dbild_loss(t.constant({n}, z_t), l[0], 3.0, 64);
                                      },
                                      eps);
            ++r.cases;
            r.max_error = std::max(r.max_error, e);
            if (e > 1.0) ++r.failures;
            ++done;
        }
        if (done < 20) ++r.failures;
    }
    return r;
}

CheckResult check_ce_gradient(uint64_t seed) {
    CheckResult r{"ce gradient vs finite differences (50 instances)"};
    Rng rng(derive_seed(seed, 7));
    for (int trial = 0; trial < 50; ++trial) {
        const int T = 2 + rng.bounded_int(4), N = 8 + rng.bounded_int(24);
        std::vector<int> targets(T);
        std::vector<bool> mask(T, false);
        for (int t = 0; t < T; ++t) targets[t] = rng.bounded_int(N);
        mask[rng.bounded_int(T)] = true;
        mask[rng.bounded_int(T)] = true;
        const double e = fd_check({{T, N}}, {rand_vec(rng, static_cast<size_t>(T) * N, -3, 3)},
                                  [targets, mask](Tape&, const std::vector<DiffArray>& l) {
                                      return ce_loss(l[0], targets, mask, 1.0);
                                  });
        ++r.cases;
        r.max_error = std::max(r.max_error, e);
        if (e > 1.0) ++r.failures;
    }
    return r;
}

// Gradient of the full composite objective w.r.t. sampled student parameters
// on a tiny config, conditioned on locally stable knee selections.
CheckResult check_total_loss_gradient(uint64_t seed) {
    CheckResult r{"total_loss gradient vs finite differences (50 instances)"};
    Rng rng(derive_seed(seed, 8));
    const double eps = 1e-5;

    ModelConfig mc;
    mc.vision_dim = 4;
    mc.n_visual_tokens = 4;
    mc.lm_dim = 8;
    mc.lm_layers = 1;
    mc.lm_heads = 2;
    mc.vocab_size = 32;
    mc.max_seq_len = 12;

    DatasetSpec dspec;
    dspec.n_train = 64;
    dspec.n_val = 4;
    dspec.seed = derive_seed(seed, 88);
    auto [train, val] = generate(dspec);

    DistillConfig cfg;
    cfg.tau = 3.0;
    const StageSpec stage = StageSpec::of(StageKind::DFT);

    auto loss_and_selections = [&](const ToyVLM& student, const ToyVLM& teacher,
                                   const std::vector<size_t>& batch,
                                   std::vector<int>* selections) {
        Tape tape;
        ToyVLM s2 = student;
        s2.trainable = {true, true, true};
        BoundVLM sb = bind(tape, s2);
        BoundVLM tb = bind(tape, teacher, TrainableFlags{false, false, false});
        if (selections) {
            for (size_t idx : batch) {
                const auto& sample = train.samples[idx];
                const EncodedSample enc = encode_sample(sample);
                DiffArray z_s = vlm_forward(tape, sb, sample.image, enc.text);
                DiffArray z_sw = switch_forward(tape, sb, tb, sample.image, enc.text);
                const int N = z_s.cols();
                for (size_t t = 0; t < enc.ce_mask.size(); ++t) {
                    if (!enc.ce_mask[t]) continue;
                    for (const DiffArray* z : {&z_s, &z_sw}) {
                        std::vector<double> row(z->values().begin() + t * N,
                                                z->values().begin() + (t + 1) * N);
                        const auto kr = knee_index(row, cfg.k_cap);
                        selections->push_back(kr.k);
                        selections->insert(selections->end(), kr.sorted_indices.begin(),
                                           kr.sorted_indices.begin() + kr.k);
                    }
                }
            }
        }
        LossBreakdown bd;
        total_loss(tape, sb, &tb, train, batch, cfg, stage, &bd);
        return bd.total;
    };

    int done = 0, guard = 0;
    while (done < 50 && ++guard < 300) {
        const uint64_t inst_seed = rng.next_u64();
        ToyVLM teacher = ToyVLM::init(mc, derive_seed(inst_seed, 1));
        ToyVLM student = ToyVLM::init(mc, derive_seed(inst_seed, 2));
        std::vector<size_t> batch{rng.bounded(train.samples.size()),
                                  rng.bounded(train.samples.size())};

        // analytic gradient
        Tape tape;
        student.trainable = {true, true, true};
        BoundVLM sb = bind(tape, student);
        BoundVLM tb = bind(tape, teacher, TrainableFlags{false, false, false});
        LossBreakdown bd;
        DiffArray loss = total_loss(tape, sb, &tb, train, batch, cfg, stage, &bd);
        tape.backward(loss);

        std::vector<int> base_sel;
        loss_and_selections(student, teacher, batch, &base_sel);

        bool instance_ok = true;
        double worst = 0.0;
        int coords_checked = 0;
        for (int g = 0; g < 3 && instance_ok; ++g) {
            auto groups = student.groups();
            for (int probe = 0; probe < 4 && instance_ok; ++probe) {
                const size_t pi = rng.bounded(groups[g]->params.size());
                Parameter& p = groups[g]->params[pi];
                const size_t ci = rng.bounded(p.size());
                const auto& leaf_grad = sb.leaves[g][pi].grad();
                const double ad = leaf_grad.empty() ? 0.0 : leaf_grad[ci];

                double f[2];
                bool stable = true;
                for (int sgn = 0; sgn < 2; ++sgn) {
                    ToyVLM probe_model = student;
                    probe_model.groups()[g]->params[pi].values[ci] += sgn == 0 ? eps : -eps;
                    std::vector<int> sel;
                    f[sgn] = loss_and_selections(probe_model, teacher, batch, &sel);
                    if (sel != base_sel) stable = false;
                }
                if (!stable) continue; // selection flipped inside the probe; skip coordinate
                const double fd = (f[0] - f[1]) / (2 * eps);
                worst = std::max(worst, grad_error(ad, fd));
                ++coords_checked;
            }
        }
        if (coords_checked == 0) continue;
        ++done;
        ++r.cases;
        r.max_error = std::max(r.max_error, worst);
        if (worst > 1.0) ++r.failures;
    }
    if (done < 50) ++r.failures;
    return r;
}

CheckResult check_softmax_and_sort(uint64_t seed) {
    CheckResult r{"softmax normalization/shift invariance + sort permutation (1000 each)"};
    Rng rng(derive_seed(seed, 9));
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + rng.bounded_int(62);
        const auto z = rand_vec(rng, n, -8, 8);
        const double tau = rng.uniform(0.4, 5.0);
        Tape t;
        const auto p = softmax(t.constant({n}, z), tau).values();
        double s = 0;
        for (double x : p) s += x;
        ++r.cases;
        r.max_error = std::max(r.max_error, std::abs(s - 1.0));
        if (std::abs(s - 1.0) > 1e-12) ++r.failures;

        auto idx = sort_descending_indices(z);
        std::vector<bool> seen(n, false);
        bool ok = true;
        for (int i : idx) {
            if (i < 0 || i >= n || seen[i]) ok = false;
            else seen[i] = true;
        }
        for (size_t i = 1; i + 0 < idx.size() && ok; ++i)
            if (z[idx[i - 1]] < z[idx[i]]) ok = false;
        ++r.cases;
        if (!ok) ++r.failures;
    }
    return r;
}

CheckResult check_backward_determinism(uint64_t seed) {
    CheckResult r{"zero-grad + backward twice is bit-identical (100 graphs)"};
    Rng rng(derive_seed(seed, 10));
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 4 + rng.bounded_int(12);
        const auto a = rand_vec(rng, n, -2, 2);
        const auto b = rand_vec(rng, n, -2, 2);
        Tape t;
        auto la = t.leaf({n}, a, true);
        auto lb = t.leaf({n}, b, true);
        auto root = sum(mul(softmax(la, 2.0), gelu(lb)));
        t.backward(root);
        const auto ga = la.grad();
        const auto gb = lb.grad();
        t.zero_grad();
        t.backward(root);
        ++r.cases;
        if (la.grad() != ga || lb.grad() != gb) ++r.failures;
    }
    return r;
}

CheckResult check_data_properties(uint64_t seed) {
    CheckResult r{"synthetic data: labeler agreement, determinism, balance, round-trip"};
    Rng rng(derive_seed(seed, 11));
    for (Task task : {Task::ColorCount, Task::ShapeAtPosition, Task::MajorityColor}) {
        DatasetSpec spec;
        spec.task = task;
        spec.n_train = 240;
        spec.n_val = 60;
        spec.seed = rng.next_u64();
        spec.noise_level = 0.0;
        auto [train, val] = generate(spec);
        auto [train2, val2] = generate(spec);
        ++r.cases;
        if (!(train.samples == train2.samples && val.samples == val2.samples)) ++r.failures;

        long mismatches = 0;
        for (const auto& ds : {train, val})
            for (const auto& s : ds.samples)
                if (oracles::relabel_from_image(s.image, s.prompt) != s.answer.at(0)) ++mismatches;
        r.cases += static_cast<long>(train.samples.size() + val.samples.size());
        r.failures += mismatches;

        const auto labels = task_label_set(task);
        std::vector<long> counts(labels.size(), 0);
        for (const auto& s : train.samples)
            for (size_t i = 0; i < labels.size(); ++i)
                if (s.answer[0] == labels[i]) ++counts[i];
        const double uniform = static_cast<double>(train.samples.size()) / labels.size();
        ++r.cases;
        for (long c : counts)
            if (std::abs(c - uniform) > 0.2 * uniform) {
                ++r.failures;
                break;
            }
    }
    return r;
}

CheckResult check_kernel_equivalence(uint64_t seed) {
    CheckResult r{"kernel backends bit-identical (scalar vs " +
                  std::string(kernels::name(kernels::active())) + ")"};
    if (!kernels::supported(kernels::Backend::avx2)) {
        r.detail = "avx2 unavailable on this host; scalar only";
        r.cases = 1;
        return r;
    }
    const kernels::Backend saved = kernels::active();
    Rng rng(derive_seed(seed, 12));
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 1 + rng.bounded_int(8), k = 1 + rng.bounded_int(8),
                  n = 1 + rng.bounded_int(18);
        const auto a = rand_vec(rng, static_cast<size_t>(m) * k, -3, 3);
        const auto b = rand_vec(rng, static_cast<size_t>(k) * n, -3, 3);
        std::vector<double> c1(static_cast<size_t>(m) * n), c2(c1.size());
        kernels::force(kernels::Backend::scalar);
        kernels::matmul(a.data(), b.data(), c1.data(), m, k, n);
        kernels::force(kernels::Backend::avx2);
        kernels::matmul(a.data(), b.data(), c2.data(), m, k, n);
        ++r.cases;
        if (c1 != c2) ++r.failures;
    }
    kernels::force(saved);
    return r;
}

CheckResult check_switch_identities(uint64_t seed) {
    CheckResult r{"switch identities: clone collapse, gradient confinement, frozen teacher"};
    ModelConfig mc;
    mc.vision_dim = 8;
    mc.n_visual_tokens = 4;
    mc.lm_dim = 16;
    mc.lm_layers = 1;
    mc.lm_heads = 2;
    mc.vocab_size = 64;
    mc.max_seq_len = 12;

    ToyVLM teacher = ToyVLM::init(mc, derive_seed(seed, 20));
    ToyVLM clone = teacher;

    DatasetSpec dspec;
    dspec.n_train = 8;
    dspec.n_val = 2;
    dspec.seed = derive_seed(seed, 21);
    auto [train, val] = generate(dspec);

    const auto& s = train.samples.front();
    const EncodedSample enc = encode_sample(s);

    {
        Tape tape;
        BoundVLM sb = bind(tape, clone, TrainableFlags{false, false, false});
        BoundVLM tb = bind(tape, teacher, TrainableFlags{false, false, false});
        DiffArray z_t = vlm_forward(tape, tb, s.image, enc.text);
        DiffArray z_sw = switch_forward(tape, sb, tb, s.image, enc.text);
        ++r.cases;
        if (z_sw.values() != z_t.values()) ++r.failures; // bitwise Eq. 5 collapse
        DiffArray z_s = vlm_forward(tape, sb, s.image, enc.text);
        const double align =
            sequence_loss(LossStrategy::DBiLD_RKL, z_t, z_s, enc.ce_mask, 3.0, 64, 8).value();
        const double vsd =
            sequence_loss(LossStrategy::DBiLD_RKL, z_t, z_sw, enc.ce_mask, 3.0, 64, 8).value();
        ++r.cases;
        r.max_error = std::max({r.max_error, std::abs(align), std::abs(vsd)});
        if (std::abs(align) > 1e-10 || std::abs(vsd) > 1e-10) ++r.failures;
    }

    {
        // only the switch term active: every student gradient lands in V
        ToyVLM student = ToyVLM::init(mc, derive_seed(seed, 22));
        student.trainable = {true, true, true};
        DistillConfig cfg;
        cfg.ce_weight = 0.0;
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 1.0;
        Tape tape;
        BoundVLM sb = bind(tape, student);
        BoundVLM tb = bind(tape, teacher, TrainableFlags{false, false, false});
        LossBreakdown bd;
        DiffArray loss = total_loss(tape, sb, &tb, train, {0, 1}, cfg,
                                    StageSpec::of(StageKind::DFT), &bd);
        tape.backward(loss);
        double v_mag = 0, p_mag = 0, l_mag = 0, teacher_mag = 0;
        for (const auto& leaf : sb.leaves[0])
            for (double g : leaf.grad()) v_mag += std::abs(g);
        for (const auto& leaf : sb.leaves[1])
            for (double g : leaf.grad()) p_mag += std::abs(g);
        for (const auto& leaf : sb.leaves[2])
            for (double g : leaf.grad()) l_mag += std::abs(g);
        for (const auto& leaves : tb.leaves)
            for (const auto& leaf : leaves)
                for (double g : leaf.grad()) teacher_mag += std::abs(g);
        ++r.cases;
        if (!(v_mag > 0.0) || p_mag != 0.0 || l_mag != 0.0 || teacher_mag != 0.0) ++r.failures;
        std::ostringstream os;
        os << "grad |V|=" << v_mag << " |P|=" << p_mag << " |L|=" << l_mag
           << " |teacher|=" << teacher_mag;
        r.detail = os.str();
    }
    return r;
}

CheckResult check_checkpoint_roundtrip(uint64_t seed) {
    CheckResult r{"checkpoint round-trip is bit-exact"};
    ModelConfig mc;
    mc.n_visual_tokens = 4;
    mc.lm_dim = 24;
    mc.lm_layers = 2;
    mc.lm_heads = 2;
    mc.max_seq_len = 12;
    ToyVLM model = ToyVLM::init(mc, derive_seed(seed, 30));
    const std::string path = "/tmp/switchkd_verify_ckpt_" + std::to_string(seed) + ".json";
    save_checkpoint(model, path);
    const ToyVLM loaded = load_checkpoint(path);
    ++r.cases;
    if (!(loaded.config == model.config)) ++r.failures;
    auto ga = model.groups();
    auto gb = loaded.groups();
    for (int g = 0; g < 3; ++g) {
        ++r.cases;
        bool same = ga[g]->params.size() == gb[g]->params.size();
        for (size_t i = 0; same && i < ga[g]->params.size(); ++i)
            same = ga[g]->params[i].name == gb[g]->params[i].name &&
                   ga[g]->params[i].values == gb[g]->params[i].values;
        if (!same) ++r.failures;
    }
    std::remove(path.c_str());
    std::remove((path.substr(0, path.size() - 5) + ".bin").c_str());
    return r;
}

} // namespace

std::vector<CheckResult> run_verification(uint64_t seed) {
    std::vector<CheckResult> results;
    results.push_back(check_knee_oracle(seed));
    results.push_back(check_knee_affine(seed));
    results.push_back(check_dbild_oracle(seed));
    results.push_back(check_dbild_invariants(seed));
    results.push_back(check_op_gradients(seed));
    results.push_back(check_dbild_gradient(seed));
    results.push_back(check_ce_gradient(seed));
    results.push_back(check_total_loss_gradient(seed));
    results.push_back(check_softmax_and_sort(seed));
    results.push_back(check_backward_determinism(seed));
    results.push_back(check_data_properties(seed));
    results.push_back(check_kernel_equivalence(seed));
    results.push_back(check_switch_identities(seed));
    results.push_back(check_checkpoint_roundtrip(seed));
    return results;
}

} // namespace switchkd
