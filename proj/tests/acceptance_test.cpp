// Acceptance suite: one test case per criterion, each printing a single
// [PASS]/[FAIL] line. Criterion 8 trains real models and dominates the
// runtime; SWITCHKD_THREADS caps its worker count.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "switchkd/checkpoint.hpp"
#include "switchkd/config.hpp"
#include "switchkd/distill.hpp"
#include "switchkd/oracles.hpp"
#include "switchkd/rng.hpp"
#include "switchkd/verify.hpp"

using namespace switchkd;
namespace fs = std::filesystem;

namespace {

constexpr uint64_t kSeed = 20240801;

struct Criterion {
    int number;
    std::string label;
    bool ok = true;
    std::ostringstream detail;

    ~Criterion() {
        std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << number << ": " << label;
        const std::string d = detail.str();
        if (!d.empty()) std::cout << " (" << d << ")";
        std::cout << std::endl;
    }
    void require(bool cond, const std::string& why) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << why;
        }
        CHECK(cond);
    }
};

const CheckResult& find_check(const std::vector<CheckResult>& results, const std::string& needle) {
    for (const auto& r : results)
        if (r.name.find(needle) != std::string::npos) return r;
    throw std::runtime_error("verification check not found: " + needle);
}

// one shared verification run feeds criteria 1-5
const std::vector<CheckResult>& verification() {
    static const std::vector<CheckResult> results = run_verification(kSeed);
    return results;
}

fs::path work_dir() {
    static const fs::path p = [] {
        fs::path dir = fs::temp_directory_path() / "switchkd_acceptance";
        fs::remove_all(dir);
        fs::create_directories(dir);
        return dir;
    }();
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SWITCHKD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

int acceptance_workers() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("SWITCHKD_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return static_cast<int>(n);
}

} // namespace

TEST_CASE("criterion 1: knee oracle equivalence") {
    Criterion c{1, "knee_index matches brute-force Kneedle on 1000 vectors, 100% exact, < 10 s"};
    const auto t0 = std::chrono::steady_clock::now();
    const auto& r = find_check(verification(), "knee oracle");
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.detail << r.cases << " cases, " << r.failures << " mismatches";
    c.require(r.cases >= 1000 && r.failures == 0, "oracle mismatch");
    c.require(elapsed < 10.0, "too slow");
}

TEST_CASE("criterion 2: knee affine invariance") {
    Criterion c{2, "knee_index(a*z+b) == knee_index(z) on 1000 random triples"};
    const auto& r = find_check(verification(), "knee affine");
    c.detail << r.cases << " cases, " << r.failures << " violations";
    c.require(r.cases >= 1000 && r.failures == 0, "affine invariance violated");
}

TEST_CASE("criterion 3: dbild oracle equivalence") {
    Criterion c{3, "dbild_loss matches the straight-line two-branch reference within 1e-10"};
    const auto& r = find_check(verification(), "dbild oracle");
    c.detail << r.cases << " cases, max |diff| = " << r.max_error;
    c.require(r.cases >= 200 && r.failures == 0, "oracle disagreement");
}

TEST_CASE("criterion 4: dbild invariants") {
    Criterion c{4, "zero at equality, exact shift invariance, non-negativity, pair count"};
    const auto& r = find_check(verification(), "dbild invariants");
    c.detail << r.cases << " cases, " << r.failures << " violations";
    c.require(r.failures == 0, "invariant violated");
}

TEST_CASE("criterion 5: gradient correctness") {
    Criterion c{5, "dbild/ce/total_loss gradients match finite differences within tolerance"};
    const auto& dbild = find_check(verification(), "dbild gradient");
    const auto& ce = find_check(verification(), "ce gradient");
    const auto& total = find_check(verification(), "total_loss gradient");
    c.detail << "dbild " << dbild.cases << " cases (worst " << dbild.max_error << "x tol), ce "
             << ce.cases << " (" << ce.max_error << "x), total " << total.cases << " ("
             << total.max_error << "x)";
    c.require(dbild.cases >= 50 && dbild.failures == 0, "dbild gradient");
    c.require(ce.cases >= 50 && ce.failures == 0, "ce gradient");
    c.require(total.cases >= 50 && total.failures == 0, "total_loss gradient");
}

TEST_CASE("criterion 6: frozen teacher and switch confinement") {
    Criterion c{6, "100-step DFT leaves teacher gradients at 0; switch-only gradients hit V only"};
    ModelConfig mc;
    mc.vision_dim = 8;
    mc.n_visual_tokens = 4;
    mc.lm_dim = 16;
    mc.lm_layers = 1;
    mc.lm_heads = 2;
    mc.max_seq_len = 12;

    DatasetSpec spec;
    spec.n_train = 208; // 13 steps/epoch at batch 16
    spec.n_val = 32;
    spec.seed = derive_seed(kSeed, 61);
    auto [train, val] = generate(spec);

    ToyVLM teacher = ToyVLM::init(mc, derive_seed(kSeed, 62));
    ToyVLM student = ToyVLM::init(mc, derive_seed(kSeed, 63));
    DistillConfig cfg;
    cfg.ft = StageHyper{1e-3, 16, 8};
    TrainState st =
        train_stage(student, &teacher, train, StageSpec::of(StageKind::DFT), cfg, kSeed);
    c.detail << st.steps_done << " steps, teacher |grad| = " << st.teacher_grad_magnitude;
    c.require(st.steps_done >= 100, "fewer than 100 steps");
    c.require(st.teacher_grad_magnitude == 0.0, "teacher received gradient");

    // L_VSD alone: nonzero student gradients appear only in the V group
    ToyVLM probe = ToyVLM::init(mc, derive_seed(kSeed, 64));
    probe.trainable = {true, true, true};
    DistillConfig only_vsd;
    only_vsd.ce_weight = 0.0;
    only_vsd.lambda1 = 0.0;
    only_vsd.lambda2 = 1.0;
    Tape tape;
    BoundVLM sb = bind(tape, probe);
    BoundVLM tb = bind(tape, teacher, TrainableFlags{false, false, false});
    tape.backward(total_loss(tape, sb, &tb, train, {0, 1, 2, 3}, only_vsd,
                             StageSpec::of(StageKind::DFT), nullptr));
    double mags[3] = {0, 0, 0};
    for (int g = 0; g < 3; ++g)
        for (const auto& leaf : sb.leaves[g])
            for (double x : leaf.grad()) mags[g] += std::abs(x);
    c.detail << "; vsd-only |grad| V/P/L = " << mags[0] << "/" << mags[1] << "/" << mags[2];
    c.require(mags[0] > 0.0, "V received no gradient");
    c.require(mags[1] == 0.0 && mags[2] == 0.0, "gradient escaped the V group");
}

TEST_CASE("criterion 7: collapse identities") {
    Criterion c{7, "lambda = 0 reproduces SFT bit for bit; teacher clone zeroes both losses"};
    ModelConfig mc;
    mc.vision_dim = 8;
    mc.n_visual_tokens = 4;
    mc.lm_dim = 16;
    mc.lm_layers = 1;
    mc.lm_heads = 2;
    mc.max_seq_len = 12;

    DatasetSpec spec;
    spec.n_train = 96;
    spec.n_val = 16;
    spec.seed = derive_seed(kSeed, 71);
    auto [train, val] = generate(spec);
    ToyVLM teacher = ToyVLM::init(mc, derive_seed(kSeed, 72));

    DistillConfig fast;
    fast.pt = StageHyper{1e-3, 16, 1};
    fast.ft = StageHyper{1e-3, 16, 2};

    ToyVLM s1 = ToyVLM::init(mc, derive_seed(kSeed, 73));
    DistillConfig collapsed = fast;
    collapsed.lambda1 = 0.0;
    collapsed.lambda2 = 0.0;
    TrainState dft =
        train_stage(s1, &teacher, train, StageSpec::of(StageKind::DFT), collapsed, 5);
    ToyVLM s2 = ToyVLM::init(mc, derive_seed(kSeed, 73));
    TrainState sft = train_stage(s2, nullptr, train, StageSpec::of(StageKind::SFT), fast, 5);
    bool streams_equal = dft.log.size() == sft.log.size();
    for (size_t i = 0; streams_equal && i < dft.log.size(); ++i)
        streams_equal = dft.log[i].losses.ce == sft.log[i].losses.ce &&
                        dft.log[i].losses.total == sft.log[i].losses.total;
    bool params_equal = true;
    for (int g = 0; g < 3 && params_equal; ++g)
        for (size_t i = 0; i < s1.groups()[g]->params.size() && params_equal; ++i)
            params_equal = s1.groups()[g]->params[i].values == s2.groups()[g]->params[i].values;
    c.detail << dft.log.size() << " steps compared";
    c.require(streams_equal, "loss streams differ");
    c.require(params_equal, "final parameters differ");

    // clone identity
    ToyVLM clone = teacher;
    const auto& s = train.samples.front();
    const EncodedSample enc = encode_sample(s);
    Tape tape;
    BoundVLM cb = bind(tape, clone, TrainableFlags{true, true, true});
    BoundVLM tb = bind(tape, teacher, TrainableFlags{false, false, false});
    DiffArray z_t = vlm_forward(tape, tb, s.image, enc.text);
    DiffArray z_sw = switch_forward(tape, cb, tb, s.image, enc.text);
    DiffArray z_s = vlm_forward(tape, cb, s.image, enc.text);
    const double align =
        sequence_loss(LossStrategy::DBiLD_RKL, z_t, z_s, enc.ce_mask, 3.0, 64, 8).value();
    const double vsd =
        sequence_loss(LossStrategy::DBiLD_RKL, z_t, z_sw, enc.ce_mask, 3.0, 64, 8).value();
    c.require(z_sw.values() == z_t.values(), "z_switch != z_t for cloned student");
    c.require(std::abs(align) < 1e-10 && std::abs(vsd) < 1e-10, "clone losses not zero");
}

TEST_CASE("criterion 8: directional distillation gain") {
    Criterion c{8, "PT-DFT + DBiLD-RKL + switch beats PT-SFT, and switch beats no-switch"};
    const auto t0 = std::chrono::steady_clock::now();

    const RunConfig cfg = RunConfig::defaults();
    auto [train, val] = generate(cfg.dataset);
    DatasetSpec clean = cfg.dataset;
    clean.noise_level = 0.0;
    const Dataset teacher_train_data = generate(clean).first;

    // teacher: PT then SFT on the clean view
    DistillConfig tc = cfg.distill;
    tc.pt = cfg.teacher_train.pt;
    tc.ft = cfg.teacher_train.sft;
    ToyVLM teacher = ToyVLM::init(cfg.teacher_model, derive_seed(cfg.dataset.seed, 101));
    const RunMetrics teacher_rm = run_scheme(Scheme::PT_SFT, teacher, nullptr, teacher_train_data,
                                             val, tc, derive_seed(cfg.dataset.seed, 101));
    c.detail << "teacher acc " << teacher_rm.eval.accuracy;
    c.require(teacher_rm.eval.accuracy >= 0.95, "teacher below 0.95");

    struct Cell {
        int config; // 0 = switch, 1 = no-switch, 2 = pt-sft
        uint64_t seed;
        double accuracy = 0.0;
    };
    std::vector<Cell> cells;
    for (int config = 0; config < 3; ++config)
        for (uint64_t seed : cfg.seeds) cells.push_back({config, seed});

    std::atomic<size_t> next{0};
    auto run_cell = [&](Cell& cell) {
        DistillConfig dc = cfg.distill;
        dc.scheme = cell.config == 2 ? Scheme::PT_SFT : Scheme::PT_DFT;
        dc.switch_enabled = cell.config == 0;
        ToyVLM student = ToyVLM::init(cfg.student_model, derive_seed(cell.seed, 202));
        const RunMetrics rm = run_scheme(dc.scheme, student, cell.config == 2 ? nullptr : &teacher,
                                         train, val, dc, cell.seed);
        cell.accuracy = rm.eval.accuracy;
    };
    const int workers = std::min<int>(acceptance_workers(), static_cast<int>(cells.size()));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
                run_cell(cells[i]);
        });
    for (auto& t : pool) t.join();

    std::vector<double> acc_switch, acc_noswitch, acc_sft;
    for (const auto& cell : cells)
        (cell.config == 0 ? acc_switch : cell.config == 1 ? acc_noswitch : acc_sft)
            .push_back(cell.accuracy);

    const double m_sw = mean_of(acc_switch), m_nosw = mean_of(acc_noswitch),
                 m_sft = mean_of(acc_sft);
    const double s_sw = sample_std(acc_switch), s_nosw = sample_std(acc_noswitch),
                 s_sft = sample_std(acc_sft);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    c.detail << "; switch " << m_sw << "+-" << s_sw << ", no-switch " << m_nosw << "+-" << s_nosw
             << ", pt-sft " << m_sft << "+-" << s_sft << ", " << elapsed << " s";
    c.require(m_sw - m_sft > std::max(s_sw, s_sft), "distillation gain within seed noise");
    c.require(m_sw - m_nosw > std::max(s_sw, s_nosw), "switch gain within seed noise");
    c.require(elapsed < 1800.0, "over the 30-minute budget");
}

TEST_CASE("criterion 9: scheme ablation runs") {
    Criterion c{9, "all four schemes complete; cmd_ablate emits the 6x3 fixed-schema table"};

    // engine level: every scheme completes on a 2k-sample dataset
    ModelConfig mc;
    mc.vision_dim = 8;
    mc.n_visual_tokens = 4;
    mc.lm_dim = 16;
    mc.lm_layers = 1;
    mc.lm_heads = 2;
    mc.max_seq_len = 12;
    DatasetSpec spec;
    spec.n_train = 1600;
    spec.n_val = 400;
    spec.seed = derive_seed(kSeed, 91);
    auto [train, val] = generate(spec);
    ToyVLM teacher = ToyVLM::init(mc, derive_seed(kSeed, 92));
    DistillConfig fast;
    fast.pt = StageHyper{1e-3, 32, 1};
    fast.ft = StageHyper{1e-3, 32, 1};
    for (Scheme scheme : {Scheme::PT_SFT, Scheme::DPT_SFT, Scheme::PT_DFT, Scheme::DPT_DFT}) {
        ToyVLM student = ToyVLM::init(mc, derive_seed(kSeed, 93));
        const bool needs_teacher = scheme != Scheme::PT_SFT;
        try {
            run_scheme(scheme, student, needs_teacher ? &teacher : nullptr, train, val, fast,
                       kSeed);
        } catch (const std::exception& e) {
            c.require(false, std::string(to_string(scheme)) + " failed: " + e.what());
        }
    }

    // CLI level: 6 strategies x 3 seeds through cmd_ablate
    const fs::path dir = work_dir() / "ablate";
    fs::create_directories(dir);
    const fs::path cfg_path = dir / "cfg.json";
    {
        RunConfig small = RunConfig::defaults();
        small.dataset.n_train = 320;
        small.dataset.n_val = 80;
        small.student_model.lm_dim = 16;
        small.distill.pt = StageHyper{1e-3, 32, 1};
        small.distill.ft = StageHyper{3e-3, 16, 1};
        small.teacher_train.pt = StageHyper{1e-3, 32, 1};
        small.teacher_train.sft = StageHyper{3e-3, 32, 2};
        small.out_dir = dir.string();
        std::ofstream out(cfg_path);
        out << run_config_to_json(small).dump(2);
    }
    c.require(run_cli("--config " + cfg_path.string() + " gen-data") == 0, "gen-data failed");
    c.require(run_cli("--config " + cfg_path.string() + " train-teacher") == 0,
              "train-teacher failed");
    c.require(run_cli("--config " + cfg_path.string() + " ablate") == 0, "ablate failed");

    std::ifstream csv(dir / "ablation.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(csv, line)) lines.push_back(line);
    c.detail << lines.size() << " csv lines";
    c.require(!lines.empty() &&
                  lines[0] == "strategy,switch,scheme,seed,val_accuracy,teacher_agreement,"
                              "final_ce,final_align,final_vsd,final_total",
              "header mismatch");
    c.require(lines.size() == 1 + 18 + 6, "expected 18 run rows and 6 mean rows");
    int mean_rows = 0;
    for (const auto& l : lines)
        if (l.find(",mean,") != std::string::npos) ++mean_rows;
    c.require(mean_rows == 6, "mean summary rows missing");

    // a rerun skips every finished cell and rewrites the same bytes
    const std::string before = slurp(dir / "ablation.csv");
    c.require(run_cli("--config " + cfg_path.string() + " ablate") == 0, "ablate rerun failed");
    c.require(slurp(dir / "ablation.csv") == before, "resumed sweep changed the table");
}

TEST_CASE("criterion 10: reproducibility") {
    Criterion c{10, "identical invocations produce byte-identical datasets, checkpoints, metrics"};
    const fs::path a = work_dir() / "repro_a";
    const fs::path b = work_dir() / "repro_b";
    const fs::path cfg_path = work_dir() / "repro_cfg.json";
    {
        RunConfig small = RunConfig::defaults();
        small.dataset.n_train = 240;
        small.dataset.n_val = 60;
        small.student_model.lm_dim = 16;
        small.teacher_model.lm_dim = 32;
        small.teacher_model.lm_layers = 1;
        small.distill.pt = StageHyper{1e-3, 16, 1};
        small.distill.ft = StageHyper{3e-3, 16, 1};
        small.teacher_train.pt = StageHyper{1e-3, 16, 1};
        small.teacher_train.sft = StageHyper{3e-3, 16, 2};
        std::ofstream out(cfg_path);
        out << run_config_to_json(small).dump(2);
    }
    for (const fs::path& dir : {a, b}) {
        const std::string base = "--config " + cfg_path.string() + " --out " + dir.string() + " ";
        c.require(run_cli(base + "gen-data") == 0, "gen-data failed");
        c.require(run_cli(base + "train-teacher") == 0, "train-teacher failed");
        c.require(run_cli(base + "--seed 1 distill") == 0, "distill failed");
    }
    for (const char* f :
         {"train.jsonl", "val.jsonl", "teacher.ckpt.json", "teacher.ckpt.bin",
          "teacher_log.jsonl", "teacher_summary.csv",
          "student_dbild-rkl_switch-on_pt-dft_seed1.ckpt.json",
          "student_dbild-rkl_switch-on_pt-dft_seed1.ckpt.bin",
          "student_dbild-rkl_switch-on_pt-dft_seed1_log.jsonl",
          "student_dbild-rkl_switch-on_pt-dft_seed1_summary.csv"}) {
        const std::string ca = slurp(a / f), cb = slurp(b / f);
        c.require(!ca.empty() && ca == cb, std::string(f) + " differs or is empty");
    }
}
