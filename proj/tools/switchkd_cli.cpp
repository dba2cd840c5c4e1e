#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "switchkd/checkpoint.hpp"
#include "switchkd/config.hpp"
#include "switchkd/distill.hpp"
#include "switchkd/rng.hpp"
#include "switchkd/synth_data.hpp"
#include "switchkd/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace switchkd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerification = 3;

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

int worker_count(size_t cells) {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("SWITCHKD_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return static_cast<int>(std::min<size_t>(n, cells));
}

struct Paths {
    fs::path out;
    fs::path train() const { return out / "train.jsonl"; }
    fs::path val() const { return out / "val.jsonl"; }
    fs::path teacher() const { return out / "teacher.ckpt.json"; }
};

Dataset load_or_die(const fs::path& p, const char* hint) {
    if (!fs::exists(p))
        throw ContractError("missing dataset file " + p.string() + " (run `switchkd " + hint +
                            "` first)");
    return load_dataset(p.string());
}

// teacher phases see a clean regeneration of the same spec by default; the
// on-disk train file keeps the configured label noise for the student
Dataset teacher_train_view(const RunConfig& cfg, const Dataset& disk_train) {
    if (!cfg.teacher_train.clean_data || cfg.dataset.noise_level == 0.0) return disk_train;
    DatasetSpec clean = cfg.dataset;
    clean.noise_level = 0.0;
    return generate(clean).first;
}

uint64_t teacher_seed(const RunConfig& cfg) { return derive_seed(cfg.dataset.seed, 101); }

MetricsSink jsonl_sink(std::ofstream& out) {
    return [&out](const StepRecord& rec) {
        json j{{"step", rec.step},
               {"stage", to_string(rec.stage)},
               {"ce", rec.losses.ce},
               {"total", rec.losses.total},
               {"lr", rec.lr}};
        if (rec.losses.has_align) j["align"] = rec.losses.align;
        if (rec.losses.has_vsd) j["vsd"] = rec.losses.vsd;
        out << j.dump() << "\n";
    };
}

const char* kSummaryHeader =
    "strategy,switch,scheme,seed,val_accuracy,teacher_agreement,final_ce,final_align,final_vsd,"
    "final_total\n";

struct SummaryRow {
    std::string strategy, sw, scheme, seed;
    double val_accuracy = 0.0;
    std::optional<double> agreement, final_align, final_vsd;
    double final_ce = 0.0, final_total = 0.0;

    std::string csv() const {
        std::ostringstream os;
        os << strategy << "," << sw << "," << scheme << "," << seed << "," << fmt(val_accuracy)
           << "," << (agreement ? fmt(*agreement) : "") << "," << fmt(final_ce) << ","
           << (final_align ? fmt(*final_align) : "") << "," << (final_vsd ? fmt(*final_vsd) : "")
           << "," << fmt(final_total);
        return os.str();
    }
};

SummaryRow summarize(const RunConfig& cfg, const DistillConfig& dc, uint64_t seed,
                     const RunMetrics& rm, const std::string& strategy_label) {
    SummaryRow row;
    row.strategy = strategy_label;
    row.sw = dc.switch_enabled ? "on" : "off";
    row.scheme = to_string(dc.scheme);
    row.seed = std::to_string(seed);
    row.val_accuracy = rm.eval.accuracy;
    if (rm.eval.has_agreement) row.agreement = rm.eval.teacher_agreement;
    row.final_ce = rm.final_losses.ce;
    if (rm.final_losses.has_align) row.final_align = rm.final_losses.align;
    if (rm.final_losses.has_vsd) row.final_vsd = rm.final_losses.vsd;
    row.final_total = rm.final_losses.total;
    (void)cfg;
    return row;
}

int cmd_gen_data(const RunConfig& cfg, const Paths& paths) {
    fs::create_directories(paths.out);
    auto [train, val] = generate(cfg.dataset);
    save_dataset(train, paths.train().string());
    save_dataset(val, paths.val().string());
    std::cout << "wrote " << paths.train().string() << " (" << train.samples.size()
              << " samples) and " << paths.val().string() << " (" << val.samples.size()
              << " samples)\n";
    return kExitOk;
}

int cmd_train_teacher(const RunConfig& cfg, const Paths& paths) {
    const Dataset disk_train = load_or_die(paths.train(), "gen-data");
    const Dataset val = load_or_die(paths.val(), "gen-data");
    const Dataset train = teacher_train_view(cfg, disk_train);

    DistillConfig tc = cfg.distill;
    tc.pt = cfg.teacher_train.pt;
    tc.ft = cfg.teacher_train.sft;

    ToyVLM teacher = ToyVLM::init(cfg.teacher_model, teacher_seed(cfg));
    std::ofstream log(paths.out / "teacher_log.jsonl", std::ios::trunc);
    const RunMetrics rm = run_scheme(Scheme::PT_SFT, teacher, nullptr, train, val, tc,
                                     teacher_seed(cfg), jsonl_sink(log));

    save_checkpoint(teacher, paths.teacher().string());
    DistillConfig label = tc;
    label.switch_enabled = false;
    label.scheme = Scheme::PT_SFT;
    SummaryRow row = summarize(cfg, label, teacher_seed(cfg), rm, "none");
    std::ofstream csv(paths.out / "teacher_summary.csv", std::ios::trunc);
    csv << kSummaryHeader << row.csv() << "\n";
    std::cout << "teacher val_accuracy=" << rm.eval.accuracy << " checkpoint="
              << paths.teacher().string() << "\n";
    return kExitOk;
}

std::string run_name(const DistillConfig& dc, uint64_t seed) {
    return std::string("student_") + to_string(dc.strategy) + "_switch-" +
           (dc.switch_enabled ? "on" : "off") + "_" + to_string(dc.scheme) +
           (dc.init_visual_from_teacher ? "_vsub" : "") + "_seed" + std::to_string(seed);
}

RunMetrics distill_run(const RunConfig& cfg, const DistillConfig& dc, const ToyVLM& teacher,
                       const Dataset& train, const Dataset& val, uint64_t seed,
                       const MetricsSink& sink, ToyVLM* student_out) {
    ToyVLM student = ToyVLM::init(cfg.student_model, derive_seed(seed, 202));
    if (dc.init_visual_from_teacher) {
        check_switch_compatible(student.config, teacher.config);
        student.V = teacher.V;
    }
    const bool needs_teacher =
        dc.scheme == Scheme::PT_DFT || dc.scheme == Scheme::DPT_DFT || dc.scheme == Scheme::DPT_SFT;
    RunMetrics rm = run_scheme(dc.scheme, student, needs_teacher ? &teacher : nullptr, train, val,
                               dc, seed, sink);
    if (!needs_teacher) rm.eval = evaluate(student, val, &teacher); // agreement is still reportable
    if (student_out) *student_out = std::move(student);
    return rm;
}

int cmd_distill(const RunConfig& cfg, const Paths& paths, const DistillConfig& dc, uint64_t seed) {
    const Dataset train = load_or_die(paths.train(), "gen-data");
    const Dataset val = load_or_die(paths.val(), "gen-data");
    if (!fs::exists(paths.teacher()))
        throw ContractError("missing teacher checkpoint " + paths.teacher().string() +
                            " (run `switchkd train-teacher` first)");
    const ToyVLM teacher = load_checkpoint(paths.teacher().string());
    check_switch_compatible(cfg.student_model, teacher.config);

    const std::string name = run_name(dc, seed);
    std::ofstream log(paths.out / (name + "_log.jsonl"), std::ios::trunc);
    ToyVLM student;
    const RunMetrics rm = distill_run(cfg, dc, teacher, train, val, seed, jsonl_sink(log),
                                      &student);
    save_checkpoint(student, (paths.out / (name + ".ckpt.json")).string());

    SummaryRow row = summarize(cfg, dc, seed, rm, to_string(dc.strategy));
    std::ofstream csv(paths.out / (name + "_summary.csv"), std::ios::trunc);
    csv << kSummaryHeader << row.csv() << "\n";
    std::cout << name << ": val_accuracy=" << rm.eval.accuracy;
    if (rm.eval.has_agreement) std::cout << " teacher_agreement=" << rm.eval.teacher_agreement;
    std::cout << "\n";
    return kExitOk;
}

struct AblateCell {
    LossStrategy strategy;
    bool sw;
    Scheme scheme;
    uint64_t seed;
    std::string key() const {
        return std::string(to_string(strategy)) + "_switch-" + (sw ? "on" : "off") + "_" +
               to_string(scheme) + "_seed" + std::to_string(seed);
    }
};

int cmd_ablate(const RunConfig& cfg, const Paths& paths, const std::vector<std::string>& strategies,
               const std::vector<std::string>& switches, const std::vector<std::string>& schemes) {
    const Dataset train = load_or_die(paths.train(), "gen-data");
    const Dataset val = load_or_die(paths.val(), "gen-data");
    if (!fs::exists(paths.teacher()))
        throw ContractError("missing teacher checkpoint " + paths.teacher().string() +
                            " (run `switchkd train-teacher` first)");
    const ToyVLM teacher = load_checkpoint(paths.teacher().string());

    std::vector<AblateCell> cells;
    for (const auto& st : strategies)
        for (const auto& sw : switches)
            for (const auto& sc : schemes)
                for (uint64_t seed : cfg.seeds) {
                    if (sw != "on" && sw != "off")
                        throw ConfigError("--switches entries must be 'on' or 'off'");
                    cells.push_back({strategy_from_string(st), sw == "on",
                                     scheme_from_string(sc), seed});
                }

    const fs::path cell_dir = paths.out / "ablate_cells";
    fs::create_directories(cell_dir);

    std::atomic<size_t> next{0};
    std::mutex io_mutex;
    auto run_cell = [&](const AblateCell& cell) {
        const fs::path cell_path = cell_dir / (cell.key() + ".json");
        if (fs::exists(cell_path)) {
            std::lock_guard lock(io_mutex);
            std::cout << "skip (done): " << cell.key() << "\n";
            return;
        }
        DistillConfig dc = cfg.distill;
        dc.strategy = cell.strategy;
        dc.switch_enabled = cell.sw;
        dc.scheme = cell.scheme;
        const RunMetrics rm = distill_run(cfg, dc, teacher, train, val, cell.seed, {}, nullptr);
        const SummaryRow row = summarize(cfg, dc, cell.seed, rm, to_string(cell.strategy));
        json j{{"csv", row.csv()},
               {"val_accuracy", row.val_accuracy},
               {"strategy", row.strategy},
               {"switch", row.sw},
               {"scheme", row.scheme},
               {"seed", cell.seed}};
        // write-then-rename keeps interrupted cells restartable
        const fs::path tmp = cell_path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << j.dump() << "\n";
        }
        fs::rename(tmp, cell_path);
        std::lock_guard lock(io_mutex);
        std::cout << "done: " << cell.key() << " val_accuracy=" << row.val_accuracy << "\n";
    };

    const int workers = worker_count(cells.size());
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
                    run_cell(cells[i]);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    // deterministic merge in cell-list order, then per-configuration means
    std::ofstream csv(paths.out / "ablation.csv", std::ios::trunc);
    csv << kSummaryHeader;
    for (const auto& cell : cells) {
        std::ifstream in(cell_dir / (cell.key() + ".json"));
        json j;
        in >> j;
        csv << j.at("csv").get<std::string>() << "\n";
    }
    for (const auto& st : strategies)
        for (const auto& sw : switches)
            for (const auto& sc : schemes) {
                double acc = 0;
                size_t n = 0;
                for (uint64_t seed : cfg.seeds) {
                    AblateCell cell{strategy_from_string(st), sw == "on", scheme_from_string(sc),
                                    seed};
                    std::ifstream in(cell_dir / (cell.key() + ".json"));
                    json j;
                    in >> j;
                    acc += j.at("val_accuracy").get<double>();
                    ++n;
                }
                SummaryRow mean_row;
                mean_row.strategy = st;
                mean_row.sw = sw;
                mean_row.scheme = sc;
                mean_row.seed = "mean";
                mean_row.val_accuracy = acc / static_cast<double>(n);
                csv << mean_row.strategy << "," << mean_row.sw << "," << mean_row.scheme
                    << ",mean," << fmt(mean_row.val_accuracy) << ",,,,,\n";
            }
    std::cout << "wrote " << (paths.out / "ablation.csv").string() << " (" << cells.size()
              << " runs)\n";
    return kExitOk;
}

int cmd_verify(uint64_t seed) {
    const auto results = run_verification(seed);
    size_t name_w = 0;
    for (const auto& r : results) name_w = std::max(name_w, r.name.size());
    std::cout << std::left << std::setw(static_cast<int>(name_w) + 2) << "check"
              << std::setw(8) << "cases" << std::setw(10) << "failures" << std::setw(14)
              << "max_error" << "status\n";
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name
                  << std::setw(8) << r.cases << std::setw(10) << r.failures << std::setw(14)
                  << std::setprecision(3) << r.max_error << (r.passed() ? "PASS" : "FAIL");
        if (!r.detail.empty()) std::cout << "  [" << r.detail << "]";
        std::cout << "\n";
        all_pass = all_pass && r.passed();
    }
    return all_pass ? kExitOk : kExitVerification;
}

int cmd_eval(const RunConfig& cfg, const Paths& paths, const std::string& checkpoint,
             const std::string& split, const std::string& reference) {
    const ToyVLM model = load_checkpoint(checkpoint);
    const Dataset data = split == "train" ? load_or_die(paths.train(), "gen-data")
                                          : load_or_die(paths.val(), "gen-data");
    std::optional<ToyVLM> ref;
    if (!reference.empty()) ref.emplace(load_checkpoint(reference));
    const EvalResult r = evaluate(model, data, ref ? &*ref : nullptr);
    json j{{"accuracy", r.accuracy}, {"split", split}, {"samples", data.samples.size()}};
    if (r.has_agreement) j["agreement"] = r.teacher_agreement;
    std::cout << j.dump() << "\n";
    (void)cfg;
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Visual-switch knowledge distillation laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    uint64_t seed_flag = 0;
    bool seed_given = false;
    app.add_option("--config", config_path, "run configuration document (JSON)");
    app.add_option("--out", out_override, "output directory (overrides config)");
    app.add_option("--seed", seed_flag, "seed override")->each([&](const std::string&) {
        seed_given = true;
    });

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset files");
    auto* teach = app.add_subcommand("train-teacher", "train and checkpoint the teacher (PT then SFT)");
    auto* dist = app.add_subcommand("distill", "train a student under the configured scheme");
    std::string strategy_flag, scheme_flag;
    bool switch_on = false, switch_off = false;
    dist->add_option("--strategy", strategy_flag,
                     "fkl|rkl|bild-fkl|bild-rkl|dbild-fkl|dbild-rkl");
    dist->add_flag("--switch", switch_on, "enable the visual-switch pathway");
    dist->add_flag("--no-switch", switch_off, "disable the visual-switch pathway");
    dist->add_option("--scheme", scheme_flag, "pt-sft|dpt-sft|pt-dft|dpt-dft");
    bool init_v_from_teacher = false;
    dist->add_flag("--init-visual-from-teacher", init_v_from_teacher,
                   "start the student visual encoder from the teacher's (encoder substitution)");

    auto* abl = app.add_subcommand("ablate", "sweep strategies/switch/schemes over the seed list");
    std::string strategies_csv = "fkl,rkl,bild-fkl,bild-rkl,dbild-fkl,dbild-rkl";
    std::string switches_csv, schemes_csv;
    abl->add_option("--strategies", strategies_csv, "comma-separated strategy list");
    abl->add_option("--switches", switches_csv, "comma-separated on/off list");
    abl->add_option("--schemes", schemes_csv, "comma-separated scheme list");

    auto* ver = app.add_subcommand("verify", "run the property suite and report per-check results");
    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ckpt_path, split = "val", reference_path;
    evl->add_option("--checkpoint", ckpt_path, "checkpoint manifest path")->required();
    evl->add_option("--split", split, "val|train");
    evl->add_option("--reference", reference_path, "reference checkpoint for agreement");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig::defaults() : load_run_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        Paths paths{fs::path(cfg.out_dir)};

        if (gen->parsed()) return cmd_gen_data(cfg, paths);
        if (teach->parsed()) return cmd_train_teacher(cfg, paths);
        if (dist->parsed()) {
            DistillConfig dc = cfg.distill;
            if (!strategy_flag.empty()) dc.strategy = strategy_from_string(strategy_flag);
            if (switch_on && switch_off)
                throw ConfigError("--switch and --no-switch are mutually exclusive");
            if (switch_on) dc.switch_enabled = true;
            if (switch_off) dc.switch_enabled = false;
            if (!scheme_flag.empty()) dc.scheme = scheme_from_string(scheme_flag);
            if (init_v_from_teacher) dc.init_visual_from_teacher = true;
            const uint64_t seed = seed_given ? seed_flag : cfg.seeds.front();
            return cmd_distill(cfg, paths, dc, seed);
        }
        if (abl->parsed()) {
            auto split_csv = [](const std::string& s) {
                std::vector<std::string> out;
                std::stringstream ss(s);
                std::string item;
                while (std::getline(ss, item, ','))
                    if (!item.empty()) out.push_back(item);
                return out;
            };
            const auto strategies = split_csv(strategies_csv);
            const auto switches = switches_csv.empty()
                                      ? std::vector<std::string>{cfg.distill.switch_enabled ? "on"
                                                                                            : "off"}
                                      : split_csv(switches_csv);
            const auto schemes = schemes_csv.empty()
                                     ? std::vector<std::string>{to_string(cfg.distill.scheme)}
                                     : split_csv(schemes_csv);
            return cmd_ablate(cfg, paths, strategies, switches, schemes);
        }
        if (ver->parsed()) return cmd_verify(seed_given ? seed_flag : 12345);
        if (evl->parsed()) return cmd_eval(cfg, paths, ckpt_path, split, reference_path);
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
