#include "switchkd/config.hpp"

#include <fstream>
#include <set>

namespace switchkd {

using nlohmann::json;

namespace {

// Tracks which keys a scope consumed; anything left over is a config error
// that names the offending key.
class StrictScope {
public:
    StrictScope(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    void mark(const char* key) { seen_.insert(key); }

    const json& sub(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError(path_ + ": missing key '" + std::string(key) + "'");
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json stage_hyper_to_json(const StageHyper& h) {
    return {{"learning_rate", h.learning_rate},
            {"batch_size", h.batch_size},
            {"epochs", h.epochs},
            {"warmup_ratio", h.warmup_ratio},
            {"schedule", h.schedule}};
}

StageHyper stage_hyper_from_json(const json& j, const std::string& path, StageHyper defaults) {
    StrictScope s(j, path);
    s.get("learning_rate", defaults.learning_rate);
    s.get("batch_size", defaults.batch_size);
    s.get("epochs", defaults.epochs);
    s.get("warmup_ratio", defaults.warmup_ratio);
    s.get("schedule", defaults.schedule);
    s.finish();
    if (defaults.learning_rate < 0) throw ConfigError(path + ".learning_rate: must be >= 0");
    if (defaults.batch_size < 1) throw ConfigError(path + ".batch_size: must be >= 1");
    if (defaults.epochs < 1) throw ConfigError(path + ".epochs: must be >= 1");
    if (defaults.warmup_ratio < 0 || defaults.warmup_ratio > 1)
        throw ConfigError(path + ".warmup_ratio: must lie in [0, 1]");
    if (defaults.schedule != "cosine" && defaults.schedule != "constant")
        throw ConfigError(path + ".schedule: must be 'cosine' or 'constant'");
    return defaults;
}

} // namespace

json model_config_to_json(const ModelConfig& cfg) {
    return {{"image", {cfg.image_h, cfg.image_w, cfg.image_c}},
            {"vision_dim", cfg.vision_dim},
            {"n_visual_tokens", cfg.n_visual_tokens},
            {"lm_dim", cfg.lm_dim},
            {"lm_layers", cfg.lm_layers},
            {"lm_heads", cfg.lm_heads},
            {"vocab_size", cfg.vocab_size},
            {"max_seq_len", cfg.max_seq_len}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    StrictScope s(j, "model");
    if (s.has("image")) {
        const auto image = s.sub("image").get<std::vector<int>>();
        if (image.size() != 3) throw ConfigError("model.image: expected [h, w, c]");
        cfg.image_h = image[0];
        cfg.image_w = image[1];
        cfg.image_c = image[2];
    }
    s.get("vision_dim", cfg.vision_dim);
    s.get("n_visual_tokens", cfg.n_visual_tokens);
    s.get("lm_dim", cfg.lm_dim);
    s.get("lm_layers", cfg.lm_layers);
    s.get("lm_heads", cfg.lm_heads);
    s.get("vocab_size", cfg.vocab_size);
    s.get("max_seq_len", cfg.max_seq_len);
    s.finish();
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    cfg.dataset = DatasetSpec{2000, 500, 1234, Task::ColorCount, 0.25};

    cfg.teacher_model.vision_dim = 16;
    cfg.teacher_model.n_visual_tokens = 4;
    cfg.teacher_model.lm_dim = 64;
    cfg.teacher_model.lm_layers = 2;
    cfg.teacher_model.lm_heads = 2;

    cfg.student_model.vision_dim = 16;
    cfg.student_model.n_visual_tokens = 4;
    cfg.student_model.lm_dim = 12;
    cfg.student_model.lm_layers = 1;
    cfg.student_model.lm_heads = 2;

    // desk-scale stage hyperparameters; toy models start from random weights,
    // so the fine-tuning stages need a larger step size than pretrained
    // backbones would
    cfg.distill.pt = StageHyper{1e-3, 32, 2};
    cfg.distill.ft = StageHyper{3e-3, 16, 8};
    cfg.teacher_train.pt = StageHyper{1e-3, 32, 2};
    cfg.teacher_train.sft = StageHyper{3e-3, 32, 24};
    return cfg;
}

void RunConfig::validate() const {
    dataset.validate();
    teacher_model.validate();
    student_model.validate();
    if (teacher_model.vocab_size < vocab::kMinVocabSize)
        throw ConfigError("teacher_model.vocab_size: below the task vocabulary (" +
                          std::to_string(vocab::kMinVocabSize) + ")");
    if (student_model.vocab_size < vocab::kMinVocabSize)
        throw ConfigError("student_model.vocab_size: below the task vocabulary");
    if (dataset.task == Task::ColorCount || dataset.task == Task::MajorityColor ||
        dataset.task == Task::ShapeAtPosition) {
        if (teacher_model.image_h != kImageH || teacher_model.image_w != kImageW ||
            teacher_model.image_c != kImageC)
            throw ConfigError("teacher_model.image: synthetic tasks render 8x8x3 images");
        if (student_model.image_h != kImageH || student_model.image_w != kImageW ||
            student_model.image_c != kImageC)
            throw ConfigError("student_model.image: synthetic tasks render 8x8x3 images");
    }
    if (distill.lambda1 < 0 || distill.lambda2 < 0)
        throw ConfigError("distill: lambda1/lambda2 must be >= 0");
    if (distill.tau <= 0) throw ConfigError("distill.tau: must be positive");
    if (distill.k_cap < 2) throw ConfigError("distill.k_cap: must be >= 2");
    if (distill.fixed_k < 2) throw ConfigError("distill.fixed_k: must be >= 2");
    if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["dataset"] = {{"task", to_string(cfg.dataset.task)},
                    {"n_train", cfg.dataset.n_train},
                    {"n_val", cfg.dataset.n_val},
                    {"seed", cfg.dataset.seed},
                    {"noise_level", cfg.dataset.noise_level}};
    j["teacher_model"] = model_config_to_json(cfg.teacher_model);
    j["student_model"] = model_config_to_json(cfg.student_model);
    j["distill"] = {{"tau", cfg.distill.tau},
                    {"lambda1", cfg.distill.lambda1},
                    {"lambda2", cfg.distill.lambda2},
                    {"strategy", to_string(cfg.distill.strategy)},
                    {"fixed_k", cfg.distill.fixed_k},
                    {"switch", cfg.distill.switch_enabled},
                    {"scheme", to_string(cfg.distill.scheme)},
                    {"k_cap", cfg.distill.k_cap},
                    {"ce_weight", cfg.distill.ce_weight},
                    {"ce_uses_tau", cfg.distill.ce_uses_tau},
                    {"distill_answer_only", cfg.distill.distill_answer_only},
                    {"init_visual_from_teacher", cfg.distill.init_visual_from_teacher},
                    {"grad_clip", cfg.distill.grad_clip},
                    {"weight_decay", cfg.distill.weight_decay},
                    {"pt_stage", stage_hyper_to_json(cfg.distill.pt)},
                    {"ft_stage", stage_hyper_to_json(cfg.distill.ft)}};
    j["teacher_train"] = {{"clean_data", cfg.teacher_train.clean_data},
                          {"pt_stage", stage_hyper_to_json(cfg.teacher_train.pt)},
                          {"sft_stage", stage_hyper_to_json(cfg.teacher_train.sft)}};
    j["out_dir"] = cfg.out_dir;
    j["seeds"] = cfg.seeds;
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg = RunConfig::defaults();
    StrictScope root(j, "config");

    if (root.has("dataset")) {
        StrictScope s(root.sub("dataset"), "dataset");
        std::string task = to_string(cfg.dataset.task);
        s.get("task", task);
        cfg.dataset.task = task_from_string(task);
        s.get("n_train", cfg.dataset.n_train);
        s.get("n_val", cfg.dataset.n_val);
        s.get("seed", cfg.dataset.seed);
        s.get("noise_level", cfg.dataset.noise_level);
        s.finish();
    } else {
        root.mark("dataset");
    }

    if (root.has("teacher_model")) cfg.teacher_model = model_config_from_json(root.sub("teacher_model"));
    else root.mark("teacher_model");
    if (root.has("student_model")) cfg.student_model = model_config_from_json(root.sub("student_model"));
    else root.mark("student_model");

    if (root.has("distill")) {
        StrictScope s(root.sub("distill"), "distill");
        s.get("tau", cfg.distill.tau);
        s.get("lambda1", cfg.distill.lambda1);
        s.get("lambda2", cfg.distill.lambda2);
        std::string strategy = to_string(cfg.distill.strategy);
        s.get("strategy", strategy);
        cfg.distill.strategy = strategy_from_string(strategy);
        s.get("fixed_k", cfg.distill.fixed_k);
        s.get("switch", cfg.distill.switch_enabled);
        std::string scheme = to_string(cfg.distill.scheme);
        s.get("scheme", scheme);
        cfg.distill.scheme = scheme_from_string(scheme);
        s.get("k_cap", cfg.distill.k_cap);
        s.get("ce_weight", cfg.distill.ce_weight);
        s.get("ce_uses_tau", cfg.distill.ce_uses_tau);
        s.get("distill_answer_only", cfg.distill.distill_answer_only);
        s.get("init_visual_from_teacher", cfg.distill.init_visual_from_teacher);
        s.get("grad_clip", cfg.distill.grad_clip);
        s.get("weight_decay", cfg.distill.weight_decay);
        if (s.has("pt_stage"))
            cfg.distill.pt = stage_hyper_from_json(s.sub("pt_stage"), "distill.pt_stage",
                                                   cfg.distill.pt);
        else s.mark("pt_stage");
        if (s.has("ft_stage"))
            cfg.distill.ft = stage_hyper_from_json(s.sub("ft_stage"), "distill.ft_stage",
                                                   cfg.distill.ft);
        else s.mark("ft_stage");
        s.finish();
    } else {
        root.mark("distill");
    }

    if (root.has("teacher_train")) {
        StrictScope s(root.sub("teacher_train"), "teacher_train");
        s.get("clean_data", cfg.teacher_train.clean_data);
        if (s.has("pt_stage"))
            cfg.teacher_train.pt = stage_hyper_from_json(s.sub("pt_stage"),
                                                         "teacher_train.pt_stage",
                                                         cfg.teacher_train.pt);
        else s.mark("pt_stage");
        if (s.has("sft_stage"))
            cfg.teacher_train.sft = stage_hyper_from_json(s.sub("sft_stage"),
                                                          "teacher_train.sft_stage",
                                                          cfg.teacher_train.sft);
        else s.mark("sft_stage");
        s.finish();
    } else {
        root.mark("teacher_train");
    }

    root.get("out_dir", cfg.out_dir);
    root.get("seeds", cfg.seeds);
    root.finish();
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace switchkd
