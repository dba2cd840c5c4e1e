#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "switchkd/distill.hpp"
#include "switchkd/synth_data.hpp"
#include "switchkd/toy_vlm.hpp"

namespace switchkd {

// Teacher-building recipe: PT then SFT. The teacher trains on a clean
// (noise-free) regeneration of the dataset spec by default; the emitted train
// file keeps the configured noise for the student phases.
struct TeacherTrainConfig {
    bool clean_data = true;
    StageHyper pt{1e-3, 32, 2};
    StageHyper sft{3e-3, 32, 8};
};

// One validated document drives every command; flags override fields.
struct RunConfig {
    DatasetSpec dataset;
    ModelConfig teacher_model;
    ModelConfig student_model;
    DistillConfig distill;
    TeacherTrainConfig teacher_train;
    std::string out_dir = "runs";
    std::vector<uint64_t> seeds{1, 2, 3};

    // Calibrated desk-scale defaults; used whenever --config is omitted.
    static RunConfig defaults();
    void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& cfg);
// Strict: unknown keys anywhere in the document are rejected by name.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

} // namespace switchkd
