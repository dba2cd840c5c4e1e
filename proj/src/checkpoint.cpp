#include "switchkd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "switchkd/config.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need byte swaps");

namespace switchkd {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const ToyVLM& model, const std::string& manifest_path) {
    const fs::path mpath(manifest_path);
    fs::path blob_path = mpath;
    blob_path.replace_extension(".bin");

    json manifest;
    manifest["format"] = "switchkd-checkpoint";
    manifest["version"] = 1;
    manifest["blob"] = blob_path.filename().string();
    manifest["config"] = model_config_to_json(model.config);

    std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
    if (!blob) throw ContractError("save_checkpoint: cannot open " + blob_path.string());

    uint64_t offset = 0;
    json groups = json::array();
    for (const ParamGroup* g : model.groups()) {
        json jg;
        jg["name"] = g->name;
        json params = json::array();
        for (const Parameter& p : g->params) {
            params.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
            blob.write(reinterpret_cast<const char*>(p.values.data()),
                       static_cast<std::streamsize>(p.values.size() * sizeof(double)));
            offset += p.values.size() * sizeof(double);
        }
        jg["params"] = std::move(params);
        groups.push_back(std::move(jg));
    }
    manifest["groups"] = std::move(groups);
    manifest["blob_bytes"] = offset;
    blob.close();
    if (!blob) throw ContractError("save_checkpoint: short write to " + blob_path.string());

    std::ofstream mf(mpath, std::ios::trunc);
    if (!mf) throw ContractError("save_checkpoint: cannot open " + mpath.string());
    mf << manifest.dump(2) << "\n";
}

ToyVLM load_checkpoint(const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw ParseError("load_checkpoint: cannot open " + manifest_path);
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw ParseError("load_checkpoint: " + manifest_path + ": " + e.what());
    }
    if (manifest.value("format", "") != "switchkd-checkpoint")
        throw ParseError("load_checkpoint: " + manifest_path + ": not a checkpoint manifest");

    const ModelConfig cfg = model_config_from_json(manifest.at("config"));
    ToyVLM model = ToyVLM::init(cfg, 0); // layout only; every value is overwritten below

    const fs::path blob_path = fs::path(manifest_path).parent_path() /
                               manifest.at("blob").get<std::string>();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw ParseError("load_checkpoint: cannot open blob " + blob_path.string());

    auto groups = model.groups();
    const json& jgroups = manifest.at("groups");
    if (jgroups.size() != groups.size())
        throw ParseError("load_checkpoint: manifest group count mismatch");
    for (size_t g = 0; g < groups.size(); ++g) {
        const json& jg = jgroups[g];
        if (jg.at("name") != groups[g]->name)
            throw ParseError("load_checkpoint: group order mismatch at " + groups[g]->name);
        const json& jparams = jg.at("params");
        if (jparams.size() != groups[g]->params.size())
            throw ParseError("load_checkpoint: parameter count mismatch in group " +
                             groups[g]->name);
        for (size_t i = 0; i < jparams.size(); ++i) {
            Parameter& p = groups[g]->params[i];
            const json& jp = jparams[i];
            if (jp.at("name") != p.name || jp.at("shape").get<std::vector<int>>() != p.shape)
                throw ParseError("load_checkpoint: parameter layout mismatch at " + p.name);
            blob.seekg(static_cast<std::streamoff>(jp.at("offset").get<uint64_t>()));
            blob.read(reinterpret_cast<char*>(p.values.data()),
                      static_cast<std::streamsize>(p.values.size() * sizeof(double)));
            if (!blob) throw ParseError("load_checkpoint: blob truncated at " + p.name);
        }
    }
    return model;
}

} // namespace switchkd
