#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "switchkd/autodiff.hpp"

namespace switchkd {

// Architecture of one modular model M = (V, P, L). Teacher and student must
// agree on image size, vision_dim, n_visual_tokens and vocab_size for the
// switch pathway to be well-typed; they are free to differ in lm_dim/layers.
struct ModelConfig {
    int image_h = 8, image_w = 8, image_c = 3;
    int vision_dim = 16;
    int n_visual_tokens = 4; // perfect square; tiles the image
    int lm_dim = 32;
    int lm_layers = 1;
    int lm_heads = 2;
    int vocab_size = 64;
    int max_seq_len = 16;

    int patch_grid() const;   // g with g*g == n_visual_tokens
    int patch_pixels() const; // (image_h/g) * (image_w/g) * image_c
    void validate() const;    // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
    size_t size() const { return values.size(); }
};

struct ParamGroup {
    std::string name;
    std::vector<Parameter> params;
    const Parameter& at(const std::string& param_name) const;
    Parameter& at(const std::string& param_name);
    size_t total_size() const;
};

struct TrainableFlags {
    bool V = true, P = true, L = true;
};

// Visual encoder + projector + decoder-only LM, parameters grouped and
// individually addressable as {V, P, L}. Plain value type: copying a model
// clones every parameter.
struct ToyVLM {
    ModelConfig config;
    ParamGroup V{"V", {}}, P{"P", {}}, L{"L", {}};
    TrainableFlags trainable;

    // Scaled-uniform (+-1/sqrt(fan_in)) weights, zero biases, unit LN gains;
    // one derived RNG stream per parameter group.
    static ToyVLM init(const ModelConfig& cfg, uint64_t seed);

    std::array<const ParamGroup*, 3> groups() const { return {&V, &P, &L}; }
    std::array<ParamGroup*, 3> groups() { return {&V, &P, &L}; }
    size_t n_params() const { return V.total_size() + P.total_size() + L.total_size(); }
};

// Per-tape leaf view of a model. Leaves are created in group order with
// requires_grad taken from the model's trainable flags; `leaves` is aligned
// with groups()[g].params for gradient readback.
struct BoundVLM {
    const ToyVLM* model = nullptr;
    std::array<std::vector<DiffArray>, 3> leaves; // V, P, L
    const DiffArray& param(int group, const std::string& name) const;
};

BoundVLM bind(Tape& tape, const ToyVLM& model);
// Same, overriding the requires_grad flags (e.g. a frozen teacher).
BoundVLM bind(Tape& tape, const ToyVLM& model, const TrainableFlags& trainable);

// V(x_v): patch embedding plus a residual per-patch MLP.
DiffArray encode_image(Tape& tape, const BoundVLM& m, const std::vector<double>& image);
// P(h_v): two-layer MLP with GELU, vision_dim -> lm_dim.
DiffArray project(Tape& tape, const BoundVLM& m, const DiffArray& features);
// L(tokens, x_t): visual prefix + embedded text through causal blocks;
// returns logits for the text positions only, [T_text x vocab].
DiffArray lm_forward(Tape& tape, const BoundVLM& m, const DiffArray& visual_tokens,
                     const std::vector<int>& text_tokens);
// L(P(V(x_v)), x_t)
DiffArray vlm_forward(Tape& tape, const BoundVLM& m, const std::vector<double>& image,
                      const std::vector<int>& text_tokens);
// L^T(P^T(V^S(x_v)), x_t): student eyes, teacher brain.
DiffArray switch_forward(Tape& tape, const BoundVLM& student, const BoundVLM& teacher,
                         const std::vector<double>& image, const std::vector<int>& text_tokens);

// Throws CompatibilityError naming the first violated field.
void check_switch_compatible(const ModelConfig& student, const ModelConfig& teacher);

// Greedy argmax continuation of `prompt` for n_answer tokens.
std::vector<int> greedy_decode(const ToyVLM& model, const std::vector<double>& image,
                               const std::vector<int>& prompt, int n_answer);

} // namespace switchkd
