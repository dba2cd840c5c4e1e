#include "switchkd/toy_vlm.hpp"

#include <cmath>

#include "switchkd/rng.hpp"

namespace switchkd {

namespace {

constexpr double kLnEps = 1e-5;

std::vector<double> uniform_fan_in(Rng& rng, size_t n, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return v;
}

void push_weight(ParamGroup& g, Rng& rng, const std::string& name, int in, int out) {
    g.params.push_back({name, {in, out}, uniform_fan_in(rng, static_cast<size_t>(in) * out, in)});
}

void push_zeros(ParamGroup& g, const std::string& name, int n) {
    g.params.push_back({name, {n}, std::vector<double>(n, 0.0)});
}

void push_ones(ParamGroup& g, const std::string& name, int n) {
    g.params.push_back({name, {n}, std::vector<double>(n, 1.0)});
}

DiffArray linear(const DiffArray& x, const DiffArray& w, const DiffArray& b) {
    return add_rowvec(matmul(x, w), b);
}

} // namespace

int ModelConfig::patch_grid() const {
    int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_visual_tokens))));
    return g;
}

int ModelConfig::patch_pixels() const {
    const int g = patch_grid();
    return (image_h / g) * (image_w / g) * image_c;
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* field) {
        if (v <= 0) throw ConfigError(std::string("model config: ") + field + " must be positive");
    };
    positive(image_h, "image_h");
    positive(image_w, "image_w");
    positive(image_c, "image_c");
    positive(vision_dim, "vision_dim");
    positive(n_visual_tokens, "n_visual_tokens");
    positive(lm_dim, "lm_dim");
    positive(lm_layers, "lm_layers");
    positive(lm_heads, "lm_heads");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    if (lm_dim % lm_heads != 0)
        throw ConfigError("model config: lm_dim must be divisible by lm_heads");
    const int g = patch_grid();
    if (g * g != n_visual_tokens)
        throw ConfigError("model config: n_visual_tokens must be a perfect square");
    if (image_h % g != 0 || image_w % g != 0)
        throw ConfigError("model config: patch grid must tile the image");
    if (max_seq_len <= n_visual_tokens)
        throw ConfigError("model config: max_seq_len must exceed n_visual_tokens");
}

const Parameter& ParamGroup::at(const std::string& param_name) const {
    for (const auto& p : params)
        if (p.name == param_name) return p;
    throw ContractError("parameter group " + name + ": no parameter named " + param_name);
}

Parameter& ParamGroup::at(const std::string& param_name) {
    for (auto& p : params)
        if (p.name == param_name) return p;
    throw ContractError("parameter group " + name + ": no parameter named " + param_name);
}

size_t ParamGroup::total_size() const {
    size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
}

ToyVLM ToyVLM::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ToyVLM m;
    m.config = cfg;

    {
        Rng rng = Rng::stream(seed, 0); // group V
        const int px = cfg.patch_pixels();
        push_weight(m.V, rng, "patch_embed.weight", px, cfg.vision_dim);
        push_zeros(m.V, "patch_embed.bias", cfg.vision_dim);
        push_weight(m.V, rng, "mlp.fc1.weight", cfg.vision_dim, cfg.vision_dim);
        push_zeros(m.V, "mlp.fc1.bias", cfg.vision_dim);
        push_weight(m.V, rng, "mlp.fc2.weight", cfg.vision_dim, cfg.vision_dim);
        push_zeros(m.V, "mlp.fc2.bias", cfg.vision_dim);
    }
    {
        Rng rng = Rng::stream(seed, 1); // group P
        push_weight(m.P, rng, "fc1.weight", cfg.vision_dim, cfg.lm_dim);
        push_zeros(m.P, "fc1.bias", cfg.lm_dim);
        push_weight(m.P, rng, "fc2.weight", cfg.lm_dim, cfg.lm_dim);
        push_zeros(m.P, "fc2.bias", cfg.lm_dim);
    }
    {
        Rng rng = Rng::stream(seed, 2); // group L
        const int d = cfg.lm_dim;
        push_weight(m.L, rng, "tok_embed", cfg.vocab_size, d);
        push_weight(m.L, rng, "pos_embed", cfg.max_seq_len, d);
        for (int l = 0; l < cfg.lm_layers; ++l) {
            const std::string pre = "layer" + std::to_string(l) + ".";
            push_ones(m.L, pre + "ln1.gain", d);
            push_zeros(m.L, pre + "ln1.bias", d);
            push_weight(m.L, rng, pre + "attn.wq", d, d);
            push_zeros(m.L, pre + "attn.bq", d);
            push_weight(m.L, rng, pre + "attn.wk", d, d);
            push_zeros(m.L, pre + "attn.bk", d);
            push_weight(m.L, rng, pre + "attn.wv", d, d);
            push_zeros(m.L, pre + "attn.bv", d);
            push_weight(m.L, rng, pre + "attn.wo", d, d);
            push_zeros(m.L, pre + "attn.bo", d);
            push_ones(m.L, pre + "ln2.gain", d);
            push_zeros(m.L, pre + "ln2.bias", d);
            push_weight(m.L, rng, pre + "mlp.fc1.weight", d, 4 * d);
            push_zeros(m.L, pre + "mlp.fc1.bias", 4 * d);
            push_weight(m.L, rng, pre + "mlp.fc2.weight", 4 * d, d);
            push_zeros(m.L, pre + "mlp.fc2.bias", d);
        }
        push_ones(m.L, "ln_f.gain", d);
        push_zeros(m.L, "ln_f.bias", d);
        push_weight(m.L, rng, "head.weight", d, cfg.vocab_size);
        push_zeros(m.L, "head.bias", cfg.vocab_size);
    }
    return m;
}

const DiffArray& BoundVLM::param(int group, const std::string& name) const {
    const ParamGroup& g = *model->groups()[group];
    for (size_t i = 0; i < g.params.size(); ++i)
        if (g.params[i].name == name) return leaves[group][i];
    throw ContractError("bound model: no parameter named " + name + " in group " + g.name);
}

BoundVLM bind(Tape& tape, const ToyVLM& model) { return bind(tape, model, model.trainable); }

BoundVLM bind(Tape& tape, const ToyVLM& model, const TrainableFlags& trainable) {
    BoundVLM b;
    b.model = &model;
    const bool flags[3] = {trainable.V, trainable.P, trainable.L};
    auto groups = model.groups();
    for (int g = 0; g < 3; ++g) {
        b.leaves[g].reserve(groups[g]->params.size());
        for (const auto& p : groups[g]->params)
            b.leaves[g].push_back(tape.leaf(p.shape, p.values, flags[g]));
    }
    return b;
}

DiffArray encode_image(Tape& tape, const BoundVLM& m, const std::vector<double>& image) {
    const ModelConfig& cfg = m.model->config;
    if (image.size() != static_cast<size_t>(cfg.image_h) * cfg.image_w * cfg.image_c)
        throw DimensionError("encode_image: image size does not match the configured shape");

    const int g = cfg.patch_grid();
    const int ph = cfg.image_h / g, pw = cfg.image_w / g;
    const int px = cfg.patch_pixels();
    std::vector<double> patches(static_cast<size_t>(cfg.n_visual_tokens) * px);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            double* dst = patches.data() + static_cast<size_t>(gy * g + gx) * px;
            for (int dy = 0; dy < ph; ++dy)
                for (int dx = 0; dx < pw; ++dx)
                    for (int c = 0; c < cfg.image_c; ++c)
                        *dst++ = image[(static_cast<size_t>(gy * ph + dy) * cfg.image_w +
                                        (gx * pw + dx)) *
                                           cfg.image_c +
                                       c];
        }

    DiffArray patch_mat = tape.constant({cfg.n_visual_tokens, px}, std::move(patches));
    DiffArray h = linear(patch_mat, m.param(0, "patch_embed.weight"), m.param(0, "patch_embed.bias"));
    DiffArray a = gelu(linear(h, m.param(0, "mlp.fc1.weight"), m.param(0, "mlp.fc1.bias")));
    DiffArray r = linear(a, m.param(0, "mlp.fc2.weight"), m.param(0, "mlp.fc2.bias"));
    return add(h, r);
}

DiffArray project(Tape&, const BoundVLM& m, const DiffArray& features) {
    const ModelConfig& cfg = m.model->config;
    if (features.shape().size() != 2 || features.cols() != cfg.vision_dim)
        throw DimensionError("project: feature width does not match vision_dim");
    DiffArray a = gelu(linear(features, m.param(1, "fc1.weight"), m.param(1, "fc1.bias")));
    return linear(a, m.param(1, "fc2.weight"), m.param(1, "fc2.bias"));
}

DiffArray lm_forward(Tape& tape, const BoundVLM& m, const DiffArray& visual_tokens,
                     const std::vector<int>& text_tokens) {
    const ModelConfig& cfg = m.model->config;
    const int n_v = cfg.n_visual_tokens;
    if (visual_tokens.shape().size() != 2 || visual_tokens.rows() != n_v ||
        visual_tokens.cols() != cfg.lm_dim)
        throw DimensionError("lm_forward: visual token block must be [n_visual_tokens x lm_dim]");
    if (text_tokens.empty()) throw ContractError("lm_forward: empty text sequence");
    const int t_text = static_cast<int>(text_tokens.size());
    const int T = n_v + t_text;
    if (T > cfg.max_seq_len) throw ContractError("lm_forward: sequence exceeds max_seq_len");

    DiffArray tok = embedding_rows(m.param(2, "tok_embed"), text_tokens);
    DiffArray x = concat_rows(visual_tokens, tok);
    x = add(x, slice_rows(m.param(2, "pos_embed"), 0, T));

    // causal mask shared by every layer
    std::vector<double> mask(static_cast<size_t>(T) * T, 0.0);
    for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) mask[static_cast<size_t>(i) * T + j] = -1e9;
    DiffArray causal = tape.constant({T, T}, std::move(mask));

    const int d = cfg.lm_dim;
    const int dh = d / cfg.lm_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < cfg.lm_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        DiffArray h = layer_norm_rows(x, m.param(2, pre + "ln1.gain"), m.param(2, pre + "ln1.bias"),
                                      kLnEps);
        DiffArray q = linear(h, m.param(2, pre + "attn.wq"), m.param(2, pre + "attn.bq"));
        DiffArray k = linear(h, m.param(2, pre + "attn.wk"), m.param(2, pre + "attn.bk"));
        DiffArray v = linear(h, m.param(2, pre + "attn.wv"), m.param(2, pre + "attn.bv"));

        DiffArray ctx;
        for (int head = 0; head < cfg.lm_heads; ++head) {
            const int c0 = head * dh, c1 = (head + 1) * dh;
            DiffArray qh = slice_cols(q, c0, c1);
            DiffArray kh = slice_cols(k, c0, c1);
            DiffArray vh = slice_cols(v, c0, c1);
            DiffArray scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), causal);
            DiffArray attn = softmax_rows(scores, 1.0);
            DiffArray ctx_h = matmul(attn, vh);
            ctx = head == 0 ? ctx_h : concat_cols(ctx, ctx_h);
        }
        x = add(x, linear(ctx, m.param(2, pre + "attn.wo"), m.param(2, pre + "attn.bo")));

        DiffArray h2 = layer_norm_rows(x, m.param(2, pre + "ln2.gain"),
                                       m.param(2, pre + "ln2.bias"), kLnEps);
        DiffArray f = gelu(linear(h2, m.param(2, pre + "mlp.fc1.weight"),
                                  m.param(2, pre + "mlp.fc1.bias")));
        x = add(x, linear(f, m.param(2, pre + "mlp.fc2.weight"), m.param(2, pre + "mlp.fc2.bias")));
    }

    DiffArray xf = layer_norm_rows(x, m.param(2, "ln_f.gain"), m.param(2, "ln_f.bias"), kLnEps);
    DiffArray logits = linear(xf, m.param(2, "head.weight"), m.param(2, "head.bias"));
    return slice_rows(logits, n_v, T);
}

DiffArray vlm_forward(Tape& tape, const BoundVLM& m, const std::vector<double>& image,
                      const std::vector<int>& text_tokens) {
    DiffArray features = encode_image(tape, m, image);
    DiffArray tokens = project(tape, m, features);
    return lm_forward(tape, m, tokens, text_tokens);
}

DiffArray switch_forward(Tape& tape, const BoundVLM& student, const BoundVLM& teacher,
                         const std::vector<double>& image, const std::vector<int>& text_tokens) {
    check_switch_compatible(student.model->config, teacher.model->config);
    DiffArray features = encode_image(tape, student, image);
    DiffArray tokens = project(tape, teacher, features);
    return lm_forward(tape, teacher, tokens, text_tokens);
}

void check_switch_compatible(const ModelConfig& s, const ModelConfig& t) {
    auto same = [](int a, int b, const char* field) {
        if (a != b)
            throw CompatibilityError(std::string("switch compatibility: ") + field +
                                     " differs between student and teacher (" +
                                     std::to_string(a) + " vs " + std::to_string(b) + ")");
    };
    same(s.vocab_size, t.vocab_size, "vocab_size");
    same(s.vision_dim, t.vision_dim, "vision_dim");
    same(s.n_visual_tokens, t.n_visual_tokens, "n_visual_tokens");
    same(s.image_h, t.image_h, "image_h");
    same(s.image_w, t.image_w, "image_w");
    same(s.image_c, t.image_c, "image_c");
}

std::vector<int> greedy_decode(const ToyVLM& model, const std::vector<double>& image,
                               const std::vector<int>& prompt, int n_answer) {
    std::vector<int> text = prompt;
    std::vector<int> out;
    for (int step = 0; step < n_answer; ++step) {
        Tape tape;
        BoundVLM b = bind(tape, model, TrainableFlags{false, false, false});
        DiffArray logits = vlm_forward(tape, b, image, text);
        const int n = model.config.vocab_size;
        const int last = logits.rows() - 1;
        const double* row = logits.values().data() + static_cast<size_t>(last) * n;
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (row[i] > row[best]) best = i;
        out.push_back(best);
        text.push_back(best);
    }
    return out;
}

} // namespace switchkd
