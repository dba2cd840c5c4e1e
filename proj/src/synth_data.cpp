#include "switchkd/synth_data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "switchkd/rng.hpp"

namespace switchkd {

using nlohmann::json;

namespace {

constexpr double kPalette[vocab::kNumColors][3] = {
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1},
};

struct Rect {
    int x = 0, y = 0, w = 1, h = 1;
    int color = 0;   // palette index
    bool hollow = false;
};

bool overlaps_with_gap(const Rect& a, const Rect& b) {
    // true when a's 1-px-expanded bbox touches b
    return a.x - 1 < b.x + b.w && b.x < a.x + a.w + 1 && a.y - 1 < b.y + b.h &&
           b.y < a.y + a.h + 1;
}

// Place one 2x2 rect aligned to the 4x4 cell lattice, at least one empty cell
// away from every other rect: regions stay separated and each rect lands in a
// single patch of the default visual tokenization.
bool place_cell_rect(Rng& rng, std::vector<Rect>& placed, int color) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        Rect r;
        r.w = r.h = 2;
        r.x = 2 * rng.bounded_int(kImageW / 2);
        r.y = 2 * rng.bounded_int(kImageH / 2);
        r.color = color;
        bool ok = true;
        for (const auto& other : placed)
            if (std::abs(r.x - other.x) < 4 && std::abs(r.y - other.y) < 4) {
                ok = false;
                break;
            }
        if (ok) {
            placed.push_back(r);
            return true;
        }
    }
    return false;
}

void render(const std::vector<Rect>& rects, std::vector<double>& image) {
    image.assign(static_cast<size_t>(kImageH) * kImageW * kImageC, 0.0);
    for (const auto& r : rects)
        for (int dy = 0; dy < r.h; ++dy)
            for (int dx = 0; dx < r.w; ++dx) {
                if (r.hollow && dy > 0 && dy < r.h - 1 && dx > 0 && dx < r.w - 1) continue;
                double* px = image.data() +
                             (static_cast<size_t>(r.y + dy) * kImageW + (r.x + dx)) * kImageC;
                for (int c = 0; c < kImageC; ++c) px[c] = kPalette[r.color][c];
            }
}

int other_color(Rng& rng, int avoid) {
    int c = rng.bounded_int(vocab::kNumColors - 1);
    return c >= avoid ? c + 1 : c;
}

// exactly `count` rects of the queried color among 1..4 total
bool build_color_count(Rng& rng, int count, SyntheticSample& s) {
    const int query = rng.bounded_int(vocab::kNumColors);
    const int n_other = count == 0 ? 1 + rng.bounded_int(4) : rng.bounded_int(4 - count + 1);
    std::vector<Rect> rects;
    for (int i = 0; i < count; ++i)
        if (!place_cell_rect(rng, rects, query)) return false;
    for (int i = 0; i < n_other; ++i)
        if (!place_cell_rect(rng, rects, other_color(rng, query))) return false;
    render(rects, s.image);
    s.prompt = {vocab::kBos, vocab::kQueryCount, vocab::kColor0 + query};
    s.answer = {vocab::kDigit0 + count};
    return true;
}

// one quadrant queried; shapes never cross quadrant borders
bool build_shape_at_position(Rng& rng, int label_tok, SyntheticSample& s) {
    const int quadrant = rng.bounded_int(4);
    std::vector<Rect> rects;

    auto place_in_quadrant = [&](int q, int shape_tok) {
        const int qx = (q % 2) * 4, qy = (q / 2) * 4;
        Rect r;
        if (shape_tok == vocab::kShapeHollow) {
            r.w = r.h = 3;
            r.hollow = true;
        } else {
            r.w = r.h = 2 + rng.bounded_int(2);
        }
        r.x = qx + rng.bounded_int(4 - r.w + 1);
        r.y = qy + rng.bounded_int(4 - r.h + 1);
        r.color = rng.bounded_int(vocab::kNumColors);
        rects.push_back(r);
    };

    if (label_tok != vocab::kNone) place_in_quadrant(quadrant, label_tok);
    std::vector<int> others;
    for (int q = 0; q < 4; ++q)
        if (q != quadrant && rng.bounded(2) == 0) others.push_back(q);
    if (label_tok == vocab::kNone && others.empty())
        others.push_back((quadrant + 1 + rng.bounded_int(3)) % 4);
    for (int q : others)
        place_in_quadrant(q, rng.bounded(2) == 0 ? vocab::kShapeSolid : vocab::kShapeHollow);

    render(rects, s.image);
    s.prompt = {vocab::kBos, vocab::kQueryShape, vocab::kPos0 + quadrant};
    s.answer = {label_tok};
    return true;
}

// the target color strictly dominates the pixel count: two target rects
// against at most two distinct-color rects of one cell each
bool build_majority_color(Rng& rng, int target, SyntheticSample& s) {
    std::vector<Rect> rects;
    if (!place_cell_rect(rng, rects, target) || !place_cell_rect(rng, rects, target))
        return false;
    const int n_other = rng.bounded_int(3);
    std::vector<int> pool;
    for (int c = 0; c < vocab::kNumColors; ++c)
        if (c != target) pool.push_back(c);
    rng.shuffle(pool);
    for (int i = 0; i < n_other; ++i)
        if (!place_cell_rect(rng, rects, pool[i])) return false;
    render(rects, s.image);
    s.prompt = {vocab::kBos, vocab::kQueryMajority};
    s.answer = {vocab::kColor0 + target};
    return true;
}

SyntheticSample make_sample(const DatasetSpec& spec, int id, bool is_train) {
    const std::vector<int> labels = task_label_set(spec.task);
    const int label = labels[id % labels.size()];

    SyntheticSample s;
    s.id = id;
    for (int retry = 0; retry < 64; ++retry) {
        Rng rng = Rng::stream(derive_seed(spec.seed, static_cast<uint64_t>(id)), retry);
        bool ok = false;
        switch (spec.task) {
        case Task::ColorCount: ok = build_color_count(rng, label - vocab::kDigit0, s); break;
        case Task::ShapeAtPosition: ok = build_shape_at_position(rng, label, s); break;
        case Task::MajorityColor: ok = build_majority_color(rng, label - vocab::kColor0, s); break;
        }
        if (!ok) continue;
        if (is_train && spec.noise_level > 0.0 && rng.uniform01() < spec.noise_level) {
            std::vector<int> others;
            for (int l : labels)
                if (l != s.answer[0]) others.push_back(l);
            s.answer[0] = others[rng.bounded(others.size())];
        }
        return s;
    }
    throw GenerationError("synthetic sample " + std::to_string(id) +
                          ": could not place the scene on the grid");
}

} // namespace

const char* to_string(Task t) {
    switch (t) {
    case Task::ColorCount: return "color-count";
    case Task::ShapeAtPosition: return "shape-at-position";
    case Task::MajorityColor: return "majority-color";
    }
    return "?";
}

Task task_from_string(const std::string& s) {
    if (s == "color-count") return Task::ColorCount;
    if (s == "shape-at-position") return Task::ShapeAtPosition;
    if (s == "majority-color") return Task::MajorityColor;
    throw ConfigError("unknown task '" + s +
                      "' (valid: color-count, shape-at-position, majority-color)");
}

void DatasetSpec::validate() const {
    if (n_train <= 0 || n_val <= 0) throw ConfigError("dataset spec: counts must be positive");
    if (noise_level < 0.0 || noise_level >= 1.0)
        throw ConfigError("dataset spec: noise_level must lie in [0, 1)");
}

std::vector<int> task_label_set(Task t) {
    switch (t) {
    case Task::ColorCount:
        return {vocab::kDigit0, vocab::kDigit0 + 1, vocab::kDigit0 + 2, vocab::kDigit0 + 3};
    case Task::ShapeAtPosition: return {vocab::kShapeSolid, vocab::kShapeHollow, vocab::kNone};
    case Task::MajorityColor:
        return {vocab::kColor0, vocab::kColor0 + 1, vocab::kColor0 + 2, vocab::kColor0 + 3};
    }
    return {};
}

std::pair<Dataset, Dataset> generate(const DatasetSpec& spec) {
    spec.validate();
    Dataset train, val;
    train.task = val.task = spec.task;
    train.samples.reserve(spec.n_train);
    val.samples.reserve(spec.n_val);
    for (int id = 0; id < spec.n_train; ++id)
        train.samples.push_back(make_sample(spec, id, /*is_train=*/true));
    for (int id = spec.n_train; id < spec.n_train + spec.n_val; ++id)
        val.samples.push_back(make_sample(spec, id, /*is_train=*/false));
    return {std::move(train), std::move(val)};
}

std::vector<std::vector<size_t>> batch_indices(size_t n_samples, int batch_size,
                                               uint64_t shuffle_seed) {
    if (n_samples == 0) throw ContractError("batch_indices: empty dataset");
    if (batch_size < 1) throw ContractError("batch_indices: batch_size must be at least 1");
    std::vector<size_t> order(n_samples);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(shuffle_seed);
    rng.shuffle(order);
    std::vector<std::vector<size_t>> batches;
    for (size_t i = 0; i < n_samples; i += batch_size) {
        const size_t end = std::min(n_samples, i + batch_size);
        batches.emplace_back(order.begin() + i, order.begin() + end);
    }
    return batches;
}

void save_dataset(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ContractError("save_dataset: cannot open " + path);
    json header{{"schema", "switchkd-dataset"},
                {"version", 1},
                {"task", to_string(data.task)},
                {"image_shape", {kImageH, kImageW, kImageC}}};
    out << header.dump() << "\n";
    for (const auto& s : data.samples) {
        json line{{"id", s.id}, {"image", s.image}, {"prompt", s.prompt}, {"answer", s.answer}};
        out << line.dump() << "\n";
    }
    if (!out) throw ContractError("save_dataset: short write to " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_dataset: cannot open " + path);
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& msg) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": " + msg);
    };

    Dataset data;
    if (!std::getline(in, line)) fail("missing schema header");
    ++line_no;
    try {
        const json header = json::parse(line);
        if (header.at("schema") != "switchkd-dataset") fail("not a dataset file");
        if (header.at("version") != 1) fail("unsupported dataset version");
        if (header.at("image_shape") != json({kImageH, kImageW, kImageC}))
            fail("unexpected image shape");
        data.task = task_from_string(header.at("task").get<std::string>());
    } catch (const json::exception& e) {
        fail(e.what());
    }

    const size_t image_len = static_cast<size_t>(kImageH) * kImageW * kImageC;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            SyntheticSample s;
            s.id = j.at("id").get<int>();
            s.image = j.at("image").get<std::vector<double>>();
            s.prompt = j.at("prompt").get<std::vector<int>>();
            s.answer = j.at("answer").get<std::vector<int>>();
            if (s.image.size() != image_len) fail("image length mismatch");
            data.samples.push_back(std::move(s));
        } catch (const json::exception& e) {
            fail(e.what());
        }
    }
    return data;
}

} // namespace switchkd
