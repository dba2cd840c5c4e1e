#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "switchkd/errors.hpp"

namespace switchkd {

// Fixed token ids shared by all synthetic tasks. The 64-token vocabulary
// leaves the upper range unused so logits keep a long tail.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kDigit0 = 2; // ..kDigit0 + 9
inline constexpr int kColor0 = 12; // red, green, blue, yellow, cyan, magenta
inline constexpr int kNumColors = 6;
inline constexpr int kQueryCount = 18;
inline constexpr int kQueryShape = 19;
inline constexpr int kQueryMajority = 20;
inline constexpr int kPos0 = 21; // TL, TR, BL, BR
inline constexpr int kShapeSolid = 25;
inline constexpr int kShapeHollow = 26;
inline constexpr int kNone = 27;
inline constexpr int kMinVocabSize = 28;
} // namespace vocab

inline constexpr int kImageH = 8, kImageW = 8, kImageC = 3;

enum class Task { ColorCount, ShapeAtPosition, MajorityColor };
const char* to_string(Task t);
Task task_from_string(const std::string& s); // throws ConfigError

struct DatasetSpec {
    int n_train = 2000;
    int n_val = 500;
    uint64_t seed = 1234;
    Task task = Task::ColorCount;
    double noise_level = 0.0; // fraction of *train* answers flipped
    void validate() const;
};

struct SyntheticSample {
    int id = 0;
    std::vector<double> image; // kImageH x kImageW x kImageC, row-major, [0, 1]
    std::vector<int> prompt;
    std::vector<int> answer;
    bool operator==(const SyntheticSample&) const = default;
};

struct Dataset {
    Task task = Task::ColorCount;
    std::vector<SyntheticSample> samples;
};

// Answer tokens a task can emit, in stratification order.
std::vector<int> task_label_set(Task t);

// Seeded, byte-stable generation. Train ids cover [0, n_train), val ids
// continue from n_train; labels are stratified by id so both splits stay
// balanced. Only train answers are noise-flipped.
std::pair<Dataset, Dataset> generate(const DatasetSpec& spec);

// Index batches covering every sample exactly once, shuffled by seed.
std::vector<std::vector<size_t>> batch_indices(size_t n_samples, int batch_size,
                                               uint64_t shuffle_seed);

// JSON-lines with a schema header line; load(save(x)) == x byte for byte.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

} // namespace switchkd
