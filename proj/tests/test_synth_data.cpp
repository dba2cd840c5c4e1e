#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "switchkd/oracles.hpp"
#include "switchkd/synth_data.hpp"

using namespace switchkd;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

DatasetSpec small_spec(Task task, double noise = 0.0) {
    DatasetSpec s;
    s.task = task;
    s.n_train = 120;
    s.n_val = 40;
    s.seed = 777;
    s.noise_level = noise;
    return s;
}

} // namespace

TEST_CASE("same spec generates byte-identical datasets") {
    for (Task task : {Task::ColorCount, Task::ShapeAtPosition, Task::MajorityColor}) {
        auto [t1, v1] = generate(small_spec(task));
        auto [t2, v2] = generate(small_spec(task));
        CHECK(t1.samples == t2.samples);
        CHECK(v1.samples == v2.samples);

        const std::string p1 = "/tmp/switchkd_ds_a.jsonl", p2 = "/tmp/switchkd_ds_b.jsonl";
        save_dataset(t1, p1);
        save_dataset(t2, p2);
        CHECK(slurp(p1) == slurp(p2));
        std::remove(p1.c_str());
        std::remove(p2.c_str());
    }
}

TEST_CASE("train and val id sets are disjoint") {
    auto [train, val] = generate(small_spec(Task::ColorCount));
    std::set<int> train_ids, val_ids;
    for (const auto& s : train.samples) train_ids.insert(s.id);
    for (const auto& s : val.samples) val_ids.insert(s.id);
    CHECK(train_ids.size() == train.samples.size());
    CHECK(val_ids.size() == val.samples.size());
    for (int id : val_ids) CHECK(!train_ids.count(id));
}

TEST_CASE("noise level 0 labels agree with the rule-based relabeler, noisy train labels do not") {
    for (Task task : {Task::ColorCount, Task::ShapeAtPosition, Task::MajorityColor}) {
        auto [train, val] = generate(small_spec(task, 0.0));
        for (const auto& ds : {train, val})
            for (const auto& s : ds.samples)
                REQUIRE(oracles::relabel_from_image(s.image, s.prompt) == s.answer.at(0));
    }

    auto [noisy_train, noisy_val] = generate(small_spec(Task::ColorCount, 0.4));
    int flipped = 0;
    for (const auto& s : noisy_train.samples)
        if (oracles::relabel_from_image(s.image, s.prompt) != s.answer.at(0)) ++flipped;
    CHECK(flipped > 20); // roughly 40% of 120
    for (const auto& s : noisy_val.samples) // validation is never corrupted
        CHECK(oracles::relabel_from_image(s.image, s.prompt) == s.answer.at(0));
}

TEST_CASE("answer tokens stay within +-20% of uniform over the task label set") {
    for (Task task : {Task::ColorCount, Task::ShapeAtPosition, Task::MajorityColor}) {
        auto spec = small_spec(task);
        spec.n_train = 600;
        auto [train, val] = generate(spec);
        const auto labels = task_label_set(task);
        const double uniform = static_cast<double>(train.samples.size()) / labels.size();
        for (int label : labels) {
            long count = 0;
            for (const auto& s : train.samples)
                if (s.answer[0] == label) ++count;
            CHECK(std::abs(count - uniform) <= 0.2 * uniform);
        }
    }
}

TEST_CASE("images contain one to four separated rectangles") {
    auto [train, val] = generate(small_spec(Task::ColorCount));
    for (const auto& s : train.samples) {
        int components = 0;
        for (int c = 0; c < vocab::kNumColors; ++c) {
            std::vector<double> probe = s.image;
            std::vector<int> prompt{vocab::kBos, vocab::kQueryCount, vocab::kColor0 + c};
            components += oracles::relabel_from_image(probe, prompt) - vocab::kDigit0;
        }
        CHECK(components >= 1);
        CHECK(components <= 4);
    }
}

TEST_CASE("batch_indices covers every sample exactly once with deterministic order") {
    auto batches = batch_indices(10, 3, 99);
    REQUIRE(batches.size() == 4);
    CHECK(batches[0].size() == 3);
    CHECK(batches[3].size() == 1);
    std::set<size_t> seen;
    for (const auto& b : batches) seen.insert(b.begin(), b.end());
    CHECK(seen.size() == 10);

    CHECK(batch_indices(10, 3, 99) == batches);
    CHECK(batch_indices(10, 3, 100) != batches);

    CHECK_THROWS_AS(batch_indices(0, 3, 1), ContractError);
    CHECK_THROWS_AS(batch_indices(10, 0, 1), ContractError);
}

TEST_CASE("dataset files round-trip exactly and reject malformed lines by number") {
    auto [train, val] = generate(small_spec(Task::MajorityColor));
    const std::string path = "/tmp/switchkd_ds_rt.jsonl";
    save_dataset(train, path);
    Dataset loaded = load_dataset(path);
    CHECK(loaded.task == train.task);
    CHECK(loaded.samples == train.samples);

    // a second save of the loaded data is byte-identical (closed loop)
    const std::string path2 = "/tmp/switchkd_ds_rt2.jsonl";
    save_dataset(loaded, path2);
    CHECK(slurp(path) == slurp(path2));

    // truncate a line in the middle and expect the line number in the error
    std::string content = slurp(path);
    const size_t second_nl = content.find('\n', content.find('\n') + 1);
    std::ofstream bad("/tmp/switchkd_ds_bad.jsonl");
    bad << content.substr(0, second_nl + 1) << "{\"id\": 5, \"image\": [0.1,\n";
    bad.close();
    try {
        load_dataset("/tmp/switchkd_ds_bad.jsonl");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }

    std::remove(path.c_str());
    std::remove(path2.c_str());
    std::remove("/tmp/switchkd_ds_bad.jsonl");
}

TEST_CASE("spec validation") {
    DatasetSpec s;
    s.n_train = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = DatasetSpec{};
    s.noise_level = 1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK_THROWS_AS(task_from_string("rotate-13"), ConfigError);
    for (Task t : {Task::ColorCount, Task::ShapeAtPosition, Task::MajorityColor})
        CHECK(task_from_string(to_string(t)) == t);
}
