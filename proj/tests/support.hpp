#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "rplan/trace.hpp"

namespace rplan::testing {

// Unique scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "rplan") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline TraceMetadata small_metadata(int n_layers, int d_model) {
    TraceMetadata m;
    m.model_name = "unit";
    m.n_layers = n_layers;
    m.d_model = d_model;
    m.think_token_id = 7;
    m.end_think_token_id = 8;
    m.eos_token_id = 2;
    m.difficulty_levels = {1, 2, 3, 4, 5};
    return m;
}

// Random dataset with n records cycling through levels 1..5 and 1..3 rollouts each.
inline TraceDataset random_dataset(std::size_t n, int n_layers, int d_model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> act(0.0f, 3.0f);
    std::uniform_int_distribution<int> count(0, 5000);
    std::uniform_int_distribution<int> rollouts(1, 3);
    TraceDataset ds{small_metadata(n_layers, d_model), {}};
    for (std::size_t i = 0; i < n; ++i) {
        ActivationRecord r;
        r.question_id = "q" + std::to_string(i);
        r.difficulty = static_cast<int>(i % 5) + 1;
        r.activations = MatrixF(static_cast<std::size_t>(n_layers), static_cast<std::size_t>(d_model));
        for (float& x : r.activations.data()) x = act(rng);
        const int k = rollouts(rng);
        for (int j = 0; j < k; ++j) {
            r.reasoning_token_counts.push_back(count(rng));
            r.answer_token_counts.push_back(count(rng) / 10);
        }
        ds.records.push_back(std::move(r));
    }
    return ds;
}

}  // namespace rplan::testing
