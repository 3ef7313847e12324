#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rplan/mock_planner.hpp"
#include "rplan/probe.hpp"
#include "rplan/serialization.hpp"

namespace rplan {

std::string sha256_hex(const std::string& bytes);

// "mock:default" or "mock:<spec.json>". Other backends are not built in.
std::unique_ptr<MockPlanner> load_mock_model(const std::string& reference);

// Scorer plug-ins usable from configs. "answer_complete" scores 1 when the answer span
// has its full length and ended with EOS.
TaskScorer make_scorer(const std::string& name, const MockPlanner& model);

struct SteeringStageConfig {
    std::vector<double> lambdas = default_lambda_grid();
    int max_new_tokens = 1024;
    std::string prompts_path;          // JSONL; generated from the mock when empty
    int prompts_per_level = 50;
    std::vector<int> levels{1, 2, 3, 4, 5};
    std::uint64_t first_index = 100000;  // keeps generated prompts apart from trace questions
    std::vector<int> layer_mask;
    std::string scorer;
    std::string report_name = "sweep.csv";
};

struct LogitStageConfig {
    bool enabled = true;
    std::vector<double> lambdas = default_lambda_grid();
    std::vector<TokenId> watchlist;
};

struct OverthinkStageConfig {
    std::string trace_path;
    std::string manifest_path;
    std::string calibration_path;  // vanilla records of the pairs trace when empty
    double quantile = kDefaultQuantile;
    std::optional<int> layer;      // best validation layer when empty
    std::optional<double> probe_alpha;  // retrain the detector probe with this alpha
};

struct PipelineConfig {
    std::string trace_path;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    double test_fraction = 0.1;
    ProbeTrainConfig probe;
    bool directions = true;
    std::string model;  // empty: no steering stages
    std::optional<SteeringStageConfig> steering;
    std::optional<LogitStageConfig> logits;
    std::vector<double> gammas;
    std::optional<OverthinkStageConfig> overthink;
    std::set<std::string> formats{"csv", "json"};
    std::string preset;

    // Checks paths and values; throws ConfigError.
    void check() const;
};

// Keys: trace, output_dir, seed, test_fraction, probe{alpha, max_iterations, tolerance,
// target_policy}, directions (bool), model, steering{...}, logits{...}, gamma[...],
// overthink{...}, formats[...], preset. A preset fills defaults that explicit keys override.
PipelineConfig pipeline_config_from_json(const json& doc);

// Recursive object merge: keys of overrides replace those of base.
json merge_config(json base, const json& overrides);

struct ManifestEntry {
    std::string path;  // relative to output_dir
    std::string stage;
    std::string sha256;
    std::uint64_t bytes = 0;
    bool partial = false;
};

struct PipelineResult {
    int exit_code = 0;  // 0 ok, 3 stage failure
    std::string failed_stage;
    std::string error;
    std::vector<ManifestEntry> files;
    json manifest;
};

// Runs the configured stages in order and writes manifest.json into output_dir.
// ConfigError propagates (exit code 2 at the CLI); stage failures are reported in the result.
PipelineResult run_pipeline(const PipelineConfig& config);

// Re-reads each listed file and compares its hash. Returns the mismatching paths.
std::vector<std::string> verify_manifest(const std::string& output_dir, const json& manifest);

}  // namespace rplan
