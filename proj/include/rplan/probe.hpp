#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rplan/matrix.hpp"
#include "rplan/trace.hpp"

namespace rplan {

enum class TargetPolicy { mean_over_rollouts, first_rollout };

TargetPolicy parse_target_policy(const std::string& name);
const char* to_string(TargetPolicy policy);

struct ProbeTrainConfig {
    double alpha = 10.0;
    int max_iterations = 10000;
    double tolerance = 1e-6;
    TargetPolicy target_policy = TargetPolicy::mean_over_rollouts;
    std::uint64_t seed = 0;

    void check() const;
};

// Features H (n x d) and targets Y (n) for one layer.
struct DesignMatrix {
    Matrix features;
    std::vector<double> targets;
    int layer = 0;
};

struct LinearProbe {
    int layer = 0;
    std::vector<double> weights;
    double bias = 0.0;
    double alpha = 0.0;
    std::int64_t n_train = 0;
    bool converged = false;
    int iterations_used = 0;

    bool operator==(const LinearProbe&) const = default;
};

struct ProbeMetrics {
    // Empty when predictions or targets are constant (correlation undefined).
    std::optional<double> pearson_r;
    double rmse = 0.0;
    std::int64_t n_test = 0;
    std::int64_t nonzero_weight_count = 0;
};

struct LayerProbeResult {
    int layer = 0;
    LinearProbe probe;
    ProbeMetrics metrics;
};

DesignMatrix assemble_design(const TraceDataset& dataset, int layer, TargetPolicy policy);

// L1-regularized least squares with an unpenalized intercept,
//
//     minimize  (1/(2n)) * ||Y - (H w + b)||^2 + alpha * ||w||_1
//
// by cyclic coordinate descent. The 1/(2n) factor keeps alpha comparable across sample
// sizes; without it alpha would have to grow with n. Columns are centered internally so
// the intercept is solved exactly; they are never rescaled.
LinearProbe train_lasso(const DesignMatrix& design, const ProbeTrainConfig& config);

// Objective value of (weights, bias) on a design, using the same scaling as train_lasso.
double lasso_objective(const DesignMatrix& design, std::span<const double> weights, double bias, double alpha);

std::vector<double> predict(const LinearProbe& probe, const Matrix& features);
double predict_one(const LinearProbe& probe, std::span<const float> activation);

// Sample Pearson correlation; nullopt when either side has zero variance or n < 2.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

ProbeMetrics evaluate(const LinearProbe& probe, const DesignMatrix& test);

// One probe per layer, all trained on the same split of the dataset.
std::vector<LayerProbeResult> layerwise_probe(const TraceDataset& dataset, const ProbeTrainConfig& config,
                                              double test_fraction, std::uint64_t seed);

// Layer with the highest defined test Pearson r (ties go to the shallower layer).
int best_layer(const std::vector<LayerProbeResult>& results);

}  // namespace rplan
