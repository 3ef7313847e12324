#include "rplan/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rplan {

namespace {

double soft_threshold(double value, double threshold) {
    if (value > threshold) return value - threshold;
    if (value < -threshold) return value + threshold;
    return 0.0;
}

void check_design(const DesignMatrix& design) {
    if (design.features.rows() != design.targets.size()) {
        throw DimensionError("design has " + std::to_string(design.features.rows()) + " rows but " +
                             std::to_string(design.targets.size()) + " targets");
    }
    if (design.targets.size() < 2) {
        throw PreconditionError("lasso needs at least 2 samples");
    }
    auto finite = [](double x) { return std::isfinite(x); };
    if (!std::ranges::all_of(design.features.data(), finite) || !std::ranges::all_of(design.targets, finite)) {
        throw PreconditionError("design contains non-finite values");
    }
}

}  // namespace

TargetPolicy parse_target_policy(const std::string& name) {
    if (name == "mean_over_rollouts") return TargetPolicy::mean_over_rollouts;
    if (name == "first_rollout") return TargetPolicy::first_rollout;
    throw ConfigError("unknown target policy '" + name + "'");
}

const char* to_string(TargetPolicy policy) {
    return policy == TargetPolicy::mean_over_rollouts ? "mean_over_rollouts" : "first_rollout";
}

void ProbeTrainConfig::check() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw PreconditionError("alpha must be a finite value >= 0");
    if (max_iterations < 1) throw PreconditionError("max_iterations must be >= 1");
    if (!(tolerance > 0.0)) throw PreconditionError("tolerance must be > 0");
}

DesignMatrix assemble_design(const TraceDataset& dataset, int layer, TargetPolicy policy) {
    if (dataset.records.empty()) {
        throw PreconditionError("cannot assemble a design from an empty dataset");
    }
    if (layer < 0 || layer >= dataset.metadata.n_layers) {
        throw PreconditionError("layer " + std::to_string(layer) + " out of range [0, " +
                                std::to_string(dataset.metadata.n_layers) + ")");
    }
    const auto n = dataset.records.size();
    const auto d = static_cast<std::size_t>(dataset.metadata.d_model);
    DesignMatrix design{Matrix(n, d), std::vector<double>(n), layer};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = dataset.records[i];
        const auto src = rec.activations.row(static_cast<std::size_t>(layer));
        std::ranges::copy(src, design.features.row(i).begin());
        const auto& counts = rec.reasoning_token_counts;
        if (counts.empty()) {
            throw PreconditionError("record '" + rec.question_id + "' has no rollouts");
        }
        if (policy == TargetPolicy::first_rollout) {
            design.targets[i] = static_cast<double>(counts.front());
        } else {
            const double sum = std::accumulate(counts.begin(), counts.end(), 0.0);
            design.targets[i] = sum / static_cast<double>(counts.size());
        }
    }
    return design;
}

double lasso_objective(const DesignMatrix& design, std::span<const double> weights, double bias, double alpha) {
    const auto n = design.features.rows();
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = design.targets[i] - (dot<double, double>(design.features.row(i), weights) + bias);
        sse += r * r;
    }
    double l1 = 0.0;
    for (double w : weights) l1 += std::abs(w);
    return sse / (2.0 * static_cast<double>(n)) + alpha * l1;
}

LinearProbe train_lasso(const DesignMatrix& design, const ProbeTrainConfig& config) {
    config.check();
    check_design(design);

    const std::size_t n = design.features.rows();
    const std::size_t d = design.features.cols();
    const double inv_n = 1.0 / static_cast<double>(n);

    // Covariance updates: with G = Xc'Xc/n and c = Xc'yc/n (Xc, yc centered), the
    // coordinate step needs rho_j = c_j - (G w)_j + G_jj w_j, so one sweep costs O(d^2)
    // regardless of n. Gw is kept current as weights move.
    std::vector<double> col_mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = design.features.row(i);
        for (std::size_t j = 0; j < d; ++j) col_mean[j] += row[j];
    }
    for (double& m : col_mean) m *= inv_n;
    const double y_mean = std::accumulate(design.targets.begin(), design.targets.end(), 0.0) * inv_n;

    // Exactly constant columns carry no signal; their weight stays 0.
    std::vector<char> active(d, 0);
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (design.features(i, j) != design.features(0, j)) active[j] = 1;
        }
    }

    std::vector<double> gram(d * d, 0.0);
    std::vector<double> xty(d, 0.0);
    std::vector<double> row_c(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = design.features.row(i);
        for (std::size_t j = 0; j < d; ++j) row_c[j] = row[j] - col_mean[j];
        const double yc = design.targets[i] - y_mean;
        for (std::size_t j = 0; j < d; ++j) {
            xty[j] += row_c[j] * yc;
            double* g = gram.data() + j * d;
            for (std::size_t k = j; k < d; ++k) g[k] += row_c[j] * row_c[k];
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        xty[j] *= inv_n;
        for (std::size_t k = j; k < d; ++k) {
            gram[j * d + k] *= inv_n;
            gram[k * d + j] = gram[j * d + k];
        }
    }

    LinearProbe probe;
    probe.layer = design.layer;
    probe.alpha = config.alpha;
    probe.n_train = static_cast<std::int64_t>(n);
    probe.weights.assign(d, 0.0);
    auto& w = probe.weights;
    std::vector<double> gw(d, 0.0);

    for (int sweep = 1; sweep <= config.max_iterations; ++sweep) {
        double max_delta = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double gjj = gram[j * d + j];
            if (!active[j] || gjj == 0.0) continue;
            const double rho = xty[j] - gw[j] + gjj * w[j];
            const double updated = soft_threshold(rho, config.alpha) / gjj;
            const double delta = updated - w[j];
            if (delta != 0.0) {
                const double* g = gram.data() + j * d;
                for (std::size_t k = 0; k < d; ++k) gw[k] += delta * g[k];
                w[j] = updated;
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        probe.iterations_used = sweep;
        if (max_delta <= config.tolerance) {
            probe.converged = true;
            break;
        }
    }

    probe.bias = y_mean - dot<double, double>(col_mean, w);
    return probe;
}

std::vector<double> predict(const LinearProbe& probe, const Matrix& features) {
    if (features.cols() != probe.weights.size()) {
        throw DimensionError("features have width " + std::to_string(features.cols()) + ", probe expects " +
                             std::to_string(probe.weights.size()));
    }
    std::vector<double> out(features.rows());
    for (std::size_t i = 0; i < features.rows(); ++i) {
        out[i] = dot<double, double>(features.row(i), probe.weights) + probe.bias;
    }
    return out;
}

double predict_one(const LinearProbe& probe, std::span<const float> activation) {
    if (activation.size() != probe.weights.size()) {
        throw DimensionError("activation has width " + std::to_string(activation.size()) + ", probe expects " +
                             std::to_string(probe.weights.size()));
    }
    return dot<float, double>(activation, probe.weights) + probe.bias;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    // Exact constancy check: the mean of equal values can round away from them.
    auto constant = [](std::span<const double> v) { return std::ranges::adjacent_find(v, std::ranges::not_equal_to{}) == v.end(); };
    if (constant(x) || constant(y)) return std::nullopt;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ProbeMetrics evaluate(const LinearProbe& probe, const DesignMatrix& test) {
    if (test.features.rows() != test.targets.size()) {
        throw DimensionError("test design rows and targets disagree");
    }
    const auto predicted = predict(probe, test.features);
    ProbeMetrics m;
    m.n_test = static_cast<std::int64_t>(predicted.size());
    m.pearson_r = pearson(predicted, test.targets);
    double sse = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double e = predicted[i] - test.targets[i];
        sse += e * e;
    }
    m.rmse = predicted.empty() ? 0.0 : std::sqrt(sse / static_cast<double>(predicted.size()));
    m.nonzero_weight_count = std::ranges::count_if(probe.weights, [](double v) { return v != 0.0; });
    return m;
}

std::vector<LayerProbeResult> layerwise_probe(const TraceDataset& dataset, const ProbeTrainConfig& config,
                                              double test_fraction, std::uint64_t seed) {
    config.check();
    const auto [train, test] = split_dataset(dataset, test_fraction, seed);
    std::vector<LayerProbeResult> results;
    results.reserve(static_cast<std::size_t>(dataset.metadata.n_layers));
    for (int layer = 0; layer < dataset.metadata.n_layers; ++layer) {
        const auto train_design = assemble_design(train, layer, config.target_policy);
        const auto test_design = assemble_design(test, layer, config.target_policy);
        auto probe = train_lasso(train_design, config);
        auto metrics = evaluate(probe, test_design);
        results.push_back({layer, std::move(probe), metrics});
    }
    return results;
}

int best_layer(const std::vector<LayerProbeResult>& results) {
    if (results.empty()) throw PreconditionError("no probes to choose from");
    int best = results.front().layer;
    double best_r = -2.0;
    for (const auto& r : results) {
        if (r.metrics.pearson_r && *r.metrics.pearson_r > best_r) {
            best_r = *r.metrics.pearson_r;
            best = r.layer;
        }
    }
    return best;
}

}  // namespace rplan
