#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rplan/matrix.hpp"
#include "rplan/overthink.hpp"
#include "rplan/steering.hpp"
#include "rplan/trace.hpp"

namespace rplan {

// Synthetic steerable model with a planted direction v. For a question of difficulty i
// the <think> activation at layer l is
//
//     h(l) = c(l) + mu_i * kappa(l) * v + eps(l),   eps(l) ~ N(0, sigma^2 I)
//
// and only the readout layer decides length: p = <h(readout) + offset(readout), v>,
// y(p) = clamp(round(y0 + beta * p), 1, y_max). While reasoning, step t has
// logit(</think>) = a * (t - y(p)) against a filler token at filler_margin; after
// </think> come answer_length answer tokens and EOS.
struct MockPlannerSpec {
    int n_layers = 6;
    int d_model = 64;
    std::vector<double> planted_direction;  // unit d-vector; derived from seed when empty
    std::vector<double> layer_gains;        // kappa, one per layer
    Matrix base_offsets;                    // n_layers x d_model; derived from seed when empty
    std::array<double, 5> difficulty_scales{0.0, 1.0, 2.0, 4.0, 8.0};
    double noise_sigma = 0.02;
    int readout_layer = 4;
    double length_intercept = 20.0;
    double length_slope = 12.0;
    int max_reasoning = 400;
    int answer_length = 10;
    double logit_sharpness = 5.0;
    double filler_margin = 1.0;
    int vocab_size = 1024;
    std::uint64_t seed = 42;

    // Default acceptance configuration with v and c drawn from the seed.
    static MockPlannerSpec defaults();

    // Fills planted_direction / base_offsets / layer_gains from the seed where empty.
    // Generated offsets have their component along v removed.
    void materialize();
    void check() const;
};

// Token layout of the mock vocabulary.
namespace mock_tokens {
inline constexpr TokenId bos = 0;
inline constexpr TokenId eos = 1;
inline constexpr TokenId filler = 2;
inline constexpr TokenId answer = 3;
inline constexpr TokenId think = 4;
inline constexpr TokenId end_think = 5;
inline constexpr TokenId level_base = 5;  // level k is token level_base + k, k in 1..5
inline constexpr TokenId digit_base = 16;  // decimal digits of the question index
inline constexpr TokenId first_plain = 32;
inline constexpr double suppressed = -1e9;
}  // namespace mock_tokens

struct MockQuestion {
    int level = 1;
    std::uint64_t index = 0;
    double boost = 0.0;  // extra projection along v (overthink variants)

    std::string id() const;
};

class MockPlanner : public SteerableModel {
public:
    explicit MockPlanner(MockPlannerSpec spec);

    const MockPlannerSpec& spec() const { return spec_; }

    ModelInfo info() const override;
    std::unique_ptr<Sequence> begin_sequence(std::span<const TokenId> prompt,
                                             const Matrix& prompt_offsets) const override;

    // <think>-position activations of a question, rounded through float32 so they equal
    // the values a trace stores.
    MatrixF activations(const MockQuestion& q) const;

    double projection(const MatrixF& activations, std::span<const double> readout_offset = {}) const;
    int length_law(double projection) const;

    // Prompt tokens for a question: BOS, level token, index digits, <think>.
    std::vector<TokenId> encode_prompt(const MockQuestion& q) const;
    MockQuestion decode_prompt(std::span<const TokenId> prompt) const;

    TraceMetadata trace_metadata() const;
    ActivationRecord record(const MockQuestion& q) const;

private:
    MockPlannerSpec spec_;
};

// 5 * per_level records, question (level, k) for k in [0, per_level).
TraceDataset build_trace(const MockPlannerSpec& spec, int per_level);

// Noise-free length: y(<h + lambda r_readout, v>) with h = c(readout) + mu_i kappa(readout) v
// rounded through float32 like every mock activation, so ties at .5 resolve as in the model.
int expected_length(const MockPlannerSpec& spec, int difficulty, double lambda, std::span<const double> r_readout);

// Prompts for per_level questions at each of the given levels.
std::vector<Prompt> build_prompts(const MockPlanner& model, int per_level, const std::vector<int>& levels = {1, 2, 3, 4, 5},
                                  std::uint64_t first_index = 0);

struct SyntheticPairs {
    TraceDataset trace;
    std::vector<PairManifestRow> manifest;
};

// n_pairs questions at one level; each overthink twin shares the vanilla question's noise
// and adds `boost` to its projection.
SyntheticPairs build_overthink_pairs(const MockPlannerSpec& spec, int level, int n_pairs, double boost,
                                     std::uint64_t first_index = 0);

}  // namespace rplan
