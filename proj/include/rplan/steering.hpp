#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rplan/matrix.hpp"
#include "rplan/trace.hpp"

namespace rplan {

struct ModelInfo {
    int n_layers = 0;
    int d_model = 0;
    int vocab_size = 0;
    TokenId think_token_id = 0;
    TokenId end_think_token_id = 0;
    TokenId eos_token_id = 0;
};

// One decoding sequence. step() runs the forward pass for the next position with the
// given per-layer additive residual offsets (n_layers x d_model, or empty for none) and
// returns next-token logits; accept() appends the chosen token.
class Sequence {
public:
    virtual ~Sequence() = default;

    virtual std::vector<double> step(const Matrix& offsets) = 0;
    virtual void accept(TokenId token) = 0;

    // Residuals at the <think> position as last computed (offsets of the first step
    // included once it has run).
    virtual Matrix think_activations() const = 0;
};

// Contract for anything the steering engine can drive. Zero offsets must reproduce the
// unmodified model exactly and step() must be deterministic.
class SteerableModel {
public:
    virtual ~SteerableModel() = default;

    virtual ModelInfo info() const = 0;

    // prompt must end with the think token. prompt_offsets, when non-empty, are applied to
    // prompt positions as well (sensitivity runs only).
    virtual std::unique_ptr<Sequence> begin_sequence(std::span<const TokenId> prompt,
                                                     const Matrix& prompt_offsets) const = 0;

    // Whether one instance may serve concurrent sequences.
    virtual bool shareable_across_sequences() const { return false; }
};

struct Prompt {
    std::string id;
    std::vector<TokenId> tokens;
};

struct SteeringConfig {
    double lambda = 0.0;
    std::vector<std::vector<double>> directions;  // one d-vector per layer
    std::vector<int> layer_mask;                  // empty: every layer
    bool steer_prompt_positions = false;

    // lambda * r^(l) on masked layers, zero elsewhere.
    Matrix offsets(const ModelInfo& info) const;
};

enum class EndReason { eos, max_tokens };
const char* to_string(EndReason reason);

struct GenerationOutcome {
    std::vector<TokenId> token_ids;  // generated tokens only
    std::int64_t reasoning_token_count = 0;
    std::int64_t answer_token_count = 0;
    EndReason ended_by = EndReason::max_tokens;
    std::vector<std::pair<int, double>> think_logit_trace;  // (step, logit of end_think)
    std::map<TokenId, double> watch_logits;                 // at the <think> position

    bool operator==(const GenerationOutcome&) const = default;
};

struct TokenCounts {
    std::int64_t reasoning = 0;
    std::int64_t answer = 0;
};

// Reasoning: tokens strictly between the first think token and the next end_think.
// Answer: tokens after that end_think up to (excluding) EOS. Both 0 without an end_think.
TokenCounts count_tokens(std::span<const TokenId> tokens, TokenId think, TokenId end_think, TokenId eos);

// Optional rewrite of the logits before greedy selection (step is 1-based).
using LogitHook = std::function<void(int step, std::vector<double>& logits)>;

GenerationOutcome generate(const SteerableModel& model, std::span<const TokenId> prompt, const Matrix& offsets,
                           int max_new_tokens, std::span<const TokenId> watchlist = {},
                           const LogitHook& hook = {}, const Matrix& prompt_offsets = {});

GenerationOutcome steered_generate(const SteerableModel& model, std::span<const TokenId> prompt,
                                   const SteeringConfig& steering, int max_new_tokens,
                                   std::span<const TokenId> watchlist = {});

std::vector<double> default_lambda_grid();
std::vector<double> parse_lambda_grid(const std::string& spec);  // "lo:hi:step" or "a,b,c"

using TaskScorer = std::function<double(const Prompt&, const GenerationOutcome&)>;

struct SweepRow {
    double lambda = 0.0;
    double mean_reasoning_tokens = 0.0;
    double mean_answer_tokens = 0.0;
    std::optional<double> score;
    std::int64_t n = 0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::vector<std::vector<GenerationOutcome>> outcomes;  // [lambda][prompt]
};

SweepReport sweep_lambda(const SteerableModel& model, const std::vector<Prompt>& prompts,
                         const std::vector<std::vector<double>>& directions, const std::vector<double>& lambdas,
                         int max_new_tokens, const TaskScorer& scorer = {}, const std::vector<int>& layer_mask = {});

struct DistributionSummary {
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
    double max = 0.0;
};
DistributionSummary summarize(std::vector<double> values);

struct LogitShiftRow {
    double lambda = 0.0;
    DistributionSummary end_think_delta;
    double mean_abs_end_think_delta = 0.0;
    double baseline_mean_abs_delta = 0.0;
    double eos_mean_delta = 0.0;
    std::map<TokenId, double> watch_mean_delta;
    std::vector<double> end_think_deltas;  // per prompt
};

struct LogitShiftReport {
    std::vector<TokenId> baseline_tokens;
    std::vector<TokenId> watchlist;
    std::vector<LogitShiftRow> rows;
};

inline constexpr std::size_t kBaselineTokenCount = 500;

// Distinct token ids sampled without replacement, excluding think/end_think/eos.
std::vector<TokenId> sample_baseline_tokens(const ModelInfo& info, std::uint64_t seed,
                                            std::size_t count = kBaselineTokenCount);

LogitShiftReport logit_shift_analysis(const SteerableModel& model, const std::vector<Prompt>& prompts,
                                      const std::vector<std::vector<double>>& directions,
                                      const std::vector<double>& lambdas, const std::vector<TokenId>& watchlist,
                                      std::uint64_t baseline_seed, const std::vector<int>& layer_mask = {});

struct LogitInterventionConfig {
    double gamma = 1.0;
    std::optional<TokenId> target_token;  // defaults to end_think
};

// logit[target] <- gamma * logit[target] at every step, otherwise plain greedy decoding.
std::vector<GenerationOutcome> gamma_logit_intervention(const SteerableModel& model,
                                                        const std::vector<Prompt>& prompts,
                                                        const LogitInterventionConfig& config, int max_new_tokens);

}  // namespace rplan
