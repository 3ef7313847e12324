#include "rplan/steering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "rplan/stats.hpp"

namespace rplan {

namespace {

TokenId argmax(const std::vector<double>& logits) {
    // First maximum wins, so ties resolve to the lower token id.
    return static_cast<TokenId>(std::distance(logits.begin(), std::ranges::max_element(logits)));
}

void check_prompt(const ModelInfo& info, std::span<const TokenId> prompt) {
    if (prompt.empty() || prompt.back() != info.think_token_id) {
        throw PreconditionError("prompt must end with the think token");
    }
}

std::vector<double> first_step_logits(const SteerableModel& model, std::span<const TokenId> prompt,
                                      const Matrix& offsets) {
    check_prompt(model.info(), prompt);
    auto seq = model.begin_sequence(prompt, Matrix{});
    return seq->step(offsets);
}

}  // namespace

const char* to_string(EndReason reason) { return reason == EndReason::eos ? "eos" : "max_tokens"; }

Matrix SteeringConfig::offsets(const ModelInfo& info) const {
    const auto L = static_cast<std::size_t>(info.n_layers);
    const auto d = static_cast<std::size_t>(info.d_model);
    if (directions.size() != L) {
        throw DimensionError("steering has " + std::to_string(directions.size()) + " layer directions, model has " +
                             std::to_string(L) + " layers");
    }
    for (int layer : layer_mask) {
        if (layer < 0 || static_cast<std::size_t>(layer) >= L) {
            throw PreconditionError("layer_mask entry " + std::to_string(layer) + " out of range");
        }
    }
    Matrix out(L, d, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        if (directions[l].size() != d) {
            throw DimensionError("direction at layer " + std::to_string(l) + " has width " +
                                 std::to_string(directions[l].size()) + ", model has " + std::to_string(d));
        }
        const bool masked = layer_mask.empty() || std::ranges::find(layer_mask, static_cast<int>(l)) != layer_mask.end();
        if (!masked) continue;
        auto row = out.row(l);
        for (std::size_t j = 0; j < d; ++j) row[j] = lambda * directions[l][j];
    }
    return out;
}

TokenCounts count_tokens(std::span<const TokenId> tokens, TokenId think, TokenId end_think, TokenId eos) {
    TokenCounts counts;
    auto open = std::ranges::find(tokens, think);
    if (open == tokens.end()) return counts;
    auto close = std::find(std::next(open), tokens.end(), end_think);
    if (close == tokens.end()) return counts;
    counts.reasoning = std::distance(open, close) - 1;
    auto stop = std::find(std::next(close), tokens.end(), eos);
    counts.answer = std::distance(close, stop) - 1;
    return counts;
}

GenerationOutcome generate(const SteerableModel& model, std::span<const TokenId> prompt, const Matrix& offsets,
                           int max_new_tokens, std::span<const TokenId> watchlist, const LogitHook& hook,
                           const Matrix& prompt_offsets) {
    const ModelInfo info = model.info();
    check_prompt(info, prompt);
    if (max_new_tokens < 1) throw PreconditionError("max_new_tokens must be >= 1");
    if (!offsets.empty() && (offsets.rows() != static_cast<std::size_t>(info.n_layers) ||
                             offsets.cols() != static_cast<std::size_t>(info.d_model))) {
        throw DimensionError("offsets shape does not match the model");
    }

    auto seq = model.begin_sequence(prompt, prompt_offsets);
    GenerationOutcome out;
    for (int step = 1; step <= max_new_tokens; ++step) {
        auto logits = seq->step(offsets);
        if (logits.size() != static_cast<std::size_t>(info.vocab_size)) {
            throw DimensionError("model returned " + std::to_string(logits.size()) + " logits, vocab is " +
                                 std::to_string(info.vocab_size));
        }
        if (step == 1) {
            for (TokenId t : watchlist) {
                if (t < 0 || t >= info.vocab_size) throw PreconditionError("watchlist token out of range");
                out.watch_logits[t] = logits[static_cast<std::size_t>(t)];
            }
        }
        out.think_logit_trace.emplace_back(step, logits[static_cast<std::size_t>(info.end_think_token_id)]);
        if (hook) hook(step, logits);
        const TokenId next = argmax(logits);
        seq->accept(next);
        out.token_ids.push_back(next);
        if (next == info.eos_token_id) {
            out.ended_by = EndReason::eos;
            break;
        }
    }

    std::vector<TokenId> full(prompt.begin(), prompt.end());
    full.insert(full.end(), out.token_ids.begin(), out.token_ids.end());
    const auto counts = count_tokens(full, info.think_token_id, info.end_think_token_id, info.eos_token_id);
    out.reasoning_token_count = counts.reasoning;
    out.answer_token_count = counts.answer;
    return out;
}

GenerationOutcome steered_generate(const SteerableModel& model, std::span<const TokenId> prompt,
                                   const SteeringConfig& steering, int max_new_tokens,
                                   std::span<const TokenId> watchlist) {
    const auto info = model.info();
    const Matrix offsets = steering.offsets(info);
    return generate(model, prompt, offsets, max_new_tokens, watchlist, {},
                    steering.steer_prompt_positions ? offsets : Matrix{});
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int k = -4; k <= 4; ++k) grid.push_back(static_cast<double>(k) / 20.0);
    return grid;
}

std::vector<double> parse_lambda_grid(const std::string& spec) {
    std::vector<double> grid;
    auto parse = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || s.empty()) throw ConfigError("bad number '" + s + "' in lambda grid");
        return v;
    };
    if (spec.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.size() != 3) throw ConfigError("lambda range must be lo:hi:step");
        const double lo = parse(parts[0]), hi = parse(parts[1]), step = parse(parts[2]);
        if (!(step > 0.0) || hi < lo) throw ConfigError("lambda range needs step > 0 and hi >= lo");
        const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
        // When lo sits on the step lattice, build values as integer/(1/step) so that
        // -0.2:0.2:0.05 yields exactly -0.15, 0, 0.15 and so on.
        const double inv = 1.0 / step;
        const double lo_idx = std::round(lo * inv);
        const bool on_lattice = std::abs(lo * inv - lo_idx) < 1e-9;
        for (long k = 0; k <= n; ++k) {
            double v = on_lattice ? (lo_idx + static_cast<double>(k)) / inv : lo + static_cast<double>(k) * step;
            if (v == 0.0) v = 0.0;
            grid.push_back(v);
        }
    } else {
        std::stringstream ss(spec);
        for (std::string p; std::getline(ss, p, ',');) grid.push_back(parse(p));
    }
    if (grid.empty()) throw ConfigError("empty lambda grid");
    return grid;
}

SweepReport sweep_lambda(const SteerableModel& model, const std::vector<Prompt>& prompts,
                         const std::vector<std::vector<double>>& directions, const std::vector<double>& lambdas,
                         int max_new_tokens, const TaskScorer& scorer, const std::vector<int>& layer_mask) {
    if (prompts.empty()) throw PreconditionError("sweep needs at least one prompt");
    if (lambdas.empty()) throw PreconditionError("sweep needs at least one lambda");
    SweepReport report;
    for (double lambda : lambdas) {
        SteeringConfig cfg{lambda, directions, layer_mask, false};
        SweepRow row;
        row.lambda = lambda;
        row.n = static_cast<std::int64_t>(prompts.size());
        double reasoning = 0.0, answer = 0.0, score = 0.0;
        std::vector<GenerationOutcome> outcomes;
        outcomes.reserve(prompts.size());
        for (const auto& p : prompts) {
            auto o = steered_generate(model, p.tokens, cfg, max_new_tokens);
            reasoning += static_cast<double>(o.reasoning_token_count);
            answer += static_cast<double>(o.answer_token_count);
            if (scorer) score += scorer(p, o);
            outcomes.push_back(std::move(o));
        }
        const auto n = static_cast<double>(prompts.size());
        row.mean_reasoning_tokens = reasoning / n;
        row.mean_answer_tokens = answer / n;
        if (scorer) row.score = score / n;
        report.rows.push_back(row);
        report.outcomes.push_back(std::move(outcomes));
    }
    return report;
}

DistributionSummary summarize(std::vector<double> values) {
    if (values.empty()) throw PreconditionError("cannot summarize an empty sample");
    std::ranges::sort(values);
    DistributionSummary s;
    const auto n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.min = values.front();
    s.max = values.back();
    s.q25 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.5);
    s.q75 = quantile_sorted(values, 0.75);
    return s;
}

std::vector<TokenId> sample_baseline_tokens(const ModelInfo& info, std::uint64_t seed, std::size_t count) {
    std::vector<TokenId> pool;
    for (TokenId t = 0; t < info.vocab_size; ++t) {
        if (t == info.think_token_id || t == info.end_think_token_id || t == info.eos_token_id) continue;
        pool.push_back(t);
    }
    if (pool.size() < count) {
        throw PreconditionError("vocabulary too small for a " + std::to_string(count) + "-token baseline");
    }
    std::vector<TokenId> picked;
    picked.reserve(count);
    std::mt19937_64 rng(seed);
    std::ranges::sample(pool, std::back_inserter(picked), static_cast<std::ptrdiff_t>(count), rng);
    return picked;
}

LogitShiftReport logit_shift_analysis(const SteerableModel& model, const std::vector<Prompt>& prompts,
                                      const std::vector<std::vector<double>>& directions,
                                      const std::vector<double>& lambdas, const std::vector<TokenId>& watchlist,
                                      std::uint64_t baseline_seed, const std::vector<int>& layer_mask) {
    if (prompts.empty()) throw PreconditionError("logit analysis needs at least one prompt");
    if (lambdas.empty()) throw PreconditionError("logit analysis needs at least one lambda");
    const ModelInfo info = model.info();
    for (TokenId t : watchlist) {
        if (t < 0 || t >= info.vocab_size) {
            throw PreconditionError("watchlist token " + std::to_string(t) + " is not a valid id");
        }
    }

    LogitShiftReport report;
    report.watchlist = watchlist;
    report.baseline_tokens = sample_baseline_tokens(info, baseline_seed);

    std::vector<std::vector<double>> reference;
    reference.reserve(prompts.size());
    const Matrix zero(static_cast<std::size_t>(info.n_layers), static_cast<std::size_t>(info.d_model), 0.0);
    for (const auto& p : prompts) reference.push_back(first_step_logits(model, p.tokens, zero));

    const auto end_think = static_cast<std::size_t>(info.end_think_token_id);
    const auto eos = static_cast<std::size_t>(info.eos_token_id);
    for (double lambda : lambdas) {
        const Matrix offsets = SteeringConfig{lambda, directions, layer_mask, false}.offsets(info);
        LogitShiftRow row;
        row.lambda = lambda;
        double abs_sum = 0.0, baseline_sum = 0.0, eos_sum = 0.0;
        for (TokenId t : watchlist) row.watch_mean_delta[t] = 0.0;
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const auto logits = first_step_logits(model, prompts[i].tokens, offsets);
            const auto& ref = reference[i];
            const double d_end = logits[end_think] - ref[end_think];
            row.end_think_deltas.push_back(d_end);
            abs_sum += std::abs(d_end);
            eos_sum += logits[eos] - ref[eos];
            double b = 0.0;
            for (TokenId t : report.baseline_tokens) {
                const auto k = static_cast<std::size_t>(t);
                b += std::abs(logits[k] - ref[k]);
            }
            baseline_sum += b / static_cast<double>(report.baseline_tokens.size());
            for (TokenId t : watchlist) {
                const auto k = static_cast<std::size_t>(t);
                row.watch_mean_delta[t] += logits[k] - ref[k];
            }
        }
        const auto n = static_cast<double>(prompts.size());
        row.end_think_delta = summarize(row.end_think_deltas);
        row.mean_abs_end_think_delta = abs_sum / n;
        row.baseline_mean_abs_delta = baseline_sum / n;
        row.eos_mean_delta = eos_sum / n;
        for (auto& [_, v] : row.watch_mean_delta) v /= n;
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::vector<GenerationOutcome> gamma_logit_intervention(const SteerableModel& model,
                                                        const std::vector<Prompt>& prompts,
                                                        const LogitInterventionConfig& config, int max_new_tokens) {
    if (!(config.gamma > 0.0)) throw PreconditionError("gamma must be > 0");
    const ModelInfo info = model.info();
    const TokenId target = config.target_token.value_or(info.end_think_token_id);
    if (target < 0 || target >= info.vocab_size) throw PreconditionError("gamma target token out of range");
    const auto k = static_cast<std::size_t>(target);
    const double gamma = config.gamma;
    LogitHook hook = [k, gamma](int, std::vector<double>& logits) { logits[k] *= gamma; };
    const Matrix zero(static_cast<std::size_t>(info.n_layers), static_cast<std::size_t>(info.d_model), 0.0);

    std::vector<GenerationOutcome> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(generate(model, p.tokens, zero, max_new_tokens, {}, hook));
    return out;
}

}  // namespace rplan
