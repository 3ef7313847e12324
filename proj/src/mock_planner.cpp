#include "rplan/mock_planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace rplan {

namespace {

constexpr std::uint32_t kNoiseStream = 0x6e6f6973;  // "nois"

std::seed_seq question_seed(std::uint64_t seed, int level, std::uint64_t index) {
    return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), kNoiseStream,
                         static_cast<std::uint32_t>(level), static_cast<std::uint32_t>(index),
                         static_cast<std::uint32_t>(index >> 32)};
}

enum class Phase { reasoning, answering, done };

class MockSequence : public Sequence {
public:
    MockSequence(const MockPlanner& model, MatrixF activations)
        : model_(model), activations_(std::move(activations)) {
        think_residual_ = Matrix(activations_.rows(), activations_.cols());
        std::ranges::copy(activations_.data(), think_residual_.data().begin());
    }

    std::vector<double> step(const Matrix& offsets) override {
        const auto& spec = model_.spec();
        ++step_;
        std::vector<double> logits(static_cast<std::size_t>(spec.vocab_size), mock_tokens::suppressed);
        switch (phase_) {
            case Phase::reasoning: {
                std::span<const double> readout;
                if (!offsets.empty()) {
                    readout = offsets.row(static_cast<std::size_t>(spec.readout_layer));
                }
                if (step_ == 1 && !offsets.empty()) {
                    for (std::size_t i = 0; i < think_residual_.size(); ++i) {
                        think_residual_.data()[i] = static_cast<double>(activations_.data()[i]) + offsets.data()[i];
                    }
                }
                const int length = model_.length_law(model_.projection(activations_, readout));
                logits[mock_tokens::filler] = spec.filler_margin;
                logits[mock_tokens::end_think] = spec.logit_sharpness * (static_cast<double>(step_) - length);
                break;
            }
            case Phase::answering:
                if (answers_ < spec.answer_length) {
                    logits[mock_tokens::answer] = spec.filler_margin;
                } else {
                    logits[mock_tokens::eos] = spec.filler_margin;
                }
                break;
            case Phase::done:
                break;
        }
        return logits;
    }

    void accept(TokenId token) override {
        if (phase_ == Phase::reasoning && token == mock_tokens::end_think) {
            phase_ = Phase::answering;
        } else if (phase_ == Phase::answering) {
            if (token == mock_tokens::eos) {
                phase_ = Phase::done;
            } else if (token == mock_tokens::answer) {
                ++answers_;
            }
        }
    }

    Matrix think_activations() const override { return think_residual_; }

private:
    const MockPlanner& model_;
    MatrixF activations_;
    Matrix think_residual_;
    Phase phase_ = Phase::reasoning;
    int step_ = 0;
    int answers_ = 0;
};

}  // namespace

MockPlannerSpec MockPlannerSpec::defaults() {
    MockPlannerSpec spec;
    spec.materialize();
    return spec;
}

void MockPlannerSpec::materialize() {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto d = static_cast<std::size_t>(d_model);
    const auto L = static_cast<std::size_t>(n_layers);
    if (planted_direction.empty()) {
        planted_direction.resize(d);
        for (double& x : planted_direction) x = normal(rng);
        const double n = l2_norm(planted_direction);
        for (double& x : planted_direction) x /= n;
    }
    if (base_offsets.empty()) {
        base_offsets = Matrix(L, d);
        for (double& x : base_offsets.data()) x = normal(rng);
        for (std::size_t l = 0; l < L; ++l) {
            auto row = base_offsets.row(l);
            const double along = dot<double, double>(row, planted_direction);
            for (std::size_t j = 0; j < d; ++j) row[j] -= along * planted_direction[j];
        }
    }
    if (layer_gains.empty()) {
        layer_gains.resize(L);
        for (std::size_t l = 0; l < L; ++l) layer_gains[l] = l >= 2 ? 1.0 : 0.0;
    }
}

void MockPlannerSpec::check() const {
    if (n_layers < 1 || d_model < 1) throw ConfigError("mock spec needs n_layers >= 1 and d_model >= 1");
    if (planted_direction.size() != static_cast<std::size_t>(d_model)) {
        throw ConfigError("planted_direction must have d_model entries");
    }
    if (std::abs(l2_norm(planted_direction) - 1.0) > 1e-9) throw ConfigError("planted_direction must be unit length");
    if (layer_gains.size() != static_cast<std::size_t>(n_layers)) {
        throw ConfigError("layer_gains must have n_layers entries");
    }
    if (base_offsets.rows() != static_cast<std::size_t>(n_layers) ||
        base_offsets.cols() != static_cast<std::size_t>(d_model)) {
        throw ConfigError("base_offsets must be n_layers x d_model");
    }
    for (std::size_t i = 1; i < difficulty_scales.size(); ++i) {
        if (!(difficulty_scales[i] > difficulty_scales[i - 1])) {
            throw ConfigError("difficulty_scales must be strictly increasing");
        }
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (readout_layer < 0 || readout_layer >= n_layers) throw ConfigError("readout_layer out of range");
    if (!(length_slope > 0.0)) throw ConfigError("length_slope must be > 0");
    if (max_reasoning < 1) throw ConfigError("max_reasoning must be >= 1");
    if (answer_length < 0) throw ConfigError("answer_length must be >= 0");
    if (!(logit_sharpness > 0.0)) throw ConfigError("logit_sharpness must be > 0");
    if (!(filler_margin > 0.0)) throw ConfigError("filler_margin must be > 0");
    if (vocab_size < mock_tokens::first_plain) throw ConfigError("vocab_size too small for the mock token layout");
}

std::string MockQuestion::id() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "L%d-Q%04llu", level, static_cast<unsigned long long>(index));
    std::string out = buf;
    if (boost != 0.0) out += "-ot";
    return out;
}

MockPlanner::MockPlanner(MockPlannerSpec spec) : spec_(std::move(spec)) {
    spec_.materialize();
    spec_.check();
}

ModelInfo MockPlanner::info() const {
    return {spec_.n_layers, spec_.d_model, spec_.vocab_size, mock_tokens::think, mock_tokens::end_think,
            mock_tokens::eos};
}

MatrixF MockPlanner::activations(const MockQuestion& q) const {
    if (q.level < 1 || q.level > 5) throw PreconditionError("mock difficulty level must be in 1..5");
    auto seq = question_seed(spec_.seed, q.level, q.index);
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto L = static_cast<std::size_t>(spec_.n_layers);
    const auto d = static_cast<std::size_t>(spec_.d_model);
    const double scale = spec_.difficulty_scales[static_cast<std::size_t>(q.level - 1)] + q.boost;
    MatrixF h(L, d);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t j = 0; j < d; ++j) {
            const double value = spec_.base_offsets(l, j) + scale * spec_.layer_gains[l] * spec_.planted_direction[j] +
                                 spec_.noise_sigma * noise(rng);
            h(l, j) = static_cast<float>(value);
        }
    }
    return h;
}

double MockPlanner::projection(const MatrixF& activations, std::span<const double> readout_offset) const {
    const auto row = activations.row(static_cast<std::size_t>(spec_.readout_layer));
    const auto& v = spec_.planted_direction;
    double p = 0.0;
    if (readout_offset.empty()) {
        for (std::size_t j = 0; j < v.size(); ++j) p += static_cast<double>(row[j]) * v[j];
    } else {
        for (std::size_t j = 0; j < v.size(); ++j) p += (static_cast<double>(row[j]) + readout_offset[j]) * v[j];
    }
    return p;
}

int MockPlanner::length_law(double projection) const {
    const double raw = std::round(spec_.length_intercept + spec_.length_slope * projection);
    return static_cast<int>(std::clamp(raw, 1.0, static_cast<double>(spec_.max_reasoning)));
}

std::vector<TokenId> MockPlanner::encode_prompt(const MockQuestion& q) const {
    if (q.boost != 0.0) throw PreconditionError("boosted questions have no prompt encoding");
    if (q.level < 1 || q.level > 5) throw PreconditionError("mock difficulty level must be in 1..5");
    std::vector<TokenId> tokens{mock_tokens::bos, static_cast<TokenId>(mock_tokens::level_base + q.level)};
    const std::string digits = std::to_string(q.index);
    for (char c : digits) tokens.push_back(static_cast<TokenId>(mock_tokens::digit_base + (c - '0')));
    tokens.push_back(mock_tokens::think);
    return tokens;
}

MockQuestion MockPlanner::decode_prompt(std::span<const TokenId> prompt) const {
    if (prompt.size() < 4 || prompt.front() != mock_tokens::bos || prompt.back() != mock_tokens::think) {
        throw PreconditionError("not a mock prompt: expected BOS, level, digits..., <think>");
    }
    MockQuestion q;
    q.level = prompt[1] - mock_tokens::level_base;
    if (q.level < 1 || q.level > 5) throw PreconditionError("mock prompt carries an invalid level token");
    std::uint64_t index = 0;
    for (std::size_t i = 2; i + 1 < prompt.size(); ++i) {
        const int digit = prompt[i] - mock_tokens::digit_base;
        if (digit < 0 || digit > 9) throw PreconditionError("mock prompt carries a non-digit index token");
        index = index * 10 + static_cast<std::uint64_t>(digit);
    }
    q.index = index;
    return q;
}

std::unique_ptr<Sequence> MockPlanner::begin_sequence(std::span<const TokenId> prompt, const Matrix&) const {
    // Prompt offsets are accepted but have no effect: the mock's <think> residual is a
    // closed form of the question, and steering enters through step().
    return std::make_unique<MockSequence>(*this, activations(decode_prompt(prompt)));
}

TraceMetadata MockPlanner::trace_metadata() const {
    TraceMetadata m;
    m.model_name = "mock-planner";
    m.n_layers = spec_.n_layers;
    m.d_model = spec_.d_model;
    m.think_token_id = mock_tokens::think;
    m.end_think_token_id = mock_tokens::end_think;
    m.eos_token_id = mock_tokens::eos;
    m.difficulty_levels = {1, 2, 3, 4, 5};
    return m;
}

ActivationRecord MockPlanner::record(const MockQuestion& q) const {
    ActivationRecord r;
    r.question_id = q.id();
    r.difficulty = q.level;
    r.activations = activations(q);
    r.reasoning_token_counts = {length_law(projection(r.activations))};
    r.answer_token_counts = {spec_.answer_length};
    return r;
}

TraceDataset build_trace(const MockPlannerSpec& spec, int per_level) {
    if (per_level < 1) throw PreconditionError("per_level must be >= 1");
    const MockPlanner model(spec);
    TraceDataset ds{model.trace_metadata(), {}};
    ds.records.reserve(static_cast<std::size_t>(per_level) * 5);
    for (int level = 1; level <= 5; ++level) {
        for (int k = 0; k < per_level; ++k) {
            ds.records.push_back(model.record({level, static_cast<std::uint64_t>(k), 0.0}));
        }
    }
    return ds;
}

int expected_length(const MockPlannerSpec& spec_in, int difficulty, double lambda, std::span<const double> r_readout) {
    MockPlannerSpec spec = spec_in;
    spec.materialize();
    if (difficulty < 1 || difficulty > 5) throw PreconditionError("mock difficulty level must be in 1..5");
    const auto& v = spec.planted_direction;
    if (r_readout.size() != v.size()) throw DimensionError("readout direction width differs from d_model");
    const auto l = static_cast<std::size_t>(spec.readout_layer);
    const double mu = spec.difficulty_scales[static_cast<std::size_t>(difficulty - 1)];
    double p = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        const auto h = static_cast<float>(spec.base_offsets(l, j) + mu * spec.layer_gains[l] * v[j]);
        p += (static_cast<double>(h) + lambda * r_readout[j]) * v[j];
    }
    const double raw = std::round(spec.length_intercept + spec.length_slope * p);
    return static_cast<int>(std::clamp(raw, 1.0, static_cast<double>(spec.max_reasoning)));
}

std::vector<Prompt> build_prompts(const MockPlanner& model, int per_level, const std::vector<int>& levels,
                                  std::uint64_t first_index) {
    std::vector<Prompt> prompts;
    for (int level : levels) {
        for (int k = 0; k < per_level; ++k) {
            const MockQuestion q{level, first_index + static_cast<std::uint64_t>(k), 0.0};
            prompts.push_back({q.id(), model.encode_prompt(q)});
        }
    }
    return prompts;
}

SyntheticPairs build_overthink_pairs(const MockPlannerSpec& spec, int level, int n_pairs, double boost,
                                     std::uint64_t first_index) {
    if (n_pairs < 1) throw PreconditionError("n_pairs must be >= 1");
    if (boost == 0.0) throw PreconditionError("overthink boost must be nonzero");
    const MockPlanner model(spec);
    SyntheticPairs out;
    out.trace.metadata = model.trace_metadata();
    for (int k = 0; k < n_pairs; ++k) {
        const auto index = first_index + static_cast<std::uint64_t>(k);
        const MockQuestion vanilla{level, index, 0.0};
        const MockQuestion overthink{level, index, boost};
        out.trace.records.push_back(model.record(vanilla));
        out.trace.records.push_back(model.record(overthink));
        char pair_id[32];
        std::snprintf(pair_id, sizeof(pair_id), "pair-%04d", k);
        out.manifest.push_back({pair_id, vanilla.id(), overthink.id()});
    }
    return out;
}

}  // namespace rplan
