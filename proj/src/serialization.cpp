#include "rplan/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rplan {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << content;
    out.close();
    if (!out) throw Error("cannot finish writing '" + path + "'");
}

json read_json_file(const std::string& path) {
    const std::string text = read_text_file(path);
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
    return doc;
}

void write_json_file(const std::string& path, const json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

std::string format_number(double value) {
    if (value == 0.0) return "0";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", value);
    return buf;
}

namespace {

void require_schema(const json& doc, const char* what) {
    if (!doc.is_object() || !doc.contains("schema_version")) {
        throw ConfigError(std::string(what) + " document lacks schema_version");
    }
    if (doc.at("schema_version").get<int>() != kSchemaVersion) {
        throw ConfigError(std::string(what) + " document has unsupported schema_version");
    }
}

std::string join(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    return out + "\n";
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---- probes ------------------------------------------------------------------------

json probe_to_json(const LayerProbeResult& r) {
    return json{
        {"layer", r.probe.layer},
        {"alpha", r.probe.alpha},
        {"bias", r.probe.bias},
        {"weights", r.probe.weights},
        {"n_train", r.probe.n_train},
        {"converged", r.probe.converged},
        {"iterations_used", r.probe.iterations_used},
        {"metrics",
         {{"pearson_r", optional_number(r.metrics.pearson_r)},
          {"rmse", r.metrics.rmse},
          {"n_test", r.metrics.n_test},
          {"nonzero_weight_count", r.metrics.nonzero_weight_count}}},
    };
}

json probes_to_json(const std::vector<LayerProbeResult>& results) {
    json doc{{"schema_version", kSchemaVersion}, {"probes", json::array()}};
    for (const auto& r : results) doc["probes"].push_back(probe_to_json(r));
    if (!results.empty()) doc["best_layer"] = best_layer(results);
    return doc;
}

ProbeBundle probes_from_json(const json& doc) {
    require_schema(doc, "probes");
    ProbeBundle bundle;
    try {
        for (const auto& p : doc.at("probes")) {
            LayerProbeResult r;
            r.layer = p.at("layer").get<int>();
            r.probe.layer = r.layer;
            r.probe.alpha = p.at("alpha").get<double>();
            r.probe.bias = p.at("bias").get<double>();
            r.probe.weights = p.at("weights").get<std::vector<double>>();
            r.probe.n_train = p.at("n_train").get<std::int64_t>();
            r.probe.converged = p.at("converged").get<bool>();
            r.probe.iterations_used = p.value("iterations_used", 0);
            if (p.contains("metrics")) {
                const auto& m = p.at("metrics");
                if (!m.at("pearson_r").is_null()) r.metrics.pearson_r = m.at("pearson_r").get<double>();
                r.metrics.rmse = m.at("rmse").get<double>();
                r.metrics.n_test = m.at("n_test").get<std::int64_t>();
                r.metrics.nonzero_weight_count = m.at("nonzero_weight_count").get<std::int64_t>();
            }
            bundle.probes.push_back(std::move(r));
        }
        if (doc.contains("best_layer")) bundle.best_layer = doc.at("best_layer").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed probes document: ") + e.what());
    }
    return bundle;
}

const LayerProbeResult& find_probe(const ProbeBundle& bundle, int layer) {
    auto it = std::ranges::find(bundle.probes, layer, &LayerProbeResult::layer);
    if (it == bundle.probes.end()) throw ConfigError("no probe for layer " + std::to_string(layer));
    return *it;
}

std::string layer_curve_csv(const std::vector<LayerProbeResult>& results) {
    std::string out = "layer,pearson_r,rmse,n_test,nonzero_weights,converged,iterations\n";
    for (const auto& r : results) {
        out += join({std::to_string(r.layer), r.metrics.pearson_r ? format_number(*r.metrics.pearson_r) : "",
                     format_number(r.metrics.rmse), std::to_string(r.metrics.n_test),
                     std::to_string(r.metrics.nonzero_weight_count), r.probe.converged ? "1" : "0",
                     std::to_string(r.probe.iterations_used)});
    }
    return out;
}

// ---- directions --------------------------------------------------------------------

json directions_to_json(const DirectionSet& set) {
    json layers = json::array();
    for (const auto& l : set.layers) {
        json vectors = json::object();
        int from_level = kBaseLevel;
        for (const auto& [level, v] : l.by_level) {
            vectors[std::to_string(level)] = v.components;
            from_level = v.from_level;
        }
        layers.push_back({{"layer", l.layer}, {"from_level", from_level}, {"vectors", vectors}, {"mean", l.mean.components}});
    }
    json means = json::object();
    for (const auto& [level, m] : set.level_mean_tokens) means[std::to_string(level)] = m;
    return json{{"schema_version", kSchemaVersion}, {"layers", layers}, {"level_mean_tokens", means}};
}

DirectionSet directions_from_json(const json& doc) {
    require_schema(doc, "directions");
    DirectionSet set;
    try {
        for (const auto& l : doc.at("layers")) {
            const int layer = l.at("layer").get<int>();
            const int from = l.value("from_level", kBaseLevel);
            std::map<int, DirectionVector> by_level;
            for (const auto& [key, values] : l.at("vectors").items()) {
                const int level = std::stoi(key);
                by_level.emplace(level, DirectionVector::make(layer, from, level, values.get<std::vector<double>>()));
            }
            auto ld = make_layer_directions(layer, std::move(by_level));
            const auto stored = l.at("mean").get<std::vector<double>>();
            if (stored.size() != ld.mean.components.size()) throw ConfigError("mean direction width mismatch");
            for (std::size_t j = 0; j < stored.size(); ++j) {
                if (std::abs(stored[j] - ld.mean.components[j]) > 1e-9) {
                    throw ConfigError("stored mean direction at layer " + std::to_string(layer) +
                                      " disagrees with its vectors");
                }
            }
            set.layers.push_back(std::move(ld));
        }
        if (doc.contains("level_mean_tokens")) {
            for (const auto& [key, value] : doc.at("level_mean_tokens").items()) {
                set.level_mean_tokens[std::stoi(key)] = value.get<double>();
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed directions document: ") + e.what());
    }
    return set;
}

std::string cosine_matrix_csv(const DirectionSet& set, int layer) {
    const auto& l = set.at_layer(layer);
    const Matrix m = cosine_matrix(set, layer);
    std::vector<int> levels;
    for (const auto& [level, _] : l.by_level) levels.push_back(level);
    std::vector<std::string> header{"to_level"};
    for (int lv : levels) header.push_back("r" + std::to_string(lv));
    std::string out = join(header);
    for (std::size_t a = 0; a < m.rows(); ++a) {
        std::vector<std::string> row{std::to_string(levels[a])};
        for (std::size_t b = 0; b < m.cols(); ++b) row.push_back(format_number(m(a, b)));
        out += join(row);
    }
    return out;
}

std::string layer_cosine_csv(const std::vector<LayerCosine>& curve) {
    std::string out = "layer,mean_cosine\n";
    for (const auto& c : curve) out += join({std::to_string(c.layer), format_number(c.mean_cosine)});
    return out;
}

std::string norms_csv(const DirectionSet& set) {
    std::string out = "layer,to_level,l2_norm,mean_tokens_to_level,mean_tokens_base,mean_additional_tokens\n";
    auto mean_tokens = [&](int level) -> std::string {
        auto it = set.level_mean_tokens.find(level);
        return it == set.level_mean_tokens.end() ? "" : format_number(it->second);
    };
    for (const auto& n : norms_by_level(set)) {
        const auto& v = set.at_layer(n.layer).by_level.at(n.to_level);
        std::string extra;
        auto to = set.level_mean_tokens.find(n.to_level);
        auto base = set.level_mean_tokens.find(v.from_level);
        if (to != set.level_mean_tokens.end() && base != set.level_mean_tokens.end()) {
            extra = format_number(to->second - base->second);
        }
        out += join({std::to_string(n.layer), std::to_string(n.to_level), format_number(n.l2_norm),
                     mean_tokens(n.to_level), mean_tokens(v.from_level), extra});
    }
    return out;
}

std::string direction_predictions_csv(const std::vector<DirectionPrediction>& predictions) {
    std::string out = "layer,predicted_tokens\n";
    for (const auto& p : predictions) out += join({std::to_string(p.layer), format_number(p.predicted_tokens)});
    return out;
}

// ---- mock spec, prompts, manifests -------------------------------------------------

json mock_spec_to_json(const MockPlannerSpec& in) {
    MockPlannerSpec s = in;
    s.materialize();
    json offsets = json::array();
    for (std::size_t l = 0; l < s.base_offsets.rows(); ++l) {
        const auto row = s.base_offsets.row(l);
        offsets.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return json{
        {"schema_version", kSchemaVersion},
        {"n_layers", s.n_layers},
        {"d_model", s.d_model},
        {"planted_direction", s.planted_direction},
        {"layer_gains", s.layer_gains},
        {"base_offsets", offsets},
        {"difficulty_scales", s.difficulty_scales},
        {"noise_sigma", s.noise_sigma},
        {"readout_layer", s.readout_layer},
        {"length_intercept", s.length_intercept},
        {"length_slope", s.length_slope},
        {"max_reasoning", s.max_reasoning},
        {"answer_length", s.answer_length},
        {"logit_sharpness", s.logit_sharpness},
        {"filler_margin", s.filler_margin},
        {"vocab_size", s.vocab_size},
        {"seed", s.seed},
    };
}

MockPlannerSpec mock_spec_from_json(const json& doc) {
    require_schema(doc, "mock spec");
    MockPlannerSpec s;
    try {
        s.n_layers = doc.value("n_layers", s.n_layers);
        s.d_model = doc.value("d_model", s.d_model);
        if (doc.contains("planted_direction")) s.planted_direction = doc.at("planted_direction").get<std::vector<double>>();
        if (doc.contains("layer_gains")) s.layer_gains = doc.at("layer_gains").get<std::vector<double>>();
        if (doc.contains("base_offsets")) {
            const auto rows = doc.at("base_offsets").get<std::vector<std::vector<double>>>();
            std::vector<double> flat;
            for (const auto& r : rows) {
                if (r.size() != static_cast<std::size_t>(s.d_model)) throw ConfigError("base_offsets row width mismatch");
                flat.insert(flat.end(), r.begin(), r.end());
            }
            s.base_offsets = Matrix(rows.size(), static_cast<std::size_t>(s.d_model), std::move(flat));
        }
        if (doc.contains("difficulty_scales")) {
            const auto mu = doc.at("difficulty_scales").get<std::vector<double>>();
            if (mu.size() != 5) throw ConfigError("difficulty_scales needs exactly 5 entries");
            std::ranges::copy(mu, s.difficulty_scales.begin());
        }
        s.noise_sigma = doc.value("noise_sigma", s.noise_sigma);
        s.readout_layer = doc.value("readout_layer", s.readout_layer);
        s.length_intercept = doc.value("length_intercept", s.length_intercept);
        s.length_slope = doc.value("length_slope", s.length_slope);
        s.max_reasoning = doc.value("max_reasoning", s.max_reasoning);
        s.answer_length = doc.value("answer_length", s.answer_length);
        s.logit_sharpness = doc.value("logit_sharpness", s.logit_sharpness);
        s.filler_margin = doc.value("filler_margin", s.filler_margin);
        s.vocab_size = doc.value("vocab_size", s.vocab_size);
        s.seed = doc.value("seed", s.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed mock spec: ") + e.what());
    }
    s.materialize();
    s.check();
    return s;
}

std::string prompts_jsonl(const std::vector<Prompt>& prompts) {
    std::string out;
    for (const auto& p : prompts) out += json{{"prompt_id", p.id}, {"tokens", p.tokens}}.dump() + "\n";
    return out;
}

std::vector<Prompt> prompts_from_jsonl(const std::string& text) {
    std::vector<Prompt> prompts;
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("tokens")) {
            throw ConfigError("prompts line " + std::to_string(line_no) + " is not a prompt object");
        }
        try {
            prompts.push_back({j.value("prompt_id", "prompt-" + std::to_string(line_no)),
                               j.at("tokens").get<std::vector<TokenId>>()});
        } catch (const json::exception& e) {
            throw ConfigError("prompts line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return prompts;
}

json manifest_to_json(const std::vector<PairManifestRow>& manifest) {
    json rows = json::array();
    for (const auto& m : manifest) {
        rows.push_back({{"pair_id", m.pair_id},
                        {"vanilla_question_id", m.vanilla_question_id},
                        {"overthink_question_id", m.overthink_question_id}});
    }
    return rows;
}

std::vector<PairManifestRow> manifest_from_json(const json& doc) {
    const json& rows = doc.is_object() && doc.contains("pairs") ? doc.at("pairs") : doc;
    if (!rows.is_array()) throw ConfigError("pair manifest must be a JSON list");
    std::vector<PairManifestRow> out;
    try {
        for (const auto& r : rows) {
            out.push_back({r.at("pair_id").get<std::string>(), r.at("vanilla_question_id").get<std::string>(),
                           r.at("overthink_question_id").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed pair manifest: ") + e.what());
    }
    return out;
}

// ---- steering reports --------------------------------------------------------------

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    const bool scored = std::ranges::any_of(rows, [](const SweepRow& r) { return r.score.has_value(); });
    std::string out = scored ? "lambda,mean_reasoning_tokens,mean_answer_tokens,score,n\n"
                             : "lambda,mean_reasoning_tokens,mean_answer_tokens,n\n";
    for (const auto& r : rows) {
        std::vector<std::string> cells{format_number(r.lambda), format_number(r.mean_reasoning_tokens),
                                       format_number(r.mean_answer_tokens)};
        if (scored) cells.push_back(r.score ? format_number(*r.score) : "");
        cells.push_back(std::to_string(r.n));
        out += join(cells);
    }
    return out;
}

std::vector<SweepRow> sweep_rows_from_csv(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const auto c_lambda = t.column("lambda");
    const auto c_reason = t.column("mean_reasoning_tokens");
    const auto c_answer = t.column("mean_answer_tokens");
    const auto c_n = t.column("n");
    const bool scored = std::ranges::find(t.header, "score") != t.header.end();
    std::vector<SweepRow> rows;
    try {
        for (const auto& r : t.rows) {
            SweepRow row;
            row.lambda = std::stod(r[c_lambda]);
            row.mean_reasoning_tokens = std::stod(r[c_reason]);
            row.mean_answer_tokens = std::stod(r[c_answer]);
            row.n = std::stoll(r[c_n]);
            if (scored && !r[t.column("score")].empty()) row.score = std::stod(r[t.column("score")]);
            rows.push_back(row);
        }
    } catch (const std::exception&) {
        throw ConfigError("sweep CSV has a non-numeric cell");
    }
    return rows;
}

json reference_patterns() {
    return json{
        {"note", "shifts measured on R1-Distill-Qwen-7B; documentation only, not expected of the mock"},
        {"watchlist_logit_shift",
         {{"lambdas", {-0.2, -0.1, 0.1, 0.2}},
          {"tokens",
           {{"Alright", {-0.2033, -0.0638, 0.0117, 0.0061}},
            {"Hmm", {-1.1171e-4, -4.7589e-5, 2.5699e-5, 7.8185e-6}},
            {"Oh", {-5.1966e-8, -2.9514e-8, 8.5295e-8, 2.2929e-7}},
            {"Wait", {-7.3789e-9, -1.6405e-14, 2.8739e-8, 9.2974e-8}}}}}},
        {"gamma_logit_multiplier",
         json::array({{{"gamma", 2.0}, {"reasoning_tokens", 1013.48}, {"answer_tokens", 5795.13}, {"accuracy", 56.20}},
                      {{"gamma", 1.0}, {"reasoning_tokens", 3392.95}, {"answer_tokens", 386.03}, {"accuracy", 92.18}},
                      {{"gamma", 0.8}, {"reasoning_tokens", 11309.18}, {"answer_tokens", 2.00}, {"accuracy", 0.00}}})},
    };
}

namespace {

json summary_json(const DistributionSummary& s) {
    return json{{"mean", s.mean},     {"stddev", s.stddev}, {"min", s.min}, {"q25", s.q25},
                {"median", s.median}, {"q75", s.q75},       {"max", s.max}};
}

}  // namespace

json logit_report_to_json(const LogitShiftReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) {
        json watch = json::object();
        for (const auto& [token, delta] : r.watch_mean_delta) watch[std::to_string(token)] = delta;
        rows.push_back({{"lambda", r.lambda},
                        {"end_think_delta", summary_json(r.end_think_delta)},
                        {"mean_abs_end_think_delta", r.mean_abs_end_think_delta},
                        {"baseline_mean_abs_delta", r.baseline_mean_abs_delta},
                        {"eos_mean_delta", r.eos_mean_delta},
                        {"watch_mean_delta", watch},
                        {"end_think_deltas", r.end_think_deltas}});
    }
    return json{{"schema_version", kSchemaVersion},
                {"baseline_token_count", report.baseline_tokens.size()},
                {"baseline_tokens", report.baseline_tokens},
                {"watchlist", report.watchlist},
                {"rows", rows},
                {"reference_patterns", reference_patterns()}};
}

std::string gamma_csv(const std::vector<Prompt>& prompts, double gamma, const std::vector<GenerationOutcome>& outcomes) {
    if (prompts.size() != outcomes.size()) throw DimensionError("gamma_csv: prompts and outcomes differ in length");
    std::string out = "prompt_id,gamma,reasoning_tokens,answer_tokens,ended_by\n";
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        out += join({prompts[i].id, format_number(gamma), std::to_string(outcomes[i].reasoning_token_count),
                     std::to_string(outcomes[i].answer_token_count), to_string(outcomes[i].ended_by)});
    }
    return out;
}

// ---- overthink ---------------------------------------------------------------------

json detection_report_to_json(const DetectionReport& report, int layer) {
    json pairs = json::array();
    for (const auto& p : report.per_pair) {
        pairs.push_back({{"pair_id", p.pair_id},
                         {"predicted_vanilla", p.predicted_vanilla},
                         {"predicted_overthink", p.predicted_overthink},
                         {"flagged_vanilla", p.flagged_vanilla},
                         {"flagged_overthink", p.flagged_overthink}});
    }
    return json{{"schema_version", kSchemaVersion},
                {"layer", layer},
                {"threshold", report.threshold},
                {"pair_separation_rate", report.pair_separation_rate},
                {"auc", report.auc},
                {"detection_rate_at_threshold", report.detection_rate_at_threshold},
                {"false_positive_rate", report.false_positive_rate},
                {"per_pair", pairs}};
}

// ---- csv ---------------------------------------------------------------------------

std::size_t CsvTable::column(const std::string& name) const {
    auto it = std::ranges::find(header, name);
    if (it == header.end()) throw ConfigError("CSV lacks column '" + name + "'");
    return static_cast<std::size_t>(std::distance(header.begin(), it));
}

CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        return cells;
    };
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (t.header.empty()) {
            t.header = split(line);
            continue;
        }
        auto cells = split(line);
        if (cells.size() != t.header.size()) throw ConfigError("CSV row has " + std::to_string(cells.size()) +
                                                               " cells, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) throw ConfigError("CSV has no header row");
    return t;
}

}  // namespace rplan
