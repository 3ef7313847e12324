#include "rplan/pipeline.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <functional>

#include "rplan/charts.hpp"
#include "rplan/directions.hpp"
#include "rplan/overthink.hpp"

namespace fs = std::filesystem;

namespace rplan {

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::unique_ptr<MockPlanner> load_mock_model(const std::string& reference) {
    constexpr std::string_view scheme = "mock:";
    if (!reference.starts_with(scheme)) {
        throw ConfigError("model '" + reference + "' is not supported; use mock:default or mock:<spec.json>");
    }
    const std::string rest = reference.substr(scheme.size());
    if (rest.empty() || rest == "default") return std::make_unique<MockPlanner>(MockPlannerSpec::defaults());
    return std::make_unique<MockPlanner>(mock_spec_from_json(read_json_file(rest)));
}

TaskScorer make_scorer(const std::string& name, const MockPlanner& model) {
    if (name.empty()) return {};
    if (name == "answer_complete") {
        const auto n_ans = static_cast<std::int64_t>(model.spec().answer_length);
        return [n_ans](const Prompt&, const GenerationOutcome& o) {
            return o.ended_by == EndReason::eos && o.answer_token_count == n_ans ? 1.0 : 0.0;
        };
    }
    throw ConfigError("unknown scorer '" + name + "'");
}

// ---- config ------------------------------------------------------------------------

json merge_config(json base, const json& overrides) {
    if (!base.is_object() || !overrides.is_object()) return overrides;
    for (const auto& [key, value] : overrides.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object()) {
            base[key] = merge_config(base[key], value);
        } else {
            base[key] = value;
        }
    }
    return base;
}

namespace {

json preset_defaults(const std::string& name) {
    if (name.empty()) return json::object();
    if (name == "efficient-inference") {
        return json{{"model", "mock:default"},
                    {"steering",
                     {{"lambdas", {-0.2, -0.15, -0.1, -0.05, 0.0}},
                      {"levels", {1, 2}},
                      {"scorer", "answer_complete"},
                      {"report_name", "efficient_inference.csv"}}},
                    {"logits", {{"enabled", false}}}};
    }
    throw ConfigError("unknown preset '" + name + "'");
}

std::vector<double> lambdas_from(const json& j) {
    if (j.is_string()) return parse_lambda_grid(j.get<std::string>());
    return j.get<std::vector<double>>();
}

void require_exists(const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string(what) + " path is empty");
    if (!fs::exists(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& in) {
    if (!in.is_object()) throw ConfigError("pipeline config must be a JSON object");
    static const std::set<std::string> known{"schema_version", "trace",   "output_dir", "seed",  "test_fraction",
                                             "probe",          "directions", "model",    "steering", "logits",
                                             "gamma",          "overthink", "formats",   "preset"};
    for (const auto& [key, _] : in.items()) {
        if (!known.contains(key)) throw ConfigError("unknown pipeline config key '" + key + "'");
    }
    const std::string preset = in.value("preset", "");
    const json doc = merge_config(preset_defaults(preset), in);

    PipelineConfig c;
    c.preset = preset;
    try {
        c.trace_path = doc.value("trace", "");
        c.output_dir = doc.value("output_dir", c.output_dir);
        c.seed = doc.value("seed", c.seed);
        c.test_fraction = doc.value("test_fraction", c.test_fraction);
        if (doc.contains("probe")) {
            const auto& p = doc.at("probe");
            c.probe.alpha = p.value("alpha", c.probe.alpha);
            c.probe.max_iterations = p.value("max_iterations", c.probe.max_iterations);
            c.probe.tolerance = p.value("tolerance", c.probe.tolerance);
            if (p.contains("target_policy")) c.probe.target_policy = parse_target_policy(p.at("target_policy"));
        }
        c.probe.seed = c.seed;
        c.directions = doc.value("directions", true);
        c.model = doc.value("model", "");
        if (!c.model.empty()) {
            SteeringStageConfig s;
            if (doc.contains("steering")) {
                const auto& j = doc.at("steering");
                if (j.contains("lambdas")) s.lambdas = lambdas_from(j.at("lambdas"));
                s.max_new_tokens = j.value("max_new_tokens", s.max_new_tokens);
                s.prompts_path = j.value("prompts", "");
                s.prompts_per_level = j.value("prompts_per_level", s.prompts_per_level);
                if (j.contains("levels")) s.levels = j.at("levels").get<std::vector<int>>();
                s.first_index = j.value("first_index", s.first_index);
                if (j.contains("layer_mask")) s.layer_mask = j.at("layer_mask").get<std::vector<int>>();
                s.scorer = j.value("scorer", "");
                s.report_name = j.value("report_name", s.report_name);
            }
            c.steering = s;
            LogitStageConfig l;
            if (doc.contains("logits")) {
                const auto& j = doc.at("logits");
                l.enabled = j.value("enabled", true);
                if (j.contains("lambdas")) l.lambdas = lambdas_from(j.at("lambdas"));
                if (j.contains("watchlist")) l.watchlist = j.at("watchlist").get<std::vector<TokenId>>();
            }
            if (l.enabled) c.logits = l;
            if (doc.contains("gamma")) c.gammas = doc.at("gamma").get<std::vector<double>>();
        } else if (doc.contains("steering") || doc.contains("gamma")) {
            throw ConfigError("steering and gamma stages need a model");
        }
        if (doc.contains("overthink")) {
            const auto& j = doc.at("overthink");
            OverthinkStageConfig o;
            o.trace_path = j.value("trace", "");
            o.manifest_path = j.value("manifest", "");
            o.calibration_path = j.value("calibration", "");
            o.quantile = j.value("quantile", o.quantile);
            if (j.contains("layer") && !(j.at("layer").is_string() && j.at("layer") == "best")) {
                o.layer = j.at("layer").get<int>();
            }
            if (j.contains("probe_alpha")) o.probe_alpha = j.at("probe_alpha").get<double>();
            c.overthink = o;
        }
        if (doc.contains("formats")) {
            c.formats.clear();
            for (const auto& f : doc.at("formats")) c.formats.insert(f.get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed pipeline config: ") + e.what());
    }
    return c;
}

void PipelineConfig::check() const {
    require_exists(trace_path, "trace");
    if (output_dir.empty()) throw ConfigError("output_dir is empty");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
    try {
        probe.check();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    for (const auto& f : formats) {
        if (f != "csv" && f != "json" && f != "svg") throw ConfigError("unknown report format '" + f + "'");
    }
    if (!model.empty() && !directions) throw ConfigError("steering stages need the directions stage");
    if (steering) {
        if (steering->lambdas.empty()) throw ConfigError("steering lambda grid is empty");
        if (steering->max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
        if (!steering->prompts_path.empty()) require_exists(steering->prompts_path, "prompts");
        else if (steering->prompts_per_level < 1 || steering->levels.empty()) {
            throw ConfigError("generated prompts need prompts_per_level >= 1 and at least one level");
        }
    }
    if (logits && logits->lambdas.empty()) throw ConfigError("logit lambda grid is empty");
    if (overthink) {
        require_exists(overthink->trace_path, "overthink trace");
        require_exists(overthink->manifest_path, "overthink manifest");
        if (!overthink->calibration_path.empty()) require_exists(overthink->calibration_path, "calibration trace");
        if (!(overthink->quantile > 0.0 && overthink->quantile <= 1.0)) {
            throw ConfigError("overthink quantile must lie in (0, 1]");
        }
    }
}

// ---- run ---------------------------------------------------------------------------

namespace {

class StageFailure : public Error {
public:
    StageFailure(std::string stage, const std::string& what, int code)
        : Error(what), stage_(std::move(stage)), code_(code) {}
    const std::string& stage() const { return stage_; }
    int code() const { return code_; }

private:
    std::string stage_;
    int code_;
};

class Run {
public:
    explicit Run(const PipelineConfig& config) : config_(config), dir_(config.output_dir) {}

    bool wants(const char* format) const { return config_.formats.contains(format); }

    void emit(const std::string& stage, const std::string& name, const std::string& content) {
        write_text_file((dir_ / name).string(), content);
        files_.push_back({name, stage, sha256_hex(content), content.size(), false});
    }

    void stage(const std::string& name, const std::function<void()>& body) {
        try {
            body();
        } catch (const ConfigError& e) {
            throw StageFailure(name, e.what(), 2);
        } catch (const std::exception& e) {
            throw StageFailure(name, e.what(), 3);
        }
    }

    std::vector<ManifestEntry>& files() { return files_; }

private:
    const PipelineConfig& config_;
    fs::path dir_;
    std::vector<ManifestEntry> files_;
};

json manifest_json(const PipelineConfig& config, const PipelineResult& r) {
    json files = json::array();
    for (const auto& f : r.files) {
        files.push_back({{"path", f.path},
                         {"stage", f.stage},
                         {"sha256", f.sha256},
                         {"bytes", f.bytes},
                         {"partial", f.partial}});
    }
    json doc{{"schema_version", kSchemaVersion},
             {"seed", config.seed},
             {"run_complete", r.exit_code == 0},
             {"files", files}};
    if (!config.preset.empty()) doc["preset"] = config.preset;
    if (r.exit_code != 0) {
        doc["failed_stage"] = r.failed_stage;
        doc["error"] = r.error;
    }
    return doc;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
    config.check();
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw ConfigError("cannot create output_dir '" + config.output_dir + "': " + ec.message());

    Run run(config);
    PipelineResult result;

    TraceDataset trace;
    TraceDataset train_part;
    std::vector<LayerProbeResult> probes;
    int chosen_layer = 0;
    DirectionSet directions;
    std::unique_ptr<MockPlanner> model;
    std::vector<Prompt> prompts;
    std::string layer_curve, cosine_csv, norms, sweep, logit_json, detection_json;

    try {
        run.stage("load", [&] { trace = load_trace(config.trace_path); });

        run.stage("probe", [&] {
            auto [train, test] = split_dataset(trace, config.test_fraction, config.seed);
            train_part = std::move(train);
            probes = layerwise_probe(trace, config.probe, config.test_fraction, config.seed);
            chosen_layer = best_layer(probes);
            layer_curve = layer_curve_csv(probes);
            if (run.wants("json")) run.emit("probe", "probes.json", probes_to_json(probes).dump(2) + "\n");
            if (run.wants("csv")) run.emit("probe", "layer_curve.csv", layer_curve);
        });

        if (config.directions) {
            run.stage("directions", [&] {
                directions = extract_all(trace);
                cosine_csv = cosine_matrix_csv(directions, chosen_layer);
                norms = norms_csv(directions);
                if (run.wants("json")) run.emit("directions", "directions.json", directions_to_json(directions).dump(2) + "\n");
                if (run.wants("csv")) {
                    run.emit("directions", "cosine_matrix.csv", cosine_csv);
                    run.emit("directions", "layer_cosine.csv", layer_cosine_csv(layerwise_mean_cosine(directions)));
                    run.emit("directions", "norms.csv", norms);
                }
            });

            run.stage("predictions", [&] {
                std::vector<DirectionPrediction> preds;
                for (const auto& p : probes) {
                    preds.push_back(predict_from_direction(p.probe, directions.at_layer(p.layer).mean));
                }
                if (run.wants("csv")) run.emit("predictions", "direction_predictions.csv", direction_predictions_csv(preds));
            });
        }

        if (!config.model.empty()) {
            run.stage("model", [&] {
                model = load_mock_model(config.model);
                const auto& s = *config.steering;
                prompts = s.prompts_path.empty()
                              ? build_prompts(*model, s.prompts_per_level, s.levels, s.first_index)
                              : prompts_from_jsonl(read_text_file(s.prompts_path));
                if (prompts.empty()) throw PreconditionError("no prompts to steer");
            });

            run.stage("sweep", [&] {
                const auto& s = *config.steering;
                const auto report = sweep_lambda(*model, prompts, directions.mean_directions(), s.lambdas,
                                                 s.max_new_tokens, make_scorer(s.scorer, *model), s.layer_mask);
                sweep = sweep_csv(report.rows);
                if (run.wants("csv")) run.emit("sweep", s.report_name, sweep);
            });

            if (config.logits) {
                run.stage("logits", [&] {
                    const auto report =
                        logit_shift_analysis(*model, prompts, directions.mean_directions(), config.logits->lambdas,
                                             config.logits->watchlist, config.seed, config.steering->layer_mask);
                    logit_json = logit_report_to_json(report).dump(2) + "\n";
                    if (run.wants("json")) run.emit("logits", "logit_shift.json", logit_json);
                });
            }

            if (!config.gammas.empty()) {
                run.stage("gamma", [&] {
                    std::string csv;
                    for (double g : config.gammas) {
                        const auto outcomes = gamma_logit_intervention(*model, prompts, {g, std::nullopt},
                                                                       config.steering->max_new_tokens);
                        std::string part = gamma_csv(prompts, g, outcomes);
                        if (!csv.empty()) part.erase(0, part.find('\n') + 1);
                        csv += part;
                    }
                    if (run.wants("csv")) run.emit("gamma", "gamma.csv", csv);
                });
            }
        }

        if (config.overthink) {
            run.stage("overthink", [&] {
                const auto& o = *config.overthink;
                const TraceDataset pairs_trace = load_trace(o.trace_path);
                const auto manifest = manifest_from_json(read_json_file(o.manifest_path));
                const auto pairs = assemble_pairs(pairs_trace, manifest);
                const int layer = o.layer.value_or(chosen_layer);
                auto it = std::ranges::find(probes, layer, &LayerProbeResult::layer);
                if (it == probes.end()) throw ConfigError("no probe for layer " + std::to_string(layer));
                LinearProbe probe = it->probe;
                if (o.probe_alpha) {
                    ProbeTrainConfig pc = config.probe;
                    pc.alpha = *o.probe_alpha;
                    probe = train_lasso(assemble_design(train_part, layer, pc.target_policy), pc);
                }
                TraceDataset calibration;
                if (!o.calibration_path.empty()) {
                    calibration = load_trace(o.calibration_path);
                } else {
                    std::vector<std::string> ids;
                    for (const auto& m : manifest) ids.push_back(m.vanilla_question_id);
                    calibration = select_records(pairs_trace, ids);
                }
                const double tau = calibrate_threshold(probe, calibration, o.quantile);
                detection_json = detection_report_to_json(paired_eval(probe, pairs, tau), layer).dump(2) + "\n";
                if (run.wants("json")) run.emit("overthink", "detection.json", detection_json);
            });
        }

        if (run.wants("svg")) {
            run.stage("charts", [&] {
                run.emit("charts", "layer_curve.svg", layer_curve_svg(layer_curve));
                if (!cosine_csv.empty()) run.emit("charts", "cosine_heatmap.svg", cosine_heatmap_svg(cosine_csv));
                if (!norms.empty()) run.emit("charts", "norms.svg", norms_bars_svg(norms));
                if (!sweep.empty()) run.emit("charts", "sweep.svg", sweep_svg(sweep));
                if (!logit_json.empty()) run.emit("charts", "logit_shift.svg", logit_shift_svg(logit_json));
                if (!detection_json.empty()) run.emit("charts", "overthink.svg", overthink_scatter_svg(detection_json));
            });
        }
    } catch (const StageFailure& f) {
        result.exit_code = f.code();
        result.failed_stage = f.stage();
        result.error = f.stage() + ": " + f.what();
        for (auto& e : run.files()) e.partial = true;
    }

    result.files = run.files();
    result.manifest = manifest_json(config, result);
    write_json_file((fs::path(config.output_dir) / "manifest.json").string(), result.manifest);
    return result;
}

std::vector<std::string> verify_manifest(const std::string& output_dir, const json& manifest) {
    std::vector<std::string> bad;
    for (const auto& f : manifest.at("files")) {
        const std::string path = f.at("path").get<std::string>();
        const fs::path full = fs::path(output_dir) / path;
        if (!fs::exists(full) || sha256_hex(read_text_file(full.string())) != f.at("sha256").get<std::string>()) {
            bad.push_back(path);
        }
    }
    return bad;
}

}  // namespace rplan
