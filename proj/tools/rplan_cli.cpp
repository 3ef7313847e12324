// rplan: command-line front end for the reasoning-length planning toolkit.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rplan/charts.hpp"
#include "rplan/directions.hpp"
#include "rplan/mock_planner.hpp"
#include "rplan/overthink.hpp"
#include "rplan/pipeline.hpp"
#include "rplan/probe.hpp"
#include "rplan/serialization.hpp"
#include "rplan/steering.hpp"
#include "rplan/trace.hpp"

namespace fs = std::filesystem;
using namespace rplan;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;

MockPlannerSpec spec_from_arg(const std::string& arg, std::optional<std::uint64_t> seed) {
    // A spec file keeps its stored v and c; --seed then only changes the noise.
    MockPlannerSpec spec = arg.empty() || arg == "default" ? MockPlannerSpec{} : mock_spec_from_json(read_json_file(arg));
    if (seed) spec.seed = *seed;
    spec.materialize();
    return spec;
}

int pick_layer(const ProbeBundle& bundle, const std::string& layer) {
    if (layer == "best") {
        if (!bundle.best_layer) throw ConfigError("probes file has no best_layer");
        return *bundle.best_layer;
    }
    try {
        return std::stoi(layer);
    } catch (const std::exception&) {
        throw ConfigError("--layer must be an integer or 'best'");
    }
}

std::vector<TokenId> parse_tokens(const std::string& text) {
    std::vector<TokenId> out;
    if (text.empty()) return out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        try {
            out.push_back(static_cast<TokenId>(std::stol(item)));
        } catch (const std::exception&) {
            throw ConfigError("bad token id '" + item + "'");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

void write_or_print(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
    } else {
        write_text_file(path, content);
    }
}

struct SteerArgs {
    std::string model = "mock:default";
    std::string directions;
    std::string prompts;
    int per_level = 50;
    std::vector<int> levels{1, 2, 3, 4, 5};
    std::uint64_t first_index = 100000;
    int max_new = 1024;
    std::vector<int> layer_mask;
    std::string out;

    void add(CLI::App* cmd, bool needs_directions) {
        cmd->add_option("--model", model, "mock:default or mock:<spec.json>");
        auto* d = cmd->add_option("--directions", directions, "directions JSON");
        if (needs_directions) d->required();
        cmd->add_option("--prompts", prompts, "prompts JSONL (generated from the mock when omitted)");
        cmd->add_option("--per-level", per_level, "generated prompts per level");
        cmd->add_option("--levels", levels, "levels for generated prompts")->delimiter(',');
        cmd->add_option("--first-index", first_index, "first question index for generated prompts");
        cmd->add_option("--max-new-tokens", max_new, "generation budget");
        cmd->add_option("--layers", layer_mask, "steer only these layers")->delimiter(',');
        cmd->add_option("--out", out, "output file");
    }

    std::vector<Prompt> load_prompts(const MockPlanner& model_ref) const {
        if (!prompts.empty()) return prompts_from_jsonl(read_text_file(prompts));
        return build_prompts(model_ref, per_level, levels, first_index);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rplan: probe, steer and monitor planned reasoning length"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "seed for every random choice")->expected(1);

    std::function<void()> action;

    // ---- synth -------------------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "synthetic data from the mock planner");
    synth->require_subcommand(1);
    std::string spec_arg = "default";
    int per_level = 200;
    std::string out;

    auto* gen = synth->add_subcommand("generate", "write a mock trace");
    gen->add_option("--spec", spec_arg, "mock spec JSON or 'default'");
    gen->add_option("--per-level", per_level, "questions per difficulty level");
    gen->add_option("--out", out, "trace path")->required();
    gen->callback([&] {
        action = [&] {
            const auto ds = build_trace(spec_from_arg(spec_arg, seed), per_level);
            save_trace(ds, out);
            std::cout << "wrote " << ds.records.size() << " records to " << out << "\n";
        };
    });

    auto* spec_cmd = synth->add_subcommand("spec", "write the mock spec (materialized) as JSON");
    spec_cmd->add_option("--spec", spec_arg, "mock spec JSON or 'default'");
    spec_cmd->add_option("--out", out, "spec path");
    spec_cmd->callback([&] {
        action = [&] { write_or_print(out, mock_spec_to_json(spec_from_arg(spec_arg, seed)).dump(2) + "\n"); };
    });

    int pair_level = 3, n_pairs = 100;
    double boost = 0.06;
    std::uint64_t first_index = 0;
    std::string manifest_out;
    auto* pairs_cmd = synth->add_subcommand("pairs", "write vanilla/overthink pairs and their manifest");
    pairs_cmd->add_option("--spec", spec_arg, "mock spec JSON or 'default'");
    pairs_cmd->add_option("--level", pair_level, "difficulty of the vanilla questions");
    pairs_cmd->add_option("--n-pairs", n_pairs, "number of pairs");
    pairs_cmd->add_option("--boost", boost, "projection boost of the overthink twin");
    pairs_cmd->add_option("--first-index", first_index, "first question index");
    pairs_cmd->add_option("--out", out, "pairs trace path")->required();
    pairs_cmd->add_option("--manifest", manifest_out, "manifest path")->required();
    pairs_cmd->callback([&] {
        action = [&] {
            const auto pairs = build_overthink_pairs(spec_from_arg(spec_arg, seed), pair_level, n_pairs, boost, first_index);
            save_trace(pairs.trace, out);
            write_json_file(manifest_out, manifest_to_json(pairs.manifest));
            std::cout << "wrote " << pairs.manifest.size() << " pairs\n";
        };
    });

    std::vector<int> prompt_levels{1, 2, 3, 4, 5};
    auto* prompts_cmd = synth->add_subcommand("prompts", "write mock prompts as JSONL");
    prompts_cmd->add_option("--spec", spec_arg, "mock spec JSON or 'default'");
    prompts_cmd->add_option("--per-level", per_level, "prompts per level");
    prompts_cmd->add_option("--levels", prompt_levels, "levels")->delimiter(',');
    prompts_cmd->add_option("--first-index", first_index, "first question index");
    prompts_cmd->add_option("--out", out, "JSONL path");
    prompts_cmd->callback([&] {
        action = [&] {
            const MockPlanner model(spec_from_arg(spec_arg, seed));
            write_or_print(out, prompts_jsonl(build_prompts(model, per_level, prompt_levels, first_index)));
        };
    });

    // ---- trace -------------------------------------------------------------------------
    auto* trace_cmd = app.add_subcommand("trace", "trace files");
    trace_cmd->require_subcommand(1);
    std::string trace_path;
    auto* validate_cmd = trace_cmd->add_subcommand("validate", "check a trace file");
    validate_cmd->add_option("path", trace_path, "trace path")->required();
    validate_cmd->callback([&] {
        action = [&] {
            const auto ds = load_trace(trace_path);
            std::cout << "ok: " << ds.records.size() << " records, " << ds.metadata.n_layers << " layers x "
                      << ds.metadata.d_model << " (" << ds.metadata.model_name << ")\n";
        };
    });

    // ---- probe -------------------------------------------------------------------------
    auto* probe_cmd = app.add_subcommand("probe", "linear probes of reasoning length");
    probe_cmd->require_subcommand(1);
    ProbeTrainConfig probe_cfg;
    std::string policy = "mean_over_rollouts";
    double test_fraction = 0.1;
    std::string curve_out;
    auto* train_cmd = probe_cmd->add_subcommand("train", "fit one Lasso probe per layer");
    train_cmd->add_option("--trace", trace_path, "trace path")->required();
    train_cmd->add_option("--alpha", probe_cfg.alpha, "L1 strength");
    train_cmd->add_option("--max-iterations", probe_cfg.max_iterations, "coordinate descent sweeps");
    train_cmd->add_option("--tolerance", probe_cfg.tolerance, "max weight change at convergence");
    train_cmd->add_option("--target-policy", policy, "mean_over_rollouts or first_rollout");
    train_cmd->add_option("--test-fraction", test_fraction, "held-out fraction");
    train_cmd->add_option("--out", out, "probes JSON")->required();
    train_cmd->add_option("--curve", curve_out, "layer-curve CSV");
    train_cmd->callback([&] {
        action = [&] {
            probe_cfg.target_policy = parse_target_policy(policy);
            probe_cfg.seed = seed.value_or(0);
            try {
                probe_cfg.check();
            } catch (const PreconditionError& e) {
                throw ConfigError(e.what());
            }
            const auto results = layerwise_probe(load_trace(trace_path), probe_cfg, test_fraction, seed.value_or(0));
            write_json_file(out, probes_to_json(results));
            if (!curve_out.empty()) write_text_file(curve_out, layer_curve_csv(results));
            std::cout << layer_curve_csv(results);
        };
    });

    std::string probes_path, layer_arg = "all";
    auto* eval_cmd = probe_cmd->add_subcommand("eval", "evaluate stored probes on a trace");
    eval_cmd->add_option("--probes", probes_path, "probes JSON")->required();
    eval_cmd->add_option("--trace", trace_path, "trace path")->required();
    eval_cmd->add_option("--layer", layer_arg, "layer index, 'best' or 'all'");
    eval_cmd->add_option("--target-policy", policy, "mean_over_rollouts or first_rollout");
    eval_cmd->callback([&] {
        action = [&] {
            const auto bundle = probes_from_json(read_json_file(probes_path));
            const auto ds = load_trace(trace_path);
            std::vector<LayerProbeResult> results;
            for (const auto& p : bundle.probes) {
                if (layer_arg != "all" && p.layer != pick_layer(bundle, layer_arg)) continue;
                results.push_back({p.layer, p.probe,
                                   evaluate(p.probe, assemble_design(ds, p.layer, parse_target_policy(policy)))});
            }
            if (results.empty()) throw ConfigError("no probe matches --layer " + layer_arg);
            std::cout << layer_curve_csv(results);
        };
    });

    // ---- directions --------------------------------------------------------------------
    auto* dir_cmd = app.add_subcommand("directions", "difference-in-means directions");
    dir_cmd->require_subcommand(1);
    auto* extract_cmd = dir_cmd->add_subcommand("extract", "extract r_{i<-1} at every layer");
    extract_cmd->add_option("--trace", trace_path, "trace path")->required();
    extract_cmd->add_option("--out", out, "directions JSON")->required();
    extract_cmd->callback([&] {
        action = [&] { write_json_file(out, directions_to_json(extract_all(load_trace(trace_path)))); };
    });

    std::string dirs_path, out_dir = ".";
    auto* report_cmd = dir_cmd->add_subcommand("report", "cosine, norm and prediction reports");
    report_cmd->add_option("--directions", dirs_path, "directions JSON")->required();
    report_cmd->add_option("--probes", probes_path, "probes JSON (enables length predictions)");
    report_cmd->add_option("--layer", layer_arg, "layer of the cosine matrix, or 'best'")->default_val("best");
    report_cmd->add_option("--out-dir", out_dir, "report directory");
    report_cmd->callback([&] {
        action = [&] {
            const auto set = directions_from_json(read_json_file(dirs_path));
            fs::create_directories(out_dir);
            std::optional<ProbeBundle> bundle;
            if (!probes_path.empty()) bundle = probes_from_json(read_json_file(probes_path));
            int layer = set.layers.back().layer;
            if (layer_arg == "best") {
                if (bundle) layer = pick_layer(*bundle, "best");
            } else {
                layer = pick_layer(ProbeBundle{}, layer_arg);
            }
            const fs::path dir(out_dir);
            write_text_file((dir / "cosine_matrix.csv").string(), cosine_matrix_csv(set, layer));
            write_text_file((dir / "layer_cosine.csv").string(), layer_cosine_csv(layerwise_mean_cosine(set)));
            write_text_file((dir / "norms.csv").string(), norms_csv(set));
            if (bundle) {
                std::vector<DirectionPrediction> preds;
                for (const auto& p : bundle->probes) {
                    preds.push_back(predict_from_direction(p.probe, set.at_layer(p.layer).mean));
                }
                write_text_file((dir / "direction_predictions.csv").string(), direction_predictions_csv(preds));
            }
        };
    });

    // ---- steer -------------------------------------------------------------------------
    auto* steer_cmd = app.add_subcommand("steer", "activation steering and logit interventions");
    steer_cmd->require_subcommand(1);
    SteerArgs sa;
    std::string lambdas_arg = "-0.2:0.2:0.05", scorer_name;
    auto* sweep_cmd = steer_cmd->add_subcommand("sweep", "reasoning length across a lambda grid");
    sa.add(sweep_cmd, true);
    sweep_cmd->add_option("--lambdas", lambdas_arg, "lo:hi:step or a comma list");
    sweep_cmd->add_option("--scorer", scorer_name, "scorer plug-in (answer_complete)");
    sweep_cmd->callback([&] {
        action = [&] {
            const auto model = load_mock_model(sa.model);
            const auto set = directions_from_json(read_json_file(sa.directions));
            const auto report = sweep_lambda(*model, sa.load_prompts(*model), set.mean_directions(),
                                             parse_lambda_grid(lambdas_arg), sa.max_new,
                                             make_scorer(scorer_name, *model), sa.layer_mask);
            write_or_print(sa.out, sweep_csv(report.rows));
        };
    });

    std::string watch_arg;
    auto* logits_cmd = steer_cmd->add_subcommand("logits", "end-of-reasoning logit shifts at <think>");
    sa.add(logits_cmd, true);
    logits_cmd->add_option("--lambdas", lambdas_arg, "lo:hi:step or a comma list");
    logits_cmd->add_option("--watchlist", watch_arg, "comma-separated token ids");
    logits_cmd->callback([&] {
        action = [&] {
            const auto model = load_mock_model(sa.model);
            const auto set = directions_from_json(read_json_file(sa.directions));
            const auto report =
                logit_shift_analysis(*model, sa.load_prompts(*model), set.mean_directions(),
                                     parse_lambda_grid(lambdas_arg), parse_tokens(watch_arg), seed.value_or(0),
                                     sa.layer_mask);
            write_or_print(sa.out, logit_report_to_json(report).dump(2) + "\n");
        };
    });

    double gamma = 1.0;
    std::optional<TokenId> gamma_target;
    auto* gamma_cmd = steer_cmd->add_subcommand("gamma", "scale the end-of-reasoning logit at every step");
    sa.add(gamma_cmd, false);
    gamma_cmd->add_option("--gamma", gamma, "multiplier")->required();
    gamma_cmd->add_option("--target", gamma_target, "token id to scale (default end_think)");
    gamma_cmd->callback([&] {
        action = [&] {
            const auto model = load_mock_model(sa.model);
            const auto prompts = sa.load_prompts(*model);
            const auto outcomes = gamma_logit_intervention(*model, prompts, {gamma, gamma_target}, sa.max_new);
            write_or_print(sa.out, gamma_csv(prompts, gamma, outcomes));
        };
    });

    // ---- overthink ---------------------------------------------------------------------
    auto* ot_cmd = app.add_subcommand("overthink", "pre-generation overthink monitoring");
    ot_cmd->require_subcommand(1);
    std::string manifest_path, calibration_path;
    double quantile = kDefaultQuantile;
    std::string ot_layer = "best";
    auto* detect_cmd = ot_cmd->add_subcommand("detect", "flag questions whose predicted length is too high");
    detect_cmd->add_option("--probes", probes_path, "probes JSON")->required();
    detect_cmd->add_option("--layer", ot_layer, "layer index or 'best'");
    detect_cmd->add_option("--trace", trace_path, "pairs trace")->required();
    detect_cmd->add_option("--manifest", manifest_path, "pair manifest JSON")->required();
    detect_cmd->add_option("--calibration", calibration_path, "calibration trace (default: vanilla records)");
    detect_cmd->add_option("--quantile", quantile, "threshold quantile");
    detect_cmd->add_option("--out", out, "report JSON");
    detect_cmd->callback([&] {
        action = [&] {
            if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("--quantile must lie in (0, 1]");
            const auto bundle = probes_from_json(read_json_file(probes_path));
            const int layer = pick_layer(bundle, ot_layer);
            const auto& probe = find_probe(bundle, layer).probe;
            const auto ds = load_trace(trace_path);
            const auto manifest = manifest_from_json(read_json_file(manifest_path));
            TraceDataset calibration;
            if (calibration_path.empty()) {
                std::vector<std::string> ids;
                for (const auto& m : manifest) ids.push_back(m.vanilla_question_id);
                calibration = select_records(ds, ids);
            } else {
                calibration = load_trace(calibration_path);
            }
            const double tau = calibrate_threshold(probe, calibration, quantile);
            const auto report = paired_eval(probe, assemble_pairs(ds, manifest), tau);
            write_or_print(out, detection_report_to_json(report, layer).dump(2) + "\n");
        };
    });

    // ---- chart -------------------------------------------------------------------------
    std::string chart_kind, report_path;
    auto* chart_cmd = app.add_subcommand("chart", "render a report file as SVG");
    chart_cmd->add_option("kind", chart_kind, "layer_curve|cosine_heatmap|norms|sweep|logit_shift|overthink")
        ->required();
    chart_cmd->add_option("report", report_path, "report file")->required();
    chart_cmd->add_option("--out", out, "SVG path")->required();
    chart_cmd->callback([&] {
        action = [&] {
            static const std::map<std::string, ChartKind> kinds{
                {"layer_curve", ChartKind::layer_curve}, {"cosine_heatmap", ChartKind::cosine_heatmap},
                {"norms", ChartKind::norms_bars},        {"sweep", ChartKind::sweep},
                {"logit_shift", ChartKind::logit_shift}, {"overthink", ChartKind::overthink_scatter}};
            auto it = kinds.find(chart_kind);
            if (it == kinds.end()) throw ConfigError("unknown chart kind '" + chart_kind + "'");
            emit_charts({{it->second, report_path, out}});
        };
    });

    // ---- pipeline ----------------------------------------------------------------------
    auto* pipe_cmd = app.add_subcommand("pipeline", "run every configured stage");
    pipe_cmd->require_subcommand(1);
    std::string config_path, formats_arg, preset_arg;
    auto* run_cmd = pipe_cmd->add_subcommand("run", "run from a JSON config");
    run_cmd->add_option("--config", config_path, "config JSON")->required();
    run_cmd->add_option("--out", out, "output directory (overrides output_dir)");
    run_cmd->add_option("--trace", trace_path, "trace path (overrides trace)");
    run_cmd->add_option("--model", sa.model, "model reference (overrides model)");
    run_cmd->add_option("--formats", formats_arg, "comma list of csv,json,svg (overrides formats)");
    run_cmd->add_option("--preset", preset_arg, "preset name (overrides preset)");
    run_cmd->callback([&] {
        action = [&] {
            json doc = read_json_file(config_path);
            json overrides = json::object();
            if (seed) overrides["seed"] = *seed;
            if (!out.empty()) overrides["output_dir"] = out;
            if (!trace_path.empty()) overrides["trace"] = trace_path;
            if (run_cmd->count("--model")) overrides["model"] = sa.model;
            if (!preset_arg.empty()) overrides["preset"] = preset_arg;
            if (!formats_arg.empty()) {
                json f = json::array();
                std::size_t start = 0;
                while (true) {
                    const auto comma = formats_arg.find(',', start);
                    f.push_back(formats_arg.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
                    if (comma == std::string::npos) break;
                    start = comma + 1;
                }
                overrides["formats"] = f;
            }
            const auto result = run_pipeline(pipeline_config_from_json(merge_config(doc, overrides)));
            if (result.exit_code != 0) {
                std::cerr << "error: " << result.error << "\n";
                std::exit(result.exit_code);
            }
            std::cout << "pipeline complete: " << result.files.size() << " files\n";
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (action) action();
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const TraceError& e) {
        std::cerr << "trace error (" << to_string(e.code()) << "): " << e.what() << "\n";
        return e.code() == TraceErrc::io_failure ? kConfigError : kStageFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kStageFailure;
    }
}
