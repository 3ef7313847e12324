#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rplan/directions.hpp"
#include "rplan/mock_planner.hpp"
#include "rplan/overthink.hpp"
#include "rplan/probe.hpp"
#include "rplan/steering.hpp"

namespace rplan {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---- files -------------------------------------------------------------------------

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& doc);

std::string format_number(double value);

// ---- probes ------------------------------------------------------------------------

struct ProbeBundle {
    std::vector<LayerProbeResult> probes;
    std::optional<int> best_layer;
};

json probe_to_json(const LayerProbeResult& result);
json probes_to_json(const std::vector<LayerProbeResult>& results);
ProbeBundle probes_from_json(const json& doc);
const LayerProbeResult& find_probe(const ProbeBundle& bundle, int layer);

// layer,pearson_r,rmse,n_test,nonzero_weights,converged,iterations
std::string layer_curve_csv(const std::vector<LayerProbeResult>& results);

// ---- directions --------------------------------------------------------------------

json directions_to_json(const DirectionSet& set);
DirectionSet directions_from_json(const json& doc);

std::string cosine_matrix_csv(const DirectionSet& set, int layer);
std::string layer_cosine_csv(const std::vector<LayerCosine>& curve);
std::string norms_csv(const DirectionSet& set);
std::string direction_predictions_csv(const std::vector<DirectionPrediction>& predictions);

// ---- mock spec, prompts, manifests -------------------------------------------------

json mock_spec_to_json(const MockPlannerSpec& spec);
MockPlannerSpec mock_spec_from_json(const json& doc);

std::string prompts_jsonl(const std::vector<Prompt>& prompts);
std::vector<Prompt> prompts_from_jsonl(const std::string& text);

json manifest_to_json(const std::vector<PairManifestRow>& manifest);
std::vector<PairManifestRow> manifest_from_json(const json& doc);

// ---- steering reports --------------------------------------------------------------

// lambda,mean_reasoning_tokens,mean_answer_tokens[,score],n
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> sweep_rows_from_csv(const std::string& text);

json logit_report_to_json(const LogitShiftReport& report);

// prompt_id,gamma,reasoning_tokens,answer_tokens,ended_by
std::string gamma_csv(const std::vector<Prompt>& prompts, double gamma, const std::vector<GenerationOutcome>& outcomes);

// Reference shifts observed on a 7B distilled reasoning model, kept alongside mock
// reports for comparison. Not asserted against anything.
json reference_patterns();

// ---- overthink ---------------------------------------------------------------------

json detection_report_to_json(const DetectionReport& report, int layer);

// ---- csv ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);

}  // namespace rplan
