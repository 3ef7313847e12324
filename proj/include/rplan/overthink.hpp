#pragma once

#include <string>
#include <vector>

#include "rplan/probe.hpp"
#include "rplan/trace.hpp"

namespace rplan {

struct QuestionPair {
    std::string pair_id;
    ActivationRecord vanilla;
    ActivationRecord overthink;
};

struct PairDetection {
    std::string pair_id;
    double predicted_vanilla = 0.0;
    double predicted_overthink = 0.0;
    bool flagged_vanilla = false;
    bool flagged_overthink = false;
};

struct DetectionReport {
    double threshold = 0.0;
    std::vector<PairDetection> per_pair;
    double pair_separation_rate = 0.0;
    double auc = 0.0;
    double detection_rate_at_threshold = 0.0;
    double false_positive_rate = 0.0;
};

struct Detection {
    bool flagged = false;
    double predicted = 0.0;
};

inline constexpr double kDefaultQuantile = 0.95;

// Empirical quantile of the probe's predictions over calibration records.
double calibrate_threshold(const LinearProbe& probe, const TraceDataset& calibration, double quantile);

// flagged iff predicted > threshold (strict).
Detection detect(const LinearProbe& probe, const ActivationRecord& record, double threshold);

// Rank-based (Mann-Whitney) AUC with average ranks for ties; positives should score higher.
double roc_auc(const std::vector<double>& positives, const std::vector<double>& negatives);

DetectionReport paired_eval(const LinearProbe& probe, const std::vector<QuestionPair>& pairs, double threshold);

struct PairManifestRow {
    std::string pair_id;
    std::string vanilla_question_id;
    std::string overthink_question_id;
};

std::vector<QuestionPair> assemble_pairs(const TraceDataset& trace, const std::vector<PairManifestRow>& manifest);

}  // namespace rplan
