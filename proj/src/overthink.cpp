#include "rplan/overthink.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "rplan/stats.hpp"

namespace rplan {

namespace {

std::span<const float> probe_row(const LinearProbe& probe, const ActivationRecord& record) {
    if (probe.layer < 0 || static_cast<std::size_t>(probe.layer) >= record.activations.rows()) {
        throw DimensionError("probe layer " + std::to_string(probe.layer) + " not present in record '" +
                             record.question_id + "'");
    }
    return record.activations.row(static_cast<std::size_t>(probe.layer));
}

}  // namespace

double calibrate_threshold(const LinearProbe& probe, const TraceDataset& calibration, double quantile) {
    if (calibration.records.empty()) throw PreconditionError("calibration set is empty");
    if (!(quantile > 0.0 && quantile <= 1.0)) throw PreconditionError("quantile must lie in (0, 1]");
    std::vector<double> predictions;
    predictions.reserve(calibration.records.size());
    for (const auto& r : calibration.records) predictions.push_back(predict_one(probe, probe_row(probe, r)));
    std::ranges::sort(predictions);
    return quantile_sorted(predictions, quantile);
}

Detection detect(const LinearProbe& probe, const ActivationRecord& record, double threshold) {
    const double predicted = predict_one(probe, probe_row(probe, record));
    return {predicted > threshold, predicted};
}

double roc_auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
    if (positives.empty() || negatives.empty()) throw PreconditionError("AUC needs both classes");
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(positives.size() + negatives.size());
    for (double s : positives) items.push_back({s, true});
    for (double s : negatives) items.push_back({s, false});
    std::ranges::sort(items, {}, &Item::score);

    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        while (j < items.size() && items[j].score == items[i].score) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (items[k].positive) positive_rank_sum += avg_rank;
        }
        i = j;
    }
    const auto np = static_cast<double>(positives.size());
    const auto nn = static_cast<double>(negatives.size());
    const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

DetectionReport paired_eval(const LinearProbe& probe, const std::vector<QuestionPair>& pairs, double threshold) {
    if (pairs.empty()) throw PreconditionError("paired evaluation needs at least one pair");
    DetectionReport report;
    report.threshold = threshold;
    std::vector<double> vanilla_scores, overthink_scores;
    std::size_t separated = 0, flagged_ot = 0, flagged_va = 0;
    for (const auto& pair : pairs) {
        const auto v = detect(probe, pair.vanilla, threshold);
        const auto o = detect(probe, pair.overthink, threshold);
        report.per_pair.push_back({pair.pair_id, v.predicted, o.predicted, v.flagged, o.flagged});
        vanilla_scores.push_back(v.predicted);
        overthink_scores.push_back(o.predicted);
        if (o.predicted > v.predicted) ++separated;
        if (o.flagged) ++flagged_ot;
        if (v.flagged) ++flagged_va;
    }
    const auto n = static_cast<double>(pairs.size());
    report.pair_separation_rate = static_cast<double>(separated) / n;
    report.detection_rate_at_threshold = static_cast<double>(flagged_ot) / n;
    report.false_positive_rate = static_cast<double>(flagged_va) / n;
    report.auc = roc_auc(overthink_scores, vanilla_scores);
    return report;
}

std::vector<QuestionPair> assemble_pairs(const TraceDataset& trace, const std::vector<PairManifestRow>& manifest) {
    std::map<std::string, const ActivationRecord*> by_id;
    for (const auto& r : trace.records) by_id.emplace(r.question_id, &r);
    auto lookup = [&](const std::string& id) -> const ActivationRecord& {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ConfigError("manifest references unknown question_id '" + id + "'");
        return *it->second;
    };
    std::vector<QuestionPair> pairs;
    pairs.reserve(manifest.size());
    for (const auto& row : manifest) {
        pairs.push_back({row.pair_id, lookup(row.vanilla_question_id), lookup(row.overthink_question_id)});
    }
    return pairs;
}

}  // namespace rplan
