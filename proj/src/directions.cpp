#include "rplan/directions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rplan {

namespace {

std::vector<double> group_mean(const TraceDataset& dataset, int layer, int level) {
    const auto d = static_cast<std::size_t>(dataset.metadata.d_model);
    std::vector<double> sum(d, 0.0);
    std::size_t count = 0;
    for (const auto& rec : dataset.records) {
        if (rec.difficulty != level) continue;
        const auto row = rec.activations.row(static_cast<std::size_t>(layer));
        for (std::size_t j = 0; j < d; ++j) sum[j] += static_cast<double>(row[j]);
        ++count;
    }
    if (count == 0) {
        throw PreconditionError("difficulty level " + std::to_string(level) + " has no records");
    }
    for (double& s : sum) s /= static_cast<double>(count);
    return sum;
}

}  // namespace

DirectionVector DirectionVector::make(int layer, int from_level, int to_level, std::vector<double> components) {
    DirectionVector v{layer, from_level, to_level, std::move(components), 0.0};
    v.l2_norm = rplan::l2_norm(v.components);
    return v;
}

const LayerDirections& DirectionSet::at_layer(int layer) const {
    auto it = std::ranges::find(layers, layer, &LayerDirections::layer);
    if (it == layers.end()) {
        throw PreconditionError("layer " + std::to_string(layer) + " not present in direction set");
    }
    return *it;
}

std::vector<std::vector<double>> DirectionSet::mean_directions() const {
    std::vector<std::vector<double>> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(l.mean.components);
    return out;
}

DirectionVector diff_in_means(const TraceDataset& dataset, int layer, int target_level, int base_level) {
    if (layer < 0 || layer >= dataset.metadata.n_layers) {
        throw PreconditionError("layer " + std::to_string(layer) + " out of range");
    }
    const auto target = group_mean(dataset, layer, target_level);
    const auto base = group_mean(dataset, layer, base_level);
    std::vector<double> diff(target.size());
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = target[j] - base[j];
    return DirectionVector::make(layer, base_level, target_level, std::move(diff));
}

LayerDirections make_layer_directions(int layer, std::map<int, DirectionVector> by_level) {
    if (by_level.empty()) throw PreconditionError("a layer needs at least one direction");
    const std::size_t d = by_level.begin()->second.components.size();
    std::vector<double> mean(d, 0.0);
    for (const auto& [level, v] : by_level) {
        if (v.components.size() != d) throw DimensionError("direction widths differ within a layer");
        for (std::size_t j = 0; j < d; ++j) mean[j] += v.components[j];
    }
    for (double& m : mean) m /= static_cast<double>(by_level.size());
    LayerDirections out;
    out.layer = layer;
    out.mean = DirectionVector::make(layer, by_level.begin()->second.from_level, 0, std::move(mean));
    out.by_level = std::move(by_level);
    return out;
}

DirectionSet extract_all(const TraceDataset& dataset) {
    const auto groups = group_by_difficulty(dataset);
    for (int level : {kBaseLevel, 2, 3, 4, 5}) {
        auto it = groups.find(level);
        if (it == groups.end() || it->second.empty()) {
            throw PreconditionError("difficulty level " + std::to_string(level) + " has no records");
        }
    }
    DirectionSet set;
    for (int layer = 0; layer < dataset.metadata.n_layers; ++layer) {
        std::map<int, DirectionVector> by_level;
        for (int level : kTargetLevels) {
            by_level.emplace(level, diff_in_means(dataset, layer, level, kBaseLevel));
        }
        set.layers.push_back(make_layer_directions(layer, std::move(by_level)));
    }
    for (const auto& [level, records] : groups) {
        if (records.empty()) continue;
        double sum = 0.0;
        for (const auto& r : records) {
            double per_record = 0.0;
            for (auto c : r.reasoning_token_counts) per_record += static_cast<double>(c);
            sum += per_record / static_cast<double>(r.reasoning_token_counts.size());
        }
        set.level_mean_tokens[level] = sum / static_cast<double>(records.size());
    }
    return set;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm<double>(a);
    const double nb = l2_norm<double>(b);
    if (na == 0.0 || nb == 0.0) throw PreconditionError("cosine of a zero vector is undefined");
    return std::clamp(dot<double, double>(a, b) / (na * nb), -1.0, 1.0);
}

Matrix cosine_matrix(const DirectionSet& set, int layer) {
    const auto& l = set.at_layer(layer);
    std::vector<const DirectionVector*> vs;
    for (const auto& [level, v] : l.by_level) {
        if (v.l2_norm == 0.0) {
            throw PreconditionError("direction to level " + std::to_string(level) + " at layer " +
                                    std::to_string(layer) + " has zero norm");
        }
        vs.push_back(&v);
    }
    const std::size_t k = vs.size();
    Matrix m(k, k);
    for (std::size_t a = 0; a < k; ++a) {
        m(a, a) = 1.0;
        for (std::size_t b = a + 1; b < k; ++b) {
            const double c = cosine(vs[a]->components, vs[b]->components);
            m(a, b) = c;
            m(b, a) = c;
        }
    }
    return m;
}

std::vector<LayerCosine> layerwise_mean_cosine(const DirectionSet& set) {
    if (set.layers.empty()) throw PreconditionError("direction set is empty");
    std::vector<LayerCosine> out;
    for (const auto& l : set.layers) {
        const Matrix m = cosine_matrix(set, l.layer);
        double sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < m.rows(); ++a) {
            for (std::size_t b = a + 1; b < m.cols(); ++b) {
                sum += m(a, b);
                ++pairs;
            }
        }
        out.push_back({l.layer, pairs == 0 ? 1.0 : sum / static_cast<double>(pairs)});
    }
    return out;
}

std::vector<NormEntry> norms_by_level(const DirectionSet& set) {
    if (set.layers.empty()) throw PreconditionError("direction set is empty");
    std::vector<NormEntry> out;
    for (const auto& l : set.layers) {
        for (const auto& [level, v] : l.by_level) out.push_back({l.layer, level, v.l2_norm});
    }
    return out;
}

DirectionPrediction predict_from_direction(const LinearProbe& probe, const DirectionVector& direction) {
    if (probe.layer != direction.layer) {
        throw DimensionError("probe layer " + std::to_string(probe.layer) + " differs from direction layer " +
                             std::to_string(direction.layer));
    }
    if (probe.weights.size() != direction.components.size()) {
        throw DimensionError("probe and direction widths differ");
    }
    return {probe.layer, dot(direction.components, probe.weights) + probe.bias};
}

}  // namespace rplan
