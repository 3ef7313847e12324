#pragma once

#include <map>
#include <vector>

#include "rplan/matrix.hpp"
#include "rplan/probe.hpp"
#include "rplan/trace.hpp"

namespace rplan {

// Mean activation of one difficulty level minus the mean of a base level, at one layer.
struct DirectionVector {
    int layer = 0;
    int from_level = 1;
    int to_level = 0;
    std::vector<double> components;
    double l2_norm = 0.0;

    static DirectionVector make(int layer, int from_level, int to_level, std::vector<double> components);
};

struct LayerDirections {
    int layer = 0;
    std::map<int, DirectionVector> by_level;  // keyed by to_level
    DirectionVector mean;                     // element-wise mean of by_level
};

struct DirectionSet {
    std::vector<LayerDirections> layers;
    // Mean reasoning tokens per difficulty level of the source trace (reported next to norms).
    std::map<int, double> level_mean_tokens;

    const LayerDirections& at_layer(int layer) const;
    std::vector<std::vector<double>> mean_directions() const;  // one row per layer
};

struct DirectionPrediction {
    int layer = 0;
    double predicted_tokens = 0.0;
};

struct NormEntry {
    int layer = 0;
    int to_level = 0;
    double l2_norm = 0.0;
};

inline constexpr int kBaseLevel = 1;
inline constexpr int kTargetLevels[] = {2, 3, 4, 5};

DirectionVector diff_in_means(const TraceDataset& dataset, int layer, int target_level, int base_level);

// r_{i<-1} for i = 2..5 at every layer, plus their mean.
DirectionSet extract_all(const TraceDataset& dataset);

// Assembles a set from explicit vectors (used by tests and by deserialization).
LayerDirections make_layer_directions(int layer, std::map<int, DirectionVector> by_level);

double cosine(std::span<const double> a, std::span<const double> b);

// Pairwise cosine among the layer's vectors, rows/cols ordered by to_level.
Matrix cosine_matrix(const DirectionSet& set, int layer);

struct LayerCosine {
    int layer = 0;
    double mean_cosine = 0.0;
};
std::vector<LayerCosine> layerwise_mean_cosine(const DirectionSet& set);

std::vector<NormEntry> norms_by_level(const DirectionSet& set);

DirectionPrediction predict_from_direction(const LinearProbe& probe, const DirectionVector& direction);

}  // namespace rplan
