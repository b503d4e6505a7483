#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "synthaug/dataset.hpp"
#include "synthaug/rng.hpp"

namespace synthaug::selection {

enum class ScenarioKind { small, imbalanced };
enum class Sampling { random, greedy_k };

std::string to_string(ScenarioKind k);
std::string to_string(Sampling s);
ScenarioKind scenario_kind_from_string(const std::string& s);
Sampling sampling_from_string(const std::string& s);

struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::small;
    Sampling sampling = Sampling::random;
    int n_small_per_class = 200;
    int n_major = 1500;
    int n_minor = 200;
    int test_sets = 3;
    int n_major_test = 300;
    int n_minor_test = 100;
    double factor = 1.0;
    int major_label = 0;
    int minor_label = 1;

    // llround(count * factor)
    std::size_t scaled(int count) const;
    void validate() const;
};

struct Split {
    LabeledDataset selected;
    LabeledDataset remainder;
};

// Uniform selection without replacement per class. Both halves keep dataset order.
Split random_split(const LabeledDataset& dataset, std::span<const std::size_t> per_class_counts, RngStream& rng);

// Farthest-point traversal over row vectors. Seed: farthest from the centroid;
// then each pick maximizes its minimum distance to the picks so far. Ties go to
// the lowest index. Returns indices in selection order.
std::vector<std::size_t> farthest_point_order(const std::vector<std::vector<double>>& points, std::size_t k);

// Euclidean distance over flattened pixels; ids in selection order.
std::vector<std::string> greedy_k_select(const LabeledDataset& dataset, std::size_t k);

// Greedy-K applied within each class.
Split greedy_k_split(const LabeledDataset& dataset, std::span<const std::size_t> per_class_counts);

struct Scenario {
    LabeledDataset train;
    std::vector<LabeledDataset> tests;
};

// small: n per class for training, one test set holding the full remainder.
// imbalanced: (n_major, n_minor) for training and `test_sets` pairwise disjoint
// random test sets drawn from the remainder.
Scenario build_scenario(const LabeledDataset& dataset, const ScenarioSpec& spec, RngStream& rng);

// Appends the first add_counts[c] records of synthetic_by_class[c] to `train`.
// Each synthetic set must hold images of class c only.
LabeledDataset mix_with_synthetic(const LabeledDataset& train, std::span<const LabeledDataset> synthetic_by_class,
                                  std::span<const std::size_t> add_counts);

} // namespace synthaug::selection
