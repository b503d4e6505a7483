#include "synthaug/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "synthaug/errors.hpp"

namespace synthaug::selection {

namespace {

void check_counts(const LabeledDataset& ds, std::span<const std::size_t> counts) {
    if (counts.size() != ds.class_names().size()) {
        throw std::invalid_argument("expected " + std::to_string(ds.class_names().size()) + " per-class counts, got " +
                                    std::to_string(counts.size()));
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const auto have = ds.count(static_cast<int>(c));
        if (counts[c] > have) {
            throw std::invalid_argument("class '" + ds.class_names()[c] + "' has " + std::to_string(have) +
                                        " images, " + std::to_string(counts[c]) + " requested");
        }
    }
}

Split split_by_mask(const LabeledDataset& ds, const std::vector<bool>& chosen, Provenance selected_as) {
    std::vector<std::size_t> sel, rest;
    for (std::size_t i = 0; i < ds.size(); ++i) (chosen[i] ? sel : rest).push_back(i);
    return {ds.subset(sel, selected_as), ds.subset(rest, ds.provenance())};
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

std::vector<std::vector<double>> pixel_vectors(const LabeledDataset& ds, std::span<const std::size_t> idx) {
    std::vector<std::vector<double>> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        const auto& px = ds[i].pixels.storage();
        out.emplace_back(px.begin(), px.end());
    }
    return out;
}

} // namespace

std::string to_string(ScenarioKind k) { return k == ScenarioKind::small ? "small" : "imbalanced"; }
std::string to_string(Sampling s) { return s == Sampling::random ? "random" : "greedy_k"; }

ScenarioKind scenario_kind_from_string(const std::string& s) {
    if (s == "small") return ScenarioKind::small;
    if (s == "imbalanced") return ScenarioKind::imbalanced;
    throw std::invalid_argument("unknown scenario kind '" + s + "'");
}

Sampling sampling_from_string(const std::string& s) {
    if (s == "random") return Sampling::random;
    if (s == "greedy_k") return Sampling::greedy_k;
    throw std::invalid_argument("unknown sampling method '" + s + "'");
}

std::size_t ScenarioSpec::scaled(int count) const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(count) * factor));
}

void ScenarioSpec::validate() const {
    if (!(factor > 0.0) || !std::isfinite(factor)) throw std::invalid_argument("scenario factor must be positive");
    if (major_label == minor_label) throw std::invalid_argument("major and minor classes must differ");
    auto positive = [&](int v, const char* name) {
        if (v < 1 || scaled(v) < 1) throw std::invalid_argument(std::string(name) + " must stay >= 1 after scaling");
    };
    if (kind == ScenarioKind::small) {
        positive(n_small_per_class, "n_small_per_class");
    } else {
        positive(n_major, "n_major");
        positive(n_minor, "n_minor");
        positive(n_major_test, "n_major_test");
        positive(n_minor_test, "n_minor_test");
        if (test_sets < 1) throw std::invalid_argument("test_sets must be >= 1");
    }
}

Split random_split(const LabeledDataset& dataset, std::span<const std::size_t> per_class_counts, RngStream& rng) {
    check_counts(dataset, per_class_counts);
    std::vector<bool> chosen(dataset.size(), false);
    for (std::size_t c = 0; c < per_class_counts.size(); ++c) {
        auto idx = dataset.indices_of(static_cast<int>(c));
        // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
        for (std::size_t i = 0; i < per_class_counts[c]; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
            chosen[idx[i]] = true;
        }
    }
    return split_by_mask(dataset, chosen, Provenance::train);
}

std::vector<std::size_t> farthest_point_order(const std::vector<std::vector<double>>& points, std::size_t k) {
    if (points.empty()) throw std::invalid_argument("farthest-point selection on an empty set");
    if (k < 1 || k > points.size()) {
        throw std::invalid_argument("k = " + std::to_string(k) + " outside [1, " + std::to_string(points.size()) + "]");
    }
    const std::size_t n = points.size(), d = points[0].size();
    std::vector<double> centroid(d, 0.0);
    for (const auto& p : points) {
        if (p.size() != d) throw ShapeError("points differ in dimension");
        for (std::size_t j = 0; j < d; ++j) centroid[j] += p[j];
    }
    for (auto& c : centroid) c /= static_cast<double>(n);

    std::size_t seed = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dist = squared_distance(points[i], centroid);
        if (dist > best) {
            best = dist;
            seed = i;
        }
    }
    std::vector<std::size_t> order{seed};
    std::vector<bool> taken(n, false);
    taken[seed] = true;
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    while (order.size() < k) {
        const auto& last = points[order.back()];
        std::size_t pick = n;
        best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            min_dist[i] = std::min(min_dist[i], squared_distance(points[i], last));
            if (min_dist[i] > best) {
                best = min_dist[i];
                pick = i;
            }
        }
        order.push_back(pick);
        taken[pick] = true;
    }
    return order;
}

std::vector<std::string> greedy_k_select(const LabeledDataset& dataset, std::size_t k) {
    if (dataset.empty()) throw std::invalid_argument("greedy_k_select on an empty dataset");
    std::vector<std::size_t> all(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<std::string> ids;
    for (auto i : farthest_point_order(pixel_vectors(dataset, all), k)) ids.push_back(dataset[i].id);
    return ids;
}

Split greedy_k_split(const LabeledDataset& dataset, std::span<const std::size_t> per_class_counts) {
    check_counts(dataset, per_class_counts);
    std::vector<bool> chosen(dataset.size(), false);
    for (std::size_t c = 0; c < per_class_counts.size(); ++c) {
        if (per_class_counts[c] == 0) continue;
        const auto idx = dataset.indices_of(static_cast<int>(c));
        for (auto local : farthest_point_order(pixel_vectors(dataset, idx), per_class_counts[c])) chosen[idx[local]] = true;
    }
    return split_by_mask(dataset, chosen, Provenance::train);
}

Scenario build_scenario(const LabeledDataset& dataset, const ScenarioSpec& spec, RngStream& rng) {
    spec.validate();
    const std::size_t classes = dataset.class_names().size();
    std::vector<std::size_t> train_counts(classes, 0);
    if (spec.kind == ScenarioKind::small) {
        std::fill(train_counts.begin(), train_counts.end(), spec.scaled(spec.n_small_per_class));
    } else {
        if (spec.major_label < 0 || spec.minor_label < 0 || static_cast<std::size_t>(spec.major_label) >= classes ||
            static_cast<std::size_t>(spec.minor_label) >= classes) {
            throw std::invalid_argument("major/minor class label outside the dataset's classes");
        }
        train_counts[static_cast<std::size_t>(spec.major_label)] = spec.scaled(spec.n_major);
        train_counts[static_cast<std::size_t>(spec.minor_label)] = spec.scaled(spec.n_minor);
    }

    RngStream train_rng = rng.derive(1);
    Split split = spec.sampling == Sampling::random ? random_split(dataset, train_counts, train_rng)
                                                    : greedy_k_split(dataset, train_counts);
    Scenario out;
    out.train = std::move(split.selected);
    out.train.set_provenance(Provenance::train);

    if (spec.kind == ScenarioKind::small) {
        split.remainder.set_provenance(Provenance::test);
        out.tests.push_back(std::move(split.remainder));
        return out;
    }
    // Successive draws from what is left keep the test sets pairwise disjoint.
    std::vector<std::size_t> test_counts(classes, 0);
    test_counts[static_cast<std::size_t>(spec.major_label)] = spec.scaled(spec.n_major_test);
    test_counts[static_cast<std::size_t>(spec.minor_label)] = spec.scaled(spec.n_minor_test);
    RngStream test_rng = rng.derive(2);
    LabeledDataset pool = std::move(split.remainder);
    for (int t = 0; t < spec.test_sets; ++t) {
        Split s = random_split(pool, test_counts, test_rng);
        s.selected.set_provenance(Provenance::test);
        out.tests.push_back(std::move(s.selected));
        pool = std::move(s.remainder);
    }
    return out;
}

LabeledDataset mix_with_synthetic(const LabeledDataset& train, std::span<const LabeledDataset> synthetic_by_class,
                                  std::span<const std::size_t> add_counts) {
    const auto& names = train.class_names();
    if (synthetic_by_class.size() != names.size() || add_counts.size() != names.size()) {
        throw std::invalid_argument("mix_with_synthetic needs one synthetic set and count per class");
    }
    LabeledDataset out = train;
    bool added = false;
    for (std::size_t c = 0; c < names.size(); ++c) {
        const auto& syn = synthetic_by_class[c];
        if (add_counts[c] == 0) continue;
        if (add_counts[c] > syn.size()) {
            throw std::invalid_argument("only " + std::to_string(syn.size()) + " synthetic images for class '" + names[c] +
                                        "', " + std::to_string(add_counts[c]) + " requested");
        }
        if (!train.empty() && syn.image_shape() != train.image_shape()) {
            throw ShapeError("synthetic images for class '" + names[c] + "' are " + shape_to_string(syn.image_shape()) +
                             ", training images are " + shape_to_string(train.image_shape()));
        }
        for (std::size_t i = 0; i < add_counts[c]; ++i) {
            Sample s = syn[i];
            if (syn.class_names().at(static_cast<std::size_t>(s.label)) != names[c]) {
                throw std::invalid_argument("synthetic record '" + s.id + "' is not of class '" + names[c] + "'");
            }
            s.label = static_cast<int>(c);
            out.add(std::move(s));
        }
        added = true;
    }
    if (added) out.set_provenance(Provenance::mixed);
    return out;
}

} // namespace synthaug::selection
