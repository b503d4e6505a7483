#include "doctest.h"

#include <set>

#include "greedy_oracle.hpp"
#include "synthaug/selection.hpp"

using namespace synthaug;
using namespace synthaug::selection;

namespace {

LabeledDataset make_dataset(std::size_t n0, std::size_t n1, RngStream& rng, Shape shape = {1, 1, 1},
                            const std::string& prefix = "r") {
    LabeledDataset ds({"class_0", "class_1"}, Provenance::original);
    for (std::size_t i = 0; i < n0 + n1; ++i) {
        Tensor t(shape);
        rng.fill_normal<float>(t.data());
        ds.add({prefix + std::to_string(i), i < n0 ? 0 : 1, std::move(t), Provenance::original});
    }
    return ds;
}

std::set<std::string> id_set(const LabeledDataset& ds) {
    auto ids = ds.ids();
    return {ids.begin(), ids.end()};
}

bool disjoint(const LabeledDataset& a, const LabeledDataset& b) {
    for (const auto& id : a.ids())
        if (b.contains(id)) return false;
    return true;
}

} // namespace

TEST_SUITE("selection") {

TEST_CASE("random_split matches the dataset overview counts") {
    RngStream data(1, 0), rng(2, 0);
    auto ds = make_dataset(1802, 1800, data);
    const std::size_t counts[] = {200, 200};
    auto s = random_split(ds, counts, rng);
    CHECK(s.selected.count(0) == 200);
    CHECK(s.selected.count(1) == 200);
    CHECK(s.remainder.count(0) == 1602);
    CHECK(s.remainder.count(1) == 1600);
    CHECK(disjoint(s.selected, s.remainder));
    auto all = id_set(s.selected);
    auto rest = id_set(s.remainder);
    all.insert(rest.begin(), rest.end());
    CHECK(all == id_set(ds));
    // Remainder keeps dataset order.
    std::size_t last = 0;
    for (const auto& id : s.remainder.ids()) {
        const auto pos = static_cast<std::size_t>(std::stoul(id.substr(1)));
        CHECK(pos >= last);
        last = pos;
    }
    RngStream again(2, 0);
    CHECK(random_split(ds, counts, again).selected.ids() == s.selected.ids());
}

TEST_CASE("random_split exhaustion and errors") {
    RngStream data(3, 0), rng(4, 0);
    auto ds = make_dataset(5, 7, data);
    const std::size_t all[] = {5, 7};
    auto s = random_split(ds, all, rng);
    CHECK(s.remainder.empty());
    CHECK(s.selected.size() == 12);
    const std::size_t too_many[] = {6, 1};
    CHECK_THROWS_AS(random_split(ds, too_many, rng), std::invalid_argument);
    const std::size_t wrong_len[] = {1};
    CHECK_THROWS_AS(random_split(ds, wrong_len, rng), std::invalid_argument);
}

TEST_CASE("random_split is uniform per item") {
    RngStream data(5, 0), rng(6, 0);
    auto ds = make_dataset(10, 0, data);
    const std::size_t counts[] = {3, 0};
    std::vector<int> hits(10, 0);
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        for (const auto& id : random_split(ds, counts, rng).selected.ids()) ++hits[std::stoul(id.substr(1))];
    }
    // Expected 6000 each, binomial sd ~ 65.
    for (int h : hits) CHECK(std::abs(h - 6000) < 300);
}

TEST_CASE("farthest point worked examples") {
    const std::vector<std::vector<double>> pts{{0}, {1}, {2}, {10}};
    CHECK(farthest_point_order(pts, 2) == std::vector<std::size_t>{3, 0});
    CHECK(farthest_point_order(pts, 3) == std::vector<std::size_t>{3, 0, 2});
    auto all = farthest_point_order(pts, 4);
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 4);
    CHECK_THROWS_AS(farthest_point_order(pts, 0), std::invalid_argument);
    CHECK_THROWS_AS(farthest_point_order(pts, 5), std::invalid_argument);
    CHECK_THROWS_AS(farthest_point_order({}, 1), std::invalid_argument);
    // Equal distances resolve to the lowest index.
    CHECK(farthest_point_order({{-1}, {1}}, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("farthest point equals the exhaustive oracle") {
    RngStream rng(7, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(rng.below(12));
        const std::size_t d = 1 + static_cast<std::size_t>(rng.below(4));
        std::vector<std::vector<double>> pts(n, std::vector<double>(d));
        for (auto& p : pts)
            for (auto& v : p) v = rng.normal();
        const std::size_t k = 1 + static_cast<std::size_t>(rng.below(n));
        CHECK(farthest_point_order(pts, k) == greedy_oracle::order(pts, k));
    }
}

TEST_CASE("farthest point is permutation robust without ties") {
    RngStream rng(8, 0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> pts(10, std::vector<double>(3));
        for (auto& p : pts)
            for (auto& v : p) v = rng.normal();
        std::vector<std::size_t> perm(10);
        for (std::size_t i = 0; i < 10; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<std::vector<double>> shuffled;
        for (auto i : perm) shuffled.push_back(pts[i]);
        const auto a = farthest_point_order(pts, 6);
        const auto b = farthest_point_order(shuffled, 6);
        for (std::size_t i = 0; i < 6; ++i) CHECK(perm[b[i]] == a[i]);
    }
}

TEST_CASE("greedy_k_select over images") {
    LabeledDataset ds({"a"}, Provenance::original);
    const float vals[] = {0, 1, 2, 10};
    for (int i = 0; i < 4; ++i) ds.add({"p" + std::to_string(i), 0, Tensor({1, 1, 1}, vals[i]), Provenance::original});
    CHECK(greedy_k_select(ds, 3) == std::vector<std::string>{"p3", "p0", "p2"});
    CHECK_THROWS_AS(greedy_k_select(LabeledDataset({"a"}, Provenance::original), 1), std::invalid_argument);

    RngStream data(9, 0);
    auto two = make_dataset(6, 6, data, {1, 2, 2});
    const std::size_t counts[] = {2, 3};
    auto s = greedy_k_split(two, counts);
    CHECK(s.selected.count(0) == 2);
    CHECK(s.selected.count(1) == 3);
    CHECK(s.remainder.size() == 7);
}

TEST_CASE("full-scale scenarios") {
    RngStream data(10, 0);
    auto ds = make_dataset(1802, 1800, data);
    ScenarioSpec small;
    RngStream rng(11, 0);
    auto sc = build_scenario(ds, small, rng);
    CHECK(sc.train.count(0) == 200);
    CHECK(sc.train.count(1) == 200);
    REQUIRE(sc.tests.size() == 1);
    CHECK(sc.tests[0].count(0) == 1602);
    CHECK(sc.tests[0].count(1) == 1600);
    CHECK(disjoint(sc.train, sc.tests[0]));

    ScenarioSpec imb;
    imb.kind = ScenarioKind::imbalanced;
    // 1802 majority images leave 302 after training: too few for three 300-image test sets.
    CHECK_THROWS_AS(build_scenario(ds, imb, rng), std::invalid_argument);
    RngStream more(10, 1);
    auto big = make_dataset(2400, 1800, more);
    auto si = build_scenario(big, imb, rng);
    CHECK(si.train.count(0) == 1500);
    CHECK(si.train.count(1) == 200);
    REQUIRE(si.tests.size() == 3);
    for (const auto& t : si.tests) {
        CHECK(t.count(0) == 300);
        CHECK(t.count(1) == 100);
    }
}

TEST_CASE("desk factor scales and keeps test sets disjoint") {
    RngStream data(12, 0);
    auto ds = make_dataset(400, 400, data, {1, 2, 2});
    ScenarioSpec spec;
    spec.kind = ScenarioKind::imbalanced;
    spec.factor = 0.1;
    for (auto sampling : {Sampling::random, Sampling::greedy_k}) {
        spec.sampling = sampling;
        RngStream rng(13, 0);
        auto sc = build_scenario(ds, spec, rng);
        CHECK(sc.train.count(0) == 150);
        CHECK(sc.train.count(1) == 20);
        REQUIRE(sc.tests.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(sc.tests[i].count(0) == 30);
            CHECK(sc.tests[i].count(1) == 10);
            CHECK(sc.tests[i].provenance() == Provenance::test);
            CHECK(disjoint(sc.train, sc.tests[i]));
            for (std::size_t j = i + 1; j < 3; ++j) CHECK(disjoint(sc.tests[i], sc.tests[j]));
        }
    }
}

TEST_CASE("scenario errors") {
    RngStream data(14, 0), rng(15, 0);
    auto ds = make_dataset(30, 20, data);
    ScenarioSpec spec;
    CHECK_THROWS_AS(build_scenario(ds, spec, rng), std::invalid_argument);
    spec.factor = 0.0;
    CHECK_THROWS_AS(build_scenario(ds, spec, rng), std::invalid_argument);
    spec.factor = 0.001;
    CHECK_THROWS_AS(build_scenario(ds, spec, rng), std::invalid_argument); // scales to zero
    spec = {};
    spec.kind = ScenarioKind::imbalanced;
    spec.factor = 0.01; // 15/2 train, 3/1 per test set
    auto sc = build_scenario(ds, spec, rng);
    CHECK(sc.train.size() == 17);
    spec.test_sets = 10; // 15 left in class 0 cannot feed 10 sets of 3
    CHECK_THROWS_AS(build_scenario(ds, spec, rng), std::invalid_argument);
}

TEST_CASE("mix_with_synthetic counts") {
    RngStream data(16, 0);
    auto train = make_dataset(200, 200, data);
    std::vector<LabeledDataset> syn;
    for (int c = 0; c < 2; ++c) {
        LabeledDataset s({"class_0", "class_1"}, Provenance::synthetic_ddpm);
        for (int i = 0; i < 2000; ++i) {
            s.add({"ddpm_c" + std::to_string(c) + "_" + std::to_string(i), c, Tensor({1, 1, 1}, 0.1f),
                   Provenance::synthetic_ddpm});
        }
        syn.push_back(std::move(s));
    }
    const std::size_t both[] = {2000, 2000};
    auto mixed = mix_with_synthetic(train, syn, both);
    CHECK(mixed.size() == 4400);
    CHECK(mixed.provenance() == Provenance::mixed);
    CHECK(mixed[4000].provenance == Provenance::synthetic_ddpm);
    CHECK(mixed[0].provenance == Provenance::original);

    auto imb = make_dataset(1500, 200, data, {1, 1, 1}, "m");
    const std::size_t minority[] = {0, 2000};
    auto m2 = mix_with_synthetic(imb, syn, minority);
    CHECK(m2.size() == 3700);
    CHECK(m2.count(0) == 1500);
    CHECK(m2.count(1) == 2200);

    const std::size_t none[] = {0, 0};
    auto same = mix_with_synthetic(train, syn, none);
    CHECK(same.ids() == train.ids());
    CHECK(same.provenance() == train.provenance());

    const std::size_t too_many[] = {2001, 0};
    CHECK_THROWS_AS(mix_with_synthetic(train, syn, too_many), std::invalid_argument);
    auto wide = make_dataset(3, 3, data, {1, 2, 2}, "w");
    CHECK_THROWS_AS(mix_with_synthetic(wide, syn, both), ShapeError);
}

} // TEST_SUITE
