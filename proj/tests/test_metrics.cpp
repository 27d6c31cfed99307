#include <doctest.h>

#include "oracles.hpp"
#include "psycode/deteval.hpp"
#include "psycode/metrics.hpp"
#include "psycode/random.hpp"

using namespace psycode;

TEST_CASE("hand AP case: (0.9, 0.8, 0.1) against (1, 0, 1)") {
    std::vector<double> s{0.9, 0.8, 0.1};
    std::vector<std::uint8_t> y{1, 0, 1};
    CHECK(*average_precision(s, y) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("AP matches the exhaustive PR walk") {
    Rng rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + rng.below(15);
        std::vector<double> s(n);
        std::vector<std::uint8_t> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.uniform();
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
        }
        y[rng.below(n)] = 1;
        CHECK(std::abs(*average_precision(s, y) - oracle::exhaustive_ap(s, y)) < 1e-10);
    }
}

TEST_CASE("AP without positives is absent") {
    std::vector<double> s{0.3, 0.2};
    std::vector<std::uint8_t> y{0, 0};
    CHECK_FALSE(average_precision(s, y).has_value());
}

TEST_CASE("equal scores keep input order") {
    std::vector<double> s{0.5, 0.5, 0.5};
    CHECK(rank_by_score(s) == std::vector<std::size_t>{0, 1, 2});
    std::vector<std::uint8_t> first{1, 0, 0};
    std::vector<std::uint8_t> last{0, 0, 1};
    CHECK(*average_precision(s, first) == 1.0);
    CHECK(*average_precision(s, last) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("classification metrics closed forms") {
    SUBCASE("perfect") {
        std::vector<double> s{0.9, 0.1, 0.8};
        std::vector<std::uint8_t> p{1, 0, 1};
        auto m = classification_metrics(s, p, p);
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
        CHECK(*m.average_precision == 1.0);
    }
    SUBCASE("all positive at rate 1/4") {
        std::vector<double> s(8, 1.0);
        std::vector<std::uint8_t> p(8, 1);
        std::vector<std::uint8_t> y{1, 0, 0, 0, 1, 0, 0, 0};
        auto m = classification_metrics(s, p, y);
        CHECK(m.recall == 1.0);
        CHECK(m.precision == 0.25);
        CHECK(m.f1 == doctest::Approx(2 * 0.25 / 1.25));
    }
    SUBCASE("no predicted positives") {
        std::vector<double> s{0.1, 0.2};
        std::vector<std::uint8_t> p{0, 0};
        std::vector<std::uint8_t> y{1, 0};
        auto m = classification_metrics(s, p, y);
        CHECK(m.precision == 0.0);
        CHECK(m.f1 == 0.0);
    }
}

TEST_CASE("sample sd") {
    std::vector<double> v{1, 2, 3, 4};
    CHECK(sample_sd(v) == doctest::Approx(std::sqrt(5.0 / 3.0)));
    std::vector<double> one{2};
    CHECK(sample_sd(one) == 0.0);
}

// ---------------------------------------------------------------------------

using namespace psycode::deteval;

TEST_CASE("iou geometry") {
    CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
    CHECK(iou({0, 0, 1, 1}, {5, 5, 1, 1}) == 0.0);
    CHECK(iou({0, 0, 2, 2}, {1, 1, 2, 2}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK_THROWS_AS(iou({0, 0, 0, 2}, {0, 0, 1, 1}), ValidationError);
}

TEST_CASE("greedy matching: second detection on a claimed box is a false positive") {
    std::vector<ConceptDetection> d{{"a", Concept::joint, 0.8, {0, 0, 10, 10}},
                                    {"a", Concept::joint, 0.9, {1, 0, 10, 10}}};
    std::vector<ConceptBox> gt{{"a", Concept::joint, {0, 0, 10, 10}}};
    auto m = match_detections(d, gt, Concept::joint);
    REQUIRE(m.ranked.size() == 2);
    CHECK(m.ranked[0].detection.score == 0.9);
    CHECK(m.ranked[0].true_positive);
    CHECK_FALSE(m.ranked[1].true_positive);
    CHECK(m.n_ground_truth == 1);
}

TEST_CASE("matching ignores other concepts and other images") {
    std::vector<ConceptDetection> d{{"b", Concept::joint, 0.9, {0, 0, 10, 10}},
                                    {"a", Concept::lean, 0.9, {0, 0, 10, 10}}};
    std::vector<ConceptBox> gt{{"a", Concept::joint, {0, 0, 10, 10}}};
    auto m = match_detections(d, gt, Concept::joint);
    REQUIRE(m.ranked.size() == 1);
    CHECK_FALSE(m.ranked[0].true_positive);
    CHECK(*detection_ap(m) == 0.0);
}

TEST_CASE("detection AP hand trace [TP, FP, TP] with two GT") {
    MatchResult m;
    m.n_ground_truth = 2;
    m.ranked = {{{}, true}, {{}, false}, {{}, true}};
    CHECK(*detection_ap(m) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    MatchResult none;
    CHECK_FALSE(detection_ap(none).has_value());
    none.n_ground_truth = 3;
    CHECK(*detection_ap(none) == 0.0);
}

TEST_CASE("detection AP equals classification AP on recast flags") {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 1 + rng.below(12);
        MatchResult m;
        std::vector<double> s;
        std::vector<std::uint8_t> y;
        for (std::size_t i = 0; i < n; ++i) {
            const bool tp = rng.bernoulli(0.5);
            ConceptDetection d;
            d.score = 1.0 - static_cast<double>(i) / static_cast<double>(n);
            m.ranked.push_back({d, tp});
            s.push_back(d.score);
            y.push_back(tp ? 1 : 0);
        }
        const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), std::uint8_t{1}));
        m.n_ground_truth = pos;
        if (pos == 0) continue;
        CHECK(*detection_ap(m) == doctest::Approx(*average_precision(s, y)).epsilon(1e-14));
    }
}

TEST_CASE("AP is invariant to monotone score transforms and bottom FPs never help") {
    Rng rng(6);
    std::vector<ConceptDetection> d;
    std::vector<ConceptBox> gt;
    for (int i = 0; i < 20; ++i) {
        const std::string img = "i" + std::to_string(i);
        gt.push_back({img, Concept::money, {0, 0, 10, 10}});
        if (rng.bernoulli(0.7)) d.push_back({img, Concept::money, rng.uniform(), {0, 0, 10, 10}});
        if (rng.bernoulli(0.3)) d.push_back({img, Concept::money, rng.uniform(), {50, 50, 10, 10}});
    }
    const double base = *detection_ap(match_detections(d, gt, Concept::money));
    auto squashed = d;
    for (auto& x : squashed) x.score = x.score * x.score * x.score;
    CHECK(*detection_ap(match_detections(squashed, gt, Concept::money)) == doctest::Approx(base).epsilon(1e-14));
    auto more = d;
    more.push_back({"i0", Concept::money, -1.0, {80, 80, 5, 5}});
    CHECK(*detection_ap(match_detections(more, gt, Concept::money)) <= base);
}

TEST_CASE("report of a perfect detector and the column layout") {
    std::vector<ConceptDetection> d;
    std::vector<ConceptBox> gt;
    std::vector<EvalImage> images;
    for (int i = 0; i < 30; ++i) {
        const std::string img = "img" + std::to_string(i);
        const Concept c = kAllConcepts[static_cast<std::size_t>(i) % kNumConcepts];
        gt.push_back({img, c, {0, 0, 10, 10}});
        d.push_back({img, c, 0.9, {0, 0, 10, 10}});
        images.push_back({img, i % 2 ? corpus::Source::tumblr : corpus::Source::twitter, i % 3});
    }
    auto r = detection_report(d, gt, images, 3);
    for (auto col : kColumns) {
        for (auto c : kAllConcepts) {
            const auto& cell = r.concepts[static_cast<std::size_t>(col)][index(c)];
            if (!cell.mean) continue;
            CHECK(*cell.mean == 1.0);
            CHECK(*cell.sd == 0.0);
        }
    }
    auto t = report_table(r);
    REQUIRE(t.header.size() == 4);
    CHECK(t.header[1].starts_with("Complete"));
    CHECK(t.header[2].starts_with("Twitter"));
    CHECK(t.header[3].starts_with("Tumblr"));
    CHECK(t.rows.size() == kNumConcepts + 1);
    CHECK(t.rows.back()[0] == "mAP");
}

TEST_CASE("complete-column mAP is computed from scratch, not averaged from sources") {
    // Twitter has one perfect concept; Tumblr has a concept with AP 0.5.
    std::vector<ConceptDetection> d{{"t", Concept::joint, 0.9, {0, 0, 10, 10}},
                                    {"u", Concept::lean, 0.9, {40, 40, 10, 10}},
                                    {"u", Concept::lean, 0.8, {0, 0, 10, 10}}};
    std::vector<ConceptBox> gt{{"t", Concept::joint, {0, 0, 10, 10}}, {"u", Concept::lean, {0, 0, 10, 10}},
                               {"v", Concept::joint, {0, 0, 10, 10}}};
    std::vector<EvalImage> images{{"t", corpus::Source::twitter, 0},
                                  {"u", corpus::Source::tumblr, 0},
                                  {"v", corpus::Source::tumblr, 0}};
    auto r = detection_report(d, gt, images, 1);
    const double complete = *r.map[0].mean;
    const double twitter = *r.map[1].mean;
    const double tumblr = *r.map[2].mean;
    CHECK(twitter == 1.0);
    CHECK(tumblr == doctest::Approx(0.25));  // joint 0, lean 0.5
    CHECK(complete == doctest::Approx(0.5));  // joint 0.5, lean 0.5
    CHECK(complete != doctest::Approx((twitter + tumblr) / 2.0));
}
