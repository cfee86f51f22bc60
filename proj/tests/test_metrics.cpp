#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "stenoseg/metrics.hpp"

using namespace stenoseg;

TEST_CASE("confusion basics") {
    std::vector<std::uint8_t> gt{1, 1, 0, 0, 1, 0};
    SECTION("pred == gt: no errors") {
        auto c = confusion(gt, gt);
        CHECK(c.tp == 3);
        CHECK(c.tn == 3);
        CHECK(c.fp == 0);
        CHECK(c.fn == 0);
    }
    SECTION("pred == complement: no hits") {
        std::vector<std::uint8_t> pred;
        for (auto v : gt) pred.push_back(std::uint8_t(1 - v));
        auto c = confusion(pred, gt);
        CHECK(c.tp == 0);
        CHECK(c.tn == 0);
        CHECK(c.fp == 3);
        CHECK(c.fn == 3);
    }
    SECTION("errors") {
        REQUIRE_THROWS_AS(confusion({1, 0}, gt), ShapeError);
        REQUIRE_THROWS_AS(confusion({1, 2, 0, 0, 1, 0}, gt), ShapeError);
    }
}

TEST_CASE("confusion matches a scalar double-loop oracle on random masks") {
    std::mt19937_64 rng(9);
    std::bernoulli_distribution bit(0.3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::uint8_t> a(256), b(256);
        for (std::size_t i = 0; i < 256; ++i) {
            a[i] = bit(rng);
            b[i] = bit(rng);
        }
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < 256; ++i) {
            tp += a[i] == 1 && b[i] == 1;
            fp += a[i] == 1 && b[i] == 0;
            fn += a[i] == 0 && b[i] == 1;
            tn += a[i] == 0 && b[i] == 0;
        }
        auto c = confusion(a, b);
        REQUIRE(c.tp == tp);
        REQUIRE(c.fp == fp);
        REQUIRE(c.fn == fn);
        REQUIRE(c.tn == tn);
        REQUIRE(c.total() == 256);
        // swapping prediction and truth swaps fp and fn
        auto s = confusion(b, a);
        REQUIRE(s.tp == c.tp);
        REQUIRE(s.fp == c.fn);
        REQUIRE(s.fn == c.fp);
    }
}

TEST_CASE("reference precision/recall pairs reproduce their printed F1") {
    struct Row {
        const char* model;
        double p, r, printed_f1, tol;
    };
    // printed three-decimal rows get the looser tolerance
    const Row rows[] = {
        {"u_mamba_bot", 0.6992, 0.6769, 0.6879, 0.0001},
        {"u_mamba_enc", 0.7004, 0.6716, 0.6857, 0.0005},
        {"swin_umamba", 0.6987, 0.6403, 0.6682, 0.0005},
        {"swin_umamba_d", 0.6651, 0.6577, 0.6614, 0.0005},
        {"lightm_unet", 0.4361, 0.3627, 0.396, 0.0005},
        {"swin_unetr", 0.4912, 0.2829, 0.359, 0.0005},
    };
    for (const Row& row : rows) {
        const double f1 = 2.0 * row.p * row.r / (row.p + row.r);
        INFO(row.model << ": computed " << f1);
        REQUIRE(std::abs(f1 - row.printed_f1) <= row.tol);
    }
}

TEST_CASE("undefined metric flags") {
    SECTION("both masks empty: all undefined") {
        auto m = precision_recall_f1({0, 0, 0, 100});
        CHECK_FALSE(m.precision.defined);
        CHECK_FALSE(m.recall.defined);
        CHECK_FALSE(m.f1.defined);
    }
    SECTION("no predictions but foreground exists: precision undefined, recall 0") {
        auto m = precision_recall_f1({0, 0, 5, 95});
        CHECK_FALSE(m.precision.defined);
        CHECK(m.recall.defined);
        CHECK(m.recall.value == 0.0);
        CHECK_FALSE(m.f1.defined);
    }
    SECTION("P and R defined but both zero: F1 undefined (0/0)") {
        auto m = precision_recall_f1({0, 3, 4, 93});
        CHECK(m.precision.defined);
        CHECK(m.recall.defined);
        CHECK_FALSE(m.f1.defined);
    }
}

TEST_CASE("micro aggregation") {
    SECTION("single image equals its own metrics") {
        ConfusionCounts c{10, 5, 3, 82};
        auto r = aggregate({c});
        auto m = precision_recall_f1(c);
        REQUIRE(r.aggregate_metrics.f1.value == m.f1.value);
    }
    SECTION("hand-computed two-image case") {
        auto r = aggregate({{1, 0, 1, 0}, {1, 1, 0, 0}});
        REQUIRE(r.aggregate_metrics.precision.value == Catch::Approx(2.0 / 3.0));
        REQUIRE(r.aggregate_metrics.recall.value == Catch::Approx(2.0 / 3.0));
        REQUIRE(r.aggregate_metrics.f1.value == Catch::Approx(2.0 / 3.0));
    }
    SECTION("both-empty images are neutral") {
        auto base = aggregate({{4, 2, 1, 9}});
        auto with_empty = aggregate({{4, 2, 1, 9}, {0, 0, 0, 16}});
        REQUIRE(base.aggregate_metrics.f1.value == with_empty.aggregate_metrics.f1.value);
    }
    SECTION("permutation invariance and scalar oracle") {
        std::mt19937_64 rng(4);
        std::uniform_int_distribution<std::size_t> d{0, 50};
        std::vector<ConfusionCounts> v;
        std::size_t tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < 10; ++i) {
            ConfusionCounts c{d(rng), d(rng), d(rng), d(rng)};
            tp += c.tp;
            fp += c.fp;
            fn += c.fn;
            v.push_back(c);
        }
        auto a = aggregate(v);
        std::reverse(v.begin(), v.end());
        auto b = aggregate(v);
        REQUIRE(a.aggregate_metrics.f1.value == b.aggregate_metrics.f1.value);
        REQUIRE(a.aggregate_counts.tp == tp);
        REQUIRE(a.aggregate_metrics.precision.value ==
                Catch::Approx(double(tp) / double(tp + fp)));
        REQUIRE(a.aggregate_metrics.recall.value == Catch::Approx(double(tp) / double(tp + fn)));
    }
    SECTION("empty input rejected") { REQUIRE_THROWS_AS(aggregate({}), ShapeError); }
}

TEST_CASE("harmonic mean bounds: min(P,R) <= F1 <= max(P,R)") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<std::size_t> d{1, 100};
    for (int i = 0; i < 200; ++i) {
        ConfusionCounts c{d(rng), d(rng), d(rng), d(rng)};
        auto m = precision_recall_f1(c);
        REQUIRE(m.f1.defined);
        REQUIRE(m.f1.value <= std::max(m.precision.value, m.recall.value) + 1e-12);
        REQUIRE(m.f1.value >= std::min(m.precision.value, m.recall.value) - 1e-12);
    }
}

TEST_CASE("thresholding logits") {
    SECTION("equal logits with tau 0.5 stay foreground (inclusive tie)") {
        Tensor<float> logits(Shape{2, 1, 2}, std::vector<float>{0.3f, 1.f, 0.3f, -1.f});
        auto m = thresholded_mask(logits, 0.5);
        CHECK(m[0] == 1);  // tie
        CHECK(m[1] == 0);
    }
    SECTION("extreme taus") {
        std::mt19937_64 rng(2);
        auto logits = Tensor<float>::uniform(Shape{1, 2, 3, 3}, -2.f, 2.f, rng, false);
        for (auto v : thresholded_mask(logits, 0.0)) CHECK(v == 1);
        for (auto v : thresholded_mask(logits, 1.0001)) CHECK(v == 0);
    }
    SECTION("tau 0.5 equals per-pixel argmax with the same tie rule") {
        std::mt19937_64 rng(8);
        auto logits = Tensor<float>::uniform(Shape{2, 2, 4, 4}, -3.f, 3.f, rng, false);
        auto m = thresholded_mask(logits, 0.5);
        const auto& v = logits.values();
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < 16; ++i) {
                const bool fg = v[b * 32 + 16 + i] >= v[b * 32 + i];
                REQUIRE(m[b * 16 + i] == (fg ? 1 : 0));
            }
    }
    SECTION("rejects non-2-class input") {
        std::mt19937_64 rng(1);
        auto bad = Tensor<float>::uniform(Shape{1, 3, 2, 2}, -1.f, 1.f, rng, false);
        REQUIRE_THROWS_AS(thresholded_mask(bad, 0.5), ShapeError);
    }
}

TEST_CASE("csv serialization mirrors the report column order") {
    REQUIRE(metrics_csv_header() == "model,params,precision,recall,f1");
    auto r = aggregate({{1, 1, 1, 1}}, "demo", 123);
    REQUIRE(metrics_csv_row(r) == "demo,123,0.500000,0.500000,0.500000");
    auto u = aggregate({{0, 0, 0, 4}}, "empty", 7);
    REQUIRE(metrics_csv_row(u) == "empty,7,undefined,undefined,undefined");
}
