#include "support.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/metrics/metrics.hpp"

#include <doctest.h>

#include <json.hpp>

using namespace somnonet;
using namespace somnonet::metrics;
using data::SleepStage;

using testing::recount;

TEST_CASE("confusion examples")
{
    const std::vector<SleepStage> p{SleepStage::W, SleepStage::N2};
    const auto cm = confusion(p, p);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(2, 2) == 1);
    CHECK(cm.total() == 2);

    const std::vector<SleepStage> ex(3, SleepStage::excluded);
    const std::vector<SleepStage> any{SleepStage::W, SleepStage::R, SleepStage::N1};
    CHECK(confusion(any, ex).total() == 0);
    CHECK_THROWS_AS(confusion(any, p), UsageError);

    const std::vector<int> tp{0, 0, 1, 1};
    const std::vector<int> tl{0, 1, 1, 1};
    const auto toy = confusion(tp, tl, 2);
    CHECK(toy.counts == std::vector<std::uint64_t>{1, 0, 1, 2});

    auto merged = toy;
    merged += toy;
    CHECK(merged.counts == std::vector<std::uint64_t>{2, 0, 2, 4});
}

TEST_CASE("metric hand cases")
{
    ConfusionMatrix perfect(2);
    perfect.at(0, 0) = 3;
    perfect.at(1, 1) = 5;
    auto m = stage_metrics(perfect);
    CHECK(m.overall_accuracy == 1.0);
    CHECK(m.macro_f1 == 1.0);
    CHECK(m.kappa == 1.0);

    ConfusionMatrix toy(2);
    toy.counts = {1, 0, 1, 2};
    m = stage_metrics(toy);
    CHECK(m.overall_accuracy == 0.75);
    CHECK(m.kappa == 0.5);
    CHECK(m.per_class_f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(m.per_class_f1[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(m.macro_f1 == doctest::Approx((2.0 / 3.0 + 0.8) / 2).epsilon(1e-15));

    ConfusionMatrix anti(2);
    anti.counts = {0, 1, 1, 0};
    m = stage_metrics(anti);
    CHECK(m.overall_accuracy == 0.0);
    CHECK(m.kappa == -1.0);

    // Single class everywhere: chance agreement is 1.
    ConfusionMatrix one;
    one.at(2, 2) = 4;
    m = stage_metrics(one);
    CHECK(m.kappa == 1.0);
    CHECK(m.macro_f1 == 1.0);
    CHECK(stage_metrics(one, true).macro_f1 == doctest::Approx(0.2));

    CHECK_THROWS_AS(stage_metrics(ConfusionMatrix{}), UsageError);
}

TEST_CASE("kappa is one exactly for diagonal matrices")
{
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        ConfusionMatrix cm;
        for (std::size_t c = 0; c < 5; ++c) {
            cm.at(c, c) = rng.index(4);
        }
        if (cm.total() == 0) {
            continue;
        }
        const bool diagonal = rng.index(2) == 0;
        if (!diagonal) {
            const std::size_t a = rng.index(5);
            cm.at(a, (a + 1 + rng.index(4)) % 5) += 1;
        }
        CHECK((stage_metrics(cm).kappa == 1.0) == diagonal);
    }
}

TEST_CASE("metrics agree with a brute-force recount")
{
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng.index(60);
        // Bias predictions toward the label so that every regime shows up.
        const double skill = rng.uniform(0, 1);
        std::vector<int> labels(n);
        std::vector<int> preds(n);
        const int span = 1 + static_cast<int>(rng.index(5));
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(span)));
            preds[i] = rng.uniform(0, 1) < skill ? labels[i] : static_cast<int>(rng.index(5));
        }
        const auto m = stage_metrics(confusion(preds, labels, 5));
        const auto o = recount(preds, labels, 5);
        worst = std::max(worst, std::abs(m.overall_accuracy - o.oa));
        worst = std::max(worst, std::abs(m.macro_f1 - o.mf1));
        worst = std::max(worst, std::abs(m.kappa - o.kappa));
        for (std::size_t c = 0; c < 5; ++c) {
            worst = std::max(worst, std::abs(m.per_class_f1[c] - o.f1[c]));
        }
        CHECK(m.kappa >= -1.0);
        CHECK(m.kappa <= 1.0);
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("relabelling classes permutes F1 only")
{
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> labels(40);
        std::vector<int> preds(40);
        for (std::size_t i = 0; i < 40; ++i) {
            labels[i] = static_cast<int>(rng.index(5));
            preds[i] = rng.index(3) == 0 ? static_cast<int>(rng.index(5)) : labels[i];
        }
        std::vector<int> perm{0, 1, 2, 3, 4};
        rng.shuffle(perm);
        std::vector<int> pl(40);
        std::vector<int> pp(40);
        for (std::size_t i = 0; i < 40; ++i) {
            pl[i] = perm[static_cast<std::size_t>(labels[i])];
            pp[i] = perm[static_cast<std::size_t>(preds[i])];
        }
        const auto a = stage_metrics(confusion(preds, labels, 5));
        const auto b = stage_metrics(confusion(pp, pl, 5));
        CHECK(a.overall_accuracy == b.overall_accuracy);
        CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-14));
        CHECK(a.kappa == doctest::Approx(b.kappa).epsilon(1e-14));
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(a.per_class_f1[c] == b.per_class_f1[static_cast<std::size_t>(perm[c])]);
        }
    }
}

TEST_CASE("metric reports")
{
    ConfusionMatrix cm;
    cm.at(0, 0) = 3;
    cm.at(1, 2) = 1;
    cm.at(4, 4) = 2;
    const auto m = stage_metrics(cm);
    const auto j = nlohmann::json::parse(metrics_json(m, cm));
    CHECK(j.at("overall_accuracy").get<double>() == m.overall_accuracy);
    CHECK(j.at("kappa").get<double>() == m.kappa);

    const auto grid = confusion_csv(cm);
    CHECK(grid == "3,0,0,0,0\n0,0,1,0,0\n0,0,0,0,0\n0,0,0,0,0\n0,0,0,0,2\n");

    const auto header = metrics_csv_header();
    const auto row = metrics_csv_row(m);
    CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
}
