#include "support.hpp"

#include "somnonet/attribution/attribution.hpp"
#include "somnonet/errors.hpp"
#include "somnonet/model/model.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace somnonet;
using namespace somnonet::attribution;
using data::SleepStage;
using model::Model;
using nn::Tensor;

namespace {

/// Linear head with the given classifier over L features and N chunks.
Model<double> linear_head(std::size_t n, std::size_t l, std::vector<double> w,
                          std::vector<double> b)
{
    Model<double> m;
    m.config.arch = model::Arch::linear_head;
    m.config.n_chunks = n;
    m.config.feature_dim = l;
    m.classifier.push_back({Tensor<double>({5, l}, std::move(w)), Tensor<double>({5}, std::move(b))});
    m.classifier[0].weight.set_requires_grad(true);
    m.classifier[0].bias.set_requires_grad(true);
    return m;
}

Model<double> random_head(std::size_t n, std::size_t l, Rng& rng)
{
    std::vector<double> w(5 * l);
    std::vector<double> b(5);
    for (double& v : w) {
        v = rng.uniform(-1, 1);
    }
    for (double& v : b) {
        v = rng.uniform(-1, 1);
    }
    return linear_head(n, l, w, b);
}

Tensor<double> matrix(std::size_t rows, std::size_t cols, std::vector<double> v)
{
    return Tensor<double>({rows, cols}, std::move(v));
}

SleepStage stage(std::size_t i) { return data::kAllStages[i]; }

std::string read_text(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("argmax breaks ties toward the lowest index")
{
    const std::vector<double> a{0.5, 0.5, 0, 0, 0};
    CHECK(argmax(a) == 0);
    const std::vector<double> b{0, 2, 1, 2, 0};
    CHECK(argmax(b) == 1);
}

TEST_CASE("voting head examples")
{
    std::vector<double> w(10, 0.0);
    w[0 * 2 + 0] = 1.0; // class W reads feature 0
    w[1 * 2 + 1] = 1.0; // class N1 reads feature 1
    const auto head = linear_head(2, 2, w, std::vector<double>(5, 0.0));

    const auto tie = voting_head(head, matrix(2, 2, {1, 0, 0, 1}));
    CHECK(tie.frame_logits == std::vector<double>{0.5, 0.5, 0, 0, 0});
    CHECK(tie.predicted == SleepStage::W);
    CHECK(tie.attribution.scores.size() == 2);

    const auto same = voting_head(head, matrix(2, 2, {0.2, 0.7, 0.2, 0.7}));
    CHECK(same.frame_logits == std::vector<double>(same.chunk_logits.begin(),
                                                   same.chunk_logits.begin() + 5));
    CHECK(same.predicted == SleepStage::N1);

    CHECK_THROWS_AS(voting_head(head, matrix(2, 3, std::vector<double>(6, 0.0))), ShapeError);
}

TEST_CASE("voting head against direct recomputation")
{
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(8);
        const std::size_t l = 1 + rng.index(6);
        const auto head = random_head(n, l, rng);
        const auto f = testing::random_tensor({n, l}, rng, -2, 2, false);
        const auto r = voting_head(head, f);
        std::vector<double> mean(5, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < 5; ++c) {
                double z = head.classifier[0].bias[c];
                for (std::size_t j = 0; j < l; ++j) {
                    z += head.classifier[0].weight[c * l + j] * f[i * l + j];
                }
                CHECK(r.chunk_logits[i * 5 + c] == doctest::Approx(z).epsilon(1e-12));
                mean[c] += z / static_cast<double>(n);
            }
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < 5; ++c) {
            if (mean[c] > mean[best]) {
                best = c;
            }
        }
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(std::abs(r.frame_logits[c] - mean[c]) <= 1e-6);
        }
        CHECK(r.predicted == stage(best));
    }
}

TEST_CASE("classes with identical weights tie exactly in the voting head")
{
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.index(30);
        const std::size_t l = 8 + rng.index(40);
        auto head = random_head(n, l, rng);
        auto& w = head.classifier[0].weight;
        for (std::size_t j = 0; j < l; ++j) {
            w[4 * l + j] = w[2 * l + j];
        }
        head.classifier[0].bias[4] = head.classifier[0].bias[2];
        const auto r = voting_head(head, testing::random_tensor({n, l}, rng, -2, 2, false));
        CHECK(r.frame_logits[4] == r.frame_logits[2]);
        CHECK(r.predicted != SleepStage::R);
    }
}

TEST_CASE("forward attribution hand case")
{
    // f_global = [1, 2] from two chunks; W[pred] = [3, -1]; b = 0.5.
    std::vector<double> w(10, 0.0);
    w[0] = 3.0;
    w[1] = -1.0;
    const auto head = linear_head(2, 2, w, {0.5, 0, 0, 0, 0});
    const auto r = feature_forward(head, matrix(2, 2, {0, 1, 2, 3}), SleepStage::W);
    CHECK(r.global.values == std::vector<double>{3.0, -2.0});
    CHECK(r.global.values[0] + r.global.values[1] == 1.0);
    CHECK(r.logit == 1.5);
    CHECK(r.bias == 0.5);
    CHECK(r.logit - r.bias == 1.0);
    CHECK(r.attribution.scores == std::vector<double>{-0.5, 1.5});
}

TEST_CASE("forward attribution properties")
{
    Rng rng(2);
    const auto head = random_head(4, 3, rng);
    const auto equal = feature_forward(
        head, matrix(4, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3}), SleepStage::N2);
    for (double s : equal.attribution.scores) {
        CHECK(s == equal.attribution.scores[0]);
    }
    const auto zero = feature_forward(head, matrix(4, 3, std::vector<double>(12, 0.0)),
                                      SleepStage::R);
    for (double s : zero.attribution.scores) {
        CHECK(s == 0.0);
    }
    for (double v : zero.global.values) {
        CHECK(v == 0.0);
    }

    auto deep = head;
    deep.classifier.push_back(nn::make_linear<double>(5, 5, rng));
    CHECK_THROWS_AS(feature_forward(deep, matrix(4, 3, std::vector<double>(12, 1.0)), SleepStage::W),
                    UsageError);
    auto seq = model::build_somnonet<double>(testing::tiny_config(), 1);
    CHECK_THROWS_AS(feature_forward(seq, matrix(3, 4, std::vector<double>(12, 1.0)), SleepStage::W),
                    UsageError);
}

TEST_CASE("completeness and forward/backward agreement on random instances")
{
    Rng rng(3);
    double worst_complete = 0.0;
    double worst_agree = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.index(10);
        const std::size_t l = 1 + rng.index(12);
        const auto head = random_head(n, l, rng);
        const auto f = testing::random_tensor({n, l}, rng, -3, 3, false);
        const auto pred = stage(rng.index(5));
        const auto fw = feature_forward(head, f, pred);
        double total = 0.0;
        for (double v : fw.global.values) {
            total += v;
        }
        worst_complete = std::max(worst_complete, std::abs(total - (fw.logit - fw.bias)));
        const auto bw = feature_backward(frame_head(head), f, pred);
        for (std::size_t i = 0; i < n; ++i) {
            worst_agree = std::max(worst_agree, std::abs(static_cast<double>(l) * bw.scores[i] -
                                                         fw.attribution.scores[i]));
        }
        const auto neg = feature_backward(frame_head(head), f, pred, true);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(neg.scores[i] == -bw.scores[i]);
        }
    }
    CHECK(worst_complete <= 1e-6);
    CHECK(worst_agree <= 1e-6);
}

TEST_CASE("backward attribution properties")
{
    Rng rng(4);
    SUBCASE("zero weights give zero attribution")
    {
        const auto head = linear_head(3, 2, std::vector<double>(10, 0.0), {1, 2, 3, 4, 5});
        const auto r = feature_backward(frame_head(head), matrix(3, 2, {1, 2, 3, 4, 5, 6}),
                                        SleepStage::N3);
        CHECK(r.scores == std::vector<double>(3, 0.0));
    }
    SUBCASE("a duplicated chunk row gets the same score")
    {
        const auto head = random_head(4, 3, rng);
        auto f = testing::random_tensor({4, 3}, rng, -1, 1, false);
        for (std::size_t j = 0; j < 3; ++j) {
            f[3 * 3 + j] = f[1 * 3 + j];
        }
        const auto r = feature_backward(frame_head(head), f, SleepStage::N1);
        CHECK(r.scores[3] == r.scores[1]);
    }
    SUBCASE("scaling the features scales the scores")
    {
        const auto head = random_head(5, 4, rng);
        const auto f = testing::random_tensor({5, 4}, rng, -1, 1, false);
        const double alpha = 2.5;
        std::vector<double> scaled(f.data().begin(), f.data().end());
        for (double& v : scaled) {
            v *= alpha;
        }
        const auto a = feature_backward(frame_head(head), f, SleepStage::R);
        const auto b = feature_backward(frame_head(head), matrix(5, 4, scaled), SleepStage::R);
        const auto fa = feature_forward(head, f, SleepStage::R);
        const auto fb = feature_forward(head, matrix(5, 4, scaled), SleepStage::R);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(b.scores[i] == doctest::Approx(alpha * a.scores[i]).epsilon(1e-12));
            CHECK(fb.attribution.scores[i] ==
                  doctest::Approx(alpha * fa.attribution.scores[i]).epsilon(1e-12));
        }
    }
    SUBCASE("shifting every logit by a constant changes no decision")
    {
        auto head = random_head(4, 3, rng);
        const auto f = testing::random_tensor({4, 3}, rng, -1, 1, false);
        const auto before = voting_head(head, f);
        const auto att_before = feature_backward(frame_head(head), f, before.predicted);
        for (std::size_t c = 0; c < 5; ++c) {
            head.classifier[0].bias[c] += 7.25;
        }
        const auto after = voting_head(head, f);
        CHECK(after.predicted == before.predicted);
        const auto att_after = feature_backward(frame_head(head), f, after.predicted);
        CHECK(att_after.predicted == att_before.predicted);
        CHECK(att_after.scores == att_before.scores);
    }
    CHECK_THROWS_AS(feature_backward<double>(
                        [](const Tensor<double>&) { return Tensor<double>({5}, 0.0); },
                        matrix(1, 1, {1}), SleepStage::W),
                    UsageError);
    CHECK_THROWS_AS(feature_backward(frame_head(random_head(1, 1, rng)), matrix(1, 1, {1}),
                                     SleepStage::excluded),
                    UsageError);
}

TEST_CASE("sequence attribution")
{
    const auto cfg = testing::tiny_config();
    Rng rng(5);
    const std::size_t n = cfg.n_chunks;
    const std::size_t l = cfg.feature_dim;

    SUBCASE("severing the global recurrence isolates the centre frame")
    {
        auto m = model::build_somnonet<double>(cfg, 2);
        // h_t = (1 - z) n + z h_{t-1}: besides zeroing W_hh, the update gate is pinned
        // shut so that no state crosses from one frame to the next.
        const std::size_t h = cfg.global_hidden;
        for (auto& layer : m.global) {
            for (auto* g : {&layer.fwd, &layer.bwd}) {
                std::fill(g->weight_hh.data().begin(), g->weight_hh.data().end(), 0.0);
                for (std::size_t j = 0; j < h; ++j) {
                    g->bias_ih[j] = -1e3;
                }
            }
        }
        auto window = testing::random_tensor({3, n, l}, rng, -1, 1, false);
        const auto base = sequence_attribution(m, window, 1);
        for (int trial = 0; trial < 5; ++trial) {
            auto other = testing::random_tensor({3, n, l}, rng, -1, 1, false);
            std::copy_n(window.data().begin() + n * l, n * l, other.data().begin() + n * l);
            const auto r = sequence_attribution(m, other, 1);
            CHECK(r.predicted == base.predicted);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(r.scores[i] == doctest::Approx(base.scores[i]).epsilon(1e-12));
            }
        }
    }
    SUBCASE("with live recurrence the neighbours matter")
    {
        auto m = model::build_somnonet<double>(cfg, 2);
        const auto window = testing::random_tensor({3, n, l}, rng, -1, 1, false);
        auto other = testing::random_tensor({3, n, l}, rng, -1, 1, false);
        std::copy_n(window.data().begin() + n * l, n * l, other.data().begin() + n * l);
        const auto a = sequence_attribution(m, window, 1);
        const auto b = sequence_attribution(m, other, 1);
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diff = std::max(diff, std::abs(a.scores[i] - b.scores[i]));
        }
        CHECK(diff > 0.0);
    }
    SUBCASE("a one-frame window equals the backward head over the same model")
    {
        for (auto arch : {model::Arch::somnonet, model::Arch::nano}) {
            auto parent = model::build_somnonet<double>(cfg, 3);
            const auto m = arch == model::Arch::somnonet ? parent : model::build_nano(parent, cfg, 4);
            const auto f = testing::random_tensor({n, l}, rng, -1, 1, false);
            const auto seq = sequence_attribution(m, nn::reshape(f, {1, n, l}), 0);
            const auto bw = feature_backward(frame_head(m), f, seq.predicted);
            CHECK(seq.scores == bw.scores);
        }
    }
    SUBCASE("non-finite parameters are reported")
    {
        auto m = model::build_somnonet<double>(cfg, 2);
        m.global[0].fwd.weight_hh[0] = std::nan("");
        CHECK_THROWS_AS(sequence_attribution(m, testing::random_tensor({3, n, l}, rng, -1, 1, false), 1),
                        NumericError);
    }
}

TEST_CASE("epoch-level dispatch")
{
    const auto cfg = testing::tiny_config();
    auto parent = model::build_somnonet<float>(cfg, 1);
    auto head = model::build_linear_head(parent, cfg, 2);
    const auto rec = testing::tiny_recording(6, 1);
    for (auto method : {Method::voting, Method::feature_forward, Method::feature_backward,
                        Method::sequence}) {
        const auto a = attribute_epoch(head, rec, 4, method);
        CHECK(a.scores.size() == cfg.n_chunks);
        CHECK(a.method == method);
        CHECK(a.epoch_index == 4);
    }
    // Forward and backward agree through the float pipeline too, after the L rescale.
    const auto fw = attribute_epoch(head, rec, 2, Method::feature_forward);
    const auto bw = attribute_epoch(head, rec, 2, Method::feature_backward);
    CHECK(fw.predicted == bw.predicted);
    for (std::size_t i = 0; i < cfg.n_chunks; ++i) {
        CHECK(static_cast<double>(cfg.feature_dim) * bw.scores[i] ==
              doctest::Approx(fw.scores[i]).epsilon(1e-5));
    }
    CHECK_THROWS_AS(attribute_epoch(parent, rec, 0, Method::feature_forward), UsageError);
    CHECK_THROWS_AS(attribute_epoch(parent, rec, 0, Method::voting), UsageError);
    CHECK_NOTHROW(attribute_epoch(parent, rec, 0, Method::sequence));
    CHECK_NOTHROW(attribute_epoch(parent, rec, 5, Method::feature_backward));
    CHECK_THROWS_AS(attribute_epoch(parent, rec, 6, Method::sequence), ConfigError);

    for (auto method : {Method::voting, Method::feature_forward, Method::feature_backward,
                        Method::sequence}) {
        CHECK(method_from_name(method_name(method)) == method);
    }
    CHECK_THROWS_AS(method_from_name("gradcam"), ConfigError);
}

TEST_CASE("score normalisation")
{
    const std::vector<double> a{0, 1, 2};
    CHECK(normalize_scores(a) == std::vector<double>{0, 0.5, 1});
    const std::vector<double> c{3, 3, 3, 3};
    CHECK(normalize_scores(c) == std::vector<double>(4, 0.5));
    const std::vector<double> neg{-4, 0, -2};
    CHECK(normalize_scores(neg) == std::vector<double>{0, 1, 0.5});
}

TEST_CASE("heatmap export")
{
    const auto dir = testing::scratch_dir("heatmap");
    AttributionVector att;
    att.scores = {0.25, -1.0, 2.0};
    att.method = Method::feature_backward;
    att.epoch_index = 17;
    att.predicted = SleepStage::N2;
    const std::vector<float> epoch(120, 1.0f);
    const auto csv = export_heatmap(att, epoch, dir, "night1");
    CHECK(csv.filename() == "night1_17_backward.csv");
    CHECK(std::filesystem::exists(dir / "night1_17_backward.svg"));
    const auto text = read_text(csv);
    CHECK(text == "chunk_index,start_sample,end_sample,score,normalized_score\n"
                  "0,0,40,0.25,0.41666666666666669\n"
                  "1,40,80,-1,0\n"
                  "2,80,120,2,1\n");
    const auto svg = read_text(dir / "night1_17_backward.svg");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("fill-opacity=\"1.0000\"") != std::string::npos);

    att.scores[0] = std::nan("");
    CHECK_THROWS_AS(export_heatmap(att, epoch, dir, "night1"), NumericError);
}

TEST_CASE("top chunks and localisation overlap")
{
    const std::vector<double> s{0.1, 0.9, 0.9, -1.0, 0.5, 0.0};
    CHECK(top_chunks(s, 3) == std::vector<std::size_t>{1, 2, 4});
    CHECK(top_chunks(s, 10).size() == 6);

    // Six chunks of 10 samples; the alpha span covers samples 10..30.
    const std::vector<data::RhythmSpan> spans{{10, 30, "alpha"}, {50, 60, "spindle"}};
    CHECK(localization_iou(s, 2, spans, "alpha", 60) == 1.0);
    // Chunks 1, 2, 4: intersection 20 samples, union 30.
    CHECK(localization_iou(s, 3, spans, "alpha", 60) == doctest::Approx(20.0 / 30.0));
    CHECK(localization_iou(s, 1, spans, "spindle", 60) == 0.0);
}
