#include "support.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/model/io.hpp"
#include "somnonet/model/model.hpp"
#include "somnonet/train/loss.hpp"

#include <doctest.h>

#include <cmath>

using namespace somnonet;
using namespace somnonet::model;
using nn::Tensor;

namespace {

template <class T>
std::vector<std::vector<T>> snapshot(const Model<T>& m)
{
    std::vector<std::vector<T>> out;
    for (const auto& nt : m.tensors()) {
        out.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
    }
    return out;
}

std::vector<std::span<const float>> views(const data::Recording& rec, std::size_t from,
                                          std::size_t count)
{
    std::vector<std::span<const float>> out;
    for (std::size_t i = from; i < from + count; ++i) {
        out.emplace_back(rec.epochs[i]);
    }
    return out;
}

std::vector<float> values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

} // namespace

TEST_CASE("reference parameter budgets")
{
    const ModelConfig cfg;
    const auto parent = build_somnonet<float>(cfg, 1);
    const auto report = param_report(parent);
    CHECK(report.total() >= 387000);
    CHECK(report.total() <= 473000);
    CHECK(report.group(Group::sequence) >= 354600);
    CHECK(report.group(Group::sequence) <= 433400);
    CHECK(static_cast<double>(report.group(Group::sequence)) / report.total() >= 0.85);
    CHECK(report.total() == report.group(Group::encoder) + report.group(Group::sequence) +
                                report.group(Group::classifier));

    ModelConfig ncfg = cfg;
    const auto nano = build_nano(parent, ncfg, 2);
    const auto nrep = param_report(nano);
    CHECK(nrep.total() >= 44100);
    CHECK(nrep.total() <= 53900);
    CHECK(nrep.group(Group::sequence) >= 11700);
    CHECK(nrep.group(Group::sequence) <= 14300);
    const double ratio = compression_ratio(nrep, report);
    CHECK(ratio >= 0.09);
    CHECK(ratio <= 0.14);
    CHECK(static_cast<double>(nrep.trainable()) / report.group(Group::sequence) <= 0.05);

    // Totals are plain sums of tensor sizes, buffers left out.
    std::size_t direct = 0;
    for (const auto& nt : parent.tensors()) {
        direct += nt.buffer ? 0 : nt.tensor.size();
    }
    CHECK(direct == report.total());
}

TEST_CASE("one 2x3 linear layer has 9 parameters")
{
    Rng rng(1);
    const auto lin = nn::make_linear<float>(2, 3, rng);
    std::vector<NamedTensor<float>> ts{{"classifier.l0.bias", lin.bias, Group::classifier},
                                       {"classifier.l0.weight", lin.weight, Group::classifier}};
    CHECK(param_report<float>(std::span<const NamedTensor<float>>(ts)).total() == 9);
}

TEST_CASE("architecture does not change with the sampling rate")
{
    ModelConfig cfg;
    cfg.context_frames = 1;
    std::optional<ParamReport> first;
    for (std::uint32_t rate : {100u, 125u, 200u}) {
        auto m = build_somnonet<float>(cfg, 3);
        const auto rep = param_report(m);
        if (!first) {
            first = rep;
        } else {
            CHECK(rep.total() == first->total());
            for (Group g : {Group::encoder, Group::sequence, Group::classifier}) {
                CHECK(rep.group(g) == first->group(g));
            }
        }
        std::vector<float> epoch(30 * rate, 0.25f);
        std::vector<std::span<const float>> w{epoch};
        const auto logits = forward_window(m, std::span<const std::span<const float>>(w));
        CHECK(logits.shape() == nn::Shape{1, 5});
    }
}

TEST_CASE("construction is deterministic per seed")
{
    const auto cfg = testing::tiny_config();
    CHECK(snapshot(build_somnonet<float>(cfg, 5)) == snapshot(build_somnonet<float>(cfg, 5)));
    CHECK(snapshot(build_somnonet<float>(cfg, 5)) != snapshot(build_somnonet<float>(cfg, 6)));
}

TEST_CASE("tensor names are sorted and unique")
{
    auto m = build_somnonet<float>(testing::tiny_config(), 1);
    const auto ts = m.tensors();
    for (std::size_t i = 1; i < ts.size(); ++i) {
        CHECK(ts[i - 1].name < ts[i].name);
    }
}

TEST_CASE("invalid configurations are rejected")
{
    auto cfg = testing::tiny_config();
    cfg.n_classes = 4;
    CHECK_THROWS_AS(build_somnonet<float>(cfg, 1), ConfigError);
    cfg = testing::tiny_config();
    cfg.global_hidden = 0;
    CHECK_THROWS_AS(build_somnonet<float>(cfg, 1), ConfigError);
    cfg = testing::tiny_config();
    cfg.feature_dim = 7;
    CHECK_THROWS_AS(build_somnonet<float>(cfg, 1), ConfigError);
    cfg = testing::tiny_config();
    cfg.branch_channels = {2};
    CHECK_THROWS_AS(build_somnonet<float>(cfg, 1), ConfigError);

    const auto parent = build_somnonet<float>(testing::tiny_config(), 1);
    auto other = testing::tiny_config();
    other.block_channels = {3, 5};
    other.feature_dim = 5;
    CHECK_THROWS_AS(build_nano(parent, other, 2), ConfigError);
}

TEST_CASE("forward pass behaviour")
{
    const auto cfg = testing::tiny_config();
    auto m = build_somnonet<float>(cfg, 7);
    const auto rec = testing::tiny_recording(10, 1);

    SUBCASE("zero input gives finite logits")
    {
        std::vector<std::vector<float>> zeros(cfg.context_frames, std::vector<float>(120, 0.0f));
        std::vector<std::span<const float>> w(zeros.begin(), zeros.end());
        for (float v : forward_window(m, std::span<const std::span<const float>>(w)).data()) {
            CHECK(std::isfinite(v));
        }
    }
    SUBCASE("a single frame still yields C logits")
    {
        const auto w = views(rec, 0, 1);
        CHECK(forward_window(m, std::span<const std::span<const float>>(w)).shape() ==
              nn::Shape{1, 5});
    }
    SUBCASE("no state carries between windows")
    {
        const auto a = views(rec, 0, 3);
        const auto b = views(rec, 5, 3);
        const auto first = values(forward_window(m, std::span<const std::span<const float>>(a)));
        const auto other = values(forward_window(m, std::span<const std::span<const float>>(b)));
        CHECK(values(forward_window(m, std::span<const std::span<const float>>(a))) == first);
        CHECK(values(forward_window(m, std::span<const std::span<const float>>(b))) == other);
    }
    SUBCASE("batched decoding equals one window at a time")
    {
        const auto w = views(rec, 0, 6);
        auto feats = encode(m, chunk_batch<float>(cfg, std::span<const std::span<const float>>(w)),
                            nn::Mode::eval);
        const std::size_t both[] = {0, 1, 2, 3, 4, 5};
        const auto joint = values(decode(m, feats, both, 3));
        const auto a = values(decode(m, feats, std::span<const std::size_t>(both, 3), 3));
        const auto b = values(decode(m, feats, std::span<const std::size_t>(both + 3, 3), 3));
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(joint[i] == doctest::Approx(a[i]).epsilon(1e-6));
            CHECK(joint[a.size() + i] == doctest::Approx(b[i]).epsilon(1e-6));
        }
    }
    SUBCASE("wrong epoch length is a shape error")
    {
        std::vector<float> odd(121, 0.0f);
        std::vector<std::span<const float>> w{odd};
        CHECK_THROWS(forward_window(m, std::span<const std::span<const float>>(w)));
    }
}

TEST_CASE("nano shares a frozen copy of the encoder")
{
    const auto cfg = testing::tiny_config();
    auto parent = build_somnonet<double>(cfg, 3);
    auto nano = build_nano(parent, cfg, 4);
    CHECK(nano.encoder_frozen);
    CHECK(nano.config.arch == Arch::nano);

    const auto rec = testing::tiny_recording(4, 2);
    const auto w = views(rec, 0, 3);
    const auto chunks = chunk_batch<double>(cfg, std::span<const std::span<const float>>(w));
    const auto fp = encode(parent, chunks, nn::Mode::eval);
    const auto fn = encode(nano, chunks, nn::Mode::eval);
    CHECK(std::vector<double>(fp.data().begin(), fp.data().end()) ==
          std::vector<double>(fn.data().begin(), fn.data().end()));

    // The copy is deep: changing the parent leaves the nano encoder alone.
    parent.encoder[0].fuse.weight[0] += 1.0;
    CHECK(nano.encoder[0].fuse.weight[0] != parent.encoder[0].fuse.weight[0]);

    SUBCASE("frozen encoder receives no gradient")
    {
        std::vector<Tensor<double>> enc;
        for (const auto& nt : nano.tensors()) {
            CHECK((nt.group != Group::encoder || !nt.tensor.requires_grad()));
        }
        const auto feats = encode(nano, chunks, nn::Mode::train);
        const std::size_t frames[] = {0, 1, 2};
        auto logits = decode(nano, feats, frames, 3);
        nn::backward(nn::sum(logits));
        for (const auto& nt : nano.tensors()) {
            if (nt.group == Group::encoder) {
                CHECK_FALSE(nt.tensor.has_grad());
            } else if (!nt.buffer) {
                CHECK(nt.tensor.has_grad());
            }
        }
    }
    SUBCASE("chunk order matters")
    {
        const std::size_t frames[] = {0, 1, 2};
        const auto base = decode(nano, fn, frames, 3);
        // Swap chunks 0 and 2 of every frame.
        std::vector<double> swapped(fn.data().begin(), fn.data().end());
        const std::size_t l = cfg.feature_dim;
        for (std::size_t f = 0; f < 3; ++f) {
            for (std::size_t j = 0; j < l; ++j) {
                std::swap(swapped[(f * 3 + 0) * l + j], swapped[(f * 3 + 2) * l + j]);
            }
        }
        const auto moved = decode(nano, Tensor<double>(fn.shape(), swapped), frames, 3);
        double diff = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) {
            diff = std::max(diff, std::abs(base[i] - moved[i]));
        }
        CHECK(diff > 1e-9);
    }
}

TEST_CASE("minimal nano instance runs end to end")
{
    auto cfg = testing::tiny_config();
    cfg.n_chunks = 1;
    cfg.context_frames = 1;
    auto parent = build_somnonet<float>(cfg, 1);
    auto nano = build_nano(parent, cfg, 2);
    const auto rec = testing::tiny_recording(1, 3);
    const auto w = views(rec, 0, 1);
    const auto logits = forward_window(nano, std::span<const std::span<const float>>(w));
    CHECK(logits.shape() == nn::Shape{1, 5});
}

TEST_CASE("loss gradient with respect to raw samples matches finite differences")
{
    const auto cfg = testing::tiny_config();
    for (Arch arch : {Arch::somnonet, Arch::nano, Arch::linear_head}) {
        CAPTURE(arch_name(arch));
        auto parent = build_somnonet<double>(cfg, 11);
        Model<double> m = arch == Arch::somnonet ? parent
                          : arch == Arch::nano   ? build_nano(parent, cfg, 12)
                                                 : build_linear_head(parent, cfg, 12);
        Rng rng(13);
        const std::size_t f = 3;
        auto x = testing::random_tensor({f * cfg.n_chunks, 1, 40}, rng, -2.0, 2.0);
        const std::vector<data::SleepStage> labels{data::SleepStage::N1, data::SleepStage::R,
                                                   data::SleepStage::W};
        const std::size_t frames[] = {0, 1, 2};
        const auto r = testing::check_gradients(
            [&](const std::vector<Tensor<double>>& in) {
                auto logits = decode(m, encode(m, in[0], nn::Mode::eval), frames, f);
                return train::cross_entropy(nn::reshape(logits, {f, 5}),
                                            std::span<const data::SleepStage>(labels));
            },
            {x}, rng, 1e-5, 1e-6, 120);
        CHECK(r.checked == 120);
        CHECK(r.max_rel_error < 1e-3);
    }
}

TEST_CASE("checkpoint and config sidecar round trip")
{
    const auto dir = testing::scratch_dir("model_io");
    auto cfg = testing::tiny_config();
    cfg.input_mean = 0.1234567890123;
    cfg.input_std = 3.3;
    auto parent = build_somnonet<float>(cfg, 9);
    // Give the running statistics non-default values too.
    parent.encoder[0].fuse_bn.running_mean[1] = 0.75f;
    for (const auto& m : {parent, build_nano(parent, cfg, 10), build_linear_head(parent, cfg, 10)}) {
        const auto path = dir / (std::string(arch_name(m.config.arch)) + ".snwt");
        save_model(m, path);
        CHECK(std::filesystem::exists(config_path(path)));
        const auto back = load_model(path);
        CHECK(back.config == m.config);
        CHECK(back.encoder_frozen == m.encoder_frozen);
        CHECK(snapshot(back) == snapshot(m));
        CHECK(nn::encode_snwt(to_tensor_map(back)) == nn::encode_snwt(to_tensor_map(m)));
        save_model(back, dir / "again.snwt");
        CHECK(nn::read_snwt(dir / "again.snwt") == nn::read_snwt(path));
    }
}

TEST_CASE("tensor maps must match the architecture")
{
    auto m = build_somnonet<float>(testing::tiny_config(), 1);
    auto map = to_tensor_map(m);
    auto missing = map;
    missing.erase(missing.begin());
    CHECK_THROWS_AS(load_tensor_map(m, missing), ConfigError);
    auto reshaped = map;
    reshaped.begin()->second.shape.push_back(1);
    CHECK_THROWS_AS(load_tensor_map(m, reshaped), ConfigError);
    auto extra = map;
    extra["zzz"] = {{1}, {0.0f}};
    CHECK_THROWS_AS(load_tensor_map(m, extra), ConfigError);
}

TEST_CASE("SNWT encoding")
{
    nn::TensorMap map;
    map["b"] = {{2}, {1.5f, -2.0f}};
    map["a"] = {{1, 1}, {3.0f}};
    const auto bytes = nn::encode_snwt(map);
    // magic 4 + version 2 + count 4 + ("a": 2+1+1+8+4) + ("b": 2+1+1+4+8)
    CHECK(bytes.size() == 10 + 16 + 16);
    CHECK(static_cast<char>(bytes[0]) == 'S');
    CHECK(static_cast<char>(bytes[3]) == 'T');
    CHECK(static_cast<char>(bytes[12]) == 'a');
    CHECK(nn::decode_snwt(bytes) == map);

    auto bad = bytes;
    bad[0] = std::byte{'X'};
    CHECK_THROWS_AS(nn::decode_snwt(bad), FormatError);
    auto version = bytes;
    version[4] = std::byte{9};
    CHECK_THROWS_AS(nn::decode_snwt(version), FormatError);
    CHECK_THROWS_AS(nn::decode_snwt(std::span(bytes).first(bytes.size() - 1)), FormatError);
    auto trailing = bytes;
    trailing.push_back(std::byte{0});
    CHECK_THROWS_AS(nn::decode_snwt(trailing), FormatError);
}

TEST_CASE("config text round trip")
{
    auto cfg = testing::tiny_config();
    cfg.arch = Arch::nano;
    cfg.input_mean = -1.0 / 3.0;
    cfg.input_std = 1e-7;
    const auto text = to_text(cfg);
    CHECK(config_from_text(text) == cfg);
    CHECK(config_from_text(to_text(ModelConfig{})) == ModelConfig{});
    CHECK_THROWS_AS(config_from_text("n_chunks=3\nbogus=1\n"), ConfigError);
    CHECK_THROWS_AS(config_from_text("n_chunks=three\n"), ConfigError);
    CHECK_THROWS_AS(arch_from_name("transformer"), ConfigError);
}

TEST_CASE("gradients do not depend on where buffers are allocated")
{
    ModelConfig cfg;
    cfg.context_frames = 3;
    Rng rng(8);
    std::vector<std::vector<float>> epochs(5, std::vector<float>(3000));
    for (auto& e : epochs) {
        for (float& v : e) {
            v = static_cast<float>(rng.normal());
        }
    }
    std::vector<std::span<const float>> w(epochs.begin(), epochs.end());
    const std::size_t frames[] = {0, 1, 2, 1, 2, 3, 2, 3, 4};
    const std::vector<data::SleepStage> labels(9, data::SleepStage::N2);
    std::vector<std::vector<float>> reference;
    for (int run = 0; run < 4; ++run) {
        // Shift later heap allocations by a varying amount.
        std::vector<std::vector<char>> ballast;
        for (int j = 0; j < run * 5; ++j) {
            ballast.emplace_back(static_cast<std::size_t>(8 + 24 * j));
        }
        auto m = build_somnonet<float>(cfg, 1);
        const auto f = encode(m, chunk_batch<float>(cfg, std::span<const std::span<const float>>(w)),
                              nn::Mode::train);
        const auto logits = nn::reshape(decode(m, f, frames, 3), {9, 5});
        nn::backward(train::cross_entropy(logits, std::span<const data::SleepStage>(labels)));
        std::vector<std::vector<float>> grads;
        for (const auto& nt : m.tensors()) {
            if (!nt.buffer) {
                grads.emplace_back(nt.tensor.grad().begin(), nt.tensor.grad().end());
            }
        }
        if (run == 0) {
            reference = grads;
        } else {
            CHECK(grads == reference);
        }
    }
}
