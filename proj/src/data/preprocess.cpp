#include "somnonet/data/preprocess.hpp"

#include "somnonet/errors.hpp"
#include "somnonet/rng.hpp"

#include <algorithm>
#include <numeric>

namespace somnonet::data {

std::vector<SleepStage> map_stages(std::span<const int> raw, LabelScheme scheme)
{
    std::vector<SleepStage> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const int code = raw[i];
        SleepStage stage = SleepStage::excluded;
        bool known = true;
        switch (code) {
        case 0: stage = SleepStage::W; break;
        case 1: stage = SleepStage::N1; break;
        case 2: stage = SleepStage::N2; break;
        case 3: stage = SleepStage::N3; break;
        case 4:
            // S4 merges into N3; AASM has no code 4.
            known = scheme == LabelScheme::RK;
            stage = SleepStage::N3;
            break;
        case 5: stage = SleepStage::R; break;
        case 6:
            known = scheme == LabelScheme::RK;
            stage = SleepStage::excluded;
            break;
        case 9: stage = SleepStage::excluded; break;
        default: known = false;
        }
        if (!known) {
            throw MappingError(scheme == LabelScheme::RK ? "unknown R&K stage code"
                                                         : "unknown AASM stage code",
                               code, i);
        }
        out.push_back(stage);
    }
    return out;
}

ChunkSet chunk(std::span<const float> epoch, std::size_t n)
{
    const std::size_t total = epoch.size();
    if (n == 0 || total % n != 0) {
        throw ShapeError("cannot chunk " + std::to_string(total) + " samples into " +
                         std::to_string(n) + " pieces (remainder " +
                         std::to_string(n == 0 ? total : total % n) + ")");
    }
    const std::size_t len = total / n;
    ChunkSet set;
    set.chunks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        set.chunks.emplace_back(epoch.begin() + static_cast<std::ptrdiff_t>(i * len),
                                epoch.begin() + static_cast<std::ptrdiff_t>((i + 1) * len));
    }
    return set;
}

std::vector<float> unchunk(const ChunkSet& set)
{
    std::vector<float> out;
    out.reserve(set.count() * set.chunk_len());
    for (const auto& c : set.chunks) {
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

std::vector<Fold> split_folds(std::size_t n_items, std::size_t k, std::uint64_t seed,
                              std::size_t holdout)
{
    if (k < 2) {
        throw ConfigError("fold count must be at least 2, got " + std::to_string(k));
    }
    if (n_items < k) {
        throw ConfigError("cannot split " + std::to_string(n_items) + " items into " +
                          std::to_string(k) + " folds");
    }
    const std::size_t largest = (n_items + k - 1) / k;
    if (holdout + largest > n_items) {
        throw ConfigError("holdout " + std::to_string(holdout) + " plus test fold " +
                          std::to_string(largest) + " exceeds " + std::to_string(n_items) +
                          " items");
    }

    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<Fold> folds(k);
    std::size_t begin = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n_items / k + (f < n_items % k ? 1 : 0);
        folds[f].test.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                             order.begin() + static_cast<std::ptrdiff_t>(begin + size));
        std::vector<std::size_t> rest;
        rest.reserve(n_items - size);
        rest.insert(rest.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(begin));
        rest.insert(rest.end(), order.begin() + static_cast<std::ptrdiff_t>(begin + size),
                    order.end());
        rng.shuffle(rest);
        folds[f].validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(holdout));
        folds[f].train.assign(rest.begin() + static_cast<std::ptrdiff_t>(holdout), rest.end());
        for (auto* ids : {&folds[f].train, &folds[f].validation, &folds[f].test}) {
            std::sort(ids->begin(), ids->end());
        }
        begin += size;
    }
    return folds;
}

Fold split_ratio(std::size_t n_items, double train_fraction, std::uint64_t seed,
                 std::size_t holdout)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1)");
    }
    const auto n_train_side =
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n_items)));
    if (n_train_side == 0 || n_train_side >= n_items || holdout >= n_train_side) {
        throw ConfigError("split of " + std::to_string(n_items) + " items leaves an empty side");
    }
    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);

    Fold fold;
    fold.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
    fold.train.assign(order.begin() + static_cast<std::ptrdiff_t>(holdout),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train_side));
    fold.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train_side), order.end());
    for (auto* ids : {&fold.train, &fold.validation, &fold.test}) {
        std::sort(ids->begin(), ids->end());
    }
    return fold;
}

} // namespace somnonet::data
