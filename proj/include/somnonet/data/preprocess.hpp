#pragma once

#include "somnonet/data/recording.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace somnonet::data {

/// Raw hypnogram code sets.
///   RK:   0 W, 1 S1, 2 S2, 3 S3, 4 S4, 5 REM, 6 Movement, 9 Unknown
///   AASM: 0 W, 1 N1, 2 N2, 3 N3, 5 REM, 9 Unknown
enum class LabelScheme { RK, AASM };

/// R&K stages 3 and 4 both become N3; Movement and Unknown become `excluded`.
/// Throws MappingError for codes outside the scheme.
std::vector<SleepStage> map_stages(std::span<const int> raw, LabelScheme scheme);

/// Contiguous, equal-length pieces of one epoch.
struct ChunkSet {
    std::vector<std::vector<float>> chunks;

    std::size_t count() const { return chunks.size(); }
    std::size_t chunk_len() const { return chunks.empty() ? 0 : chunks.front().size(); }
};

/// Splits an epoch of S samples into n pieces of S/n. Throws ShapeError unless n divides S.
ChunkSet chunk(std::span<const float> epoch, std::size_t n);

/// Concatenation of the chunks, in order.
std::vector<float> unchunk(const ChunkSet& set);

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// k-fold partition of item ids 0..n-1. Each id lands in exactly one test fold; per fold,
/// `holdout` validation ids are drawn from the remainder and the rest train.
std::vector<Fold> split_folds(std::size_t n_items, std::size_t k, std::uint64_t seed,
                              std::size_t holdout);

/// Single train/test split (e.g. 7:3) with `holdout` validation ids taken from the train side.
Fold split_ratio(std::size_t n_items, double train_fraction, std::uint64_t seed,
                 std::size_t holdout);

} // namespace somnonet::data
