#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace somnonet::data {

/// AASM sleep stages. `excluded` marks frames that never enter loss, metrics or attribution.
enum class SleepStage : std::uint8_t {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    R = 4,
    excluded = 255,
};

inline constexpr std::size_t kNumStages = 5;
inline constexpr std::array<SleepStage, kNumStages> kAllStages{
    SleepStage::W, SleepStage::N1, SleepStage::N2, SleepStage::N3, SleepStage::R};

std::string_view stage_name(SleepStage stage);
std::optional<SleepStage> stage_from_code(std::uint8_t code);

inline bool is_scored(SleepStage stage) { return stage != SleepStage::excluded; }
inline int stage_index(SleepStage stage) { return static_cast<int>(stage); }

/// Rhythm burst injected by the synthetic generator, in samples relative to the epoch start.
struct RhythmSpan {
    std::uint32_t start_sample = 0;
    std::uint32_t end_sample = 0; // exclusive
    std::string tag;

    bool operator==(const RhythmSpan&) const = default;
};

/// A single-channel recording cut into fixed-length epochs. Samples are in microvolts.
struct Recording {
    std::uint32_t sampling_rate_hz = 100;
    std::uint16_t epoch_len_s = 30;
    std::vector<std::vector<float>> epochs;
    std::vector<SleepStage> labels;
    /// Empty, or one list of spans per epoch.
    std::vector<std::vector<RhythmSpan>> rhythm_annotations;

    std::size_t samples_per_epoch() const
    {
        return static_cast<std::size_t>(sampling_rate_hz) * epoch_len_s;
    }
    std::size_t size() const { return epochs.size(); }

    bool operator==(const Recording&) const = default;
};

/// Throws ValidationError if any Recording invariant is broken.
void validate(const Recording& rec);

} // namespace somnonet::data
