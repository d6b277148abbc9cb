#pragma once

#include "somnonet/data/recording.hpp"

#include <array>
#include <cstdint>

namespace somnonet::data {

/// Parameters of the rhythm-labelled synthetic EEG generator.
///
/// Labels follow a sticky Markov chain: each epoch keeps the previous stage with
/// probability `persistence`, otherwise it is redrawn from `class_mix`. The stationary
/// distribution is therefore `class_mix`.
struct SyntheticSpec {
    std::size_t n_subjects = 1;
    std::size_t epochs_per_subject = 120;
    std::uint32_t sampling_rate_hz = 100;
    std::uint16_t epoch_len_s = 30;
    std::array<double, kNumStages> class_mix{0.2, 0.2, 0.2, 0.2, 0.2};
    double noise_sigma = 5.0; // microvolts, pink background
    double persistence = 0.75;
    std::uint64_t rng_seed = 0;
};

/// Rhythm tags written into RhythmSpan::tag.
inline constexpr const char* kTagAlpha = "alpha";
inline constexpr const char* kTagLamf = "lamf";
inline constexpr const char* kTagSpindle = "spindle";
inline constexpr const char* kTagSlowWave = "slow_wave";

/// Throws ConfigError on an invalid spec.
void validate(const SyntheticSpec& spec);

/// Deterministic in `rng_seed`. Subjects are concatenated in order. Every injected
/// burst is recorded in `rhythm_annotations`.
///
/// Per stage, on top of pink background noise:
///   W  alpha (8-13 Hz, 20-50 uV) on 52-60% of the epoch, whole-second aligned
///   N1 alpha on 10-40% of the epoch, low-amplitude 4-7 Hz activity elsewhere
///   N2 two to four spindles (12-14 Hz, 0.5-1.5 s)
///   N3 slow waves (0.5-2 Hz, 75-150 uV) on 30-60% of the epoch
///   R  low-amplitude 4-7 Hz activity over the whole epoch
Recording generate_synthetic(const SyntheticSpec& spec);

/// Fraction of an epoch's samples covered by spans carrying `tag`.
double tag_coverage(const Recording& rec, std::size_t epoch, const char* tag);

} // namespace somnonet::data
