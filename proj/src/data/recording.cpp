#include "somnonet/data/recording.hpp"

#include "somnonet/errors.hpp"

#include <cmath>

namespace somnonet::data {

std::string_view stage_name(SleepStage stage)
{
    switch (stage) {
    case SleepStage::W: return "W";
    case SleepStage::N1: return "N1";
    case SleepStage::N2: return "N2";
    case SleepStage::N3: return "N3";
    case SleepStage::R: return "R";
    case SleepStage::excluded: return "EXCLUDED";
    }
    return "?";
}

std::optional<SleepStage> stage_from_code(std::uint8_t code)
{
    if (code < kNumStages) {
        return static_cast<SleepStage>(code);
    }
    if (code == static_cast<std::uint8_t>(SleepStage::excluded)) {
        return SleepStage::excluded;
    }
    return std::nullopt;
}

void validate(const Recording& rec)
{
    if (rec.sampling_rate_hz == 0) {
        throw ValidationError("sampling rate must be positive");
    }
    if (rec.epoch_len_s == 0) {
        throw ValidationError("epoch length must be positive");
    }
    if (rec.labels.size() != rec.epochs.size()) {
        throw ValidationError("labels length " + std::to_string(rec.labels.size()) +
                              " does not match epoch count " + std::to_string(rec.epochs.size()));
    }
    const std::size_t expected = rec.samples_per_epoch();
    for (std::size_t i = 0; i < rec.epochs.size(); ++i) {
        if (rec.epochs[i].size() != expected) {
            throw ValidationError("epoch " + std::to_string(i) + " has " +
                                  std::to_string(rec.epochs[i].size()) + " samples, expected " +
                                  std::to_string(expected));
        }
        if (!stage_from_code(static_cast<std::uint8_t>(rec.labels[i]))) {
            throw ValidationError("epoch " + std::to_string(i) + " has an invalid stage code");
        }
    }
    if (!rec.rhythm_annotations.empty()) {
        if (rec.rhythm_annotations.size() != rec.epochs.size()) {
            throw ValidationError("annotation list length does not match epoch count");
        }
        for (std::size_t i = 0; i < rec.rhythm_annotations.size(); ++i) {
            for (const auto& span : rec.rhythm_annotations[i]) {
                if (span.start_sample >= span.end_sample || span.end_sample > expected) {
                    throw ValidationError("annotation span in epoch " + std::to_string(i) +
                                          " lies outside [0, epoch length)");
                }
                if (span.tag.empty() || span.tag.find_first_of(",\n\r") != std::string::npos) {
                    throw ValidationError("annotation tag in epoch " + std::to_string(i) +
                                          " is empty or contains a separator");
                }
            }
        }
    }
}

} // namespace somnonet::data
