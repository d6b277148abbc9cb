#pragma once

#include "somnonet/data/recording.hpp"
#include "somnonet/model/model.hpp"
#include "somnonet/train/optim.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace somnonet::train {

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t max_epochs = 150;
    std::size_t patience = 8;
    std::uint64_t seed = 0;
    bool class_weighting = false; // inverse class frequency over the training labels
    bool all_frames_loss = false; // default: only the centre frame of each window
    bool standardize = true;      // global mean/std of the training samples
    AdamHyper optimizer;
    double base_lr = 1e-4;
    double max_lr = 1e-3;
    std::size_t lr_period_epochs = 4;
    /// Wall-clock budget checked after each epoch; 0 disables it. A run cut short by the
    /// budget is not reproducible, so it is off by default.
    double max_seconds = 0.0;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Throws ConfigError on non-positive sizes or bad learning-rate bounds.
void validate(const TrainConfig& cfg);

/// Sets one field from key=value text. Returns false for a key it does not know;
/// malformed values throw ConfigError.
bool apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value);

struct History {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    bool stopped_early = false;
    bool hit_time_limit = false;
};

/// "epoch,train_loss,val_loss,val_acc,lr" followed by one row per epoch.
std::string history_csv(const History& history);

/// Window of `length` consecutive frames in a recording of n frames that contains
/// `target`, as centred as the recording bounds allow.
struct WindowPlacement {
    std::size_t start = 0;
    std::size_t length = 0;
    std::size_t position = 0; // index of the target inside the window
};

WindowPlacement place_window(std::size_t target, std::size_t n_frames, std::size_t context);

/// Global mean and standard deviation of every sample in the recordings.
std::pair<double, double> sample_moments(std::span<const data::Recording> recordings);

/// Inverse-frequency weights total / (C * count_c); absent classes get weight 0.
std::vector<double> inverse_frequency_weights(std::span<const data::Recording> recordings);

/// Trains in place and leaves the best-validation parameters in the model. Frozen
/// encoder tensors are never registered with the optimizer; their features are computed
/// once up front.
History train(model::Model<float>& model, std::span<const data::Recording> train_set,
              std::span<const data::Recording> validation_set, const TrainConfig& cfg);

/// Builds a Nano on the parent's frozen encoder and trains only its compact sequence
/// unit and classifier.
model::Model<float> train_nano(const model::Model<float>& parent,
                               std::span<const data::Recording> train_set,
                               std::span<const data::Recording> validation_set,
                               const TrainConfig& cfg, const model::ModelConfig& nano_cfg,
                               History* history = nullptr);

/// Same for a single linear classifier over mean-pooled frozen encoder features.
model::Model<float> train_linear_head(const model::Model<float>& parent,
                                      std::span<const data::Recording> train_set,
                                      std::span<const data::Recording> validation_set,
                                      const TrainConfig& cfg, const model::ModelConfig& head_cfg,
                                      History* history = nullptr);

struct RecordingOutput {
    std::vector<data::SleepStage> predicted; // one per frame
    std::vector<float> logits;               // frames x C, row-major
};

struct EvalResult {
    std::vector<RecordingOutput> recordings;
    double loss = 0.0; // mean cross-entropy over scored frames
    double accuracy = 0.0;
    std::size_t scored = 0;

    std::vector<data::SleepStage> all_predictions() const;
};

/// Sliding-window inference with stride 1; each frame is scored as the centre of its
/// window. Recordings are spread over up to `threads` workers (0 reads SOMNONET_THREADS,
/// default 1). Throws ConfigError on an empty set.
EvalResult evaluate(model::Model<float>& model, std::span<const data::Recording> recordings,
                    std::size_t threads = 0);

/// Per-chunk features [n, N, L] of a whole recording, eval mode, no graph.
nn::Tensor<float> recording_features(model::Model<float>& model, const data::Recording& rec);

/// Labels of all recordings concatenated.
std::vector<data::SleepStage> all_labels(std::span<const data::Recording> recordings);

/// Worker count from SOMNONET_THREADS (>= 1).
std::size_t thread_count_from_env();

} // namespace somnonet::train
