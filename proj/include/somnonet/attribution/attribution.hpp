#pragma once

#include "somnonet/data/recording.hpp"
#include "somnonet/model/model.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace somnonet::attribution {

enum class Method { voting, feature_forward, feature_backward, sequence };

/// Short names used on the command line and in file names: voting, forward, backward,
/// sequence.
std::string_view method_name(Method method);
/// Throws ConfigError for an unknown name.
Method method_from_name(std::string_view name);

/// Per-chunk contribution scores for one epoch's prediction.
struct AttributionVector {
    std::vector<double> scores;
    Method method = Method::voting;
    data::SleepStage predicted = data::SleepStage::W;
    std::size_t epoch_index = 0;
};

/// Per-feature contributions, rows x cols (rows = 1 for a single vector).
struct DecisionVector {
    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

struct VotingResult {
    std::vector<double> chunk_logits; // N x C
    std::vector<double> frame_logits; // C, mean of the chunk rows
    data::SleepStage predicted = data::SleepStage::W;
    AttributionVector attribution; // c_i[pred] / N
};

/// c_i = Classifier(f_i) for every chunk, c = mean_i c_i, y = argmax c.
/// f_set: [N, L]. The model's classifier must accept L-dimensional input.
template <class T>
VotingResult voting_head(const model::Model<T>& head, const nn::Tensor<T>& f_set);

/// Encodes one epoch and applies voting_head.
VotingResult voting_predict(model::Model<float>& head, std::span<const float> epoch);

struct ForwardResult {
    DecisionVector global; // f_global (.) W[pred], length L
    AttributionVector attribution; // s_i = <f_i, W[pred]> / N
    double logit = 0.0;   // c[pred] including the bias
    double bias = 0.0;    // b[pred]
};

/// Requires a single linear classifier over L-dimensional mean-pooled features; any
/// other head throws UsageError pointing to the backward head.
template <class T>
ForwardResult feature_forward(const model::Model<T>& head, const nn::Tensor<T>& f_set,
                              data::SleepStage pred);

/// Decision function mapping f_set [N, L] to logits [C].
template <class T>
using HeadFunction = std::function<nn::Tensor<T>(const nn::Tensor<T>&)>;

/// Logits of the model's own frame head over f_set: for a linear head the classifier over
/// the chunk mean, otherwise the sequence modules over a one-frame window.
template <class T>
HeadFunction<T> frame_head(const model::Model<T>& model);

/// G = d c[pred] / d f_set by reverse mode; scores[i] = mean over L of f_set[i] * G[i].
/// `negate_gradient` negates G. Throws UsageError if the head output does not depend on f_set.
template <class T>
AttributionVector feature_backward(const HeadFunction<T>& head, const nn::Tensor<T>& f_set,
                                   data::SleepStage pred, bool negate_gradient = false);

/// Gradient attribution through the full window model: window_features [M, N, L], the
/// gradient is taken with respect to frame `t` only, for the predicted class of frame t.
/// Throws NumericError if the model holds non-finite parameters.
template <class T>
AttributionVector sequence_attribution(const model::Model<T>& model,
                                       const nn::Tensor<T>& window_features, std::size_t t,
                                       bool negate_gradient = false);

/// Runs `method` for one epoch of a recording, encoding what the method needs.
/// Throws UsageError when the method does not fit the model's head.
AttributionVector attribute_epoch(model::Model<float>& model, const data::Recording& rec,
                                  std::size_t epoch, Method method, bool negate_gradient = false);

/// Min-max scaling to [0, 1]; a constant vector maps to 0.5 everywhere.
std::vector<double> normalize_scores(std::span<const double> scores);

/// chunk_index,start_sample,end_sample,score,normalized_score
std::string heatmap_csv(const AttributionVector& att, std::size_t samples_per_chunk);

/// EEG trace over a per-chunk band, darker where the normalised score is higher.
std::string heatmap_svg(const AttributionVector& att, std::span<const float> epoch);

/// Writes <recording>_<epoch>_<method>.csv and .svg into `dir`; returns the CSV path.
std::filesystem::path export_heatmap(const AttributionVector& att, std::span<const float> epoch,
                                     const std::filesystem::path& dir,
                                     const std::string& recording_name);

/// Chunks ranked by score, highest first, ties to the lowest index.
std::vector<std::size_t> top_chunks(std::span<const double> scores, std::size_t k);

/// Intersection over union between the samples of the top-k chunks and the samples
/// covered by spans carrying `tag`.
double localization_iou(std::span<const double> scores, std::size_t k,
                        std::span<const data::RhythmSpan> spans, std::string_view tag,
                        std::size_t samples_per_epoch);

} // namespace somnonet::attribution
