#pragma once

#include "somnonet/model/config.hpp"
#include "somnonet/nn/layers.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace somnonet::model {

enum class Group { encoder, sequence, classifier };

std::string_view group_name(Group group);

template <class T>
struct McfemBlock {
    MCFEMConfig config;
    std::vector<nn::Conv1dParams<T>> branch;
    std::vector<nn::BatchNormParams<T>> branch_bn;
    nn::Conv1dParams<T> fuse;
    nn::BatchNormParams<T> fuse_bn;
};

template <class T>
struct BiGruParams {
    nn::GruParams<T> fwd;
    nn::GruParams<T> bwd;
};

template <class T>
struct NamedTensor {
    std::string name;
    nn::Tensor<T> tensor;
    Group group;
    bool buffer = false; // batchnorm running statistics, not trained
};

/// SomnoNet: encoder -> local Bi-GRU over the chunks of a frame (mean over chunk positions)
/// -> stacked global Bi-GRU over the frames of a window -> classifier.
/// Nano: encoder -> one compact Bi-GRU over all chunks of the window in frame-major order
/// (per-frame mean over its chunk positions) -> classifier.
/// Linear head: encoder -> mean over chunks -> classifier, frame by frame.
template <class T>
struct Model {
    ModelConfig config;
    std::vector<McfemBlock<T>> encoder;
    std::optional<BiGruParams<T>> local;
    std::vector<BiGruParams<T>> global;
    std::optional<BiGruParams<T>> compact;
    std::vector<nn::LinearParams<T>> classifier;
    bool encoder_frozen = false;

    /// Every tensor in lexicographic name order, buffers included.
    std::vector<NamedTensor<T>> tensors() const;
    /// Tensors the optimizer updates: non-buffer tensors outside frozen groups.
    std::vector<nn::Tensor<T>> trainable() const;

    /// Marks encoder tensors as not requiring gradients; the encoder then always runs
    /// batchnorm in eval mode, so its tensors never change.
    void freeze_encoder();
};

template <class T>
Model<T> build_somnonet(const ModelConfig& cfg, std::uint64_t seed);

/// Copies the parent's encoder (frozen) and adds a fresh compact Bi-GRU and classifier.
template <class T>
Model<T> build_nano(const Model<T>& parent, ModelConfig cfg, std::uint64_t seed);

/// Copies the parent's encoder (frozen) and adds a fresh classifier over mean-pooled
/// chunk features.
template <class T>
Model<T> build_linear_head(const Model<T>& parent, ModelConfig cfg, std::uint64_t seed);

/// Fresh model of cfg.arch, used to rebuild a checkpoint before loading values.
template <class T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Standardised chunk tensor [F*N, 1, S/N] for F epochs of S samples.
template <class T>
nn::Tensor<T> chunk_batch(const ModelConfig& cfg, std::span<const std::span<const float>> epochs);

/// chunks [F*N, 1, S/N] -> per-chunk features f_rep [F, N, L].
template <class T>
nn::Tensor<T> encode(Model<T>& model, const nn::Tensor<T>& chunks, nn::Mode mode);

/// features [F, N, L]; `frames` lists B windows of `window_len` row indices into F.
/// Returns logits [B, window_len, C].
template <class T>
nn::Tensor<T> decode(const Model<T>& model, const nn::Tensor<T>& features,
                     std::span<const std::size_t> frames, std::size_t window_len);

/// Classifier stack over the last axis; ReLU6 between layers.
template <class T>
nn::Tensor<T> classify(const Model<T>& model, const nn::Tensor<T>& x);

/// Logits [M, C] for one window of consecutive epochs, eval mode.
template <class T>
nn::Tensor<T> forward_window(Model<T>& model, std::span<const std::span<const float>> epochs);

struct GroupCount {
    Group group;
    std::size_t count = 0;
    bool frozen = false;
};

struct ParamReport {
    std::vector<GroupCount> groups;

    std::size_t total() const;
    std::size_t trainable() const;
    /// Zero when the group is absent.
    std::size_t group(Group g) const;
};

/// Element counts of trainable-kind tensors (batchnorm running statistics excluded).
template <class T>
ParamReport param_report(const Model<T>& model);

template <class T>
ParamReport param_report(std::span<const NamedTensor<T>> tensors, bool encoder_frozen = false);

/// small.total() / large.total().
double compression_ratio(const ParamReport& small, const ParamReport& large);

} // namespace somnonet::model
