#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace somnonet::model {

enum class Arch { somnonet, nano, linear_head };

std::string_view arch_name(Arch arch);
/// Throws ConfigError for an unknown name.
Arch arch_from_name(std::string_view name);

/// One multi-scale block: parallel dilated convolutions, each followed by batchnorm and
/// ReLU6, concatenated and fused by a 1x1 convolution, then max-pooled.
struct MCFEMConfig {
    std::size_t in_ch = 1;
    std::size_t branch_ch = 16;
    std::size_t out_ch = 16;
    std::size_t kernel_size = 3;
    std::vector<std::size_t> dilations{1, 3, 5};
    std::size_t pool_window = 2;
    std::size_t pool_stride = 2;
};

struct ModelConfig {
    Arch arch = Arch::somnonet;
    std::size_t n_chunks = 30;
    std::size_t feature_dim = 128; // L; equals the last block's out_ch
    std::vector<std::size_t> branch_channels{16, 24, 48};
    std::vector<std::size_t> block_channels{16, 24, 128};
    std::vector<std::size_t> dilations{1, 3, 5};
    std::size_t kernel_size = 3;
    std::size_t pool_window = 2;
    std::size_t pool_stride = 2;
    std::size_t local_hidden = 64;
    std::size_t global_hidden = 60;
    std::size_t global_layers = 5;
    std::size_t context_frames = 9; // M
    std::size_t n_classes = 5;
    std::size_t nano_hidden = 15;
    std::size_t classifier_layers = 1;
    // Input standardisation applied to raw samples before the encoder.
    double input_mean = 0.0;
    double input_std = 1.0;

    std::vector<MCFEMConfig> blocks() const;
    /// Width of the vector the classifier consumes for this architecture.
    std::size_t classifier_input() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError on a non-positive size, C != 5, mismatched channel lists, or
/// feature_dim differing from the last block width.
void validate(const ModelConfig& cfg);

/// key=value lines, one per field; doubles are printed round-trip exact.
std::string to_text(const ModelConfig& cfg);
/// Unknown keys and malformed values throw ConfigError.
ModelConfig config_from_text(std::string_view text);
void apply_setting(ModelConfig& cfg, std::string_view key, std::string_view value);

} // namespace somnonet::model
