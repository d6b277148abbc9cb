#include "somnonet/model/config.hpp"

#include "common/parse.hpp"
#include "somnonet/errors.hpp"

#include <sstream>

namespace somnonet::model {

using detail::parse_double;
using detail::parse_int;
using detail::parse_int_list;

std::string_view arch_name(Arch arch)
{
    switch (arch) {
    case Arch::somnonet:
        return "somnonet";
    case Arch::nano:
        return "nano";
    case Arch::linear_head:
        return "linear-head";
    }
    return "?";
}

Arch arch_from_name(std::string_view name)
{
    for (Arch a : {Arch::somnonet, Arch::nano, Arch::linear_head}) {
        if (arch_name(a) == name) {
            return a;
        }
    }
    throw ConfigError("unknown architecture \"" + std::string(name) +
                      "\" (expected somnonet, nano or linear-head)");
}

std::vector<MCFEMConfig> ModelConfig::blocks() const
{
    std::vector<MCFEMConfig> out;
    std::size_t in = 1;
    for (std::size_t i = 0; i < block_channels.size(); ++i) {
        MCFEMConfig b;
        b.in_ch = in;
        b.branch_ch = branch_channels.at(i);
        b.out_ch = block_channels[i];
        b.kernel_size = kernel_size;
        b.dilations = dilations;
        b.pool_window = pool_window;
        b.pool_stride = pool_stride;
        out.push_back(b);
        in = b.out_ch;
    }
    return out;
}

std::size_t ModelConfig::classifier_input() const
{
    switch (arch) {
    case Arch::somnonet:
        return 2 * global_hidden;
    case Arch::nano:
        return 2 * nano_hidden;
    case Arch::linear_head:
        return feature_dim;
    }
    return 0;
}

void validate(const ModelConfig& cfg)
{
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) {
            throw ConfigError(std::string(name) + " must be positive");
        }
    };
    positive(cfg.n_chunks, "n_chunks");
    positive(cfg.feature_dim, "feature_dim");
    positive(cfg.kernel_size, "kernel_size");
    positive(cfg.pool_window, "pool_window");
    positive(cfg.pool_stride, "pool_stride");
    positive(cfg.local_hidden, "local_hidden");
    positive(cfg.global_hidden, "global_hidden");
    positive(cfg.global_layers, "global_layers");
    positive(cfg.context_frames, "context_frames");
    positive(cfg.nano_hidden, "nano_hidden");
    positive(cfg.classifier_layers, "classifier_layers");
    if (cfg.n_classes != 5) {
        throw ConfigError("n_classes must be 5, got " + std::to_string(cfg.n_classes));
    }
    if (cfg.block_channels.empty()) {
        throw ConfigError("encoder needs at least one block");
    }
    if (cfg.branch_channels.size() != cfg.block_channels.size()) {
        throw ConfigError("branch_channels and block_channels differ in length");
    }
    if (cfg.dilations.empty()) {
        throw ConfigError("a block needs at least one branch");
    }
    for (std::size_t v : cfg.branch_channels) {
        positive(v, "branch_channels entry");
    }
    for (std::size_t v : cfg.block_channels) {
        positive(v, "block_channels entry");
    }
    for (std::size_t v : cfg.dilations) {
        positive(v, "dilation");
    }
    if (cfg.block_channels.back() != cfg.feature_dim) {
        throw ConfigError("feature_dim " + std::to_string(cfg.feature_dim) +
                          " differs from the last block width " +
                          std::to_string(cfg.block_channels.back()));
    }
    if (!(cfg.input_std > 0.0)) {
        throw ConfigError("input_std must be positive");
    }
}

namespace {

std::string join(const std::vector<std::size_t>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += (i ? "," : "") + std::to_string(values[i]);
    }
    return out;
}

} // namespace

std::string to_text(const ModelConfig& cfg)
{
    std::ostringstream out;
    out << "arch=" << arch_name(cfg.arch) << '\n'
        << "n_chunks=" << cfg.n_chunks << '\n'
        << "feature_dim=" << cfg.feature_dim << '\n'
        << "branch_channels=" << join(cfg.branch_channels) << '\n'
        << "block_channels=" << join(cfg.block_channels) << '\n'
        << "dilations=" << join(cfg.dilations) << '\n'
        << "kernel_size=" << cfg.kernel_size << '\n'
        << "pool_window=" << cfg.pool_window << '\n'
        << "pool_stride=" << cfg.pool_stride << '\n'
        << "local_hidden=" << cfg.local_hidden << '\n'
        << "global_hidden=" << cfg.global_hidden << '\n'
        << "global_layers=" << cfg.global_layers << '\n'
        << "context_frames=" << cfg.context_frames << '\n'
        << "n_classes=" << cfg.n_classes << '\n'
        << "nano_hidden=" << cfg.nano_hidden << '\n'
        << "classifier_layers=" << cfg.classifier_layers << '\n'
        << "input_mean=" << detail::format_double(cfg.input_mean) << '\n'
        << "input_std=" << detail::format_double(cfg.input_std) << '\n';
    return out.str();
}

void apply_setting(ModelConfig& cfg, std::string_view key, std::string_view value)
{
    using Size = std::size_t;
    if (key == "arch") {
        cfg.arch = arch_from_name(detail::trim(value));
    } else if (key == "n_chunks") {
        cfg.n_chunks = parse_int<Size>(key, value);
    } else if (key == "feature_dim") {
        cfg.feature_dim = parse_int<Size>(key, value);
    } else if (key == "branch_channels") {
        cfg.branch_channels = parse_int_list<Size>(key, value);
    } else if (key == "block_channels") {
        cfg.block_channels = parse_int_list<Size>(key, value);
    } else if (key == "dilations") {
        cfg.dilations = parse_int_list<Size>(key, value);
    } else if (key == "kernel_size") {
        cfg.kernel_size = parse_int<Size>(key, value);
    } else if (key == "pool_window") {
        cfg.pool_window = parse_int<Size>(key, value);
    } else if (key == "pool_stride") {
        cfg.pool_stride = parse_int<Size>(key, value);
    } else if (key == "local_hidden") {
        cfg.local_hidden = parse_int<Size>(key, value);
    } else if (key == "global_hidden") {
        cfg.global_hidden = parse_int<Size>(key, value);
    } else if (key == "global_layers") {
        cfg.global_layers = parse_int<Size>(key, value);
    } else if (key == "context_frames") {
        cfg.context_frames = parse_int<Size>(key, value);
    } else if (key == "n_classes") {
        cfg.n_classes = parse_int<Size>(key, value);
    } else if (key == "nano_hidden") {
        cfg.nano_hidden = parse_int<Size>(key, value);
    } else if (key == "classifier_layers") {
        cfg.classifier_layers = parse_int<Size>(key, value);
    } else if (key == "input_mean") {
        cfg.input_mean = parse_double(key, value);
    } else if (key == "input_std") {
        cfg.input_std = parse_double(key, value);
    } else {
        throw ConfigError("unknown model setting \"" + std::string(key) + "\"");
    }
}

ModelConfig config_from_text(std::string_view text)
{
    ModelConfig cfg;
    detail::for_each_setting(text, [&](std::string_view k, std::string_view v) {
        apply_setting(cfg, k, v);
    });
    validate(cfg);
    return cfg;
}

} // namespace somnonet::model
