#include "somnonet/model/io.hpp"

#include "common/parse.hpp"
#include "somnonet/errors.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace somnonet::model {

std::filesystem::path config_path(const std::filesystem::path& checkpoint)
{
    return std::filesystem::path(checkpoint.string() + ".cfg");
}

nn::TensorMap to_tensor_map(const Model<float>& model)
{
    nn::TensorMap out;
    for (const auto& nt : model.tensors()) {
        const auto data = nt.tensor.data();
        out.emplace(nt.name,
                    nn::StoredTensor{nt.tensor.shape(), std::vector<float>(data.begin(), data.end())});
    }
    return out;
}

void load_tensor_map(Model<float>& model, const nn::TensorMap& tensors)
{
    const auto named = model.tensors();
    if (named.size() != tensors.size()) {
        throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, the model expects " + std::to_string(named.size()));
    }
    for (const auto& nt : named) {
        const auto it = tensors.find(nt.name);
        if (it == tensors.end()) {
            throw ConfigError("checkpoint lacks tensor " + nt.name);
        }
        if (it->second.shape != nt.tensor.shape()) {
            throw ConfigError("tensor " + nt.name + " has shape " +
                              nn::shape_string(it->second.shape) + ", the model expects " +
                              nn::shape_string(nt.tensor.shape()));
        }
        auto dst = nn::Tensor<float>(nt.tensor).data();
        std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
    }
}

void save_model(const Model<float>& model, const std::filesystem::path& path)
{
    nn::write_snwt(to_tensor_map(model), path);
    const auto cfg = config_path(path);
    std::ofstream out(cfg, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + cfg.string() + " for writing");
    }
    out << to_text(model.config) << "encoder_frozen=" << (model.encoder_frozen ? 1 : 0) << '\n';
    if (!out) {
        throw std::runtime_error("write failed for " + cfg.string());
    }
}

Model<float> load_model(const std::filesystem::path& path)
{
    const auto cfg_file = config_path(path);
    std::ifstream in(cfg_file);
    if (!in) {
        throw std::runtime_error("cannot open model config " + cfg_file.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();

    ModelConfig cfg;
    bool frozen = false;
    detail::for_each_setting(buffer.str(), [&](std::string_view k, std::string_view v) {
        if (k == "encoder_frozen") {
            frozen = detail::parse_bool(k, v);
        } else {
            apply_setting(cfg, k, v);
        }
    });
    validate(cfg);

    Model<float> model = build_model<float>(cfg, 0);
    load_tensor_map(model, nn::read_snwt(path));
    if (frozen) {
        model.freeze_encoder();
    } else if (model.encoder_frozen) {
        model.encoder_frozen = false;
        for (auto& nt : model.tensors()) {
            if (nt.group == Group::encoder && !nt.buffer) {
                nt.tensor.set_requires_grad(true);
            }
        }
    }
    return model;
}

} // namespace somnonet::model
