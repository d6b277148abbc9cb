#pragma once

#include "somnonet/model/model.hpp"
#include "somnonet/nn/checkpoint.hpp"

#include <filesystem>

namespace somnonet::model {

nn::TensorMap to_tensor_map(const Model<float>& model);
/// The map must hold exactly the model's tensor names with matching shapes.
void load_tensor_map(Model<float>& model, const nn::TensorMap& tensors);

/// Writes `path` (SNWT) and the config sidecar `path` + ".cfg".
void save_model(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_model(const std::filesystem::path& path);

std::filesystem::path config_path(const std::filesystem::path& checkpoint);

} // namespace somnonet::model
