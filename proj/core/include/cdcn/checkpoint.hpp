#pragma once

#include <memory>
#include <string>

#include "cdcn/model.hpp"

namespace cdcn {

// Binary container: magic "CDCNCKPT", u32 version, u32 JSON header length,
// JSON header (model config + tensor directory), float32 payload holding
// every learnable parameter and batchnorm running buffer.
void save_checkpoint(const std::string& path, Model& model);

// Reads only the stored model configuration.
ModelConfig read_checkpoint_config(const std::string& path);

// Rebuilds the model from the stored config and loads every tensor,
// validating names and shapes against the rebuilt model.
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace cdcn
