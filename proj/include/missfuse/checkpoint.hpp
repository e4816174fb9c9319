#pragma once

// Versioned binary checkpoint: magic + version, an embedded key=value model
// description, a shape table, and a raw float32 parameter payload in
// visit_params order.

#include <string>

#include "missfuse/model.hpp"

namespace missfuse {

void save_checkpoint(const std::string& path, ModelParams<float>& params);
void save_checkpoint(const std::string& path, ModelParams<double>& params);

struct LoadedCheckpoint {
  ModelConfig config;
  std::vector<diff::Tensor<float>> tensors;  // visit_params order
  std::vector<std::string> names;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Rebuilds typed parameters from a loaded checkpoint.
template <class S>
ModelParams<S> params_from_checkpoint(const LoadedCheckpoint& ckpt) {
  auto params = make_model_params<S>(ckpt.config);
  size_t idx = 0;
  visit_params(params, [&](diff::Param<S>& p) {
    if (idx >= ckpt.tensors.size() || ckpt.names[idx] != p.name ||
        ckpt.tensors[idx].shape != p.value.shape) {
      throw DataError("checkpoint does not match model layout at parameter " +
                      p.name);
    }
    p.value = ckpt.tensors[idx].template cast<S>();
    ++idx;
  });
  if (idx != ckpt.tensors.size()) {
    throw DataError("checkpoint has extra parameters");
  }
  return params;
}

std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

}  // namespace missfuse
