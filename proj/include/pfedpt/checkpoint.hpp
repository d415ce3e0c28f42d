#pragma once

#include <string>

#include "pfedpt/param_vector.hpp"
#include "pfedpt/prompt.hpp"

namespace pfedpt {

/// Backbone checkpoint: magic, architecture tag, count, then float32
/// little-endian values in canonical order.
void save_model_checkpoint(const std::string& path, const ParameterVector<float>& pv,
                           const std::string& spec_tag);

struct ModelCheckpoint {
  std::string spec_tag;
  VectorX<float> values;
};

ModelCheckpoint load_model_checkpoint(const std::string& path);

/// Prompt checkpoint: spec fields plus the masked delta values in
/// row-major mask order, float32 little-endian.
void save_prompt_checkpoint(const std::string& path, const PromptState<float>& state);

PromptState<float> load_prompt_checkpoint(const std::string& path);

}  // namespace pfedpt
