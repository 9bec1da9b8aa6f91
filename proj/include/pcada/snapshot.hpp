#pragma once

// ---------------------------------------------------------------------------
// Model snapshots (JSON, format "pcada-model", version 1).
//
//   architecture: {net: {dims: [...], activations: [...]}} for phi,
//                 classifier, encoder, decoder
//   tensors:      [{name, shape, values}] with names
//                 <net>.layer<i>.{weight,bias}[.momentum], prototypes,
//                 retained.level<l>
//   state:        flags, step counters, encoder freeze
//
// Doubles are written in shortest round-trip form, so a reload is bitwise.
// ---------------------------------------------------------------------------

#include <filesystem>

#include "json.hpp"

#include "pcada/engine.hpp"

namespace pcada {

nlohmann::json model_to_json(const PCAdaModel& model, const nlohmann::json& config_echo = {});
PCAdaModel model_from_json(const nlohmann::json& j);

void save_model(const std::filesystem::path& path, const PCAdaModel& model, const nlohmann::json& config_echo = {});
PCAdaModel load_model(const std::filesystem::path& path, nlohmann::json* config_echo = nullptr);

} // namespace pcada
