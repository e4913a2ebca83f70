#pragma once

#include <string>
#include <utility>
#include <vector>

#include "modfl/nn.hpp"

namespace ModFL {

// Architecture identifiers accepted by build_arch, in canonical order.
const std::vector<std::string>& arch_ids();

bool is_known_arch(const std::string& arch_id);

// Constructs one of the built-in architectures. Every architecture funnels
// into a 256-wide embedding before the operation module, so operation
// parameters stay shape-compatible across all of them. op_layers counts
// trailing layers assigned to the operation module.
ModelSpec build_arch(const std::string& arch_id, std::size_t op_layers = 3);

// Splits a full parameter set at the model's module boundary.
std::pair<ParamSet, ParamSet> split_modules(const ModelSpec& spec, const ParamSet& params);

// Reassembles a full parameter set from its two modules. The result must
// match the model's template exactly.
ParamSet concat_modules(const ModelSpec& spec, const ParamSet& config,
                        const ParamSet& operation);

ParamSet config_template(const ModelSpec& spec);
ParamSet operation_template(const ModelSpec& spec);

// Verifies that every model's operation module has the same parameter
// layout, which sharing an operation group across architectures requires.
void check_operation_compatibility(const std::vector<ModelSpec>& specs);

}  // namespace ModFL
