#pragma once

// JSON helpers shared between translation units; not part of the public API.

#include "isoprune/model_ir.hpp"
#include "json.hpp"

namespace isoprune::detail {

nlohmann::json params_to_json(const NodeSpec& node);

}  // namespace isoprune::detail
