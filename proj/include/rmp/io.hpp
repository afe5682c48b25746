#pragma once

// JSON encoding of distributions: {"family": name, "params": {...}}.

#include "rmp/distributions.hpp"

#include "json.hpp"

namespace rmp {

nlohmann::json to_json(const Distribution& d);
/// Inverse of to_json; faults with std::invalid_argument on malformed input.
Distribution distribution_from_json(const nlohmann::json& j);

}  // namespace rmp
