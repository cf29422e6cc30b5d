#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include "ict/params.hpp"

namespace ict {

// Parameter checkpoint: a JSON manifest (name -> shape, plus caller
// metadata) next to a flat little-endian float64 blob. Round-trips are
// bit-exact.
//
// base path "foo" writes "foo.json" and "foo.bin".
void save_checkpoint(const std::filesystem::path& base, const ParamStore& params,
                     const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());

struct Checkpoint {
    ParamStore params;
    nlohmann::ordered_json meta;
};

Checkpoint load_checkpoint(const std::filesystem::path& base);

}  // namespace ict
