#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "fineprune/network.hpp"

namespace fineprune {

/// Checkpoint layout:
///
///   "FPN1"                      4 bytes
///   header length               uint64, little-endian
///   header                      UTF-8 JSON (model description, tensor table,
///                               optional prune mask)
///   tensor payload              float64 little-endian, tensors in table order
///
/// The header is written with sorted keys, so identical inputs produce
/// identical bytes.
struct Checkpoint {
    ModelSpec spec;
    Parameters params;
    std::optional<PruneMask> mask;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json model_to_json(const ModelSpec& spec);
ModelSpec model_from_json(const nlohmann::json& j);

std::string encode_checkpoint(const ModelSpec& spec, const Parameters& params,
                              const PruneMask* mask = nullptr);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec,
                     const Parameters& params, const PruneMask* mask = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fineprune
