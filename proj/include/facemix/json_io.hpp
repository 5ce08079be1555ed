#pragma once

#include <filesystem>

#include <json.hpp>

#include "facemix/landmark_features.hpp"

namespace facemix {

nlohmann::json descriptor_to_json(const FeatureDescriptor& d);
FeatureDescriptor descriptor_from_json(const nlohmann::json& j);

/// {"triangles": [[i,j,k], ...], "hull_size": h}
nlohmann::json topology_to_json(const Triangulation& t);
Triangulation topology_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace facemix
