#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "enap/core.hpp"

namespace enap {

using Json = nlohmann::ordered_json;

Json vec_to_json(const Vec& v);
Vec vec_from_json(const Json& j);

// Trajectory files are JSON Lines: one {"traj_id", "steps"} object per line.
std::string dataset_to_jsonl(const Dataset& ds);
Dataset dataset_from_jsonl(const std::string& text);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Keys are emitted in a fixed order and arrays sorted so that equal machines
// serialize to identical bytes.
Json pmm_to_json(const Pmm& pmm);
Pmm pmm_from_json(const Json& j);
void save_pmm(const Pmm& pmm, const std::filesystem::path& path);
Pmm load_pmm(const std::filesystem::path& path);

std::string pmm_to_dot(const Pmm& pmm);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace enap
