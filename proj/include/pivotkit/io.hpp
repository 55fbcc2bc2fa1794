#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pivotkit/cito.hpp"

// Keep nlohmann out of the other headers; io owns (de)serialization.
#include <json.hpp>

namespace pk::io {

using nlohmann::json;

inline constexpr const char* kToolVersion = "pivotkit 0.1.0";

/// FNV-1a 64-bit over bytes; stable across platforms for manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

/// Writes to <path>.tmp then renames, so readers never see partial files.
void atomic_write(const std::string& path, const std::string& content);
void atomic_write_binary(const std::string& path, const std::vector<char>& content);
std::string read_file(const std::string& path);

// --- model container ------------------------------------------------------
// "PKMODEL1\n" magic, uint64 header length, JSON header, then the raw
// little-endian float32 blobs in header["blobs"] order.

struct ModelFile {
  json header;
  std::map<std::string, Eigen::VectorXf> blobs;
};

void save_model(const std::string& path, const json& header,
                const std::vector<std::pair<std::string, const Eigen::VectorXf*>>& blobs);
ModelFile load_model(const std::string& path);

// --- demonstration datasets -------------------------------------------------
// JSON-lines: one header record, then one record per demonstration. Values
// round-trip bit-exactly (shortest-representation doubles).

json task_to_json(const cito::TaskSpec& task);
cito::TaskSpec task_from_json(const json& j);
json params_to_json(const scene::PhysicalParams& p);
scene::PhysicalParams params_from_json(const json& j);

void save_demos(const std::string& path, const cito::DemoDataset& ds);
cito::DemoDataset load_demos(const std::string& path);

// --- numeric text outputs ---------------------------------------------------

/// Two-column learning curve: env_steps success_rate.
void save_curve(const std::string& path, const std::vector<std::pair<long, double>>& points);
std::vector<std::pair<long, double>> load_curve(const std::string& path);

/// Comma-separated report table with a header row.
void save_csv(const std::string& path, const std::vector<std::string>& columns,
              const std::vector<std::vector<std::string>>& rows);

}  // namespace pk::io
