#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deformnet/geometry/types.hpp"

namespace deformnet::harness {

using Json = nlohmann::json;

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

/// Named little-endian array inside a DFNE file.
struct NamedArray {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> bytes;

  static NamedArray f32(std::string name, std::vector<std::uint64_t> shape, std::span<const float> values);
  static NamedArray f64(std::string name, std::vector<std::uint64_t> shape, std::span<const double> values);
  std::uint64_t numel() const;
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
};

/// "DFNE", u32 version, u64 length + UTF-8 JSON metadata, then records
/// {u32 name length, name, u8 dtype, u8 rank, u64 dims, u64 byte length,
/// data} terminated by a zero name length.
struct DfneFile {
  Json metadata = Json::object();
  std::vector<NamedArray> arrays;

  bool has(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
};

inline constexpr std::uint32_t kDfneVersion = 1;

void write_dfne(const std::filesystem::path& path, const DfneFile& file);
DfneFile read_dfne(const std::filesystem::path& path);

/// One recorded trajectory. T actions, T + 1 observations.
struct Episode {
  Json metadata = Json::object();
  std::vector<std::vector<double>> actions;
  std::vector<std::vector<geom::RgbdImage>> frames;  // per step, per camera
  std::vector<geom::Points> particles;               // ground truth per step
  std::vector<double> costs;                         // true cost to goal per step

  std::size_t steps() const { return actions.size(); }
  /// Throws std::runtime_error on inconsistent step counts or frame sizes.
  void validate() const;
};

DfneFile to_dfne(const Episode& episode);
Episode episode_from_dfne(const DfneFile& file);
void write_episode(const std::filesystem::path& path, const Episode& episode);
Episode read_episode(const std::filesystem::path& path);

/// Particle set file (a DFNE file holding one "particles" array).
void write_particles(const std::filesystem::path& path, const geom::Points& points, const std::string& name);
geom::Points read_particles(const std::filesystem::path& path);

std::string sha256_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string file;  // relative to the dataset directory
  std::string sha256;
  std::size_t steps = 0;
  std::string goal;
  std::string provenance;  // "random" or "planned"
};

struct Manifest {
  std::vector<ManifestEntry> episodes;
  Json config = Json::object();
};

inline constexpr const char* kManifestName = "manifest.json";

void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& dir);
/// Recomputes every checksum and validates every episode; throws naming the
/// first bad file.
void verify_dataset(const std::filesystem::path& dir, const Manifest& manifest);

}  // namespace deformnet::harness
