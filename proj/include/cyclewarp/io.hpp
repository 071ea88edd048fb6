#pragma once

// On-disk formats:
//   frames, error maps  16-bit PNG (gray or RGB)
//   depth               PFM, little-endian (scale -1.0), bottom-up rows;
//                       invalid pixels are stored as 0
//   checkpoints         "CWCK" + u32 version + u64 index length + JSON index,
//                       followed by little-endian float64 arrays
//   scene archives      one directory per scene plus manifest.json

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclewarp/core.hpp"
#include "cyclewarp/optim.hpp"
#include "cyclewarp/synth.hpp"

namespace cyclewarp {

namespace fs = std::filesystem;
using nlohmann::json;

/// Writes via a temporary sibling and renames into place.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

std::string encode_pfm(const DepthMap& depth);
DepthMap decode_pfm(const std::string& bytes);
void write_pfm(const fs::path& path, const DepthMap& depth);
DepthMap read_pfm(const fs::path& path);

std::string encode_png16(const Image& image);
Image decode_png16(const std::string& bytes);
void write_png16(const fs::path& path, const Image& image);
Image read_png16(const fs::path& path);

inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::vector<NamedArray> arrays;
  json meta = json::object();

  const NamedArray& get(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

Checkpoint state_to_checkpoint(const ParamState& state);
ParamState checkpoint_to_state(const Checkpoint& ckpt);

json to_json(const Twist& t);
Twist twist_from_json(const json& j);
json to_json(const PoseSE3& p);
PoseSE3 pose_from_json(const json& j);
json to_json(const Intrinsics& k);
Intrinsics intrinsics_from_json(const json& j);
json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const json& j);

/// Writes source.png, target.png, depth_source.pfm, depth_target.pfm and
/// scene.json into `dir`; returns file name -> sha256.
json save_scene(const fs::path& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const fs::path& dir);

}  // namespace cyclewarp
