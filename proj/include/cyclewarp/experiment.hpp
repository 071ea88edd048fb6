#pragma once

// Batch experiment driver behind the command-line tool.
//
// Output layout under the configured output directory:
//   scenes/<surface>_<seed>/       scene archives + scenes/manifest.json
//   perturbed/<surface>_<seed>/    perturbed archives + perturbed/manifest.json
//   runs/<surface>_<seed>/         checkpoints, loss_curve.csv, train.json
//   eval/                          report.json, error maps
//   compare/                       table.csv, per_seed.csv, report.json, maps

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclewarp/eval.hpp"
#include "cyclewarp/optim.hpp"
#include "cyclewarp/synth.hpp"

namespace cyclewarp {

namespace fs = std::filesystem;
using nlohmann::json;

enum class PerturbationMode { kClean, kGlobal, kGlobalLocal };
std::string to_string(PerturbationMode m);
PerturbationMode perturbation_mode_from_string(const std::string& s);

struct ExperimentConfig {
  std::vector<SurfaceKind> surfaces{SurfaceKind::kFrontoParallel, SurfaceKind::kInclined,
                                    SurfaceKind::kBumps};
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int resolution = 64;
  TextureKind texture = TextureKind::kValueNoise;
  PerturbationMode perturbation = PerturbationMode::kGlobalLocal;
  PerturbationSpec perturbation_spec;  // seed field is derived per scene
  TrainConfig train;
  fs::path out = "runs";
  int jobs = 0;  // 0: one worker per logical core

  json to_json() const;
  static ExperimentConfig from_json(const json& j);
  void validate() const;
};

/// Defaults overlaid with the file (if any), then with `key=value`
/// overrides; values are parsed as JSON when possible, otherwise as strings.
ExperimentConfig load_config(const fs::path* file, const std::vector<std::string>& overrides);
void apply_override(json& doc, const std::string& assignment);

std::string scene_name(SurfaceKind surface, uint64_t seed);
SceneSpec scene_spec_for(const ExperimentConfig& cfg, SurfaceKind surface, uint64_t seed);
/// Seeded per scene so every scene gets its own k and spots.
PerturbationSpec perturbation_for(const ExperimentConfig& cfg, PerturbationMode mode,
                                  uint64_t seed);
/// Source frame after the perturbation; the target frame is never touched.
Image perturbed_source(const SyntheticScene& scene, const ExperimentConfig& cfg,
                       PerturbationMode mode, uint64_t seed);

struct FrameMetrics {
  MetricsReport source;
  MetricsReport target;
};
FrameMetrics evaluate_state(const ParamState& state, const SyntheticScene& scene);
json to_json(const MetricsReport& m);

/// Rotation angle (rad) and translation norm of compose(T_t->s, T_s->t).
json pose_cycle_residual(const ParamState& state);

/// Runs `fn(i)` for i in [0, n) on `jobs` workers; rethrows the first error.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

void cmd_gen(const ExperimentConfig& cfg);
void cmd_perturb(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_compare(const ExperimentConfig& cfg);

}  // namespace cyclewarp
