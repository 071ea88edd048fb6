#include "cyclewarp/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cyclewarp/io.hpp"

namespace cyclewarp {

namespace {

constexpr const char* kReportFormat = "cyclewarp-report";
constexpr int kReportVersion = 1;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json train_to_json(const TrainConfig& t) {
  return {{"warmup_steps", t.warmup_steps},
          {"followup_steps", t.followup_steps},
          {"lr_warmup", t.lr_warmup},
          {"lr_followup", t.lr_followup},
          {"momentum", t.momentum},
          {"depth_lr_scale", t.depth_lr_scale},
          {"rotation_lr_scale", t.rotation_lr_scale},
          {"translation_lr_scale", t.translation_lr_scale},
          {"ema_alpha", t.ema_alpha},
          {"ema_cadence", t.ema_cadence},
          {"use_cycle", t.use_cycle},
          {"use_stm", t.use_stm},
          {"use_ema", t.use_ema},
          {"use_pcp", t.use_pcp},
          {"pcp_weight", t.pcp_weight},
          {"ssim_alpha", t.ssim_alpha},
          {"warmup_compare", t.warmup_compare},
          {"symmetric", t.symmetric},
          {"nominal_depth", t.nominal_depth},
          {"grid_stride", t.grid_stride}};
}

template <class T>
void read_field(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  read_field(j, "warmup_steps", t.warmup_steps);
  read_field(j, "followup_steps", t.followup_steps);
  read_field(j, "lr_warmup", t.lr_warmup);
  read_field(j, "lr_followup", t.lr_followup);
  read_field(j, "momentum", t.momentum);
  read_field(j, "depth_lr_scale", t.depth_lr_scale);
  read_field(j, "rotation_lr_scale", t.rotation_lr_scale);
  read_field(j, "translation_lr_scale", t.translation_lr_scale);
  read_field(j, "ema_alpha", t.ema_alpha);
  read_field(j, "ema_cadence", t.ema_cadence);
  read_field(j, "use_cycle", t.use_cycle);
  read_field(j, "use_stm", t.use_stm);
  read_field(j, "use_ema", t.use_ema);
  read_field(j, "use_pcp", t.use_pcp);
  read_field(j, "pcp_weight", t.pcp_weight);
  read_field(j, "ssim_alpha", t.ssim_alpha);
  read_field(j, "warmup_compare", t.warmup_compare);
  read_field(j, "symmetric", t.symmetric);
  read_field(j, "nominal_depth", t.nominal_depth);
  read_field(j, "grid_stride", t.grid_stride);
  return t;
}

// Rejects keys the defaults do not know about, so a typo in --set fails
// loudly instead of being ignored.
void check_known_keys(const json& doc, const json& reference, const std::string& prefix) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    const json& ref = reference.at(it.key());
    if (ref.is_object() && it->is_object()) check_known_keys(*it, ref, path);
  }
}

template <class T>
T get_or_throw(const json& j, const char* what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

struct SceneJob {
  SurfaceKind surface;
  uint64_t seed;
  std::string name;
};

std::vector<SceneJob> scene_jobs(const ExperimentConfig& cfg) {
  std::vector<SceneJob> jobs;
  for (SurfaceKind s : cfg.surfaces) {
    for (uint64_t seed : cfg.seeds) jobs.push_back({s, seed, scene_name(s, seed)});
  }
  return jobs;
}

SyntheticScene load_scene_or_explain(const fs::path& dir) {
  if (!fs::exists(dir / "scene.json")) {
    throw IoError("scene archive " + dir.string() + " not found (run `gen` first)");
  }
  return load_scene(dir);
}

std::string csv_double(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::string curve_csv(const TrainingCurve& curve) {
  std::ostringstream ss;
  ss << "step,phase,loss,photometric,perception,valid_pixels,ema_updated\n";
  for (size_t i = 0; i < curve.steps.size(); ++i) {
    const StepStats& s = curve.steps[i];
    ss << i << ',' << curve.phase[i] << ',' << csv_double(s.loss) << ','
       << csv_double(s.photometric) << ',' << csv_double(s.perception) << ',' << s.valid_pixels
       << ',' << (s.ema_updated ? 1 : 0) << '\n';
  }
  return ss.str();
}

Checkpoint make_checkpoint(const ParamState& state, const std::string& phase,
                           const std::string& scene) {
  Checkpoint c = state_to_checkpoint(state);
  c.meta["phase"] = phase;
  c.meta["scene"] = scene;
  return c;
}

json metrics_pair_json(const FrameMetrics& m) {
  return {{"source", to_json(m.source)},
          {"target", to_json(m.target)},
          {"abs_rel", m.target.abs_rel}};
}

}  // namespace

std::string to_string(PerturbationMode m) {
  switch (m) {
    case PerturbationMode::kClean: return "clean";
    case PerturbationMode::kGlobal: return "global";
    case PerturbationMode::kGlobalLocal: return "global+local";
  }
  return "clean";
}

PerturbationMode perturbation_mode_from_string(const std::string& s) {
  if (s == "clean") return PerturbationMode::kClean;
  if (s == "global") return PerturbationMode::kGlobal;
  if (s == "global+local") return PerturbationMode::kGlobalLocal;
  throw ConfigError("unknown perturbation mode '" + s + "' (clean, global, global+local)");
}

json ExperimentConfig::to_json() const {
  json surf = json::array();
  for (SurfaceKind s : surfaces) surf.push_back(to_string(s));
  const PerturbationSpec& p = perturbation_spec;
  return {{"scenes",
           {{"surfaces", surf},
            {"seeds", seeds},
            {"resolution", resolution},
            {"texture", to_string(texture)}}},
          {"perturbation",
           {{"mode", to_string(perturbation)},
            {"global_k", p.global_k ? json(*p.global_k) : json(nullptr)},
            {"spot_count", p.spot_count},
            {"spot_sigma_min", p.spot_sigma_min},
            {"spot_sigma_max", p.spot_sigma_max},
            {"spot_amplitude_min", p.spot_amplitude_min},
            {"spot_amplitude_max", p.spot_amplitude_max},
            {"seed", p.seed}}},
          {"train", train_to_json(train)},
          {"out", out.string()},
          {"jobs", jobs}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  check_known_keys(j, c.to_json(), "");
  if (j.contains("scenes")) {
    const json& s = j.at("scenes");
    if (s.contains("surfaces")) {
      c.surfaces.clear();
      for (const json& v : s.at("surfaces")) {
        try {
          c.surfaces.push_back(surface_from_string(get_or_throw<std::string>(v, "scenes.surfaces")));
        } catch (const MisuseError& e) {
          throw ConfigError(e.what());
        }
      }
    }
    if (s.contains("seeds")) c.seeds = get_or_throw<std::vector<uint64_t>>(s.at("seeds"), "scenes.seeds");
    read_field(s, "resolution", c.resolution);
    if (s.contains("texture")) {
      try {
        c.texture = texture_from_string(get_or_throw<std::string>(s.at("texture"), "scenes.texture"));
      } catch (const MisuseError& e) {
        throw ConfigError(e.what());
      }
    }
  }
  if (j.contains("perturbation")) {
    const json& p = j.at("perturbation");
    if (p.contains("mode")) {
      c.perturbation = perturbation_mode_from_string(
          get_or_throw<std::string>(p.at("mode"), "perturbation.mode"));
    }
    if (p.contains("global_k")) {
      if (p.at("global_k").is_null()) {
        c.perturbation_spec.global_k.reset();
      } else {
        c.perturbation_spec.global_k = get_or_throw<double>(p.at("global_k"), "perturbation.global_k");
      }
    }
    read_field(p, "spot_count", c.perturbation_spec.spot_count);
    read_field(p, "spot_sigma_min", c.perturbation_spec.spot_sigma_min);
    read_field(p, "spot_sigma_max", c.perturbation_spec.spot_sigma_max);
    read_field(p, "spot_amplitude_min", c.perturbation_spec.spot_amplitude_min);
    read_field(p, "spot_amplitude_max", c.perturbation_spec.spot_amplitude_max);
    read_field(p, "seed", c.perturbation_spec.seed);
  }
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("out")) c.out = get_or_throw<std::string>(j.at("out"), "out");
  read_field(j, "jobs", c.jobs);
  return c;
}

void ExperimentConfig::validate() const {
  if (surfaces.empty()) throw ConfigError("scenes.surfaces must not be empty");
  if (seeds.empty()) throw ConfigError("scenes.seeds must list at least one seed");
  if (resolution < 16) throw ConfigError("scenes.resolution must be >= 16");
  if (jobs < 0) throw ConfigError("jobs must be >= 0");
  const PerturbationSpec& p = perturbation_spec;
  if (p.global_k && !(*p.global_k > 0.0)) throw ConfigError("perturbation.global_k must be > 0");
  if (p.spot_count < 0) throw ConfigError("perturbation.spot_count must be >= 0");
  if (!(p.spot_sigma_min > 0.0) || p.spot_sigma_max < p.spot_sigma_min) {
    throw ConfigError("perturbation spot sigma range must be positive and ordered");
  }
  if (p.spot_amplitude_max < p.spot_amplitude_min) {
    throw ConfigError("perturbation spot amplitude range must be ordered");
  }
  train.validate();
}

void apply_override(json& doc, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form dotted.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos
                                                                         : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ExperimentConfig load_config(const fs::path* file, const std::vector<std::string>& overrides) {
  json doc = ExperimentConfig{}.to_json();
  if (file) {
    json user;
    try {
      user = json::parse(read_file(*file));
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + file->string() + " is not valid JSON: " + e.what());
    }
    if (!user.is_object()) throw ConfigError("config root must be a JSON object");
    doc.merge_patch(user);
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  ExperimentConfig cfg = ExperimentConfig::from_json(doc);
  cfg.validate();
  return cfg;
}

std::string scene_name(SurfaceKind surface, uint64_t seed) {
  return to_string(surface) + "_" + std::to_string(seed);
}

SceneSpec scene_spec_for(const ExperimentConfig& cfg, SurfaceKind surface, uint64_t seed) {
  SceneSpec spec = default_scene_spec(surface, seed, cfg.resolution);
  spec.texture = cfg.texture;
  return spec;
}

PerturbationSpec perturbation_for(const ExperimentConfig& cfg, PerturbationMode mode,
                                  uint64_t seed) {
  PerturbationSpec p = cfg.perturbation_spec;
  p.seed = cfg.perturbation_spec.seed * 0x100000001b3ULL + seed * 0x9e3779b97f4a7c15ULL + 17;
  p.apply_global = mode != PerturbationMode::kClean;
  if (mode != PerturbationMode::kGlobalLocal) p.spot_count = 0;
  return p;
}

Image perturbed_source(const SyntheticScene& scene, const ExperimentConfig& cfg,
                       PerturbationMode mode, uint64_t seed) {
  if (mode == PerturbationMode::kClean) return scene.source;
  return apply_perturbation(scene.source, perturbation_for(cfg, mode, seed));
}

FrameMetrics evaluate_state(const ParamState& state, const SyntheticScene& scene) {
  FrameMetrics m;
  const DepthMap ps = predict_depth(state, FrameId::kSource);
  const DepthMap pt = predict_depth(state, FrameId::kTarget);
  m.source = depth_metrics(median_scale(ps, scene.gt_depth_source).depth, scene.gt_depth_source,
                           kScaredDepthCap);
  m.target = depth_metrics(median_scale(pt, scene.gt_depth_target).depth, scene.gt_depth_target,
                           kScaredDepthCap);
  return m;
}

json to_json(const MetricsReport& m) {
  return {{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel},         {"rmse", m.rmse},
          {"rmse_log", m.rmse_log}, {"delta", m.delta},         {"valid_count", m.valid_count},
          {"cap", m.cap}};
}

json pose_cycle_residual(const ParamState& state) {
  const PoseSE3 c = se3_compose(predict_pose(state, PairId::kSourceToTarget),
                                predict_pose(state, PairId::kTargetToSource));
  const double cos_angle = std::clamp((c.rotation().trace() - 1.0) / 2.0, -1.0, 1.0);
  return {{"rotation_rad", std::acos(cos_angle)}, {"translation", c.translation().norm()}};
}

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  size_t workers = jobs > 0 ? static_cast<size_t>(jobs)
                            : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<size_t> next{0};
  auto run = [&] {
    for (size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void cmd_gen(const ExperimentConfig& cfg) {
  const std::vector<SceneJob> jobs = scene_jobs(cfg);
  std::vector<json> entries(jobs.size());
  const fs::path root = cfg.out / "scenes";
  parallel_for(jobs.size(), cfg.jobs, [&](size_t i) {
    const SceneJob& job = jobs[i];
    const SyntheticScene scene = generate_scene(scene_spec_for(cfg, job.surface, job.seed));
    entries[i] = {{"name", job.name},
                  {"surface", to_string(job.surface)},
                  {"seed", job.seed},
                  {"files", save_scene(root / job.name, scene)}};
  });
  const json manifest = {{"format", "cyclewarp-scenes"},
                         {"version", 1},
                         {"scenes", entries},
                         {"config", cfg.to_json().at("scenes")}};
  write_file_atomic(root / "manifest.json", manifest.dump(2) + "\n");
}

void cmd_perturb(const ExperimentConfig& cfg) {
  const std::vector<SceneJob> jobs = scene_jobs(cfg);
  std::vector<json> entries(jobs.size());
  const fs::path root = cfg.out / "perturbed";
  parallel_for(jobs.size(), cfg.jobs, [&](size_t i) {
    const SceneJob& job = jobs[i];
    SyntheticScene scene = load_scene_or_explain(cfg.out / "scenes" / job.name);
    const PerturbationSpec p = perturbation_for(cfg, cfg.perturbation, job.seed);
    scene.source = perturbed_source(scene, cfg, cfg.perturbation, job.seed);
    json files = save_scene(root / job.name, scene);
    json record = {{"mode", to_string(cfg.perturbation)}, {"frame", "source"}, {"seed", p.seed}};
    if (p.apply_global) {
      record["global_k"] = p.global_k ? *p.global_k : sample_global_k(p.seed);
    }
    record["spot_count"] = p.spot_count;
    const std::string text = record.dump(2) + "\n";
    write_file_atomic(root / job.name / "perturbation.json", text);
    files["perturbation.json"] = sha256_hex(text);
    entries[i] = {{"name", job.name}, {"perturbation", record}, {"files", files}};
  });
  const json manifest = {{"format", "cyclewarp-perturbed"},
                         {"version", 1},
                         {"scenes", entries},
                         {"config", cfg.to_json().at("perturbation")}};
  write_file_atomic(root / "manifest.json", manifest.dump(2) + "\n");
}

void cmd_train(const ExperimentConfig& cfg) {
  const std::vector<SceneJob> jobs = scene_jobs(cfg);
  parallel_for(jobs.size(), cfg.jobs, [&](size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    const SceneJob& job = jobs[i];
    const SyntheticScene scene = load_scene_or_explain(cfg.out / "scenes" / job.name);
    const TrainingPair pair(perturbed_source(scene, cfg, cfg.perturbation, job.seed),
                            scene.target, scene.intrinsics);
    TrainingCurve curve;
    ParamState warm;
    const ParamState final_state = train(pair, cfg.train, &curve, &warm);
    const fs::path dir = cfg.out / "runs" / job.name;
    const std::string warm_bytes = encode_checkpoint(make_checkpoint(warm, "warmup", job.name));
    const std::string final_bytes =
        encode_checkpoint(make_checkpoint(final_state, "final", job.name));
    const std::string csv = curve_csv(curve);
    write_file_atomic(dir / "warmup.ckpt", warm_bytes);
    write_file_atomic(dir / "final.ckpt", final_bytes);
    write_file_atomic(dir / "loss_curve.csv", csv);
    const json summary = {
        {"scene", job.name},
        {"perturbation", to_string(cfg.perturbation)},
        {"config", cfg.to_json()},
        {"pose_cycle_residual",
         {{"warmup", pose_cycle_residual(warm)}, {"final", pose_cycle_residual(final_state)}}},
        {"final_loss", curve.steps.empty() ? json(nullptr) : json(curve.steps.back().loss)},
        {"wall_clock_s", seconds_since(t0)},
        {"hashes",
         {{"warmup.ckpt", sha256_hex(warm_bytes)},
          {"final.ckpt", sha256_hex(final_bytes)},
          {"loss_curve.csv", sha256_hex(csv)}}}};
    write_file_atomic(dir / "train.json", summary.dump(2) + "\n");
  });
}

void cmd_eval(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<SceneJob> jobs = scene_jobs(cfg);
  std::vector<json> runs(jobs.size());
  const fs::path out = cfg.out / "eval";
  parallel_for(jobs.size(), cfg.jobs, [&](size_t i) {
    const SceneJob& job = jobs[i];
    const SyntheticScene scene = load_scene_or_explain(cfg.out / "scenes" / job.name);
    const fs::path ckpt_path = cfg.out / "runs" / job.name / "final.ckpt";
    if (!fs::exists(ckpt_path)) {
      throw IoError("checkpoint " + ckpt_path.string() + " not found (run `train` first)");
    }
    const std::string bytes = read_file(ckpt_path);
    const ParamState state = checkpoint_to_state(decode_checkpoint(bytes));
    if (state.layout.image_height() != scene.target.height() ||
        state.layout.image_width() != scene.target.width()) {
      throw MisuseError("checkpoint " + ckpt_path.string() + " does not match the scene shape");
    }
    const FrameMetrics m = evaluate_state(state, scene);
    json maps = json::object();
    json hashes = {{"final.ckpt", sha256_hex(bytes)}};
    for (const auto& [frame, label] :
         {std::pair{FrameId::kSource, "source"}, std::pair{FrameId::kTarget, "target"}}) {
      const DepthMap& gt = frame == FrameId::kSource ? scene.gt_depth_source : scene.gt_depth_target;
      const ScaledDepth sd = median_scale(predict_depth(state, frame), gt);
      const std::string png = encode_png16(error_map(sd.depth, gt));
      const std::string file = job.name + "_" + label + "_error.png";
      write_file_atomic(out / "maps" / file, png);
      maps[label] = "maps/" + file;
      hashes[file] = sha256_hex(png);
    }
    const fs::path train_json = cfg.out / "runs" / job.name / "train.json";
    json training = nullptr;
    if (fs::exists(train_json)) training = json::parse(read_file(train_json));
    runs[i] = {{"scene", job.name},
               {"surface", to_string(job.surface)},
               {"seed", job.seed},
               {"checkpoint", ckpt_path.string()},
               {"metrics", metrics_pair_json(m)},
               {"ate", nullptr},
               {"ate_note", "pose sequence has 2 frames; ATE needs at least 5"},
               {"pose_cycle_residual", pose_cycle_residual(state)},
               {"error_maps", maps},
               {"hashes", hashes},
               {"training", training}};
  });
  double sum = 0.0;
  for (const json& r : runs) sum += r.at("metrics").at("abs_rel").get<double>();
  const json report = {{"format", kReportFormat},
                       {"version", kReportVersion},
                       {"command", "eval"},
                       {"config", cfg.to_json()},
                       {"runs", runs},
                       {"summary", {{"mean_abs_rel", sum / static_cast<double>(runs.size())},
                                    {"count", runs.size()}}},
                       {"wall_clock_s", seconds_since(t0)}};
  write_file_atomic(out / "report.json", report.dump(2) + "\n");
}

void cmd_compare(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<SceneJob> scenes = scene_jobs(cfg);
  const std::vector<PerturbationMode> modes{PerturbationMode::kClean, PerturbationMode::kGlobal,
                                            PerturbationMode::kGlobalLocal};
  TrainConfig base_cfg = cfg.train;
  base_cfg.use_cycle = base_cfg.use_stm = base_cfg.use_ema = base_cfg.use_pcp = false;
  TrainConfig pcc_cfg = cfg.train;
  pcc_cfg.use_cycle = pcc_cfg.use_stm = pcc_cfg.use_ema = pcc_cfg.use_pcp = true;

  struct Cell {
    FrameMetrics baseline, pcc;
    json pose_baseline, pose_pcc;
  };
  const size_t n = scenes.size() * modes.size();
  std::vector<Cell> cells(n);
  const fs::path out = cfg.out / "compare";
  parallel_for(n, cfg.jobs, [&](size_t i) {
    const SceneJob& job = scenes[i / modes.size()];
    const PerturbationMode mode = modes[i % modes.size()];
    const SyntheticScene scene = generate_scene(scene_spec_for(cfg, job.surface, job.seed));
    const TrainingPair pair(perturbed_source(scene, cfg, mode, job.seed), scene.target,
                            scene.intrinsics);
    // Both arms share one warm-up; only the follow-up phase differs.
    ParamState warm = ParamState::initial(scene.target.height(), scene.target.width(),
                                          cfg.train.nominal_depth, cfg.train.grid_stride);
    for (int s = 0; s < cfg.train.warmup_steps; ++s) warmup_step(warm, pair, cfg.train);
    ParamState base = warm, pcc = warm;
    begin_followup(base);
    begin_followup(pcc);
    for (int s = 0; s < cfg.train.followup_steps; ++s) {
      followup_step(base, pair, base_cfg);
      followup_step(pcc, pair, pcc_cfg);
    }
    Cell& c = cells[i];
    c.baseline = evaluate_state(base, scene);
    c.pcc = evaluate_state(pcc, scene);
    c.pose_baseline = pose_cycle_residual(base);
    c.pose_pcc = pose_cycle_residual(pcc);
    for (const auto& [state, method] : {std::pair{&base, "baseline"}, std::pair{&pcc, "pcc"}}) {
      const ScaledDepth sd =
          median_scale(predict_depth(*state, FrameId::kTarget), scene.gt_depth_target);
      write_png16(out / "maps" / to_string(mode) / method / (job.name + ".png"),
                  error_map(sd.depth, scene.gt_depth_target));
    }
  });

  std::ostringstream per_seed;
  per_seed << "surface,seed,condition,method,abs_rel_source,abs_rel_target,abs_rel\n";
  json rows = json::array();
  std::vector<double> sum_base(modes.size(), 0.0), sum_pcc(modes.size(), 0.0);
  json wins = json::object();
  for (size_t i = 0; i < n; ++i) {
    const SceneJob& job = scenes[i / modes.size()];
    const size_t mi = i % modes.size();
    const Cell& c = cells[i];
    for (const auto& [m, method] : {std::pair{&c.baseline, "baseline"}, std::pair{&c.pcc, "pcc"}}) {
      per_seed << to_string(job.surface) << ',' << job.seed << ',' << to_string(modes[mi]) << ','
               << method << ',' << csv_double(m->source.abs_rel) << ','
               << csv_double(m->target.abs_rel) << ',' << csv_double(m->target.abs_rel) << '\n';
    }
    sum_base[mi] += c.baseline.target.abs_rel;
    sum_pcc[mi] += c.pcc.target.abs_rel;
    const std::string key = to_string(modes[mi]) + "/" + to_string(job.surface);
    if (!wins.contains(key)) wins[key] = {{"pcc_better", 0}, {"seeds", 0}};
    wins[key]["seeds"] = wins[key]["seeds"].get<int>() + 1;
    if (c.pcc.target.abs_rel < c.baseline.target.abs_rel) {
      wins[key]["pcc_better"] = wins[key]["pcc_better"].get<int>() + 1;
    }
    rows.push_back({{"scene", job.name},
                    {"surface", to_string(job.surface)},
                    {"seed", job.seed},
                    {"condition", to_string(modes[mi])},
                    {"baseline", metrics_pair_json(c.baseline)},
                    {"pcc", metrics_pair_json(c.pcc)},
                    {"pose_cycle_residual", {{"baseline", c.pose_baseline}, {"pcc", c.pose_pcc}}}});
  }
  std::ostringstream table;
  table << "condition,baseline_abs_rel,pcc_abs_rel\n";
  json table_json = json::array();
  const double count = static_cast<double>(scenes.size());
  for (size_t mi = 0; mi < modes.size(); ++mi) {
    table << to_string(modes[mi]) << ',' << csv_double(sum_base[mi] / count) << ','
          << csv_double(sum_pcc[mi] / count) << '\n';
    table_json.push_back({{"condition", to_string(modes[mi])},
                          {"baseline_abs_rel", sum_base[mi] / count},
                          {"pcc_abs_rel", sum_pcc[mi] / count}});
  }
  const std::string table_csv = table.str();
  const std::string per_seed_csv = per_seed.str();
  write_file_atomic(out / "table.csv", table_csv);
  write_file_atomic(out / "per_seed.csv", per_seed_csv);
  const json report = {{"format", kReportFormat},
                       {"version", kReportVersion},
                       {"command", "compare"},
                       {"config", cfg.to_json()},
                       {"runs", rows},
                       {"table", table_json},
                       {"wins", wins},
                       {"hashes",
                        {{"table.csv", sha256_hex(table_csv)},
                         {"per_seed.csv", sha256_hex(per_seed_csv)}}},
                       {"wall_clock_s", seconds_since(t0)}};
  write_file_atomic(out / "report.json", report.dump(2) + "\n");
}

}  // namespace cyclewarp
