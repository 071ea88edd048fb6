#include <doctest.h>

#include <atomic>
#include <sstream>

#include "cyclewarp/errors.hpp"
#include "cyclewarp/experiment.hpp"
#include "cyclewarp/io.hpp"

using namespace cyclewarp;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cyclewarp_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig small_config(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"out=\"" + out.string() + "\"", "jobs=1", "scenes.resolution=32"};
  o.insert(o.end(), extra.begin(), extra.end());
  return load_config(nullptr, o);
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST_CASE("overrides parse JSON values and fall back to strings") {
  json doc = ExperimentConfig{}.to_json();
  apply_override(doc, "train.warmup_steps=12");
  apply_override(doc, "train.use_pcp=false");
  apply_override(doc, "scenes.seeds=[3,4]");
  apply_override(doc, "perturbation.mode=global");
  apply_override(doc, "perturbation.global_k=1.2");
  CHECK(doc["train"]["warmup_steps"] == 12);
  CHECK(doc["train"]["use_pcp"] == false);
  CHECK(doc["scenes"]["seeds"] == json::array({3, 4}));
  CHECK(doc["perturbation"]["mode"] == "global");
  const ExperimentConfig c = ExperimentConfig::from_json(doc);
  CHECK(c.train.warmup_steps == 12);
  CHECK(c.seeds == std::vector<uint64_t>{3, 4});
  CHECK(c.perturbation == PerturbationMode::kGlobal);
  CHECK(c.perturbation_spec.global_k.value() == 1.2);
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "train..x=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "jobs.deeper=1"), ConfigError);
}

TEST_CASE("config round trips through JSON") {
  const ExperimentConfig c;
  CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("config errors are reported as ConfigError") {
  CHECK_THROWS_AS(load_config(nullptr, {"train.bogus=1"}), ConfigError);
  CHECK_THROWS_AS(load_config(nullptr, {"bogus=1"}), ConfigError);
  CHECK_THROWS_AS(load_config(nullptr, {"train.use_cycle=false"}), ConfigError);  // STM needs the cycle
  CHECK_NOTHROW(load_config(nullptr, {"train.use_cycle=false", "train.use_stm=false"}));
  CHECK_THROWS_AS(load_config(nullptr, {"train.warmup_steps=\"many\""}), ConfigError);
  CHECK_THROWS_AS(load_config(nullptr, {"scenes.surfaces=[\"sphere\"]"}), ConfigError);
  CHECK_THROWS_AS(load_config(nullptr, {"perturbation.mode=local"}), ConfigError);
  CHECK_THROWS_AS(load_config(nullptr, {"scenes.seeds=[]"}), ConfigError);
  CHECK_THROWS_AS(load_config(nullptr, {"jobs=-1"}), ConfigError);

  const fs::path dir = scratch_dir("cfg");
  write_file_atomic(dir / "bad.json", "{ not json");
  const fs::path bad = dir / "bad.json";
  CHECK_THROWS_AS(load_config(&bad, {}), ConfigError);
  write_file_atomic(dir / "ok.json", R"({"train": {"followup_steps": 7}, "jobs": 2})");
  const fs::path ok = dir / "ok.json";
  const ExperimentConfig c = load_config(&ok, {"jobs=3"});
  CHECK(c.train.followup_steps == 7);
  CHECK(c.train.warmup_steps == TrainConfig{}.warmup_steps);
  CHECK(c.jobs == 3);  // overrides win over the file
  fs::remove_all(dir);
}

TEST_CASE("perturbation seeds differ per scene and clean leaves the source alone") {
  const ExperimentConfig c;
  const PerturbationSpec a = perturbation_for(c, PerturbationMode::kGlobalLocal, 0);
  const PerturbationSpec b = perturbation_for(c, PerturbationMode::kGlobalLocal, 1);
  CHECK(a.seed != b.seed);
  CHECK(a.spot_count == c.perturbation_spec.spot_count);
  CHECK(perturbation_for(c, PerturbationMode::kGlobal, 0).spot_count == 0);
  CHECK_FALSE(perturbation_for(c, PerturbationMode::kClean, 0).apply_global);
  const SyntheticScene s = generate_scene(scene_spec_for(c, SurfaceKind::kBumps, 2));
  CHECK(perturbed_source(s, c, PerturbationMode::kClean, 2) == s.source);
  CHECK(perturbed_source(s, c, PerturbationMode::kGlobal, 2) != s.source);
}

TEST_CASE("gen is byte-for-byte deterministic") {
  const fs::path a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
  cmd_gen(small_config(a, {"scenes.seeds=[0,1]"}));
  cmd_gen(small_config(b, {"scenes.seeds=[0,1]"}));
  for (const auto& e : fs::recursive_directory_iterator(a / "scenes")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (rel.filename() == "manifest.json") continue;  // embeds the output path
    CHECK(read_file(e.path()) == read_file(b / rel));
  }
  const json m = json::parse(read_file(a / "scenes" / "manifest.json"));
  CHECK(m["scenes"].size() == 6);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("an identity-pose scene stores identical frames") {
  const fs::path dir = scratch_dir("identity");
  SceneSpec spec = default_scene_spec(SurfaceKind::kBumps, 3, 32);
  spec.baseline = Twist();
  save_scene(dir, generate_scene(spec));
  CHECK(read_file(dir / "source.png") == read_file(dir / "target.png"));
  CHECK(read_file(dir / "depth_source.pfm") == read_file(dir / "depth_target.pfm"));
  fs::remove_all(dir);
}

TEST_CASE("zero-step training writes the initial state") {
  const fs::path dir = scratch_dir("noop");
  const ExperimentConfig c = small_config(
      dir, {"scenes.surfaces=[\"inclined\"]", "scenes.seeds=[1]", "train.warmup_steps=0",
            "train.followup_steps=0", "train.use_cycle=false", "train.use_stm=false"});
  cmd_gen(c);
  cmd_train(c);
  const fs::path run = dir / "runs" / "inclined_1";
  const ParamState st = checkpoint_to_state(read_checkpoint(run / "final.ckpt"));
  CHECK(st == ParamState::initial(32, 32, 100.0));
  CHECK(first_line(read_file(run / "loss_curve.csv")) ==
        "step,phase,loss,photometric,perception,valid_pixels,ema_updated");
  const json summary = json::parse(read_file(run / "train.json"));
  CHECK(summary["pose_cycle_residual"]["final"]["translation"] == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("evaluating a ground-truth checkpoint gives perfect metrics") {
  const fs::path dir = scratch_dir("gt");
  const ExperimentConfig c =
      small_config(dir, {"scenes.surfaces=[\"plane\"]", "scenes.seeds=[0]"});
  cmd_gen(c);
  // The target view of a fronto-parallel plane sits at the nominal depth, which the initial
  // grid already predicts.
  write_checkpoint(dir / "runs" / "plane_0" / "final.ckpt",
                   state_to_checkpoint(ParamState::initial(32, 32, 100.0)));
  cmd_eval(c);
  const json report = json::parse(read_file(dir / "eval" / "report.json"));
  CHECK(report["format"] == "cyclewarp-report");
  const json& m = report["runs"][0]["metrics"];
  CHECK(m["abs_rel"] == 0.0);
  CHECK(m["target"]["delta"] == 1.0);
  CHECK(m["target"]["rmse"] == 0.0);
  CHECK(report["runs"][0]["ate"].is_null());
  CHECK(fs::exists(dir / "eval" / "maps" / "plane_0_target_error.png"));
  fs::remove_all(dir);
}

TEST_CASE("trained checkpoints beat the initial state") {
  const fs::path dir = scratch_dir("trained");
  const ExperimentConfig c = small_config(
      dir, {"scenes.surfaces=[\"inclined\"]", "scenes.seeds=[2]", "scenes.resolution=64",
            "perturbation.mode=clean", "train.warmup_steps=600", "train.followup_steps=0"});
  cmd_gen(c);
  const SyntheticScene scene = load_scene(dir / "scenes" / "inclined_2");
  const double initial = evaluate_state(ParamState::initial(64, 64, 100.0), scene).target.abs_rel;
  cmd_train(c);
  cmd_eval(c);
  const json report = json::parse(read_file(dir / "eval" / "report.json"));
  const double trained = report["runs"][0]["metrics"]["abs_rel"].get<double>();
  MESSAGE("inclined_2 Abs Rel: initial " << initial << ", trained " << trained);
  CHECK(trained < initial);
  CHECK(report["runs"][0]["training"]["config"]["train"]["warmup_steps"] == 600);
  fs::remove_all(dir);
}

TEST_CASE("eval reports missing checkpoints and shape mismatches") {
  const fs::path dir = scratch_dir("eval_err");
  const ExperimentConfig c = small_config(dir, {"scenes.surfaces=[\"bumps\"]", "scenes.seeds=[0]"});
  CHECK_THROWS_AS(cmd_eval(c), IoError);
  cmd_gen(c);
  CHECK_THROWS_AS(cmd_eval(c), IoError);
  write_checkpoint(dir / "runs" / "bumps_0" / "final.ckpt",
                   state_to_checkpoint(ParamState::initial(48, 48, 100.0)));
  CHECK_THROWS_AS(cmd_eval(c), MisuseError);
  fs::remove_all(dir);
}

TEST_CASE("compare writes the table with its documented columns") {
  const fs::path dir = scratch_dir("compare");
  const ExperimentConfig c = small_config(
      dir, {"scenes.surfaces=[\"bumps\"]", "scenes.seeds=[0]", "train.warmup_steps=4",
            "train.followup_steps=4", "train.ema_cadence=2"});
  cmd_compare(c);
  const std::string table = read_file(dir / "compare" / "table.csv");
  CHECK(first_line(table) == "condition,baseline_abs_rel,pcc_abs_rel");
  std::istringstream rows(table);
  std::string line;
  std::vector<std::string> conditions;
  std::getline(rows, line);
  while (std::getline(rows, line)) conditions.push_back(line.substr(0, line.find(',')));
  CHECK(conditions == std::vector<std::string>{"clean", "global", "global+local"});
  CHECK(first_line(read_file(dir / "compare" / "per_seed.csv")) ==
        "surface,seed,condition,method,abs_rel_source,abs_rel_target,abs_rel");
  const json report = json::parse(read_file(dir / "compare" / "report.json"));
  CHECK(report["runs"].size() == 3);
  CHECK(report["wins"]["global+local/bumps"]["seeds"] == 1);
  CHECK(fs::exists(dir / "compare" / "maps" / "global+local" / "pcc" / "bumps_0.png"));
  fs::remove_all(dir);
}

TEST_CASE("parallel_for visits every index once and rethrows the first failure") {
  for (int jobs : {1, 3}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, jobs, [&](size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
    try {
      parallel_for(20, jobs, [&](size_t i) {
        if (i == 7) throw IoError("seven");
        if (i == 12) throw ConfigError("twelve");
      });
      FAIL("expected an exception");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()) == "seven");
    }
  }
  parallel_for(0, 4, [](size_t) { FAIL("no work expected"); });
}
