#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>

#include "cyclewarp/errors.hpp"
#include "cyclewarp/eval.hpp"
#include "cyclewarp/experiment.hpp"
#include "cyclewarp/freq.hpp"
#include "cyclewarp/io.hpp"
#include "cyclewarp/loss.hpp"
#include "cyclewarp/optim.hpp"
#include "cyclewarp/synth.hpp"
#include "cyclewarp/warp.hpp"

namespace py = pybind11;
using namespace cyclewarp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw MisuseError("images are (H, W) or (H, W, C) arrays");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  return make_image(h, w, c, std::vector<double>(a.data(), a.data() + a.size()));
}

template <class Tag>
Array from_raster(const BasicRaster<Tag>& r) {
  std::vector<py::ssize_t> shape{r.height(), r.width()};
  if (r.channels() > 1) shape.push_back(r.channels());
  Array out(shape);
  std::copy(r.storage().begin(), r.storage().end(), out.mutable_data());
  return out;
}

DepthMap to_depth(const Array& a) {
  if (a.ndim() != 2) throw MisuseError("depth maps are (H, W) arrays");
  return DepthMap(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                  std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_depth(const DepthMap& d) {
  Array out({d.height(), d.width()});
  double* dst = out.mutable_data();
  for (size_t i = 0; i < d.pixel_count(); ++i) dst[i] = d.valid(i) ? d[i] : 0.0;
  return out;
}

py::array_t<bool> from_mask(const Mask& m) {
  py::array_t<bool> out({m.height(), m.width()});
  bool* dst = out.mutable_data();
  for (size_t i = 0; i < m.size(); ++i) dst[i] = m[i];
  return out;
}

Mask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw MisuseError("masks are (H, W) boolean arrays");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.set(static_cast<size_t>(i), a.data()[i]);
  return m;
}

PoseSE3 to_pose(const Eigen::Matrix4d& m) {
  return PoseSE3(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

py::dict field_dict(const WarpField& f) {
  Array u({f.height, f.width}), v({f.height, f.width});
  std::copy(f.u.begin(), f.u.end(), u.mutable_data());
  std::copy(f.v.begin(), f.v.end(), v.mutable_data());
  py::dict d;
  d["u"] = u;
  d["v"] = v;
  d["valid"] = from_mask(f.valid);
  return d;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["abs_rel"] = m.abs_rel;
  d["sq_rel"] = m.sq_rel;
  d["rmse"] = m.rmse;
  d["rmse_log"] = m.rmse_log;
  d["delta"] = m.delta;
  d["valid_count"] = m.valid_count;
  d["cap"] = m.cap;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "cyclewarp core operations";

  py::register_exception<MisuseError>(m, "MisuseError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<Intrinsics>(m, "Intrinsics")
      .def(py::init<double, double, double, double>(), py::arg("fx"), py::arg("fy"),
           py::arg("cx"), py::arg("cy"))
      .def_readwrite("fx", &Intrinsics::fx)
      .def_readwrite("fy", &Intrinsics::fy)
      .def_readwrite("cx", &Intrinsics::cx)
      .def_readwrite("cy", &Intrinsics::cy)
      .def("matrix", &Intrinsics::matrix)
      .def("__repr__", [](const Intrinsics& k) {
        return "Intrinsics(fx=" + std::to_string(k.fx) + ", fy=" + std::to_string(k.fy) +
               ", cx=" + std::to_string(k.cx) + ", cy=" + std::to_string(k.cy) + ")";
      });

  m.def("se3_exp", [](const std::array<double, 6>& twist) {
    return se3_exp(Twist::from_array(twist)).homogeneous();
  }, py::arg("twist"), "4x4 pose from a (rotation, translation) 6-vector.");

  m.def("compute_correspondence",
        [](const Array& depth, const Eigen::Matrix4d& pose, const Intrinsics& k) {
          return field_dict(compute_correspondence(to_depth(depth), to_pose(pose), k));
        },
        py::arg("depth"), py::arg("pose_target_to_source"), py::arg("intrinsics"),
        "Source-image coordinates u, v and validity for every target pixel.");

  m.def("warp_image",
        [](const Array& source, const Array& depth, const Eigen::Matrix4d& pose, const Intrinsics& k) {
          const WarpResult r = warp_image(to_image(source), to_depth(depth), to_pose(pose), k);
          return py::make_tuple(from_raster(r.image), from_mask(r.field.valid));
        },
        py::arg("source"), py::arg("target_depth"), py::arg("pose_target_to_source"),
        py::arg("intrinsics"), "Warps the source onto the target grid; returns (image, valid).");

  m.def("cycle_warp",
        [](const Array& target, const Array& source, const Array& depth_source,
           const Eigen::Matrix4d& pose_st, const Array& depth_target, const Eigen::Matrix4d& pose_ts,
           const Intrinsics& k, bool use_stm) {
          const CycleResult r = cycle_warp(to_image(target), to_image(source), to_depth(depth_source),
                                           to_pose(pose_st), to_depth(depth_target), to_pose(pose_ts),
                                           k, use_stm);
          py::dict d;
          d["cycled"] = from_raster(r.cycled);
          d["intermediate"] = from_raster(r.intermediate);
          d["valid"] = from_mask(r.cycle_valid);
          return d;
        },
        py::arg("target"), py::arg("source"), py::arg("depth_source"),
        py::arg("pose_source_to_target"), py::arg("depth_target"),
        py::arg("pose_target_to_source"), py::arg("intrinsics"), py::arg("use_stm") = true);

  m.def("structure_transplant",
        [](const Array& warped, const Array& source) {
          return from_raster(structure_transplant(to_image(warped), to_image(source)));
        },
        py::arg("warped"), py::arg("source"),
        "Amplitude of `warped` with the phase of `source`, clamped to [0, 1].");

  m.def("fft2", [](const Array& image) {
    const FrequencyDecomposition f = fft2(to_image(image));
    return py::make_tuple(from_raster(f.amplitude), from_raster(f.phase));
  }, py::arg("image"), "Per-channel (amplitude, phase) of the unnormalized 2-D DFT.");

  m.def("ssim", [](const Array& a, const Array& b) {
    return from_raster(ssim(to_image(a), to_image(b)));
  }, py::arg("a"), py::arg("b"));

  m.def("photometric_loss",
        [](const Array& target, const Array& warped,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask, double alpha) {
          return photometric_loss(to_image(target), to_image(warped), to_mask(mask), alpha).scalar;
        },
        py::arg("target"), py::arg("warped"), py::arg("mask"), py::arg("alpha") = kPhotometricAlpha);

  m.def("median_scale", [](const Array& pred, const Array& gt) {
    const ScaledDepth s = median_scale(to_depth(pred), to_depth(gt));
    return py::make_tuple(from_depth(s.depth), s.scale);
  }, py::arg("pred"), py::arg("gt"));

  m.def("depth_metrics", [](const Array& pred, const Array& gt, double cap) {
    return metrics_dict(depth_metrics(to_depth(pred), to_depth(gt), cap));
  }, py::arg("pred_scaled"), py::arg("gt"), py::arg("cap") = kScaredDepthCap);

  m.def("generate_scene",
        [](const std::string& surface, uint64_t seed, int size, const std::string& texture) {
          SceneSpec spec = default_scene_spec(surface_from_string(surface), seed, size);
          spec.texture = texture_from_string(texture);
          const SyntheticScene s = generate_scene(spec);
          py::dict d;
          d["source"] = from_raster(s.source);
          d["target"] = from_raster(s.target);
          d["depth_source"] = from_depth(s.gt_depth_source);
          d["depth_target"] = from_depth(s.gt_depth_target);
          d["pose_target_to_source"] = s.gt_pose_target_to_source.homogeneous();
          d["pose_source_to_target"] = s.gt_pose_source_to_target.homogeneous();
          d["intrinsics"] = s.intrinsics;
          return d;
        },
        py::arg("surface") = "bumps", py::arg("seed") = 0, py::arg("size") = 64,
        py::arg("texture") = "noise");

  m.def("apply_perturbation",
        [](const Array& image, uint64_t seed, std::optional<double> global_k, int spot_count,
           bool apply_global) {
          PerturbationSpec p;
          p.seed = seed;
          p.global_k = global_k;
          p.spot_count = spot_count;
          p.apply_global = apply_global;
          return from_raster(apply_perturbation(to_image(image), p));
        },
        py::arg("image"), py::arg("seed") = 0, py::arg("global_k") = py::none(),
        py::arg("spot_count") = 3, py::arg("apply_global") = true,
        "HSV brightness scaling (k drawn when not given) plus Gaussian spots.");

  m.def("ema_update", [](std::vector<double> shadow, const std::vector<double>& active, double alpha) {
    ema_update(shadow, active, alpha);
    return shadow;
  }, py::arg("shadow"), py::arg("active"), py::arg("alpha") = 0.75);

  m.def("train",
        [](const Array& source, const Array& target, const Intrinsics& k, const std::string& config) {
          // Same keys and validation as the "train" block of the CLI config.
          json doc = ExperimentConfig{}.to_json();
          doc["train"].merge_patch(json::parse(config));
          const ExperimentConfig cfg = ExperimentConfig::from_json(doc);
          cfg.train.validate();
          const Image src = to_image(source), tgt = to_image(target);
          TrainingCurve curve;
          ParamState state;
          {
            py::gil_scoped_release release;
            state = train(TrainingPair(src, tgt, k), cfg.train, &curve);
          }
          py::list losses;
          for (const StepStats& s : curve.steps) losses.append(s.loss);
          py::dict d;
          d["depth_source"] = from_depth(predict_depth(state, FrameId::kSource));
          d["depth_target"] = from_depth(predict_depth(state, FrameId::kTarget));
          d["pose_target_to_source"] = predict_pose(state, PairId::kTargetToSource).homogeneous();
          d["pose_source_to_target"] = predict_pose(state, PairId::kSourceToTarget).homogeneous();
          d["loss"] = losses;
          d["ema_updates"] = state.ema_updates;
          return d;
        },
        py::arg("source"), py::arg("target"), py::arg("intrinsics"), py::arg("config") = "{}",
        "Runs warm-up and follow-up; `config` is a JSON object of training keys.");

  m.def("read_pfm", [](const std::string& path) { return from_depth(read_pfm(path)); });
  m.def("write_pfm", [](const std::string& path, const Array& depth) { write_pfm(path, to_depth(depth)); });
  m.def("read_png16", [](const std::string& path) { return from_raster(read_png16(path)); });
  m.def("write_png16", [](const std::string& path, const Array& image) { write_png16(path, to_image(image)); });
}
