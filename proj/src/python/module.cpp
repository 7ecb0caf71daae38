#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "deca/checkpoint.hpp"
#include "deca/config.hpp"
#include "deca/data.hpp"
#include "deca/error.hpp"
#include "deca/metrics.hpp"
#include "deca/training.hpp"

namespace py = pybind11;
using namespace deca;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the stdlib parser builds the dicts.
py::object to_python(const json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

json from_python(const py::object& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

template <typename T>
py::array_t<T> array(const std::vector<T>& values, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

std::vector<std::size_t> select_split(const Dataset& data, const std::string& view, const std::string& split) {
  if (split == "all") return data.select(parse_view(view));
  return data.select(parse_view(view), parse_split(split));
}

py::dict sample_dict(const PoseSample& s) {
  const auto h = static_cast<py::ssize_t>(s.height), w = static_cast<py::ssize_t>(s.width);
  const auto j = static_cast<py::ssize_t>(s.joints());
  py::dict d;
  d["stem"] = s.stem;
  d["pose_id"] = s.pose_id;
  d["view"] = to_string(s.view);
  d["split"] = to_string(s.split);
  d["depth"] = array(s.depth, {h, w});
  if (!s.rgb.empty()) d["rgb"] = array(s.rgb, {h, w, 3});
  d["joints3d"] = array(s.joints3d, {j, 3});
  d["joints2d"] = array(s.joints2d, {j, 2});
  return d;
}

py::dict evaluation_dict(const Evaluation& ev, std::size_t joints) {
  py::dict d;
  d["report"] = to_python(to_json(ev.report));
  d["pred"] = PointSet(ev.pred);
  d["gt"] = PointSet(ev.gt);
  d["entities"] = array(ev.entities, {static_cast<py::ssize_t>(ev.indices.size()), static_cast<py::ssize_t>(joints), 16});
  return d;
}

}  // namespace

PYBIND11_MODULE(_deca, m) {
  m.doc() = "Capsule autoencoder for multi-view 3D pose estimation";

  static py::exception<Error> error(m, "DecaError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(e.category()) + ": " + e.what()).c_str());
    }
  });

  m.def("default_config", [] { return to_python(to_json(RunConfig{})); },
        "Default run configuration as a dict.");
  m.def("validate_config", [](const py::object& cfg) { return to_python(to_json(run_config_from_json(from_python(cfg)))); },
        py::arg("config"), "Fills in defaults and validates; raises DecaError on bad input.");

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, std::size_t num_poses, const std::vector<std::string>& views,
         std::size_t joints, std::size_t resolution, const std::string& domain, std::uint64_t seed,
         double test_fraction) {
        GenerateOptions g;
        g.num_poses = num_poses;
        g.views.clear();
        for (const auto& v : views) g.views.push_back(parse_view(v));
        g.joints = joints;
        g.width = g.height = resolution;
        g.domain = parse_domain(domain);
        g.seed = seed;
        g.test_fraction = test_fraction;
        return generate_synthetic(g, out).samples.size();
      },
      py::arg("out"), py::arg("num_poses") = 10, py::arg("views") = std::vector<std::string>{"front", "top"},
      py::arg("joints") = kMaxJoints, py::arg("resolution") = 64, py::arg("domain") = "depth", py::arg("seed") = 0,
      py::arg("test_fraction") = 0.2, "Renders a synthetic dataset; returns the sample count.");

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](const std::filesystem::path& dir) { return load_dataset(dir); }), py::arg("path"))
      .def("__len__", [](const Dataset& d) { return d.samples.size(); })
      .def("__getitem__",
           [](const Dataset& d, std::size_t i) {
             if (i >= d.samples.size()) throw py::index_error();
             return sample_dict(d.samples[i]);
           })
      .def_property_readonly("joint_names", [](const Dataset& d) { return d.manifest.joint_names; })
      .def("select", &select_split, py::arg("view"), py::arg("split") = "all", "Sample indices of a view and split.");

  py::class_<Trainer<float>>(m, "Trainer")
      .def(py::init([](const py::object& cfg) {
             const RunConfig c = run_config_from_json(from_python(cfg));
             return std::make_unique<Trainer<float>>(c.model, c.train);
           }),
           py::arg("config"))
      .def_property_readonly("step", &Trainer<float>::step)
      .def_property_readonly("config",
                             [](const Trainer<float>& t) { return to_python(to_json(RunConfig{t.model_config(), t.config()})); })
      .def_property_readonly("parameter_count",
                             [](const Trainer<float>& t) { return parameter_count(t.parameters()); })
      .def(
          "fit",
          [](Trainer<float>& t, const Dataset& data, const std::string& view, const py::object& on_epoch) {
            std::vector<EpochLog> logs;
            {
              py::gil_scoped_release release;
              logs = t.fit(data, data.select(parse_view(view), Split::Train), [&](const EpochLog& e) {
                if (on_epoch.is_none()) return;
                py::gil_scoped_acquire acquire;
                on_epoch(to_python(e.to_json()));
              });
            }
            py::list out;
            for (const auto& e : logs) out.append(to_python(e.to_json()));
            return out;
          },
          py::arg("data"), py::arg("view"), py::arg("on_epoch") = py::none(),
          "Trains on the view's training split; returns the epoch logs.")
      .def(
          "evaluate",
          [](const Trainer<float>& t, const Dataset& data, const std::string& view, const std::string& split) {
            return evaluation_dict(evaluate(t.model(), data, select_split(data, view, split)), data.joints());
          },
          py::arg("data"), py::arg("view"), py::arg("split") = "test")
      .def(
          "save",
          [](const Trainer<float>& t, const std::filesystem::path& dir, const py::object& metadata) {
            save_checkpoint(t, dir, metadata.is_none() ? json::object() : from_python(metadata));
          },
          py::arg("dir"), py::arg("metadata") = py::none());

  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& dir) {
        auto ckpt = load_checkpoint(dir);
        return py::make_tuple(std::move(ckpt.trainer), to_python(ckpt.metadata));
      },
      py::arg("dir"), "Returns (trainer, metadata).");

  m.def("mpjpe_mm", &mpjpe_mm, py::arg("pred"), py::arg("gt"), "Mean per-joint error in mm; inputs in metres, N x 3.");
  m.def("map_at_threshold", &map_at_threshold, py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.10,
        "Fraction of joints strictly closer than the threshold.");
  m.def("procrustes_align", &procrustes_align, py::arg("pred"), py::arg("gt"),
        "Best similarity transform of pred onto gt, applied to pred.");
  m.def(
      "cluster_purity",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> entities) {
        if (entities.ndim() != 3) throw py::value_error("entities must be [N, J, D]");
        const std::vector<double> flat(entities.data(), entities.data() + entities.size());
        return cluster_purity(flat, entities.shape(0), entities.shape(1), entities.shape(2));
      },
      py::arg("entities"), "Nearest-centroid purity of entities [N, J, D] against their joint labels.");
}
