#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli_app.hpp"
#include "salfau/checkpoint.hpp"
#include "salfau/data.hpp"
#include "salfau/errors.hpp"
#include "salfau/loss.hpp"
#include "salfau/metrics.hpp"
#include "salfau/optim.hpp"
#include "salfau/salfaunet.hpp"

namespace py = pybind11;
using namespace salfau;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F32Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<float> v(a.data(), a.data() + a.size());
  return Tensor::from_storage(shape, std::move(v));
}

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  const std::vector<double> v = t.to_vector();
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Map to_map(const F64Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D map");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          std::vector<double>(a.data(), a.data() + a.size())};
}

py::array_t<std::uint8_t> raster_to_numpy(const Raster& r) {
  std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(r.height), static_cast<py::ssize_t>(r.width)};
  if (r.channels != 1) shape.push_back(static_cast<py::ssize_t>(r.channels));
  py::array_t<std::uint8_t> out(shape);
  std::copy(r.pixels.begin(), r.pixels.end(), out.mutable_data());
  return out;
}

MetricConfig metric_config(const std::string& em_mode) {
  MetricConfig cfg;
  if (em_mode == "max") {
    cfg.em_mode = EmThresholdMode::Max;
  } else if (em_mode != "adaptive") {
    throw ConfigError("em_mode must be 'adaptive' or 'max'");
  }
  return cfg;
}

class Network {
 public:
  Network(std::size_t base_channels, std::size_t input_size, std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.base_channels = base_channels;
    cfg.input_size = input_size;
    cfg.validate();
    net_ = SalFAUNet::build(cfg, seed);
  }
  explicit Network(SalFAUNet net) : net_(std::move(net)) {}

  static Network load(const std::string& path, std::size_t input_size) {
    return Network(network_from_checkpoint(read_checkpoint(path), input_size));
  }

  py::dict forward(const F32Array& x, bool train) {
    Tensor input = to_tensor(x);
    SaliencyOutputs out;
    {
      py::gil_scoped_release release;
      NoGradGuard no_grad;
      out = net_.forward(input, train ? Mode::Train : Mode::Eval);
    }
    py::list side;
    for (const Tensor& s : out.side) side.append(to_numpy(s));
    py::dict result;
    result["fused"] = to_numpy(out.fused);
    result["side"] = side;
    return result;
  }

  std::vector<double> train(const std::string& manifest, std::size_t iters, std::size_t batch,
                            std::uint64_t seed) {
    const std::vector<Sample> samples = load_samples(read_manifest(manifest));
    py::gil_scoped_release release;
    Adam adam(net_.parameters());
    TrainOptions options;
    options.iters = iters;
    options.batch = batch;
    options.seed = seed;
    return train_loop(net_, adam, samples, options);
  }

  void save(const std::string& path) const { save_checkpoint(path, net_); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : net_.parameters()) n += t.numel();
    return n;
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto& [name, t] : net_.parameters()) names.push_back(name);
    return names;
  }

  std::size_t input_size() const { return net_.config().input_size; }

 private:
  SalFAUNet net_;
};

}  // namespace

PYBIND11_MODULE(_salfau, m) {
  m.doc() = "Attention-gated U-Net saliency detection";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<Network>(m, "Network")
      .def(py::init<std::size_t, std::size_t, std::uint64_t>(), py::arg("base_channels") = 8,
           py::arg("input_size") = 64, py::arg("seed") = 0)
      .def_static("load", &Network::load, py::arg("path"), py::arg("input_size") = 320)
      .def("forward", &Network::forward, py::arg("x"), py::arg("train") = false,
           "x: float array [N, 3, H, W]. Returns {'fused': ..., 'side': [4 maps]}.")
      .def("train", &Network::train, py::arg("manifest"), py::arg("iters"), py::arg("batch") = 4,
           py::arg("seed") = 0, "Trains with Adam; returns the per-iteration loss.")
      .def("save", &Network::save, py::arg("path"))
      .def_property_readonly("parameter_count", &Network::parameter_count)
      .def_property_readonly("parameter_names", &Network::parameter_names)
      .def_property_readonly("input_size", &Network::input_size);

  m.def(
      "shape_plan",
      [](std::size_t base_channels, std::size_t input_size) {
        NetworkConfig cfg;
        cfg.base_channels = base_channels;
        cfg.input_size = input_size;
        cfg.validate();
        std::vector<py::tuple> rows;
        for (const StageShape& s : shape_plan(cfg)) rows.push_back(py::make_tuple(s.name, s.channels, s.height, s.width));
        return rows;
      },
      py::arg("base_channels") = 64, py::arg("input_size") = 288);

  m.def("mae", [](const F64Array& p, const F64Array& g) { return mae(to_map(p), to_map(g)); });
  m.def("max_f_beta", [](const F64Array& p, const F64Array& g) { return max_f_beta(to_map(p), to_map(g)); });
  m.def("s_measure", [](const F64Array& p, const F64Array& g) { return s_measure(to_map(p), to_map(g)); });
  m.def(
      "e_measure",
      [](const F64Array& p, const F64Array& g, const std::string& em_mode) {
        return e_measure(to_map(p), to_map(g), metric_config(em_mode));
      },
      py::arg("p"), py::arg("g"), py::arg("em_mode") = "adaptive");

  m.def("bce_sum", [](const F32Array& p, const F32Array& g) { return bce_sum(to_tensor(p), to_tensor(g)).item(); });

  m.def("read_image", [](const std::string& path) { return raster_to_numpy(read_image(path)); });
  m.def(
      "write_pgm",
      [](const std::string& path, const F32Array& map) {
        if (map.ndim() != 2) throw ShapeError("expected a 2-D map");
        Tensor t = to_tensor(map);
        write_pgm(path, Tensor::from_storage({1, t.dim(0), t.dim(1)}, t.storage()));
      },
      "Quantizes a [H, W] map in [0, 1] to an 8-bit PGM.");
  m.def(
      "gen_synthetic",
      [](std::size_t count, std::size_t size, std::uint64_t seed, const std::string& out_dir) {
        return gen_synthetic(count, size, seed, out_dir).size();
      },
      py::arg("count"), py::arg("size"), py::arg("seed"), py::arg("out_dir"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs one command line; returns (exit_code, stdout, stderr).");
}
