#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cea/assembly.hpp"
#include "cea/backbone.hpp"
#include "cea/harness.hpp"
#include "cea/objectives.hpp"

namespace py = pybind11;
using namespace cea;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

RunConfig config_from(const py::object& cfg) {
  if (cfg.is_none()) return RunConfig{};
  const std::string text = py::str(py::module_::import("json").attr("dumps")(cfg));
  return run_config_from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(cea_kit, m) {
  m.doc() = "Continuous expert assembly: low-rank residual assembly, metrics and run commands";

  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "rank_norm",
      [](const Array& a, const Array& b, double epsilon) {
        const auto fp = rank_norm(FactorPair{to_tensor(a), to_tensor(b)}, epsilon);
        return py::make_tuple(to_array(fp.a), to_array(fp.b));
      },
      py::arg("a"), py::arg("b"), py::arg("epsilon") = 1e-6,
      "Divide columns of A and rows of B by their L2 norm plus epsilon.");

  m.def(
      "assemble_residual",
      [](const Array& x, const Array& a, const Array& b, const std::string& routing,
         std::size_t top_k, std::optional<double> alpha, bool normalize, double epsilon) {
        CeaConfig cfg;
        cfg.rank = static_cast<std::size_t>(a.ndim() == 2 ? a.shape(1) : 0);
        cfg.routing = routing_from_string(routing);
        cfg.top_k = top_k;
        cfg.alpha = alpha;
        cfg.epsilon = epsilon;
        FactorPair fp{to_tensor(a), to_tensor(b)};
        if (normalize) fp = rank_norm(fp, epsilon);
        return to_array(assemble_residual(to_tensor(x), fp, cfg));
      },
      py::arg("x"), py::arg("a"), py::arg("b"), py::arg("routing") = "dense_signed",
      py::arg("top_k") = 2, py::arg("alpha") = py::none(), py::arg("normalize") = true,
      py::arg("epsilon") = 1e-6, "Residual delta [N x d_out] from tokens X [N x d_in] and factors A, B.");

  m.def(
      "assembly_cost",
      [](std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out, std::uint64_t r) {
        const auto c = assembly_cost(n, d_in, d_out, r);
        py::dict d;
        d["lowrank"] = c.lowrank;
        d["dense"] = c.dense;
        d["ratio"] = c.ratio;
        return d;
      },
      py::arg("n"), py::arg("d_in"), py::arg("d_out"), py::arg("r"));

  m.def(
      "psnr", [](const Array& p, const Array& t, double peak) { return psnr(to_tensor(p), to_tensor(t), peak); },
      py::arg("pred"), py::arg("target"), py::arg("peak") = 1.0);
  m.def(
      "ssim", [](const Array& p, const Array& t, double peak) { return ssim(to_tensor(p), to_tensor(t), peak); },
      py::arg("pred"), py::arg("target"), py::arg("peak") = 1.0);

  m.def(
      "paired_bootstrap",
      [](const std::vector<double>& diffs, std::size_t n, double ci, std::uint64_t seed) {
        const auto r = paired_bootstrap(diffs, n, ci, seed);
        py::dict d;
        d["mean"] = r.mean;
        d["lo"] = r.lo;
        d["hi"] = r.hi;
        d["p_boot"] = r.p_boot;
        d["p_below_resolution"] = r.p_below_resolution;
        d["n_resamples"] = r.n_resamples;
        d["n_pairs"] = r.n_pairs;
        return d;
      },
      py::arg("diffs"), py::arg("n_resamples") = 10000, py::arg("ci") = 0.95, py::arg("seed") = 0);

  m.def("default_config", [] { return to_py(to_json(RunConfig{})); });

  m.def(
      "generate",
      [](const py::object& cfg, const std::string& out) {
        return to_py(cmd_generate(config_from(cfg), out).json);
      },
      py::arg("config") = py::none(), py::arg("out") = "");
  m.def(
      "train",
      [](const py::object& cfg, const std::string& out) {
        const auto c = config_from(cfg);
        return to_py(cmd_train(c, out.empty() ? c.out : out).json);
      },
      py::arg("config") = py::none(), py::arg("out") = "");
  m.def(
      "evaluate",
      [](const py::object& cfg, const std::string& checkpoint, const std::string& split,
         const std::string& out) {
        const auto c = config_from(cfg);
        return to_py(cmd_eval(c, checkpoint, split.empty() ? c.eval_split : split, out).json);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("split") = "", py::arg("out") = "");
  m.def(
      "run_props",
      [](const std::vector<std::string>& suites, std::uint64_t seed, const std::string& fault) {
        PropOptions o;
        o.seed = seed;
        o.fault = fault;
        return to_py(cmd_props(o, suites).json);
      },
      py::arg("suites") = std::vector<std::string>{}, py::arg("seed") = 0, py::arg("fault") = "");
}
