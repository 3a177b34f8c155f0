#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <variant>
#include <vector>

#include "lmp/errors.hpp"
#include "lmp/io.hpp"
#include "lmp/pixel_losses.hpp"
#include "lmp/sampler.hpp"
#include "lmp/solver.hpp"
#include "lmp/trainer.hpp"

namespace py = pybind11;
using namespace lmp;

namespace {

// m is either a string ("25%", "1/4", "25") or a number (absolute count).
using MArg = std::variant<double, std::string>;

PoolingSize to_size(const MArg& m) {
  if (const auto* s = std::get_if<std::string>(&m)) return io::parse_m(*s);
  return PoolingSize::absolute(std::get<double>(m));
}

PoolingConfig to_config(double p, const MArg& m) { return {p, to_size(m)}; }

std::vector<double> to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw InvalidInput("losses must be one-dimensional");
  return {a.data(), a.data() + a.size()};
}

std::string path_name(SolvePath path) {
  switch (path) {
    case SolvePath::kZero: return "zero";
    case SolvePath::kGeneral: return "general";
    case SolvePath::kExtendedPrecision: return "extended_precision";
    case SolvePath::kTopK: return "top_k";
    case SolvePath::kUniform: return "uniform";
  }
  return "unknown";
}

}  // namespace

PYBIND11_MODULE(_lmp, m) {
  m.doc() = "Loss max-pooling solver, pixel losses, sampler and training demo";

  auto base = py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);
  (void)base;

  py::class_<PoolingParameters>(m, "PoolingParameters")
      .def_readonly("n", &PoolingParameters::n)
      .def_readonly("p", &PoolingParameters::p)
      .def_readonly("q", &PoolingParameters::q)
      .def_readonly("m", &PoolingParameters::m)
      .def_readonly("gamma", &PoolingParameters::gamma)
      .def_readonly("tau", &PoolingParameters::tau);

  py::class_<SolveOutcome>(m, "SolveOutcome")
      .def_readonly("pooled_loss", &SolveOutcome::pooled_loss)
      .def_readonly("alpha_star", &SolveOutcome::alpha_star)
      .def_readonly("support", &SolveOutcome::support)
      .def_readonly("weights", &SolveOutcome::weights)
      .def_readonly("dual", &SolveOutcome::dual)
      .def_readonly("params", &SolveOutcome::params)
      .def_property_readonly("path", [](const SolveOutcome& o) { return path_name(o.path); })
      .def("to_json", [](const SolveOutcome& o) { return io::outcome_to_json(o).dump(); });

  m.def(
      "solve_pool",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& losses, double p,
         const MArg& pool) { return solve_pool(to_vector(losses), to_config(p, pool)); },
      py::arg("losses"), py::arg("p") = 1.3, py::arg("m") = MArg{std::string("25%")},
      "Pool a loss vector; returns the value, weights, alpha*, J* and lambda*.");

  m.def(
      "derive_parameters",
      [](double p, const MArg& pool, std::size_t n) { return derive_parameters(p, to_size(pool), n); },
      py::arg("p"), py::arg("m"), py::arg("n"));

  m.def("eta", [](double alpha, const std::vector<double>& losses, double q, double pool_m) {
    return eta(alpha, losses, q, pool_m);
  }, py::arg("alpha"), py::arg("losses"), py::arg("q"), py::arg("m"));

  m.def(
      "dual_objective",
      [](const std::vector<double>& lambda, const std::vector<double>& losses, double p, const MArg& pool) {
        return dual_objective(lambda, losses, to_config(p, pool));
      },
      py::arg("dual"), py::arg("losses"), py::arg("p"), py::arg("m"));

  m.def(
      "softmax_xent",
      [](const RowMatrix& logits, const std::vector<int>& labels, std::vector<std::uint8_t> valid) {
        SegBatch b{logits, labels, std::move(valid)};
        if (b.valid.empty()) b.valid.assign(labels.size(), 1);
        const auto r = softmax_xent(b);
        return py::make_tuple(r.losses, r.valid_index_map, r.per_pixel_logit_grad);
      },
      py::arg("logits"), py::arg("labels"), py::arg("valid") = std::vector<std::uint8_t>{},
      "Returns (losses over valid pixels, their pixel indices, per-pixel d loss / d logits).");

  m.def(
      "pooled_logit_gradient",
      [](const RowMatrix& logits, const std::vector<int>& labels, std::vector<std::uint8_t> valid, double p,
         const MArg& pool) {
        SegBatch b{logits, labels, std::move(valid)};
        if (b.valid.empty()) b.valid.assign(labels.size(), 1);
        const auto r = softmax_xent(b);
        const auto out = solve_pool(r.losses, to_config(p, pool));
        return py::make_tuple(out.pooled_loss, RowMatrix(backprop_pooled(r, out.weights)));
      },
      py::arg("logits"), py::arg("labels"), py::arg("valid") = std::vector<std::uint8_t>{},
      py::arg("p") = 1.3, py::arg("m") = MArg{std::string("25%")},
      "Pooled cross-entropy of a batch and its gradient with respect to the logits.");

  m.def(
      "class_probabilities",
      [](const std::vector<double>& iou, double blend, double epsilon) {
        auto stats = ClassStats::create(static_cast<int>(iou.size()));
        stats.iou = iou;
        return class_probabilities(stats, {blend, epsilon, 0});
      },
      py::arg("iou"), py::arg("blend") = 0.5, py::arg("epsilon") = 0.01);

  m.def(
      "train",
      [](const std::string& spec_json, const std::string& config_json) {
        const auto spec = io::spec_from_json(io::Json::parse(spec_json));
        const auto config = io::config_from_json(io::Json::parse(config_json));
        TrainReport report;
        {
          py::gil_scoped_release release;
          report = train(generate_dataset(spec), config);
        }
        return io::report_to_json(report).dump();
      },
      py::arg("spec_json"), py::arg("config_json"),
      "Generate the synthetic dataset and train; both arguments and the result are JSON text.");
}
