#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flowvi/benchmarks.hpp"
#include "flowvi/cli.hpp"
#include "flowvi/elbo.hpp"
#include "flowvi/equivalence.hpp"
#include "flowvi/vip.hpp"

namespace py = pybind11;
using namespace flowvi;

namespace {

py::dict report_dict(const EquivReport& r) {
  py::dict d;
  d["check"] = r.check;
  d["model"] = r.model;
  d["trials"] = r.trials;
  d["tolerance"] = r.tolerance;
  d["max_z_error"] = r.max_z_error;
  d["max_logdet_error"] = r.max_logdet_error;
  d["out_of_domain"] = r.out_of_domain;
  d["passed"] = r.passed;
  py::list fails;
  for (const auto& f : r.failures) fails.append(py::make_tuple(f.trial, f.coordinate, f.error));
  d["failures"] = fails;
  return d;
}

py::dict run_dict(const RunResult& r) {
  py::dict d;
  d["model"] = r.model;
  d["family"] = r.spec.label();
  d["learning_rate"] = r.learning_rate;
  d["seed"] = r.seed;
  d["failed"] = r.failed;
  d["failure"] = r.failure;
  d["final_elbo"] = r.final_elbo;
  d["final_se"] = r.final_se;
  d["neg_elbo"] = r.neg_elbo();
  d["trace"] = r.trace;
  d["lambda"] = r.lambda;
  d["params"] = r.params;
  d["clip_events"] = r.clip_events;
  d["clamp_events"] = r.clamp_events;
  py::list sweep;
  for (const auto& e : r.sweep) {
    sweep.append(py::dict(py::arg("learning_rate") = e.learning_rate, py::arg("failed") = e.failed,
                          py::arg("final_elbo") = e.final_elbo, py::arg("final_se") = e.final_se));
  }
  d["sweep"] = sweep;
  return d;
}

TrainConfig make_config(std::size_t iterations, std::size_t mc_samples, std::vector<double> rates,
                        std::uint64_t seed, std::size_t eval_samples) {
  TrainConfig c;
  c.iterations = iterations;
  c.mc_samples = mc_samples;
  c.learning_rates = std::move(rates);
  c.seed = seed;
  c.eval_samples = eval_samples;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_flowvi, m) {
  m.doc() = "flow-based variational inference for hierarchical models";

  py::register_exception<ad::NumericDomainError>(m, "NumericDomainError", PyExc_ArithmeticError);
  py::register_exception<ModelError>(m, "ModelError", PyExc_ValueError);
  py::register_exception<EstimationError>(m, "EstimationError", PyExc_RuntimeError);

  py::class_<ModelGraph>(m, "Model")
      .def_property_readonly("name", [](const ModelGraph& g) { return g.name; })
      .def_property_readonly("dim", &ModelGraph::dim)
      .def_property_readonly("site_names",
                             [](const ModelGraph& g) {
                               std::vector<std::string> out;
                               for (const auto& s : g.sites) out.push_back(s.name);
                               return out;
                             })
      .def_property_readonly("log_normalizer", [](const ModelGraph& g) { return g.log_normalizer; })
      .def("log_joint", [](const ModelGraph& g, std::vector<double> z) { return log_joint(g, z); })
      .def("__repr__", [](const ModelGraph& g) { return "<Model " + g.name + " D=" + std::to_string(g.dim()) + ">"; });

  m.def("benchmark_names", &benchmark_names);
  m.def(
      "build_benchmark",
      [](const std::string& name, std::optional<std::string> path, std::optional<std::uint64_t> synth_seed) {
        return build_benchmark(name, {path, synth_seed}).graph;
      },
      py::arg("name"), py::arg("path") = py::none(), py::arg("synth_seed") = py::none());

  py::class_<MifFlags>(m, "MifFlags")
      .def(py::init([](bool t, bool prior, bool order, bool eps) { return MifFlags{t, prior, order, eps}; }),
           py::arg("use_translation") = true, py::arg("use_prior_inputs") = true, py::arg("respect_order") = true,
           py::arg("eps_conditioning") = false)
      .def_readwrite("use_translation", &MifFlags::use_translation)
      .def_readwrite("use_prior_inputs", &MifFlags::use_prior_inputs)
      .def_readwrite("respect_order", &MifFlags::respect_order)
      .def_readwrite("eps_conditioning", &MifFlags::eps_conditioning);

  py::class_<FlowSpec>(m, "FlowSpec")
      .def_property_readonly("label", &FlowSpec::label)
      .def_readonly("dim", &FlowSpec::dim)
      .def_readonly("hidden", &FlowSpec::hidden)
      .def_readonly("vip", &FlowSpec::vip)
      .def_property_readonly("num_params", [](const FlowSpec& s) { return ParamLayout(s).size(); })
      .def("__repr__", [](const FlowSpec& s) { return "<FlowSpec " + s.label() + ">"; });

  m.def(
      "family",
      [](const std::string& name, std::size_t dim, std::size_t hidden, std::optional<MifFlags> flags) {
        if (flags) {
          if (name != "MIF") throw std::invalid_argument("MIF flags are only legal on MIF");
          return FlowSpec::make_mif(dim, *flags, hidden);
        }
        return parse_family(name, dim, hidden);
      },
      py::arg("name"), py::arg("dim"), py::arg("hidden") = 0, py::arg("flags") = py::none());

  m.def("full_rank_forward", [](const Eigen::VectorXd& mu, const Eigen::MatrixXd& L, std::vector<double> eps) {
    const FlowDraw<double> d = full_rank_forward(AffineBase{mu, L}, eps);
    return py::make_tuple(d.z, d.logdet);
  });
  m.def("faf_from_full_rank", &faf_from_full_rank);
  m.def("flow_forward", [](const ModelGraph& g, const FlowSpec& s, std::vector<double> params, std::vector<double> eps) {
    const ParamLayout layout(s);
    const FamilySample<double> f = sample_family<double>(s, layout, g, params, eps);
    return py::make_tuple(f.z, f.log_q);
  });

  m.def("vip_transform", [](const ModelGraph& g, std::vector<double> lambda, std::vector<double> zt) {
    const VipDraw<double> d = vip_transform<double>(g, lambda, zt);
    return py::make_tuple(d.z, d.log_jacobian);
  });
  m.def("vip_inverse", [](const ModelGraph& g, std::vector<double> lambda, std::vector<double> z) {
    return vip_inverse(g, lambda, z);
  });
  m.def("log_p_vip", [](const ModelGraph& g, std::vector<double> lambda, std::vector<double> zt) {
    return log_p_vip<double>(g, lambda, zt);
  });

  m.def("check_lemma1", [](std::uint64_t trials, std::size_t dim, double tol, std::uint64_t seed) {
    return report_dict(check_lemma1(trials, dim, tol, seed));
  }, py::arg("trials"), py::arg("dim"), py::arg("tol"), py::arg("seed") = 1);
  m.def("check_theorem1", [](const ModelGraph& g, std::uint64_t trials, double tol, std::uint64_t seed) {
    return report_dict(check_theorem1(g, trials, tol, seed));
  }, py::arg("model"), py::arg("trials"), py::arg("tol"), py::arg("seed") = 1);
  m.def("check_corollary1", [](const ModelGraph& g, std::uint64_t probes, double tol, std::uint64_t seed) {
    return report_dict(check_corollary1(g, probes, tol, seed));
  }, py::arg("model"), py::arg("probes"), py::arg("tol"), py::arg("seed") = 1);
  m.def("check_kl_identity", [](const ModelGraph& g, std::uint64_t trials, double tol, std::uint64_t seed) {
    return report_dict(check_kl_identity(g, trials, tol, seed));
  }, py::arg("model"), py::arg("trials"), py::arg("tol"), py::arg("seed") = 1);

  m.def(
      "train",
      [](const ModelGraph& g, const FlowSpec& s, std::size_t iterations, std::size_t mc_samples,
         std::vector<double> learning_rates, std::uint64_t seed, std::size_t eval_samples) {
        const TrainConfig c = make_config(iterations, mc_samples, std::move(learning_rates), seed, eval_samples);
        py::gil_scoped_release release;
        RunResult r = lr_sweep(g, s, c);
        py::gil_scoped_acquire acquire;
        return run_dict(r);
      },
      py::arg("model"), py::arg("family"), py::arg("iterations") = 2000, py::arg("mc_samples") = 16,
      py::arg("learning_rates") = std::vector<double>{1e-2}, py::arg("seed") = 1, py::arg("eval_samples") = 10000);

  m.def(
      "final_eval",
      [](const ModelGraph& g, const FlowSpec& s, std::vector<double> params, std::size_t n, std::uint64_t seed) {
        const ElboEstimate e = final_eval(g, s, params, n, seed);
        return py::make_tuple(e.elbo, e.se);
      },
      py::arg("model"), py::arg("family"), py::arg("params"), py::arg("eval_samples"), py::arg("seed") = 1);

  m.def(
      "sample",
      [](const ModelGraph& g, const FlowSpec& s, std::vector<double> params, std::size_t n, std::uint64_t seed) {
        return cli::draw_samples(g, s, params, n, seed);
      },
      py::arg("model"), py::arg("family"), py::arg("params"), py::arg("n"), py::arg("seed") = 1);
}
