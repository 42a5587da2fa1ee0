#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "afp/align.hpp"
#include "afp/commands.hpp"
#include "afp/corpus.hpp"
#include "afp/error.hpp"
#include "afp/eval.hpp"
#include "afp/repr.hpp"

namespace py = pybind11;
using namespace afp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

repr::Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return repr::Matrix({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const repr::Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::tuple run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = cli::run(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_afp, m) {
  m.doc() = "Alignment-after-pretraining toolkit: losses, metrics and the afp command line";

  auto base = py::register_exception<Error>(m, "AfpError", PyExc_RuntimeError);
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<LengthError>(m, "LengthError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<CorruptArtifact>(m, "CorruptArtifact", base.ptr());

  m.def("run_cli", &run_cli, py::arg("args"),
        "Run an afp subcommand in-process. Returns (exit_code, stdout, stderr).");

  m.def(
      "mcl_loss",
      [](const Array& h, const Array& h_plus, double tau, bool symmetric) {
        return align::mcl_loss_value(to_matrix(h), to_matrix(h_plus), tau, symmetric);
      },
      py::arg("h"), py::arg("h_plus"), py::arg("tau") = 0.05, py::arg("symmetric") = false);

  m.def("alignment", [](const Array& x, const Array& y) { return repr::alignment_metric(to_matrix(x), to_matrix(y)); },
        py::arg("x"), py::arg("x_pos"));
  m.def("uniformity", [](const Array& x) { return repr::uniformity_metric(to_matrix(x)); }, py::arg("points"));
  m.def("retrieval_acc_at_1",
        [](const Array& s, const Array& t) { return repr::retrieval_acc_at_1(to_matrix(s), to_matrix(t)); },
        py::arg("src"), py::arg("tgt"));
  m.def(
      "pca2",
      [](const Array& x) {
        const repr::Pca2 p = repr::pca2(to_matrix(x));
        py::dict d;
        d["coords"] = to_array(p.coords);
        d["components"] = to_array(p.components);
        d["eigenvalues"] = p.eigenvalues;
        d["total_variance"] = p.total_variance;
        return d;
      },
      py::arg("vectors"));

  m.def(
      "bleu",
      [](const std::vector<corpus::Tokens>& hyps, const std::vector<corpus::Tokens>& refs) {
        return eval::bleu(hyps, refs);
      },
      py::arg("hypotheses"), py::arg("references"));

  py::class_<corpus::TwinLanguageFamily>(m, "Family")
      .def(py::init([](int concept_count, const std::vector<std::string>& names, std::uint64_t seed) {
             corpus::FamilyConfig c;
             c.concept_count = concept_count;
             c.languages.clear();
             for (const auto& n : names) c.languages.push_back({n, corpus::OrderTransform::identity, {}});
             return corpus::make_family(c, seed);
           }),
           py::arg("concept_count") = 128, py::arg("languages") = std::vector<std::string>{"L0", "L1"},
           py::arg("seed") = 0)
      .def_property_readonly("vocab_size", &corpus::TwinLanguageFamily::vocab_size)
      .def_property_readonly("language_count", &corpus::TwinLanguageFamily::language_count)
      .def("sample", [](const corpus::TwinLanguageFamily& f, int lang, std::uint64_t seed) {
             Pcg32 r(seed, 0);
             return corpus::sample_sentence(f, lang, r);
           }, py::arg("lang"), py::arg("seed"))
      .def("translate", [](const corpus::TwinLanguageFamily& f, const corpus::Tokens& s, int src, int tgt) {
             return corpus::translate(f, s, src, tgt);
           }, py::arg("sentence"), py::arg("src"), py::arg("tgt"));
}
