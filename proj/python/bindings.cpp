#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protoecg/errors.hpp"
#include "protoecg/evaluation.hpp"
#include "protoecg/explainer.hpp"
#include "protoecg/losses.hpp"
#include "protoecg/prototype.hpp"
#include "protoecg/signal_io.hpp"
#include "protoecg/taxonomy.hpp"
#include "protoecg/training.hpp"

namespace py = pybind11;
using namespace protoecg;

namespace {

py::dict interval(const std::optional<Interval>& i) {
  py::dict d;
  if (!i) return d;
  d["lo"] = i->lo;
  d["hi"] = i->hi;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Numeric core of the multi-branch prototype ECG classifier";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<IngestionError>(m, "IngestionError", base.ptr());
  py::register_exception<TaxonomyError>(m, "TaxonomyError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigurationError>(m, "ConfigurationError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<ProjectionError>(m, "ProjectionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<NotFoundError>(m, "NotFoundError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("taxonomy", [] {
    const auto& t = LabelTaxonomy::standard();
    py::list out;
    for (int i = 0; i < t.size(); ++i)
      out.append(py::make_tuple(t.code(i), std::string(branch_name(t.branch_of(i)))));
    return out;
  }, "List of (code, branch) in label-index order.");

  m.def("highpass_filter",
        [](const Eigen::MatrixXd& signal, double cutoff_hz, bool zero_phase) {
          FilterOptions o;
          o.cutoff_hz = cutoff_hz;
          o.zero_phase = zero_phase;
          return highpass_filter(signal, o);
        },
        py::arg("signal"), py::arg("cutoff_hz") = 0.5, py::arg("zero_phase") = false,
        "Samples x leads signal at 500 Hz.");
  m.def("highpass_magnitude", [](double f, double cutoff_hz) {
    FilterOptions o;
    o.cutoff_hz = cutoff_hz;
    return highpass_magnitude(f, o);
  }, py::arg("freq_hz"), py::arg("cutoff_hz") = 0.5);

  m.def("similarity", [](const Eigen::VectorXd& z, const Eigen::VectorXd& p, double a) { return similarity(z, p, a); },
        py::arg("z"), py::arg("p"), py::arg("a"));
  m.def("topk_pool", [](const std::vector<double>& scores, int k) { return topk_pool(scores, k); }, py::arg("scores"),
        py::arg("k"));
  m.def("sliding_similarity",
        [](const Eigen::MatrixXd& map, const Eigen::VectorXd& prototype, int window, double a) {
          const LatentMap latent = map;
          return sliding_similarity(latent, prototype, window, a);
        },
        py::arg("latent"), py::arg("prototype"), py::arg("window"), py::arg("a"),
        "latent is channels x length; the prototype is a channel-major window.");

  m.def("jaccard_matrix", [](const Eigen::MatrixXd& labels, const std::vector<int>& class_of) {
    return jaccard_matrix(labels, class_of).values;
  }, py::arg("labels"), py::arg("class_of"));
  m.def("bce_loss", [](const Eigen::MatrixXd& z, const Eigen::MatrixXd& y, const Eigen::VectorXd& w) { return bce_loss(z, y, w); },
        py::arg("logits"), py::arg("targets"), py::arg("class_weights"));
  m.def("clustering_loss",
        [](const Eigen::MatrixXd& s, const Eigen::MatrixXd& y, const std::vector<int>& c) { return clustering_loss(s, y, c); },
        py::arg("similarities"), py::arg("labels"), py::arg("class_of"));
  m.def("separation_loss",
        [](const Eigen::MatrixXd& s, const Eigen::MatrixXd& y, const std::vector<int>& c) { return separation_loss(s, y, c); },
        py::arg("similarities"), py::arg("labels"), py::arg("class_of"));
  m.def("orthogonality_loss", [](const Eigen::MatrixXd& p) { return orthogonality_loss(p); }, py::arg("prototypes"));
  m.def("contrastive_loss",
        [](const Eigen::MatrixXd& p, const Eigen::MatrixXd& co, double a) { return contrastive_loss(p, co, a); },
        py::arg("prototypes"), py::arg("cooccurrence"), py::arg("scale"));

  m.def("init_classifier", [](const std::vector<int>& class_of, int num_classes) {
    return init_classifier(class_of, num_classes).weights;
  }, py::arg("class_of"), py::arg("num_classes"));

  m.def("auroc", [](const Eigen::VectorXd& s, const Eigen::VectorXd& y) { return auroc(s, y); }, py::arg("scores"),
        py::arg("labels"));
  m.def("per_class_auroc", &per_class_auroc, py::arg("scores"), py::arg("labels"));
  m.def("macro_auroc", &macro_auroc, py::arg("per_class"));
  m.def("weighted_auroc", &weighted_auroc, py::arg("per_class"), py::arg("positives"));
  m.def("bootstrap",
        [](const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels, int n_resamples, std::uint64_t seed) {
          const auto r = bootstrap(scores, labels, n_resamples, seed);
          py::dict d;
          d["macro"] = interval(r.macro);
          d["weighted"] = interval(r.weighted);
          d["n_resamples"] = r.n_resamples;
          d["macro_undefined"] = r.macro_undefined;
          d["weighted_undefined"] = r.weighted_undefined;
          return d;
        },
        py::arg("scores"), py::arg("labels"), py::arg("n_resamples") = 10000, py::arg("seed") = 0);

  m.def("latent_window_to_seconds", &latent_window_to_seconds, py::arg("offset"), py::arg("width"),
        py::arg("latent_length") = kLatentLength2D);
}
