// Python module exposing the main operations: dataset generation and IO,
// variant training, checkpoint evaluation, the clustering primitives, and the
// transfer metrics. Heavy calls release the GIL.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <fstream>
#include <utility>

#include "amean/data.hpp"
#include "amean/evaluation.hpp"
#include "amean/experiment.hpp"
#include "amean/meta_learner.hpp"
#include "amean/networks.hpp"
#include "amean/trainer.hpp"

namespace py = pybind11;
using namespace amean;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mat mat_from_array(const DoubleArray& arr, const char* what) {
  if (arr.ndim() != 2) {
    throw py::value_error(std::string(what) + " must be a 2-D array");
  }
  Mat m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::memcpy(m.a.data(), arr.data(), m.size() * sizeof(double));
  return m;
}

py::array_t<double> array_from_mat(const Mat& m) {
  py::array_t<double> arr({static_cast<py::ssize_t>(m.rows),
                           static_cast<py::ssize_t>(m.cols)});
  std::memcpy(arr.mutable_data(), m.a.data(), m.size() * sizeof(double));
  return arr;
}

// A finished run: the trained bundle plus its history and test-split report.
struct TrainOutcome {
  TrainResult result;
  MetricsReport report;
};

TrainOutcome train_py(const BlendedDataset& ds, const std::string& config_json,
                      uint64_t seed) {
  TrainConfig tc = parse_train_config(config_json);
  tc.seed = seed;
  py::gil_scoped_release release;
  TrainOutcome out{train_on_dataset(ds, tc), {}};
  out.report = evaluate_bundle(out.result.bundle, ds, Split::kTest, tc.dec.t_dof);
  out.report.variant = variant_name(tc.variant);
  out.report.seed = seed;
  return out;
}

std::string evaluate_checkpoint_py(const std::string& checkpoint_path,
                                   const BlendedDataset& ds, double t_dof) {
  py::gil_scoped_release release;
  ModelBundle bundle = load_checkpoint(checkpoint_path);
  MetricsReport report = evaluate_bundle(bundle, ds, Split::kTest, t_dof);
  report.variant = "eval";
  return metrics_to_json_string(report);
}

}  // namespace

PYBIND11_MODULE(_amean_core, m) {
  m.doc() = "Blending-target domain adaptation: data, training, metrics.";

  // Map the configuration/contract failures to ValueError and file trouble to
  // OSError; anything else surfaces as RuntimeError.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ContractError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<BlendedDataset>(m, "Dataset",
                             "Labeled source plus a blended unlabeled target.")
      .def_property_readonly("d", [](const BlendedDataset& ds) { return ds.d; },
                             "Input dimension.")
      .def_property_readonly("m", [](const BlendedDataset& ds) { return ds.m; },
                             "Class count.")
      .def_property_readonly("k", [](const BlendedDataset& ds) { return ds.k; },
                             "Sub-target count.")
      .def_property_readonly("pi", [](const BlendedDataset& ds) { return ds.pi; },
                             "Empirical sub-target proportions.")
      .def_property_readonly(
          "n_source", [](const BlendedDataset& ds) { return ds.source_x.rows; },
          "Labeled source rows.")
      .def_property_readonly(
          "n_target", [](const BlendedDataset& ds) { return ds.n_target(); },
          "Unlabeled target rows across both splits.")
      .def(
          "save",
          [](const BlendedDataset& ds, const std::string& path) {
            save_dataset(ds, path);
          },
          py::arg("path"), "Write the dataset as CSV.")
      .def("__repr__", [](const BlendedDataset& ds) {
        return "Dataset(d=" + std::to_string(ds.d) + ", m=" + std::to_string(ds.m) +
               ", k=" + std::to_string(ds.k) +
               ", n_source=" + std::to_string(ds.source_x.rows) +
               ", n_target=" + std::to_string(ds.n_target()) + ")";
      });

  py::class_<TrainOutcome>(m, "TrainOutcome",
                           "Trained model plus its test-split evaluation.")
      .def_property_readonly(
          "variant", [](const TrainOutcome& o) { return o.report.variant; })
      .def_property_readonly("seed",
                             [](const TrainOutcome& o) { return o.report.seed; })
      .def_property_readonly(
          "acc_btda", [](const TrainOutcome& o) { return o.report.acc_btda; },
          "Mixture-weighted target accuracy.")
      .def_property_readonly(
          "acc_ew", [](const TrainOutcome& o) { return o.report.acc_ew; },
          "Unweighted mean per-sub-target accuracy.")
      .def_property_readonly(
          "per_subtarget_acc",
          [](const TrainOutcome& o) { return o.report.per_subtarget_acc; })
      .def_property_readonly(
          "weights", [](const TrainOutcome& o) { return o.report.weights; })
      .def_property_readonly(
          "partition_ari",
          [](const TrainOutcome& o) { return o.report.partition_ari; },
          "Adjusted Rand index of the bundle's final meta partition against "
          "the oracle sub-targets.")
      .def_property_readonly(
          "warnings",
          [](const TrainOutcome& o) { return o.result.history.warnings; })
      .def_property_readonly(
          "partitions",
          [](const TrainOutcome& o) {
            std::vector<std::vector<int>> out;
            for (const MetaPartition& p : o.result.history.partitions) {
              out.push_back(p.assign);
            }
            return out;
          },
          "Hard sub-target assignment per outer loop (target train rows).")
      .def("metrics_json",
           [](const TrainOutcome& o) { return metrics_to_json_string(o.report); },
           "Full evaluation report as a JSON string.")
      .def("history_json",
           [](const TrainOutcome& o) {
             return history_summary_json(o.result.history);
           },
           "Loss-curve summary as a JSON string.")
      .def(
          "export_history",
          [](const TrainOutcome& o, const std::string& path) {
            export_history_csv(o.result.history, path);
          },
          py::arg("path"), "Write the per-iteration loss records as CSV.")
      .def(
          "save_checkpoint",
          [](const TrainOutcome& o, const std::string& path) {
            save_checkpoint(o.result.bundle, path);
          },
          py::arg("path"))
      .def(
          "export_embeddings",
          [](const TrainOutcome& o, const BlendedDataset& ds,
             const std::string& path) {
            export_embeddings(o.result.bundle, ds, path);
          },
          py::arg("dataset"), py::arg("path"),
          "Write test-split features with hidden labels as CSV.")
      .def("__repr__", [](const TrainOutcome& o) {
        return "TrainOutcome(variant='" + o.report.variant +
               "', seed=" + std::to_string(o.report.seed) +
               ", acc_btda=" + fmt17(o.report.acc_btda) + ")";
      });

  m.def(
      "generate",
      [](const std::string& spec_json, uint64_t seed) {
        DataSpec spec = parse_data_spec(spec_json);
        py::gil_scoped_release release;
        return generate_blended(spec, seed);
      },
      py::arg("spec_json"), py::arg("seed"),
      "Generate a blended dataset from a JSON data spec (inline fields or a "
      "preset such as {\"preset\": \"default-task\"}).");

  m.def(
      "load_dataset",
      [](const std::string& path) { return load_dataset(path); }, py::arg("path"),
      "Load a dataset CSV written by save/generate.");

  m.def("train", &train_py, py::arg("dataset"), py::arg("config_json") = "{}",
        py::arg("seed") = 1,
        "Train one variant on a dataset. config_json holds the train block "
        "(variant, mode, outer_loops, h, trunk_width, hyper, dec, ...); "
        "defaults apply to omitted keys.");

  m.def("evaluate_checkpoint", &evaluate_checkpoint_py, py::arg("checkpoint"),
        py::arg("dataset"), py::arg("t_dof") = 1.0,
        "Load a checkpoint and score it on the dataset's test split; returns "
        "the report as a JSON string.");

  // ---- clustering primitives ----

  m.def(
      "soft_assign",
      [](const DoubleArray& embeddings, const DoubleArray& centroids,
         double t_dof) {
        return array_from_mat(soft_assign(mat_from_array(embeddings, "embeddings"),
                                          mat_from_array(centroids, "centroids"),
                                          t_dof));
      },
      py::arg("embeddings"), py::arg("centroids"), py::arg("t_dof") = 1.0,
      "Student-t soft cluster assignments, one row per embedding.");

  m.def(
      "target_distribution",
      [](const DoubleArray& q) {
        return array_from_mat(target_distribution(mat_from_array(q, "q")));
      },
      py::arg("q"), "Sharpened self-training target for a soft assignment.");

  m.def("adjusted_rand_index", &adjusted_rand_index, py::arg("a"), py::arg("b"),
        "Chance-corrected agreement between two labelings of the same rows.");

  // ---- transfer metrics ----

  m.def("acc_btda", &acc_btda, py::arg("per_subtarget_acc"), py::arg("weights"),
        "Mixture-weighted accuracy: sum_j w_j * acc_j.");

  m.def(
      "ant",
      [](double acc_adapted, double acc_source_only) {
        AntResult r = ant(acc_adapted, acc_source_only);
        return py::make_tuple(r.gain, r.flag);
      },
      py::arg("acc_adapted"), py::arg("acc_source_only"),
      "Adaptation gain over the source-only baseline as (gain, "
      "negative_transfer_flag).");

  m.def("rnt", &rnt, py::arg("acc_btda"), py::arg("mtda_accs"), py::arg("weights"),
        "Blending cost: weighted accuracy minus the weighted single-target legs.");

  m.def("validate_simplex", &validate_simplex, py::arg("weights"),
        "Raises ValueError unless weights is a probability vector.");

  m.attr("DIGIT_FIVE_WEIGHTS") = kDigitFiveWeights;
  m.attr("OFFICE31_WEIGHTS") = kOffice31Weights;
  m.attr("OFFICE_HOME_WEIGHTS") = kOfficeHomeWeights;
}
