#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flowtune/checkpoint.hpp"
#include "flowtune/grad_check.hpp"
#include "flowtune/pipeline.hpp"

namespace py = pybind11;
using namespace flowtune;

namespace {

Tensor tensor_from(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
    py::buffer_info info = a.request();
    std::vector<int> shape;
    for (auto d : info.shape) shape.push_back(static_cast<int>(d));
    Tensor t = Tensor::zeros(shape);
    const double* src = static_cast<const double*>(info.ptr);
    for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<real>(src[i]);
    return t;
}

py::array_t<double> numpy_from(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    double* dst = static_cast<double*>(out.request().ptr);
    for (size_t i = 0; i < t.data.size(); ++i) dst[i] = static_cast<double>(t.data[i]);
    return out;
}

std::vector<std::pair<int, std::string>> detections_as_pairs(const std::vector<Annotation>& anns) {
    std::vector<std::pair<int, std::string>> out;
    for (const Annotation& a : anns) out.emplace_back(a.position, task_kind_name(a.type));
    return out;
}

std::vector<Annotation> annotations_from_pairs(const std::vector<std::pair<int, std::string>>& p) {
    std::vector<Annotation> out;
    for (const auto& [pos, type] : p) out.push_back({pos, task_kind_from(type), 0});
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "conditional flow-matching generation with parameter-efficient fine-grained control";
    m.attr("__version__") = "0.1.0";

    m.def(
        "sinusoidal_time_embedding",
        [](double t, int dim) { return numpy_from(sinusoidal_time_embedding(t, dim)); },
        py::arg("t"), py::arg("dim"));

    m.def(
        "conditional_path",
        [](py::array_t<double> x0, py::array_t<double> x1, double t, double sigma_min) {
            PathParams pp{sigma_min};
            return numpy_from(conditional_path(tensor_from(x0), tensor_from(x1), t, pp));
        },
        py::arg("x0"), py::arg("x1"), py::arg("t"), py::arg("sigma_min") = 1e-5);

    m.def(
        "target_field",
        [](py::array_t<double> x0, py::array_t<double> x1, double sigma_min) {
            PathParams pp{sigma_min};
            return numpy_from(target_field(tensor_from(x0), tensor_from(x1), pp));
        },
        py::arg("x0"), py::arg("x1"), py::arg("sigma_min") = 1e-5);

    m.def(
        "integrate_field",
        [](const std::function<py::array_t<double>(py::array_t<double>, double)>& field,
           py::array_t<double> x0, const std::string& method, int n_steps) {
            SolverConfig cfg{solver_method_from(method), n_steps};
            FieldFn f = [&](const Tensor& x, double t) { return tensor_from(field(numpy_from(x), t)); };
            return numpy_from(integrate_field(f, tensor_from(x0), cfg));
        },
        py::arg("field"), py::arg("x0"), py::arg("method") = "midpoint", py::arg("n_steps") = 32);

    m.def(
        "f1_micro",
        [](const std::vector<std::vector<std::pair<int, std::string>>>& predicted,
           const std::vector<std::vector<std::pair<int, std::string>>>& gold,
           const std::vector<std::string>& categories) {
            std::vector<std::vector<Annotation>> p, g;
            for (const auto& u : predicted) p.push_back(annotations_from_pairs(u));
            for (const auto& u : gold) g.push_back(annotations_from_pairs(u));
            std::vector<TaskKind> cats;
            for (const auto& c : categories) cats.push_back(task_kind_from(c));
            F1Report rep = f1_micro(p, g, cats);
            py::dict out;
            out["micro_f1"] = rep.micro_f1;
            out["micro_precision"] = rep.micro_precision;
            out["micro_recall"] = rep.micro_recall;
            py::dict per;
            for (const F1Row& row : rep.per_category) {
                py::dict r;
                r["precision"] = row.precision;
                r["recall"] = row.recall;
                r["f1"] = row.f1;
                r["tp"] = row.tp;
                r["fp"] = row.fp;
                r["fn"] = row.fn;
                per[py::str(row.category)] = r;
            }
            out["per_category"] = per;
            return out;
        },
        py::arg("predicted"), py::arg("gold"), py::arg("categories"));

    m.def(
        "detect_annotations",
        [](py::array_t<double> features, const std::vector<int>& symbols,
           const std::vector<int>& alignment, const std::string& task) {
            TaskSpec spec;
            spec.task = task_kind_from(task);
            return detections_as_pairs(detect_annotations(tensor_from(features), symbols, alignment, spec));
        },
        py::arg("features"), py::arg("symbols"), py::arg("alignment"), py::arg("task"));

    m.def("symbol_duration", &symbol_duration, py::arg("symbol"));

    m.def(
        "gradient_check",
        [](int seed) {
            Rng rng(derive_seed(0xC0FFEE, static_cast<uint64_t>(seed)));
            TapeFn f = [](Tape& t, std::span<const Var> p) {
                Var h = t.relu(t.add(t.matmul_nt(p[0], p[1]), p[2]));
                return t.mean(t.mul(h, h));
            };
            std::vector<Tensor> params = {rng.normal_tensor({2, 3}), rng.normal_tensor({4, 3}),
                                          rng.normal_tensor({4})};
            auto ad = evaluate_with_gradients(f, params).second;
            auto fd = finite_difference_gradients(f, params, 1e-6);
            double worst = 0;
            for (size_t i = 0; i < ad.size(); ++i) {
                for (size_t j = 0; j < ad[i].data.size(); ++j) {
                    double den = std::max(1.0, std::abs(static_cast<double>(fd[i].data[j])));
                    worst = std::max(worst, std::abs(static_cast<double>(ad[i].data[j] - fd[i].data[j])) / den);
                }
            }
            return worst;
        },
        py::arg("seed") = 0);

    // file formats
    m.def(
        "read_feature_file", [](const std::string& path) { return numpy_from(read_feature_file(path)); },
        py::arg("path"));
    m.def(
        "write_feature_file",
        [](const std::string& path, py::array_t<double> features) {
            write_feature_file(path, tensor_from(features));
        },
        py::arg("path"), py::arg("features"));
    m.def("file_fingerprint", &file_fingerprint, py::arg("path"));

    // experiment pipeline over config files
    m.def(
        "run_corpus",
        [](const std::string& config, const std::string& out) { run_corpus(load_config(config), out); },
        py::arg("config"), py::arg("out"));
    m.def(
        "run_pretrain",
        [](const std::string& config, const std::string& out) { run_pretrain(load_config(config), out); },
        py::arg("config"), py::arg("out"));
    m.def(
        "run_finetune",
        [](const std::string& config, const std::string& base, const std::string& duration_base,
           const std::string& out, bool override_fingerprint) {
            run_finetune(load_config(config), base, duration_base, out, override_fingerprint);
        },
        py::arg("config"), py::arg("base"), py::arg("duration_base") = "", py::arg("out"),
        py::arg("override_fingerprint") = false);
    m.def(
        "run_generate",
        [](const std::string& config, const std::string& checkpoint, const std::string& requests,
           const std::string& out, const std::string& duration_checkpoint) {
            GenerateResult r =
                run_generate(load_config(config), checkpoint, requests, out, duration_checkpoint);
            return py::make_tuple(r.ok, r.failed, r.manifest_path);
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("requests"), py::arg("out"),
        py::arg("duration_checkpoint") = "");
    m.def(
        "run_evaluate",
        [](const std::string& generated_manifest, const std::string& requests,
           const std::string& config, const std::string& out) {
            RunConfig cfg = load_config(config);
            EvalSummary s = run_evaluate(generated_manifest, requests, cfg.corpus.task, out);
            py::dict d;
            d["micro_f1"] = s.f1.micro_f1;
            d["evaluated"] = s.evaluated;
            d["missing"] = s.missing;
            d["paired_total"] = s.paired_total;
            d["paired_wins"] = s.paired_wins;
            return d;
        },
        py::arg("generated_manifest"), py::arg("requests"), py::arg("config"), py::arg("out"));
    m.def(
        "run_sweep",
        [](const std::string& config, const std::string& base, const std::string& axis,
           const std::vector<double>& values, const std::string& out, int requests_per_value) {
            auto rows = run_sweep(load_config(config), base, sweep_axis_from(axis), values, out,
                                  requests_per_value);
            py::list result;
            for (const SweepRow& row : rows) {
                py::dict d;
                d["value"] = row.value;
                d["ok"] = row.ok;
                d["error"] = row.error;
                d["micro_f1"] = row.micro_f1;
                d["trainable_params"] = row.trainable_params;
                d["adaptive_params"] = row.adaptive_params;
                result.append(d);
            }
            return result;
        },
        py::arg("config"), py::arg("base"), py::arg("axis"), py::arg("values"), py::arg("out"),
        py::arg("requests_per_value") = 40);
}
