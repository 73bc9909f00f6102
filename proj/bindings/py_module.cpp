#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "layoutfuse/pipeline.hpp"

namespace py = pybind11;

namespace {

lf::Matrix matrix_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw lf::SpecError("expected a 2-D array");
    lf::Matrix m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(m.values.data(), a.data(), sizeof(double) * m.values.size());
    return m;
}

py::array_t<double> array_from_matrix(const lf::Matrix& m) {
    py::array_t<double> a({m.rows, m.cols});
    std::memcpy(a.mutable_data(), m.values.data(), sizeof(double) * m.values.size());
    return a;
}

py::dict container_to_dict(const lf::TensorContainer& c) {
    py::dict out;
    for (const auto& [name, entry] : c.entries()) {
        std::vector<py::ssize_t> shape(entry.shape.begin(), entry.shape.end());
        py::array_t<double> a(shape);
        std::memcpy(a.mutable_data(), entry.values.data(), sizeof(double) * entry.values.size());
        out[py::str(name)] = a;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Layout-guided dual-stream attention sampler (core bindings)";
    m.attr("__version__") = lf::kVersion;

    py::register_exception<lf::SpecError>(m, "SpecError", PyExc_ValueError);
    py::register_exception<lf::NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<lf::IoError>(m, "IoError", PyExc_IOError);

    m.def("matmul", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return array_from_matrix(lf::matmul(matrix_from_array(a), matrix_from_array(b)));
    });
    m.def("softmax_rows", [](const py::array_t<double>& a) {
        return array_from_matrix(lf::softmax_rows(matrix_from_array(a)));
    });
    m.def("scaled_dot_attention",
          [](const py::array_t<double>& q, const py::array_t<double>& k,
             const py::array_t<double>& v) {
              return array_from_matrix(lf::scaled_dot_attention(
                  matrix_from_array(q), matrix_from_array(k), matrix_from_array(v)));
          });

    m.def("box_to_grid", [](const std::array<double, 4>& box, int h, int w) {
        const lf::GridRect r = lf::box_to_grid(box, h, w);
        return py::make_tuple(r.h_s, r.h_e, r.w_s, r.w_e);
    });
    m.def("region_assignment",
          [](const std::vector<std::array<double, 4>>& boxes, const std::vector<int>& priorities,
             int h, int w) {
              const lf::RegionAssignment a = lf::build_region_assignment(boxes, priorities, h, w);
              py::array_t<int> winner({h, w});
              std::memcpy(winner.mutable_data(), a.winner.data(), sizeof(int) * a.winner.size());
              return winner;
          });
    m.def("iou", [](const std::array<int, 4>& a, const std::array<int, 4>& b) {
        return lf::iou(lf::GridRect{a[0], a[1], a[2], a[3]}, lf::GridRect{b[0], b[1], b[2], b[3]});
    });

    m.def("make_schedule", [](int T, double beta_start, double beta_end) {
        const lf::Schedule s = lf::make_schedule(T, beta_start, beta_end);
        py::dict out;
        out["T"] = s.T;
        out["beta"] = py::cast(s.beta);
        out["alpha_bar"] = py::cast(s.alpha_bar);
        return out;
    });

    m.def("read_container", [](const std::string& path) {
        return container_to_dict(lf::TensorContainer::read_file(path));
    });
    m.def("write_container", [](const std::string& path, const py::dict& tensors) {
        lf::TensorContainer c;
        for (auto item : tensors) {
            const auto name = item.first.cast<std::string>();
            const auto a =
                item.second.cast<py::array_t<double, py::array::c_style | py::array::forcecast>>();
            lf::TensorEntry e;
            e.dtype = lf::Dtype::F64;
            for (py::ssize_t d = 0; d < a.ndim(); ++d) {
                e.shape.push_back(static_cast<size_t>(a.shape(d)));
            }
            e.values.assign(a.data(), a.data() + a.size());
            c.put(name, std::move(e));
        }
        c.write_file(path);
    });

    m.def(
        "train_toy",
        [](const std::string& out_path, int epochs, uint64_t seed, const std::string& config_path,
           bool quiet) {
            lf::TrainToyOptions opt;
            opt.out_path = out_path;
            opt.epochs = epochs;
            opt.seed = seed;
            opt.config_path = config_path;
            opt.quiet = quiet;
            return lf::run_train_toy(opt).to_json();
        },
        py::arg("out_path"), py::arg("epochs"), py::arg("seed") = 0,
        py::arg("config_path") = std::string(), py::arg("quiet") = true);

    m.def(
        "generate",
        [](const std::string& spec_path, const std::string& weights_path,
           const std::string& out_path, const std::string& mode, int steps, py::object seed,
           double image_scale, double guidance) {
            lf::GenerateOptions opt;
            opt.spec_path = spec_path;
            opt.weights_path = weights_path;
            opt.out_path = out_path;
            if (!mode.empty()) opt.mode = mode;
            if (steps > 0) opt.steps = steps;
            if (!seed.is_none()) opt.seed = seed.cast<uint64_t>();
            if (image_scale >= 0.0) opt.image_scale = image_scale;
            if (guidance >= 0.0) opt.guidance = guidance;
            return lf::run_generate(opt).to_json();
        },
        py::arg("spec_path"), py::arg("weights_path"), py::arg("out_path"),
        py::arg("mode") = std::string(), py::arg("steps") = -1, py::arg("seed") = py::none(),
        py::arg("image_scale") = -1.0, py::arg("guidance") = -1.0);

    m.def(
        "eval_layout",
        [](const std::string& image_path, const std::string& spec_path,
           const std::string& weights_path, double threshold) {
            lf::EvalLayoutOptions opt;
            opt.image_path = image_path;
            opt.spec_path = spec_path;
            opt.weights_path = weights_path;
            opt.threshold = threshold;
            const lf::EvalLayoutResult r = lf::run_eval_layout(opt);
            py::dict out;
            out["miou"] = r.score.miou;
            out["per_subject_iou"] = py::cast(r.score.per_subject_iou);
            out["report"] = r.report_json;
            return out;
        },
        py::arg("image_path"), py::arg("spec_path"), py::arg("weights_path"),
        py::arg("threshold") = -1.0);

    m.def(
        "flop_count",
        [](const std::string& mode, const std::vector<std::array<double, 4>>& boxes, int grid_h,
           int grid_w, int layers, int heads, int d_head, const std::vector<int>& subject_tokens,
           int prompt_tokens) {
            lf::AttentionConfig cfg;
            cfg.layers = layers;
            cfg.heads = heads;
            cfg.d_head = d_head;
            cfg.d_model = heads * d_head;
            const lf::FlopReport r = lf::flop_count(lf::mode_from_string(mode), boxes, grid_h,
                                                    grid_w, cfg, subject_tokens, prompt_tokens);
            py::dict out;
            out["image_ops"] = r.image_ops;
            out["text_ops"] = r.text_ops;
            out["softmax_exps"] = r.softmax_exps;
            out["per_subject_ops"] = py::cast(r.per_subject_ops);
            return out;
        },
        py::arg("mode"), py::arg("boxes"), py::arg("grid_h"), py::arg("grid_w"),
        py::arg("layers") = 1, py::arg("heads") = 2, py::arg("d_head") = 16,
        py::arg("subject_tokens") = std::vector<int>(), py::arg("prompt_tokens") = 1);
}
