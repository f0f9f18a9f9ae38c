#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msca/dataset.hpp"
#include "msca/gradcheck_suite.hpp"
#include "msca/metrics.hpp"
#include "msca/model.hpp"
#include "msca/preprocess.hpp"

namespace py = pybind11;
using namespace msca;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using Box = std::tuple<int, int, int, int>;

BinaryMask to_mask(const U8& a) {
    if (a.ndim() != 2) throw DimensionError("mask must be 2-D");
    std::vector<std::uint8_t> v(a.data(), a.data() + a.size());
    for (auto& x : v) x = x ? 1 : 0;
    return BinaryMask(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), std::move(v));
}

py::array_t<std::uint8_t> from_mask(const BinaryMask& m) {
    py::array_t<std::uint8_t> out({m.height(), m.width()});
    std::copy(m.values().begin(), m.values().end(), out.mutable_data());
    return out;
}

std::vector<double> to_vec(const F64& a) { return {a.data(), a.data() + a.size()}; }

py::array_t<double> shaped(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
    py::array_t<double> out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> like(const std::vector<double>& v, const F64& a) {
    return shaped(v, std::vector<py::ssize_t>(a.shape(), a.shape() + a.ndim()));
}

Tensor to_tensor(const F64& a) {
    Shape s(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(s), to_vec(a));
}

py::array_t<double> from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    return shaped({t.data().begin(), t.data().end()}, shape);
}

Box to_tuple(const BoxPrompt& b) { return {b.x0, b.y0, b.x1, b.y1}; }
BoxPrompt from_tuple(const Box& b) { return {std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b)}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Tensor core, metrics, preprocessing and model bindings";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);

    // Metrics on 2-D masks (any nonzero value is foreground).
    m.def("dice", [](const U8& a, const U8& b) { return dice(to_mask(a), to_mask(b)); });
    m.def("iou", [](const U8& a, const U8& b) { return iou(to_mask(a), to_mask(b)); });
    m.def("acc", [](const U8& a, const U8& b) { return acc(to_mask(a), to_mask(b)); });
    m.def("hd95", [](const U8& a, const U8& b) { return hd95(to_mask(a), to_mask(b)); },
          "Brute-force HD95; None when exactly one mask is empty.");
    m.def("hd95_fast", [](const U8& a, const U8& b) { return hd95_fast(to_mask(a), to_mask(b)); });

    m.def("window_ct", [](const F64& x, double width, double level) { return like(window_ct(to_vec(x), width, level), x); },
          py::arg("x"), py::arg("width") = 400.0, py::arg("level") = 40.0);
    m.def("nearest_rank_percentile", [](const F64& x, double p) { return nearest_rank_percentile(to_vec(x), p); });
    m.def("clip_percentiles", [](const F64& x, double lo, double hi) { return like(clip_percentiles(to_vec(x), lo, hi), x); },
          py::arg("x"), py::arg("lo") = 0.5, py::arg("hi") = 99.5);
    m.def("minmax_normalize", [](const F64& x) { return like(minmax_normalize(to_vec(x)), x); });
    m.def("normalize_intensities",
          [](const F64& x, const std::string& modality) {
              if (modality != "ct" && modality != "mri") throw ConfigError("modality must be 'ct' or 'mri'");
              return like(normalize_intensities(to_vec(x), modality == "ct" ? Modality::CT : Modality::MRI), x);
          },
          py::arg("x"), py::arg("modality"));
    m.def("resize",
          [](const F64& img, int size, const std::string& mode) {
              if (img.ndim() != 2) throw DimensionError("resize expects a 2-D array");
              if (mode != "bilinear" && mode != "nearest") throw ConfigError("mode must be 'bilinear' or 'nearest'");
              const Image in{static_cast<int>(img.shape(1)), static_cast<int>(img.shape(0)), to_vec(img)};
              const auto out = resize(in, size, mode == "nearest" ? ResizeMode::Nearest : ResizeMode::Bilinear);
              return shaped(out.pixels, {size, size});
          },
          py::arg("image"), py::arg("size"), py::arg("mode") = "bilinear");

    m.def("box_from_mask", [](const U8& mask) { return to_tuple(box_from_mask(to_mask(mask))); });
    m.def("perturbation_max", &perturbation_max);
    m.def("perturb_boxes",
          [](const Box& box, int image_size, int count, std::uint64_t seed, std::optional<int> p_max) {
              Rng rng(seed);
              std::vector<Box> out;
              for (int i = 0; i < count; ++i) out.push_back(to_tuple(perturb_box(from_tuple(box), rng, image_size, p_max)));
              return out;
          },
          py::arg("box"), py::arg("image_size"), py::arg("count"), py::arg("seed"), py::arg("p_max") = py::none());
    m.def("synthetic_sample",
          [](std::uint64_t seed, int index, int size) {
              const auto s = gen_synthetic_one(seed, index, size);
              return py::make_tuple(s.id, from_tensor(s.image), from_mask(s.mask), to_tuple(s.box));
          },
          py::arg("seed"), py::arg("index"), py::arg("size") = 64);

    py::class_<Model>(m, "Model")
        .def(py::init([](const std::string& config_text) { return Model(ModelConfig::from_text(config_text)); }),
             py::arg("config_text") = "")
        .def(
            "forward",
            [](const Model& model, const F64& images, const std::vector<Box>& boxes, bool adapters) {
                std::vector<BoxPrompt> b;
                for (const auto& x : boxes) b.push_back(from_tuple(x));
                NoGradGuard guard;
                return from_tensor(model.forward(to_tensor(images), b, adapters));
            },
            py::arg("images"), py::arg("boxes"), py::arg("adapters") = true)
        .def("trainable_parameter_count", &Model::trainable_parameter_count)
        .def("has_cbrnet", &Model::has_cbrnet)
        .def("fusion_biases", &Model::fusion_biases)
        .def("config_text", [](const Model& model) { return model.config().to_text(); })
        .def("parameter_names", [](const Model& model) {
            std::vector<std::string> names;
            for (const auto& p : model.parameters()) names.push_back(p.name);
            return names;
        });

    m.def("gradcheck_modules", &gradcheck_modules);
    m.def("gradcheck",
          [](const std::string& module, int seeds, std::optional<double> tol) {
              py::list out;
              for (const auto& c : run_gradcheck_suite(module, seeds, tol)) {
                  py::dict d;
                  d["module"] = c.module;
                  d["name"] = c.name;
                  d["seeds"] = c.seeds;
                  d["tol"] = c.tol;
                  d["max_rel_error"] = c.max_rel_error;
                  d["passed"] = c.passed;
                  out.append(d);
              }
              return out;
          },
          py::arg("module") = "all", py::arg("seeds") = 20, py::arg("tol") = py::none());
}
