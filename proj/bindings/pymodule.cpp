#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sparsegrasp/dataset.hpp"
#include "sparsegrasp/geom.hpp"
#include "sparsegrasp/harness.hpp"
#include "sparsegrasp/nets.hpp"
#include "sparsegrasp/ops.hpp"

namespace py = pybind11;
using namespace sg;

namespace {

TensorPtr from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i)
        shape.push_back(static_cast<int>(a.shape(i)));
    auto t = make_tensor(shape);
    std::copy(a.data(), a.data() + a.size(), t->v.begin());
    return t;
}

py::array_t<float> to_numpy(const TensorPtr& t) {
    std::vector<py::ssize_t> shape(t->shape.begin(), t->shape.end());
    py::array_t<float> a(shape);
    std::copy(t->v.begin(), t->v.end(), a.mutable_data());
    return a;
}

}  // namespace

PYBIND11_MODULE(_sparsegrasp, m) {
    m.doc() = "Sparse subnetwork grasp-pose engine";

    m.def("conv2d",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& w,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& b, int stride,
             int padding) {
              Tape tape;
              return to_numpy(conv2d(tape, from_numpy(x), from_numpy(w), from_numpy(b), stride,
                                     padding));
          },
          py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1,
          py::arg("padding") = 0);

    py::class_<GraspRectangle>(m, "GraspRectangle")
        .def(py::init([](double cx, double cy, double angle, double width, double height) {
                 return GraspRectangle{cx, cy, angle, width, height};
             }),
             py::arg("cx"), py::arg("cy"), py::arg("angle"), py::arg("width"), py::arg("height"))
        .def_readwrite("cx", &GraspRectangle::cx)
        .def_readwrite("cy", &GraspRectangle::cy)
        .def_readwrite("angle", &GraspRectangle::angle)
        .def_readwrite("width", &GraspRectangle::width)
        .def_readwrite("height", &GraspRectangle::height)
        .def("corners", [](const GraspRectangle& r) {
            std::vector<std::pair<double, double>> out;
            for (const auto& p : r.corners()) out.emplace_back(p.x, p.y);
            return out;
        });

    m.def("rect_iou", &rect_iou);
    m.def("angle_offset", &angle_offset);
    m.def("is_valid_grasp",
          [](const GraspRectangle& pred, const std::vector<GraspRectangle>& gts) {
              return is_valid_grasp(pred, gts).valid;
          });

    py::class_<GraspPoseImage>(m, "GraspPoseImage")
        .def_readonly("x", &GraspPoseImage::x)
        .def_readonly("y", &GraspPoseImage::y)
        .def_readonly("theta", &GraspPoseImage::theta)
        .def_readonly("width", &GraspPoseImage::width)
        .def_readonly("quality", &GraspPoseImage::quality)
        .def_readonly("degenerate", &GraspPoseImage::degenerate);

    m.def("decode_best_grasp",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& quality,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& cos2theta,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& sin2theta,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& width,
             double smoothing_sigma, double width_scale) {
              GraspMaps maps{from_numpy(quality), from_numpy(cos2theta), from_numpy(sin2theta),
                             from_numpy(width)};
              return decode_best_grasp(maps, smoothing_sigma, width_scale);
          },
          py::arg("quality"), py::arg("cos2theta"), py::arg("sin2theta"), py::arg("width"),
          py::arg("smoothing_sigma") = 2.0, py::arg("width_scale") = 150.0);

    py::class_<Model>(m, "Model")
        .def(py::init([](const std::string& arch, float k, uint32_t seed) {
                 SparsityConfig sc;
                 sc.k_fraction = k;
                 sc.seed = seed;
                 return new Model(ArchitectureSpec::by_name(arch), sc);
             }),
             py::arg("arch"), py::arg("k") = 0.5f, py::arg("seed") = 0)
        .def("forward",
             [](Model& model,
                const py::array_t<float, py::array::c_style | py::array::forcecast>& input) {
                 Tape tape;
                 auto maps = model.forward(tape, from_numpy(input), false);
                 tape.clear();
                 return py::make_tuple(to_numpy(maps.quality), to_numpy(maps.cos2theta),
                                       to_numpy(maps.sin2theta), to_numpy(maps.width));
             })
        .def("param_counts",
             [](const Model& model) {
                 const auto pr = model.param_report();
                 return py::make_tuple(pr.maskable_total, pr.maskable_active);
             })
        .def("weight_hash", &Model::weight_hash)
        .def_property_readonly("width_scale",
                               [](const Model& model) { return model.arch().width_scale; })
        .def_property_readonly("input_size",
                               [](const Model& model) { return model.arch().input_size; });

    m.def("param_table", [](const std::string& arch, const std::vector<float>& ks) {
        std::vector<std::tuple<float, int64_t, int64_t>> out;
        for (const auto& r : param_report_table(arch, ks)) out.emplace_back(r.k, r.total, r.active);
        return out;
    });

    m.def("synth_write", [](const std::string& dir, int count, int size, uint32_t seed) {
        synth_write(synth_generate(count, size, seed), dir);
    });

    m.def("load_checkpoint_meta", [](const std::string& path) {
        auto c = Checkpoint::load(path);
        py::dict d;
        d["seed"] = c.seed;
        d["k_fraction"] = c.k_fraction;
        d["arrays"] = static_cast<int>(c.arrays.size());
        return d;
    });
}
