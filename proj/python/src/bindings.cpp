#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "taco/eval.hpp"
#include "taco/io.hpp"
#include "taco/losses.hpp"
#include "taco/optim.hpp"
#include "taco/workflow.hpp"

namespace py = pybind11;
using namespace taco;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (C, H, W) arrays; a 2-D array is one channel.
Image to_image(const Array& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw ShapeError("expected a 2-D or 3-D array");
    const int c = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
    const int h = static_cast<int>(a.shape(a.ndim() - 2)), w = static_cast<int>(a.shape(a.ndim() - 1));
    Image img(c, h, w);
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

Array to_array(const Image& img) {
    Array out({img.channels, img.height, img.width});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

Box to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

nlohmann::json from_py(const py::handle& obj) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

workflow::ToolConfig config_of(const py::object& cfg) {
    if (cfg.is_none()) return {};
    if (py::isinstance<py::str>(cfg)) return workflow::parse_config(cfg.cast<std::string>());
    return workflow::parse_config(from_py(cfg).dump());
}

std::vector<eval::DumpEntry> entries_of(const std::vector<std::tuple<int, int, std::array<double, 4>, double>>& rows) {
    std::vector<eval::DumpEntry> out;
    for (const auto& [id, cls, box, conf] : rows) out.push_back({id, cls, to_box(box), conf});
    return out;
}

std::vector<eval::GroundTruth> gts_of(const std::vector<std::tuple<int, std::array<double, 4>>>& rows) {
    std::vector<eval::GroundTruth> out;
    for (const auto& [id, box] : rows) out.push_back({id, to_box(box), {}});
    return out;
}

py::dict sweep_dict(const workflow::SweepRow& r) {
    py::dict d;
    d["label"] = r.label;
    d["value"] = r.value;
    d["ap"] = r.ap;
    d["adr"] = r.adr;
    d["smoothness"] = r.smooth;
    d["max_range"] = r.max_range;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Adversarial truck camouflage: dataset synthesis, differentiable rendering, surrogate detector and attack.";
    m.attr("__version__") = workflow::tool_version();

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());

    // geometry and losses
    m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) { return losses::iou(to_box(a), to_box(b)); },
          py::arg("a"), py::arg("b"), "IoU of two (cx, cy, w, h) boxes.");
    m.def("iop", [](std::array<double, 4> p, std::array<double, 4> g) { return losses::iop(to_box(p), to_box(g)); },
          py::arg("pred"), py::arg("gt"), "Intersection over the predicted box's area.");
    m.def("local_variation", [](const Array& t, int k, bool fast) {
        const Image img = to_image(t);
        return to_array(fast ? losses::local_variation_fast(img, k) : losses::local_variation_bruteforce(img, k));
    }, py::arg("texture"), py::arg("k") = 3, py::arg("fast") = true);
    m.def("smooth_loss", [](const Array& t, int k) {
        const auto r = losses::smooth_loss(to_image(t), k);
        return py::make_tuple(r.value, to_array(r.grad));
    }, py::arg("texture"), py::arg("k") = 3, "Returns (value, gradient).");
    m.def("tv_loss", [](const Array& t) {
        const auto r = losses::tv_loss(to_image(t));
        return py::make_tuple(r.value, to_array(r.grad));
    }, py::arg("texture"), "Returns (value, gradient).");
    m.def("grad_clamp", [](const Array& g, const Array& t, double eta, const std::string& mode) {
        return to_array(optim::grad_clamp(to_image(g), to_image(t), eta, optim::clamp_mode_from_string(mode)));
    }, py::arg("grad"), py::arg("texture"), py::arg("eta"), py::arg("mode") = "feasible");

    // metrics: detections are (image_id, class, (cx, cy, w, h), confidence), gts are (image_id, box)
    m.def("average_precision", [](const std::vector<std::tuple<int, int, std::array<double, 4>, double>>& dets,
                                  const std::vector<std::tuple<int, std::array<double, 4>>>& gts, double iou_thresh,
                                  std::vector<int> classes) {
        return eval::average_precision(entries_of(dets), gts_of(gts), iou_thresh, classes);
    }, py::arg("detections"), py::arg("ground_truth"), py::arg("iou_thresh") = 0.5, py::arg("classes") = std::vector<int>{});
    m.def("detection_rate", [](const std::vector<std::tuple<int, int, std::array<double, 4>, double>>& dets,
                               const std::vector<std::tuple<int, std::array<double, 4>>>& gts, double conf_thresh,
                               double iou_thresh, std::vector<int> classes) {
        return eval::adr(entries_of(dets), gts_of(gts), conf_thresh, iou_thresh, classes);
    }, py::arg("detections"), py::arg("ground_truth"), py::arg("conf_thresh") = 0.25, py::arg("iou_thresh") = 0.5,
       py::arg("classes") = std::vector<int>{});

    // files
    m.def("read_tensor", [](const std::filesystem::path& p) { return to_array(io::read_image_tensor(p)); }, py::arg("path"));
    m.def("write_tensor", [](const std::filesystem::path& p, const Array& a) { io::write_image_tensor(p, to_image(a)); },
          py::arg("path"), py::arg("array"));

    // configuration and pipeline stages; `config` is None, JSON text or a dict
    m.def("default_config", [] { return to_py(workflow::to_json(workflow::ToolConfig{})); });
    m.def("normalize_config", [](const py::object& cfg) { return to_py(workflow::to_json(config_of(cfg))); },
          py::arg("config"), "Validates a config and fills in defaults.");

    m.def("gen_dataset", [](const std::filesystem::path& ws, const py::object& cfg) {
        const auto c = config_of(cfg);
        py::gil_scoped_release nogil;
        workflow::gen_dataset({ws}, c);
    }, py::arg("workspace"), py::arg("config") = py::none());
    m.def("train_enhancer", [](const std::filesystem::path& ws, const py::object& cfg, bool resume) {
        const auto c = config_of(cfg);
        py::gil_scoped_release nogil;
        const auto r = workflow::train_enhancer({ws}, c, resume);
        py::gil_scoped_acquire gil;
        py::dict d;
        d["heldout_l1"] = r.heldout_l1;
        d["history"] = r.history;
        return d;
    }, py::arg("workspace"), py::arg("config") = py::none(), py::arg("resume") = false);
    m.def("train_detector", [](const std::filesystem::path& ws, const py::object& cfg, bool resume) {
        const auto c = config_of(cfg);
        py::gil_scoped_release nogil;
        const auto r = workflow::train_detector({ws}, c, resume);
        py::gil_scoped_acquire gil;
        py::dict d;
        d["heldout_ap"] = r.heldout_ap;
        d["history"] = r.train.history;
        return d;
    }, py::arg("workspace"), py::arg("config") = py::none(), py::arg("resume") = false);
    m.def("optimize", [](const std::filesystem::path& ws, const py::object& cfg, const std::string& name) {
        const auto c = config_of(cfg);
        py::gil_scoped_release nogil;
        const auto r = workflow::optimize({ws}, c, name);
        py::gil_scoped_acquire gil;
        py::dict d;
        d["texture"] = to_array(r.texture.values);
        d["steps"] = r.reports.size();
        d["epoch_loss"] = r.epoch_loss;
        d["range_violations"] = r.range_violations;
        return d;
    }, py::arg("workspace"), py::arg("config") = py::none(), py::arg("name") = "default");
    m.def("evaluate", [](const std::filesystem::path& ws, const py::object& cfg, bool gamma_sweep, bool init_study,
                         bool loss_ablation, bool saliency) {
        const auto c = config_of(cfg);
        workflow::EvaluateOptions opts;
        opts.gamma_sweep = gamma_sweep;
        opts.init_study = init_study;
        opts.loss_ablation = loss_ablation;
        opts.saliency = saliency;
        workflow::EvaluateReport r;
        {
            py::gil_scoped_release nogil;
            r = workflow::evaluate({ws}, c, opts);
        }
        py::dict d;
        py::list textures, gamma, init, ablation;
        for (const auto& t : r.textures) textures.append(py::dict(py::arg("name") = t.name, py::arg("ap") = t.ap, py::arg("adr") = t.adr));
        for (const auto& s : r.gamma) gamma.append(sweep_dict(s));
        for (const auto& s : r.init) init.append(sweep_dict(s));
        for (const auto& s : r.ablation) ablation.append(sweep_dict(s));
        d["textures"] = textures;
        d["gamma_sweep"] = gamma;
        d["init_study"] = init;
        d["loss_ablation"] = ablation;
        return d;
    }, py::arg("workspace"), py::arg("config") = py::none(), py::arg("gamma_sweep") = false,
       py::arg("init_study") = false, py::arg("loss_ablation") = false, py::arg("saliency") = false);
}
