// Python bindings over the core operations. Arrays are channel-first
// ([C,H,W] features/images, [H,W] label maps), float64.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dsadapt/losses.hpp"
#include "dsadapt/metrics.hpp"
#include "dsadapt/train.hpp"

namespace py = pybind11;
using namespace dsadapt;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int> shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<int>(arr.shape(i));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::copy(t.data(), t.data() + t.numel(), arr.mutable_data());
    return arr;
}

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// stable parameter container for the disentangling ops
struct DdmHandle {
    DdmParams params;
    DdmHandle(int channels, int reduction, std::uint64_t seed) {
        Rng rng(seed);
        params = DdmParams("ddm", channels, reduction, rng);
    }
};

py::dict report_to_dict(const EvalReport& r) {
    py::dict out;
    py::list classes, ious, f1s;
    for (std::size_t i = 0; i < r.class_names.size(); ++i) {
        classes.append(r.class_names[i]);
        ious.append(r.iou[i]);
        f1s.append(r.f1[i]);
    }
    out["class_names"] = classes;
    out["iou"] = ious;
    out["f1"] = f1s;
    out["miou"] = r.miou;
    out["mf1"] = r.mf1;
    out["scored_pixels"] = r.scored_pixels;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "cross-domain segmentation adaptation core";

    m.def(
        "tile_grid",
        [](int h, int w, int patch, int stride) { return tile_grid(h, w, patch, stride); },
        py::arg("h_tile"), py::arg("w_tile"), py::arg("patch_size"), py::arg("stride"),
        "Row-major (row, col) offsets of every fully-inside patch.");

    py::class_<DdmHandle>(m, "Ddm")
        .def(py::init<int, int, std::uint64_t>(), py::arg("channels"), py::arg("reduction") = 4,
             py::arg("seed") = 0)
        .def_property_readonly("channels", [](const DdmHandle& d) { return d.params.channels; })
        .def_property_readonly("reduced", [](const DdmHandle& d) { return d.params.reduced; })
        .def(
            "forward",
            [](const DdmHandle& d, const NpArray& f_s, const NpArray& f_t) {
                NoGradGuard ng;
                auto [out_s, out_t] =
                    ddm_forward(constant(to_tensor(f_s)), constant(to_tensor(f_t)), d.params);
                return py::make_tuple(to_array(out_s->value), to_array(out_t->value));
            },
            py::arg("f_src_style"), py::arg("f_tgt_style"))
        .def(
            "gates",
            [](const DdmHandle& d, const NpArray& f_s, const NpArray& f_t) {
                NoGradGuard ng;
                FusedPair fused =
                    ddm_fuse(constant(to_tensor(f_s)), constant(to_tensor(f_t)), d.params);
                ChannelGates gates = ddm_unique_gates(fused.prototype, d.params);
                return py::make_tuple(to_array(gates.v_s->value), to_array(gates.v_t->value));
            },
            py::arg("f_src_style"), py::arg("f_tgt_style"))
        .def(
            "relation_masks",
            [](const DdmHandle& d, const NpArray& f_s, const NpArray& f_t) {
                NoGradGuard ng;
                Var vs = constant(to_tensor(f_s)), vt = constant(to_tensor(f_t));
                FusedPair fused = ddm_fuse(vs, vt, d.params);
                RelationMasks masks = ddm_relation_masks(vs, vt, fused.feature);
                return py::make_tuple(to_array(masks.m_s->value), to_array(masks.m_t->value),
                                      to_array(masks.m_st->value));
            },
            py::arg("f_src_style"), py::arg("f_tgt_style"));

    m.def(
        "ensemble_predict",
        [](const NpArray& a, const NpArray& b) {
            return to_array(ensemble_predict(to_tensor(a), to_tensor(b)));
        },
        py::arg("logits_a"), py::arg("logits_b"),
        "Soft-voting argmax over two [K,H,W] logit maps.");

    m.def(
        "seg_loss",
        [](const NpArray& logits, const NpArray& label, int ignore_index) {
            return seg_loss(constant(to_tensor(logits)), to_tensor(label), ignore_index)
                ->value[0];
        },
        py::arg("logits"), py::arg("label"), py::arg("ignore_index") = kIgnoreIndex);

    m.def(
        "adversarial_losses",
        [](const NpArray& real, const NpArray& fake) {
            auto pair =
                adversarial_losses(constant(to_tensor(real)), constant(to_tensor(fake)));
            return py::make_tuple(pair.generator_term->value[0],
                                  pair.discriminator_term->value[0]);
        },
        py::arg("disc_out_real"), py::arg("disc_out_fake"),
        "(generator_term, discriminator_term) from patch logit maps.");

    m.def(
        "combine_losses",
        [](double seg_s, double seg_t, double st_s, double st_t, double adv_s, double adv_t,
           double lambda, double beta) {
            LossBundle parts;
            parts.seg_s = seg_s;
            parts.seg_t = seg_t;
            parts.st_s = st_s;
            parts.st_t = st_t;
            parts.adv_s = adv_s;
            parts.adv_t = adv_t;
            return combine(parts, lambda, beta).combined;
        },
        py::arg("seg_s"), py::arg("seg_t"), py::arg("st_s") = 0.0, py::arg("st_t") = 0.0,
        py::arg("adv_s") = 0.0, py::arg("adv_t") = 0.0, py::arg("lambda_") = 0.25,
        py::arg("beta") = 0.005);

    py::class_<ConfusionMatrix>(m, "ConfusionMatrix")
        .def(py::init<int>(), py::arg("num_classes"))
        .def(
            "accumulate",
            [](ConfusionMatrix& cm, const NpArray& pred, const NpArray& label,
               int ignore_index) { cm.accumulate(to_tensor(pred), to_tensor(label), ignore_index); },
            py::arg("prediction"), py::arg("label"), py::arg("ignore_index") = kIgnoreIndex)
        .def("iou", [](const ConfusionMatrix& cm, int cls) { return iou(cm, cls); })
        .def("f1", [](const ConfusionMatrix& cm, int cls) { return f1(cm, cls); })
        .def("total", &ConfusionMatrix::total)
        .def(
            "summarize",
            [](const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
                return report_to_dict(summarize(cm, class_names));
            },
            py::arg("class_names"));

    m.def(
        "synth_to_dir",
        [](std::uint64_t seed, const std::string& out, const std::string& shift, int tiles,
           int tile_size, int patch_size, int stride) {
            SynthConfig cfg;
            cfg.n_tiles = tiles;
            cfg.tile_size = tile_size;
            cfg.patch_size = patch_size;
            cfg.stride = stride;
            cfg.shift = ShiftSpec::parse(shift);
            synth_to_dir(seed, cfg, out);
        },
        py::arg("seed"), py::arg("out_dir"), py::arg("shift") = "identity", py::arg("tiles") = 8,
        py::arg("tile_size") = 256, py::arg("patch_size") = 64, py::arg("stride") = 64,
        "Write a synthetic source/target patch dataset pair.");

    m.def(
        "fit",
        [](const std::string& config_text, const std::string& source_dir,
           const std::string& target_dir, const std::string& out_dir) {
            TrainConfig config = parse_config_text(config_text);
            Checkpoint ckpt = fit(config, open_dataset(source_dir), open_dataset(target_dir),
                                  out_dir);
            return ckpt.step;
        },
        py::arg("config_text"), py::arg("source_dir"), py::arg("target_dir"),
        py::arg("out_dir"), "Run the training loop; returns the final step count.");

    m.def(
        "evaluate_checkpoint",
        [](const std::string& checkpoint_path, const std::string& data_dir) {
            Checkpoint ckpt = load_checkpoint(checkpoint_path);
            auto predictor = make_predictor(ckpt);
            return report_to_dict(
                evaluate(*predictor, open_dataset(data_dir), ckpt.config.normalization));
        },
        py::arg("checkpoint_path"), py::arg("data_dir"));

    m.attr("IGNORE_INDEX") = kIgnoreIndex;
}
