// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "prefixbridge/checkpoint.hpp"
#include "prefixbridge/cli.hpp"
#include "prefixbridge/corpus.hpp"
#include "prefixbridge/generate.hpp"
#include "prefixbridge/metrics.hpp"
#include "prefixbridge/synth.hpp"
#include "prefixbridge/trainer.hpp"

namespace py = pybind11;

namespace {

py::dict bleu_dict(const pfx::BleuReport& r) {
    py::dict d;
    for (std::size_t n = 0; n < pfx::kBleuMaxOrder; ++n) {
        d[py::str("bleu" + std::to_string(n + 1))] = r.bleu[n];
    }
    d["bp"] = r.brevity_penalty;
    d["hyp_len"] = r.hyp_len;
    d["ref_len"] = r.ref_len;
    d["precisions"] = r.precisions;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Prefix-conditioned report generation from image embeddings";
    m.attr("__version__") = pfx::kVersion;

    // Library errors map onto a small RuntimeError hierarchy.
    auto base = py::register_exception<pfx::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<pfx::DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<pfx::FormatError>(m, "FormatError", base.ptr());
    py::register_exception<pfx::VersionError>(m, "VersionError", base.ptr());
    py::register_exception<pfx::ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<pfx::InvalidInputError>(m, "InvalidInputError", base.ptr());

    m.def(
        "run",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = pfx::run(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a CLI command; returns (exit_code, stdout, stderr).");

    m.def(
        "corpus_bleu",
        [](const std::vector<std::pair<std::string, std::string>>& pairs, std::size_t max_n) {
            return bleu_dict(pfx::corpus_bleu(pairs, max_n));
        },
        py::arg("pairs"), py::arg("max_n") = pfx::kBleuMaxOrder,
        "Corpus BLEU over (hypothesis, reference) pairs.");

    m.def("preprocess_report", [](const std::string& s) { return pfx::preprocess_report(s); }, py::arg("text"));
    m.def("split_tokens", [](const std::string& s) { return pfx::split_tokens(s); }, py::arg("text"));
    m.def("fnv1a64", [](const std::string& s) { return pfx::fnv1a64(s); }, py::arg("data"));
    m.def("finding_names", &pfx::default_finding_names);

    py::class_<pfx::Checkpoint>(m, "Model")
        .def_static("load", &pfx::load_checkpoint, py::arg("path"))
        .def("save", [](const pfx::Checkpoint& c, const std::filesystem::path& p) { pfx::save_checkpoint(c, p); },
             py::arg("path"))
        .def_property_readonly("clip_dim",
                               [](const pfx::Checkpoint& c) -> py::object {
                                   if (!c.mapper) return py::none();
                                   return py::int_(c.mapper->clip_dim);
                               })
        .def_property_readonly("vocab_size", [](const pfx::Checkpoint& c) { return c.vocab.size(); })
        .def("trainable_params",
             [](const pfx::Checkpoint& c, const std::string& mode) {
                 return pfx::trainable_param_count(c, pfx::parse_train_mode(mode));
             },
             py::arg("mode"))
        .def(
            "generate",
            [](pfx::Checkpoint& c, const std::vector<float>& embedding, std::size_t beam, std::size_t max_len) {
                pfx::DecodeConfig cfg;
                cfg.strategy = beam > 1 ? pfx::DecodeStrategy::Beam : pfx::DecodeStrategy::Greedy;
                cfg.beam_width = beam;
                cfg.max_len = max_len;
                cfg.validate();
                py::gil_scoped_release release;
                const auto r = pfx::generate_report(c, embedding, cfg);
                return std::make_pair(r.text, r.score);
            },
            py::arg("embedding"), py::arg("beam") = 1, py::arg("max_len") = pfx::DecodeConfig{}.max_len,
            "Decode one report; returns (text, normalized log-probability).");
}
