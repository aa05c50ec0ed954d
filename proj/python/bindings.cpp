// Python bindings for the core library. Models are built from seeds inside
// the module so Python never has to hold raw weight arrays.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sponge/corpus.hpp"
#include "sponge/defense.hpp"
#include "sponge/experiment.hpp"
#include "sponge/ga.hpp"
#include "sponge/lbfgs.hpp"
#include "sponge/stats.hpp"

namespace py = pybind11;
using namespace sponge;

namespace {

Image image_from(const std::vector<double>& pixels) {
    Image img(1, 8, 8);
    if (pixels.size() != img.size()) throw std::invalid_argument("expected 64 pixels (1x8x8)");
    img.pixels = pixels;
    return img;
}

py::dict report_dict(const EnergyReport& r) {
    py::dict d;
    d["energy_optimized_pj"] = r.energy_optimized_pj;
    d["energy_unoptimized_pj"] = r.energy_unoptimized_pj;
    d["energy_ratio"] = r.energy_ratio;
    d["mult_total"] = r.mult_total;
    d["mult_nonzero"] = r.mult_nonzero;
    d["dram_words_raw"] = r.dram_words_raw;
    d["dram_words_compressed"] = r.dram_words_compressed;
    return d;
}

class Translator {
public:
    explicit Translator(std::uint64_t seed) : model_(ToyTranslator::create(reference_vocab(), seed)) {}

    py::dict translate_text(const std::string& text) const {
        const auto r = translate(model_, encode_text(text, reference_vocab()));
        py::dict d;
        d["translation"] = detokenize(r.output.ids, reference_vocab());
        d["input_tokens"] = r.dims.l_tin;
        d["output_tokens"] = r.dims.l_tout;
        d["energy"] = report_dict(simulate_energy(r.trace));
        return d;
    }

    double energy(const std::string& text) const { return translation_energy(model_, reference_vocab(), text); }

    py::dict attack(std::size_t length, std::size_t pool, std::size_t generations, std::uint64_t seed) const {
        GaConfig c;
        c.pool_size = pool;
        c.generations = generations;
        c.seed = seed;
        GaResult<std::string> r;
        {
            py::gil_scoped_release release;
            r = ga_run_nlp(c, translator_energy_fitness(model_, reference_vocab()), length);
        }
        std::vector<double> best;
        for (const auto& h : r.history) best.push_back(h.best);
        py::dict d;
        d["best"] = r.best().payload;
        d["energy_pj"] = r.best().fitness->value;
        d["history"] = best;
        return d;
    }

private:
    ToyTranslator model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Sponge examples on toy models with a simulated accelerator";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

    m.def(
        "simulate_layers",
        [](const std::vector<std::vector<std::uint64_t>>& layers, bool zero_skip, bool compress) {
            ActivationTrace t;
            for (const auto& l : layers) {
                if (l.size() != 6) throw std::invalid_argument("each layer needs 6 counts");
                t.layers.push_back({"layer", l[0], l[1], l[2], l[3], l[4], l[5]});
            }
            AsicCostModel cost;
            cost.zero_skip_enabled = zero_skip;
            cost.dram_compress_enabled = compress;
            return report_dict(simulate_energy(t, cost));
        },
        py::arg("layers"), py::arg("zero_skip") = true, py::arg("compress") = true,
        "Energy of a trace given per layer as (mult_total, mult_nonzero, act_total, act_nonzero, dram_raw, "
        "dram_compressed).");

    m.def(
        "tokenize",
        [](const std::string& text) {
            std::vector<std::string> out;
            for (auto id : encode_text(text, reference_vocab()).ids) out.emplace_back(reference_vocab().piece(id));
            return out;
        },
        py::arg("text"), "Subword pieces of `text` under the reference vocab.");

    m.def("natural_corpus", &natural_corpus, py::arg("count"), py::arg("length"), py::arg("seed"));

    py::class_<Translator>(m, "Translator")
        .def(py::init<std::uint64_t>(), py::arg("seed") = 7)
        .def("translate", &Translator::translate_text, py::arg("text"))
        .def("energy", &Translator::energy, py::arg("text"))
        .def("attack", &Translator::attack, py::arg("length") = 16, py::arg("pool") = 100,
             py::arg("generations") = 50, py::arg("seed") = 0);

    m.def(
        "cnn_density",
        [](const std::vector<double>& pixels) {
            const auto r = cnn_forward(CnnModel::reference(), image_from(pixels));
            py::dict d;
            d["overall"] = r.density.overall_density;
            d["post_relu"] = r.density.post_relu_density;
            d["predicted_class"] = r.predicted_class;
            d["energy"] = report_dict(simulate_energy(r.trace));
            return d;
        },
        py::arg("pixels"), "Densities of the reference CNN on a 1x8x8 image given as 64 values.");

    m.def("cnn_max_density", [] { return ibp_max_density(CnnModel::reference()).overall_density; });

    m.def(
        "lbfgs_sponge",
        [](const std::vector<double>& pixels, std::size_t max_steps) {
            LbfgsConfig c;
            c.max_steps = max_steps;
            return lbfgs_attack(CnnModel::reference(), image_from(pixels), c).image.pixels;
        },
        py::arg("pixels"), py::arg("max_steps") = 200);

    m.def(
        "mann_whitney_u",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            const auto r = mann_whitney_u(a, b);
            py::dict d;
            d["u_a"] = r.u_a;
            d["u_b"] = r.u_b;
            d["z"] = r.z;
            d["p_greater"] = r.p_greater;
            d["degenerate"] = r.degenerate;
            return d;
        },
        py::arg("a"), py::arg("b"), "One-sided test that `a` tends to exceed `b`.");

    m.def("percentile", &nearest_rank_percentile, py::arg("values"), py::arg("percentile"));

    m.def("default_config", [] { return default_config().dump(); }, "Default experiment config as JSON text.");

    m.def(
        "run_experiment",
        [](const std::string& config_json, const std::string& output_dir) {
            auto c = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
            c.output_dir = output_dir;
            py::gil_scoped_release release;
            return run(c);
        },
        py::arg("config_json"), py::arg("output_dir"), "Runs one task; outputs go to output_dir.");
}
