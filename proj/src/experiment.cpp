#include "sponge/experiment.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "sponge/cnn.hpp"
#include "sponge/corpus.hpp"
#include "sponge/lbfgs.hpp"
#include "sponge/service.hpp"
#include "sponge/stats.hpp"
#include "sponge/translator.hpp"

namespace sponge {

using json = nlohmann::json;
namespace fs = std::filesystem;

json default_config() {
    return json::parse(R"({
  "task": "attack-nlp",
  "seed": 0,
  "output_dir": "out",
  "models": {
    "vocab": null,
    "translator": null,
    "translator_seed": 7,
    "transfer_target_seed": 8,
    "translator_shape": {"l_ein": 16, "l_eout": 24, "l_ff": 32},
    "cnn": null
  },
  "ga": {
    "pool_size": 1000,
    "generations": 1000,
    "selection_fraction": 0.1,
    "mutation_rate": 0.05,
    "flip_probability": 0.5,
    "dilution_fraction": 0.01,
    "min_classes_preserved": 20,
    "cache_fitness": true,
    "threads": 0
  },
  "cost": {
    "dram_access_energy_pj": 1950.0,
    "fp_mult_energy_pj": 3.7,
    "zero_skip_enabled": true,
    "dram_compress_enabled": true
  },
  "latency": {"fixed_s": 0.0001, "per_mult_s": 1e-9, "per_dram_word_s": 2e-9, "noise_sd_s": 0.0},
  "nlp": {"length": 16, "fitness": "simulated_energy", "baseline_samples": 100, "keep_best": 10},
  "cv": {"samples_per_class": 20, "keep_best": 10, "lbfgs_starts": 10, "lbfgs": {"memory": 10, "max_steps": 200}},
  "blackbox": {"endpoint": null, "repeats": 3, "input_chars": 50, "baseline_samples": 50, "allow_remote": false},
  "service": {
    "host": "127.0.0.1",
    "port": 0,
    "cache_capacity": 256,
    "base_service_s": 0.002,
    "per_step_s": 0.001,
    "cache_hit_s": 1e-5,
    "network_base_s": 0.002,
    "network_jitter_mean_s": 0.0,
    "max_input_chars": 50,
    "timing": "simulated",
    "duration_s": 0.0,
    "guard_profile": null
  },
  "transfer": {"sponges": 100},
  "defense": {
    "percentile": 99.0,
    "cost_source": "simulated_energy",
    "length": 16,
    "profile_corpus": 1000,
    "heldout_corpus": 1000,
    "sponge_file": null
  },
  "simulate": {"trace": null},
  "stats": {"natural": null, "random": null, "sponge": null, "order": ["sponge", "natural", "random"], "alpha": 0.01}
})");
}

namespace {

// Every user key must exist in the defaults with a compatible type.
void check_against(const json& user, const json& defaults, const std::string& path) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!defaults.contains(it.key())) throw ConfigError(key, "unknown field");
        const auto& d = defaults[it.key()];
        const auto& v = it.value();
        if (d.is_object()) {
            if (!v.is_object()) throw ConfigError(key, "expected an object");
            check_against(v, d, key);
        } else if (d.is_null()) {
            if (!v.is_null() && !v.is_string()) throw ConfigError(key, "expected a path string or null");
        } else if (d.is_boolean()) {
            if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
        } else if (d.is_number_unsigned()) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
                throw ConfigError(key, "expected a non-negative integer");
        } else if (d.is_number()) {
            if (!v.is_number()) throw ConfigError(key, "expected a number");
        } else if (d.is_string()) {
            if (!v.is_string()) throw ConfigError(key, "expected a string");
        } else if (d.is_array()) {
            if (!v.is_array()) throw ConfigError(key, "expected an array");
        }
    }
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
    return fnv1a(std::to_string(seed) + ":" + std::string(purpose));
}

template <class F>
auto with_path(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const ValidationError& e) {
        throw ConfigError(path, e.what());
    }
}

// Same, but narrows the path to the field of `section` the message names
// first ("ga: pool_size must be ..." -> "ga.pool_size").
template <class F>
auto with_path(const std::string& path, const json& section, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        const auto colon = msg.find(": ");
        const auto body = colon == std::string::npos ? msg : msg.substr(colon + 2);
        for (auto it = section.begin(); it != section.end(); ++it)
            if (body.rfind(it.key() + " ", 0) == 0) throw ConfigError(path + "." + it.key(), msg);
        throw ConfigError(path, msg);
    }
}

std::optional<fs::path> optional_path(const json& v) {
    if (v.is_null()) return std::nullopt;
    return fs::path(v.get<std::string>());
}

fs::path required_file(const json& v, const std::string& field) {
    auto p = optional_path(v);
    if (!p) throw ConfigError(field, "required for this task");
    if (!fs::exists(*p)) throw ConfigError(field, "file not found: " + p->string());
    return *p;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return in;
}

// ---------------------------------------------------------------------------
// Output helpers.

class Outputs {
public:
    Outputs(const ExperimentConfig& c) : dir_(c.output_dir), stamp_{c.hash(), c.seed} {
        fs::create_directories(dir_);
    }
    const OutputStamp& stamp() const { return stamp_; }
    fs::path path(const std::string& name) const { return dir_ / name; }

    void json_file(const std::string& name, json body) const {
        body["config_hash"] = stamp_.config_hash;
        body["seed"] = stamp_.seed;
        std::ofstream out(path(name));
        out << body.dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write " + path(name).string());
    }
    void table(const std::string& name, const PlotTable& t) const {
        std::ofstream out(path(name));
        emit_plot_data(out, t, stamp_);
        if (!out) throw std::runtime_error("cannot write " + path(name).string());
    }

private:
    fs::path dir_;
    OutputStamp stamp_;
};

void write_stamp(std::ostream& out, const OutputStamp& stamp) {
    out << "# config_hash=" << stamp.config_hash << '\n' << "# seed=" << stamp.seed << '\n';
}

std::string format_number(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

// History rows written as generations complete, so an interrupted run keeps them.
class HistoryStream {
public:
    HistoryStream(const fs::path& path, const OutputStamp& stamp, FitnessSource source) : out_(path) {
        write_stamp(out_, stamp);
        out_ << "generation\tbest_" << to_string(source) << "\tmean_" << to_string(source) << '\n';
        out_.flush();
    }
    GenerationCallback callback(const RunOptions& opt, const std::string& label) {
        return [this, &opt, label](const GenerationStats& s) {
            out_ << s.generation << '\t' << format_number(s.best) << '\t' << format_number(s.mean) << '\n';
            out_.flush();
            if (opt.log && (s.generation % 10 == 0))
                *opt.log << label << ": generation " << s.generation << " best " << s.best << '\n';
            return !(opt.interrupted && opt.interrupted->load());
        };
    }

private:
    std::ofstream out_;
};

void log_line(const RunOptions& opt, const std::string& s) {
    if (opt.log) *opt.log << s << '\n';
}

// ---------------------------------------------------------------------------
// Models.

Vocab load_vocab(const ExperimentConfig& c) {
    if (auto p = optional_path(c.values["models"]["vocab"])) {
        auto in = open_in(required_file(c.values["models"]["vocab"], "models.vocab"));
        return Vocab::load(in);
    }
    return reference_vocab();
}

TranslatorShape translator_shape(const ExperimentConfig& c) {
    const auto& s = c.values["models"]["translator_shape"];
    return {s["l_ein"].get<std::size_t>(), s["l_eout"].get<std::size_t>(), s["l_ff"].get<std::size_t>()};
}

ToyTranslator load_translator(const ExperimentConfig& c, const Vocab& vocab, const std::string& seed_key) {
    if (seed_key == "translator_seed" && !c.values["models"]["translator"].is_null()) {
        auto in = open_in(required_file(c.values["models"]["translator"], "models.translator"));
        auto m = ToyTranslator::load(in);
        if (m.vocab_size != vocab.size()) throw ConfigError("models.translator", "vocab size does not match the vocab");
        return m;
    }
    return with_path("models." + seed_key, [&] {
        return ToyTranslator::create(vocab, c.values["models"][seed_key].get<std::uint64_t>(), translator_shape(c));
    });
}

CnnModel load_cnn(const ExperimentConfig& c) {
    if (!c.values["models"]["cnn"].is_null()) {
        auto in = open_in(required_file(c.values["models"]["cnn"], "models.cnn"));
        return CnnModel::load(in);
    }
    return CnnModel::reference();
}

// ---------------------------------------------------------------------------
// Tasks.

json summarize_texts(const ToyTranslator& model, const Vocab& vocab, const std::vector<std::string>& texts,
                     const AsicCostModel& cost) {
    std::vector<double> energy, ratio, tin, tout;
    for (const auto& t : texts) {
        const auto input = encode_text(t, vocab);
        if (input.ids.empty()) {
            energy.push_back(0.0);
            ratio.push_back(1.0);
            tin.push_back(0.0);
            tout.push_back(0.0);
            continue;
        }
        const auto r = translate(model, input);
        const auto e = simulate_energy(r.trace, cost);
        energy.push_back(e.energy_optimized_pj);
        ratio.push_back(e.energy_ratio);
        tin.push_back(static_cast<double>(r.dims.l_tin));
        tout.push_back(static_cast<double>(r.dims.l_tout));
    }
    return {{"count", texts.size()},
            {"mean_energy_mj", mean(energy) * 1e-9},
            {"mean_energy_pj", mean(energy)},
            {"mean_energy_ratio", mean(ratio)},
            {"mean_input_tokens", mean(tin)},
            {"mean_output_tokens", mean(tout)}};
}

std::vector<std::string> random_texts(std::size_t n, std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_text(rng, length));
    return out;
}

template <class Payload>
std::vector<const Individual<Payload>*> distinct_best(const GaResult<Payload>& r, std::size_t k) {
    std::vector<const Individual<Payload>*> out;
    for (const auto& ind : r.pool) {
        if (out.size() == k) break;
        bool dup = false;
        for (auto* o : out) dup = dup || o->payload == ind.payload;
        if (!dup) out.push_back(&ind);
    }
    return out;
}

FitnessFunction<std::string> nlp_fitness(const ExperimentConfig& c, const ToyTranslator& m, const Vocab& v) {
    const auto kind = c.values["nlp"]["fitness"].get<std::string>();
    if (kind == "simulated_energy") return translator_energy_fitness(m, v, c.cost());
    if (kind == "estimated_ops") return translator_ops_fitness(m, v);
    throw ConfigError("nlp.fitness", "expected simulated_energy or estimated_ops");
}

int task_attack_nlp(const ExperimentConfig& c, const RunOptions& opt) {
    Outputs out(c);
    const auto vocab = load_vocab(c);
    const auto model = load_translator(c, vocab, "translator_seed");
    const auto length = c.values["nlp"]["length"].get<std::size_t>();
    if (length == 0) throw ConfigError("nlp.length", "must be positive");
    const auto fitness = nlp_fitness(c, model, vocab);

    HistoryStream history(out.path("history.tsv"), out.stamp(), fitness.source);
    const auto ga = c.ga();
    const auto result = ga_run_nlp(ga, fitness, length, Alphabet{}, history.callback(opt, "attack-nlp"));

    json best = json::array();
    std::vector<std::string> sponges;
    for (auto* ind : distinct_best(result, c.values["nlp"]["keep_best"].get<std::size_t>())) {
        sponges.push_back(ind->payload);
        best.push_back({{"text", ind->payload},
                        {"fitness", ind->fitness->value},
                        {"source", to_string(ind->fitness->source)},
                        {"tokens", encode_text(ind->payload, vocab).length()}});
    }
    out.json_file("best.json", {{"length", length}, {"sponges", best}});

    const auto n = c.values["nlp"]["baseline_samples"].get<std::size_t>();
    const auto natural = natural_corpus(n, length, derive_seed(c.seed, "natural"));
    const auto random = random_texts(n, length, derive_seed(c.seed, "random"));
    out.json_file("summary.json", {{"task", c.task},
                                   {"length", length},
                                   {"generations_run", result.history.size()},
                                   {"natural", summarize_texts(model, vocab, natural, c.cost())},
                                   {"random", summarize_texts(model, vocab, random, c.cost())},
                                   {"sponge", summarize_texts(model, vocab, sponges, c.cost())}});
    log_line(opt, "attack-nlp: best '" + result.best().payload + "' fitness " + format_number(result.best().fitness->value));
    return 0;
}

json summarize_images(const CnnModel& model, const std::vector<Image>& images, const AsicCostModel& cost) {
    std::vector<double> overall, relu, energy, ratio;
    for (const auto& img : images) {
        const auto r = cnn_forward(model, img);
        const auto e = simulate_energy(r.trace, cost);
        overall.push_back(r.density.overall_density);
        relu.push_back(r.density.post_relu_density);
        energy.push_back(e.energy_optimized_pj);
        ratio.push_back(e.energy_ratio);
    }
    return {{"count", images.size()},
            {"mean_overall_density", mean(overall)},
            {"mean_post_relu_density", mean(relu)},
            {"mean_energy_pj", mean(energy)},
            {"mean_energy_ratio", mean(ratio)}};
}

void save_image(const fs::path& p, const Image& img) {
    std::ofstream out(p);
    write_image(out, img);
}

int task_attack_cv(const ExperimentConfig& c, const RunOptions& opt) {
    Outputs out(c);
    const auto model = load_cnn(c);
    const auto per_class = c.values["cv"]["samples_per_class"].get<std::size_t>();
    if (per_class == 0) throw ConfigError("cv.samples_per_class", "must be positive");

    const auto fitness = cnn_energy_fitness(model, c.cost());
    HistoryStream history(out.path("history.tsv"), out.stamp(), fitness.source);
    const Image shape(model.channels, model.height, model.width);
    const auto ga = ga_run_cv(c.ga(), fitness, shape, history.callback(opt, "attack-cv"));

    fs::create_directories(out.path("sponges"));
    std::vector<Image> ga_sponges;
    for (auto* ind : distinct_best(ga, c.values["cv"]["keep_best"].get<std::size_t>())) {
        char name[32];
        std::snprintf(name, sizeof name, "ga_%03zu.img", ga_sponges.size());
        save_image(out.path("sponges") / name, ind->payload);
        ga_sponges.push_back(ind->payload);
    }

    LbfgsConfig lc;
    lc.memory = c.values["cv"]["lbfgs"]["memory"].get<std::size_t>();
    lc.max_steps = c.values["cv"]["lbfgs"]["max_steps"].get<std::size_t>();
    with_path("cv.lbfgs", [&] { lc.validate(); return 0; });
    std::mt19937_64 rng(derive_seed(c.seed, "lbfgs"));
    std::vector<Image> lbfgs_sponges;
    const auto starts = c.values["cv"]["lbfgs_starts"].get<std::size_t>();
    for (std::size_t i = 0; i < starts; ++i) {
        if (opt.interrupted && opt.interrupted->load()) break;
        const auto r = lbfgs_attack_random_start(model, rng, lc);
        char name[32];
        std::snprintf(name, sizeof name, "lbfgs_%03zu.img", i);
        save_image(out.path("sponges") / name, r.image);
        lbfgs_sponges.push_back(r.image);
    }

    const auto natural = natural_like_dataset(per_class, static_cast<int>(model.classes), derive_seed(c.seed, "natural"));
    std::vector<Image> natural_images, random_images;
    std::mt19937_64 rrng(derive_seed(c.seed, "random"));
    for (const auto& s : natural) natural_images.push_back(s.image);
    for (std::size_t i = 0; i < natural.size(); ++i)
        random_images.push_back(uniform_random_image(rrng, model.channels, model.height, model.width));

    const auto ibp = ibp_max_density(model);
    json classes = json::array();
    for (const auto& cd : class_density_profile(model, natural))
        classes.push_back({{"label", cd.label},
                           {"count", cd.count},
                           {"mean_overall_density", cd.mean_overall},
                           {"mean_post_relu_density", cd.mean_post_relu}});
    json summary = {{"task", c.task},
                    {"natural", summarize_images(model, natural_images, c.cost())},
                    {"random", summarize_images(model, random_images, c.cost())},
                    {"sponge_ga", summarize_images(model, ga_sponges, c.cost())},
                    {"ibp_max_overall_density", ibp.overall_density},
                    {"ibp_max_post_relu_density", ibp.post_relu_density},
                    {"natural_by_class", classes}};
    if (!lbfgs_sponges.empty()) summary["sponge_lbfgs"] = summarize_images(model, lbfgs_sponges, c.cost());
    out.json_file("summary.json", summary);
    return 0;
}

ServiceConfig service_config(const ExperimentConfig& c) {
    const auto& s = c.values["service"];
    ServiceConfig sc;
    sc.host = s["host"].get<std::string>();
    const auto port = s["port"].get<std::uint64_t>();
    if (port > 65535) throw ConfigError("service.port", "must be at most 65535");
    sc.port = static_cast<std::uint16_t>(port);
    sc.cache_capacity = s["cache_capacity"].get<std::size_t>();
    sc.base_service_s = s["base_service_s"].get<double>();
    sc.per_step_s = s["per_step_s"].get<double>();
    sc.cache_hit_s = s["cache_hit_s"].get<double>();
    sc.network.base_s = s["network_base_s"].get<double>();
    sc.network.jitter_mean_s = s["network_jitter_mean_s"].get<double>();
    sc.max_input_chars = s["max_input_chars"].get<std::size_t>();
    sc.seed = derive_seed(c.seed, "network");
    const auto timing = s["timing"].get<std::string>();
    if (timing == "simulated") sc.timing = TimingMode::Simulated;
    else if (timing == "real_sleep") sc.timing = TimingMode::RealSleep;
    else throw ConfigError("service.timing", "expected simulated or real_sleep");
    if (!s["guard_profile"].is_null()) {
        auto in = open_in(required_file(s["guard_profile"], "service.guard_profile"));
        sc.guard = with_path("service.guard_profile", [&] { return ConsumptionProfile::load(in); });
        sc.guard_cost.source = sc.guard->source;
        sc.guard_cost.asic = c.cost();
        sc.guard_cost.latency = c.latency();
    }
    with_path("service", [&] { sc.validate(); return 0; });
    return sc;
}

int task_attack_blackbox(const ExperimentConfig& c, const RunOptions& opt) {
    Outputs out(c);
    const auto& b = c.values["blackbox"];
    std::unique_ptr<TranslationService> local;
    Endpoint endpoint;
    ClientOptions client;
    client.allow_remote = b["allow_remote"].get<bool>();
    if (b["endpoint"].is_null()) {
        auto vocab = std::make_shared<const Vocab>(load_vocab(c));
        auto model = std::make_shared<const ToyTranslator>(load_translator(c, *vocab, "translator_seed"));
        local = serve(service_config(c), model, vocab);
        endpoint = Endpoint::parse(local->endpoint());
        client.timing = c.values["service"]["timing"] == "simulated" ? TimingMode::Simulated : TimingMode::RealSleep;
    } else {
        endpoint = with_path("blackbox.endpoint", [&] {
            try {
                return Endpoint::parse(b["endpoint"].get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ValidationError(e.what());
            }
        });
        client.timing = TimingMode::RealSleep;
    }

    const auto chars = b["input_chars"].get<std::size_t>();
    if (chars == 0) throw ConfigError("blackbox.input_chars", "must be positive");
    std::vector<double> baseline;
    for (const auto& s : natural_corpus(b["baseline_samples"].get<std::size_t>(), chars, derive_seed(c.seed, "natural")))
        baseline.push_back(client_translate(endpoint, s, client).round_trip.duration_s);
    if (baseline.empty()) throw ConfigError("blackbox.baseline_samples", "must be positive");

    BlackboxOptions bo;
    bo.repeats = b["repeats"].get<std::size_t>();
    bo.client = client;
    bo.log = std::make_shared<std::vector<BlackboxObservation>>();
    const auto fitness = with_path("blackbox", [&] { return blackbox_latency_fitness(endpoint, bo); });
    HistoryStream history(out.path("history.tsv"), out.stamp(), fitness.source);
    const auto result = ga_run_nlp(c.ga(), fitness, chars, Alphabet{}, history.callback(opt, "attack-blackbox"));

    {
        std::ofstream obs(out.path("observations.tsv"));
        write_stamp(obs, out.stamp());
        obs << "index\tround_trip_s\tserver_time_s\tcached\ttext\n";
        for (std::size_t i = 0; i < bo.log->size(); ++i) {
            const auto& o = (*bo.log)[i];
            obs << i << '\t' << format_number(o.round_trip_s) << '\t' << format_number(o.server_time_s) << '\t'
                << (o.cached ? 1 : 0) << '\t' << o.text << '\n';
        }
    }
    double best = 0.0;
    for (const auto& h : result.history) best = std::max(best, h.best);
    const double base = mean(baseline);
    out.json_file("summary.json", {{"task", c.task},
                                   {"natural_baseline_round_trip_s", base},
                                   {"best_round_trip_s", best},
                                   {"uplift", best / base},
                                   {"server_time_drops", count_server_time_drops(*bo.log)},
                                   {"requests", bo.log->size()},
                                   {"best_text", result.best().payload}});
    return 0;
}

int task_simulate(const ExperimentConfig& c, const RunOptions&) {
    Outputs out(c);
    auto in = open_in(required_file(c.values["simulate"]["trace"], "simulate.trace"));
    const auto trace = read_trace(in);
    const auto r = simulate_energy(trace, c.cost());
    out.json_file("energy_report.json", {{"energy_optimized_pj", r.energy_optimized_pj},
                                         {"energy_unoptimized_pj", r.energy_unoptimized_pj},
                                         {"energy_optimized_mj", r.energy_optimized_mj()},
                                         {"energy_unoptimized_mj", r.energy_unoptimized_mj()},
                                         {"energy_ratio", r.energy_ratio},
                                         {"mult_total", r.mult_total},
                                         {"mult_nonzero", r.mult_nonzero},
                                         {"act_total", r.act_total},
                                         {"act_nonzero", r.act_nonzero},
                                         {"dram_words_raw", r.dram_words_raw},
                                         {"dram_words_compressed", r.dram_words_compressed}});
    return 0;
}

int task_transfer(const ExperimentConfig& c, const RunOptions& opt) {
    Outputs out(c);
    const auto vocab = load_vocab(c);
    const auto source = load_translator(c, vocab, "translator_seed");
    const auto target = load_translator(c, vocab, "transfer_target_seed");
    const auto length = c.values["nlp"]["length"].get<std::size_t>();
    const auto wanted = c.values["transfer"]["sponges"].get<std::size_t>();

    HistoryStream history(out.path("history.tsv"), out.stamp(), FitnessSource::SimulatedEnergy);
    const auto result = ga_run_nlp(c.ga(), translator_energy_fitness(source, vocab, c.cost()), length, Alphabet{},
                                   history.callback(opt, "transfer"));
    const auto best = distinct_best(result, wanted);
    const auto random = random_texts(best.size(), length, derive_seed(c.seed, "random"));

    PlotTable t{"index", {"sponge_on_source_pj", "sponge_on_target_pj", "random_on_target_pj"}, {}};
    std::vector<double> diffs, sponge_e, random_e;
    for (std::size_t i = 0; i < best.size(); ++i) {
        const double on_source = translation_energy(source, vocab, best[i]->payload, c.cost());
        const double on_target = translation_energy(target, vocab, best[i]->payload, c.cost());
        const double rand = translation_energy(target, vocab, random[i], c.cost());
        t.rows.push_back({static_cast<double>(i), {on_source, on_target, rand}});
        sponge_e.push_back(on_target);
        random_e.push_back(rand);
        diffs.push_back(on_target - rand);
    }
    out.table("transfer.tsv", t);
    const auto st = sign_test(diffs);
    out.json_file("summary.json", {{"task", c.task},
                                   {"sponges", best.size()},
                                   {"mean_sponge_energy_on_target_pj", mean(sponge_e)},
                                   {"mean_random_energy_on_target_pj", mean(random_e)},
                                   {"uplift", mean(sponge_e) / mean(random_e)},
                                   {"sign_test", {{"positives", st.positives},
                                                  {"negatives", st.negatives},
                                                  {"zeros", st.zeros},
                                                  {"p_greater", st.p_greater}}}});
    return 0;
}

json guard_rates(const ToyTranslator& model, const Vocab& vocab, const std::vector<std::string>& texts,
                 const ConsumptionProfile& profile, const CostFunction& cost) {
    std::size_t rejected = 0;
    double worst_overshoot = 0.0;
    for (const auto& t : texts) {
        const auto input = encode_text(t, vocab);
        if (input.ids.empty()) continue;
        const auto g = guarded_infer(model, input, profile, cost);
        if (g.rejected()) {
            ++rejected;
            worst_overshoot = std::max(worst_overshoot, g.cost - profile.threshold);
        }
    }
    return {{"count", texts.size()},
            {"rejected", rejected},
            {"rejection_rate", texts.empty() ? 0.0 : static_cast<double>(rejected) / static_cast<double>(texts.size())},
            {"max_overshoot", worst_overshoot}};
}

int task_profile_defense(const ExperimentConfig& c, const RunOptions&) {
    Outputs out(c);
    const auto& d = c.values["defense"];
    const auto vocab = load_vocab(c);
    const auto model = load_translator(c, vocab, "translator_seed");
    CostFunction cost;
    cost.source = with_path("defense.cost_source", [&] { return cost_source_from_string(d["cost_source"].get<std::string>()); });
    cost.asic = c.cost();
    cost.latency = c.latency();

    const auto length = d["length"].get<std::size_t>();
    const auto corpus = natural_corpus(d["profile_corpus"].get<std::size_t>(), length, derive_seed(c.seed, "profile"));
    if (corpus.empty()) throw ConfigError("defense.profile_corpus", "must be positive");
    const auto profile = with_path("defense.percentile", [&] {
        return profile_natural(model, vocab, corpus, d["percentile"].get<double>(), cost);
    });
    {
        std::ofstream pf(out.path("profile.txt"));
        profile.save(pf);
    }
    out.table("profile.tsv", profile_table(profile));

    const auto heldout = natural_corpus(d["heldout_corpus"].get<std::size_t>(), length, derive_seed(c.seed, "heldout"));
    const auto random = random_texts(heldout.size(), length, derive_seed(c.seed, "random"));
    json summary = {{"task", c.task},
                    {"cost_source", to_string(profile.source)},
                    {"percentile", profile.percentile},
                    {"threshold", profile.threshold},
                    {"natural_heldout", guard_rates(model, vocab, heldout, profile, cost)},
                    {"random", guard_rates(model, vocab, random, profile, cost)}};
    if (!d["sponge_file"].is_null()) {
        auto in = open_in(required_file(d["sponge_file"], "defense.sponge_file"));
        const auto doc = json::parse(in);
        if (!doc.contains("sponges") || !doc["sponges"].is_array())
            throw ConfigError("defense.sponge_file", "expected a best.json file with a 'sponges' array");
        std::vector<std::string> sponges;
        for (const auto& s : doc["sponges"]) sponges.push_back(s.at("text").get<std::string>());
        summary["sponge"] = guard_rates(model, vocab, sponges, profile, cost);
    }
    out.json_file("summary.json", summary);
    return 0;
}

std::vector<double> read_numbers(const fs::path& p) {
    auto in = open_in(p);
    std::vector<double> v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::size_t used = 0;
        double x = 0.0;
        try {
            x = std::stod(line, &used);
        } catch (const std::exception&) {
            throw std::runtime_error(p.string() + ": not a number: '" + line + "'");
        }
        if (line.find_first_not_of(" \t\r", used) != std::string::npos)
            throw std::runtime_error(p.string() + ": trailing text in '" + line + "'");
        v.push_back(x);
    }
    return v;
}

int task_stats(const ExperimentConfig& c, const RunOptions&) {
    Outputs out(c);
    const auto& s = c.values["stats"];
    std::vector<NamedSamples> ordered;
    for (const auto& name_json : s["order"]) {
        if (!name_json.is_string()) throw ConfigError("stats.order", "expected class names");
        const auto name = name_json.get<std::string>();
        if (!s.contains(name) || !(s[name].is_null() || s[name].is_string()))
            throw ConfigError("stats.order", "unknown class '" + name + "'");
        const auto file = required_file(s[name], "stats." + name);
        ordered.push_back({name, read_numbers(file)});
        if (ordered.back().values.empty()) throw ConfigError("stats." + name, "no samples in " + file.string());
    }
    if (ordered.size() < 2) throw ConfigError("stats.order", "need at least two classes");
    const auto report = compare_sample_classes(ordered, s["alpha"].get<double>());
    json tests = json::array();
    PlotTable trace{"n", {}, {}};
    for (const auto& t : report.tests) {
        tests.push_back({{"greater", t.greater},
                         {"lesser", t.lesser},
                         {"u_greater", t.result.u_a},
                         {"u_lesser", t.result.u_b},
                         {"z", t.result.z},
                         {"p", t.result.p_greater},
                         {"degenerate", t.result.degenerate},
                         {"n_needed", t.n_needed ? json(*t.n_needed) : json(nullptr)}});
        trace.columns.push_back("p_" + t.greater + "_gt_" + t.lesser);
    }
    // Shared n grid: every test uses the same prefix sizes when classes have equal size.
    std::size_t rows = report.tests.front().trace.size();
    for (const auto& t : report.tests) rows = std::min(rows, t.trace.size());
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<double> ps;
        for (const auto& t : report.tests) ps.push_back(t.trace[i].second);
        trace.rows.push_back({static_cast<double>(report.tests.front().trace[i].first), ps});
    }
    out.table("significance_trace.tsv", trace);
    out.json_file("report.json", {{"task", c.task}, {"alpha", report.alpha}, {"all_significant", report.all_significant()},
                                  {"tests", tests}});
    return 0;
}

int task_serve(const ExperimentConfig& c, const RunOptions& opt) {
    Outputs out(c);
    auto vocab = std::make_shared<const Vocab>(load_vocab(c));
    auto model = std::make_shared<const ToyTranslator>(load_translator(c, *vocab, "translator_seed"));
    auto service = serve(service_config(c), model, vocab);
    log_line(opt, "serve: listening on " + service->endpoint());
    const double duration = c.values["service"]["duration_s"].get<double>();
    SteadyClock clock;
    const double t0 = clock.now();
    while (!(opt.interrupted && opt.interrupted->load()) && (duration <= 0.0 || clock.now() - t0 < duration))
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    service->stop();
    const auto windows = service->windows();
    std::ofstream log(out.path("service_windows.tsv"));
    write_stamp(log, out.stamp());
    log << "request\tstart_s\tend_s\n";
    for (std::size_t i = 0; i < windows.size(); ++i)
        log << i << '\t' << format_number(windows[i].start_s - t0) << '\t' << format_number(windows[i].end_s - t0) << '\n';
    log_line(opt, "serve: handled " + std::to_string(service->requests_served()) + " requests");
    return 0;
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
    const auto key = assignment.substr(0, eq);
    const auto raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty path component");
        if (!node->is_object()) throw ConfigError(key, "not an object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

ExperimentConfig ExperimentConfig::from_json(const json& user) {
    if (!user.is_object()) throw ConfigError("<root>", "config must be a JSON object");
    auto defaults = default_config();
    check_against(user, defaults, "");
    defaults.merge_patch(user);

    ExperimentConfig c;
    c.values = std::move(defaults);
    c.task = c.values["task"].get<std::string>();
    if (std::find(kTasks.begin(), kTasks.end(), c.task) == kTasks.end()) throw ConfigError("task", "unknown task '" + c.task + "'");
    c.seed = c.values["seed"].get<std::uint64_t>();
    c.output_dir = c.values["output_dir"].get<std::string>();
    // Surface range errors now, with their field paths.
    c.ga();
    c.cost();
    c.latency();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& file, const std::vector<std::string>& overrides,
                                        std::optional<std::uint64_t> seed, std::optional<fs::path> output_dir) {
    json user = json::object();
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw ConfigError("--config", "cannot open " + file.string());
        try {
            user = json::parse(in, nullptr, true, true);
        } catch (const json::parse_error& e) {
            throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(user, o);
    if (seed) user["seed"] = *seed;
    if (output_dir) user["output_dir"] = output_dir->string();
    return from_json(user);
}

std::string ExperimentConfig::hash() const {
    auto canonical = values;
    canonical.erase("output_dir");
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical.dump());
    return s.str();
}

GaConfig ExperimentConfig::ga() const {
    const auto& g = values["ga"];
    GaConfig ga;
    ga.pool_size = g["pool_size"].get<std::size_t>();
    ga.generations = g["generations"].get<std::size_t>();
    ga.selection_fraction = g["selection_fraction"].get<double>();
    ga.mutation_rate = g["mutation_rate"].get<double>();
    ga.flip_probability = g["flip_probability"].get<double>();
    ga.dilution_fraction = g["dilution_fraction"].get<double>();
    ga.min_classes_preserved = g["min_classes_preserved"].get<std::size_t>();
    ga.cache_fitness = g["cache_fitness"].get<bool>();
    ga.threads = g["threads"].get<std::size_t>();
    ga.seed = derive_seed(seed, "ga");
    with_path("ga", g, [&] { ga.validate(); return 0; });
    return ga;
}

AsicCostModel ExperimentConfig::cost() const {
    const auto& j = values["cost"];
    AsicCostModel m;
    m.dram_access_energy_pj = j["dram_access_energy_pj"].get<double>();
    m.fp_mult_energy_pj = j["fp_mult_energy_pj"].get<double>();
    m.zero_skip_enabled = j["zero_skip_enabled"].get<bool>();
    m.dram_compress_enabled = j["dram_compress_enabled"].get<bool>();
    with_path("cost", [&] { m.validate(); return 0; });
    return m;
}

LatencyModel ExperimentConfig::latency() const {
    const auto& j = values["latency"];
    LatencyModel m;
    m.fixed_s = j["fixed_s"].get<double>();
    m.per_mult_s = j["per_mult_s"].get<double>();
    m.per_dram_word_s = j["per_dram_word_s"].get<double>();
    m.noise_sd_s = j["noise_sd_s"].get<double>();
    with_path("latency", [&] { m.validate(); return 0; });
    return m;
}

void emit_plot_data(std::ostream& out, const PlotTable& table, const OutputStamp& stamp) {
    if (table.rows.empty()) throw std::invalid_argument("emit_plot_data: empty series");
    if (table.columns.empty()) throw std::invalid_argument("emit_plot_data: no value columns");
    for (const auto& r : table.rows)
        if (r.second.size() != table.columns.size())
            throw std::invalid_argument("emit_plot_data: row width differs from the column count");
    write_stamp(out, stamp);
    out << table.x;
    for (const auto& c : table.columns) out << '\t' << c;
    out << '\n';
    for (const auto& [x, values] : table.rows) {
        out << format_number(x);
        for (double v : values) out << '\t' << format_number(v);
        out << '\n';
    }
}

PlotTable history_table(const std::vector<GenerationStats>& history) {
    PlotTable t;
    t.x = "generation";
    if (history.empty()) return t;
    const std::string src = to_string(history.front().source);
    t.columns = {"best_" + src, "mean_" + src};
    for (const auto& h : history) t.rows.push_back({static_cast<double>(h.generation), {h.best, h.mean}});
    return t;
}

PlotTable comparison_table(const std::vector<std::pair<std::string, std::vector<GenerationStats>>>& runs) {
    PlotTable t;
    t.x = "generation";
    if (runs.empty()) return t;
    std::size_t n = runs.front().second.size();
    for (const auto& [name, h] : runs) {
        t.columns.push_back(name);
        n = std::min(n, h.size());
    }
    for (std::size_t g = 0; g < n; ++g) {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(r.second[g].best);
        t.rows.push_back({static_cast<double>(g), v});
    }
    return t;
}

PlotTable profile_table(const ConsumptionProfile& profile) {
    PlotTable t;
    t.x = "rank";
    t.columns = {std::string("cost_") + to_string(profile.source)};
    auto sorted = profile.costs;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) t.rows.push_back({static_cast<double>(i + 1), {sorted[i]}});
    return t;
}

int run(const ExperimentConfig& config, const RunOptions& options) {
    if (config.task == "attack-nlp") return task_attack_nlp(config, options);
    if (config.task == "attack-cv") return task_attack_cv(config, options);
    if (config.task == "attack-blackbox") return task_attack_blackbox(config, options);
    if (config.task == "simulate") return task_simulate(config, options);
    if (config.task == "transfer") return task_transfer(config, options);
    if (config.task == "profile-defense") return task_profile_defense(config, options);
    if (config.task == "stats") return task_stats(config, options);
    if (config.task == "serve") return task_serve(config, options);
    throw ConfigError("task", "unknown task '" + config.task + "'");
}

}  // namespace sponge
