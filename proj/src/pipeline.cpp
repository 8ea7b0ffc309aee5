#include "kgstruct/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <mutex>

#include "kgstruct/parallel.hpp"

namespace kgstruct {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read(const json& j, std::string_view key, T& out, const std::string& where) {
    auto it = j.find(std::string(key));
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + std::string(key) + ": " + e.what());
    }
}

ModelSpec parse_model_spec(const json& j, ModelKind kind, const std::string& where) {
    check_keys(j, {"dim", "epochs", "batch_size", "learning_rate", "negatives", "margin", "adversarial_temperature",
                   "l2_weight"},
               where);
    ModelSpec s;
    s.train = TrainConfig::defaults(kind);
    read(j, "dim", s.dim, where);
    read(j, "epochs", s.train.epochs, where);
    read(j, "batch_size", s.train.batch_size, where);
    read(j, "learning_rate", s.train.learning_rate, where);
    read(j, "negatives", s.train.negatives, where);
    read(j, "margin", s.train.margin, where);
    read(j, "adversarial_temperature", s.train.adversarial_temperature, where);
    read(j, "l2_weight", s.train.l2_weight, where);
    return s;
}

ordered_json model_spec_json(const ModelSpec& s) {
    return {{"dim", s.dim},
            {"epochs", s.train.epochs},
            {"batch_size", s.train.batch_size},
            {"learning_rate", s.train.learning_rate},
            {"negatives", s.train.negatives},
            {"margin", s.train.margin},
            {"adversarial_temperature", s.train.adversarial_temperature},
            {"l2_weight", s.train.l2_weight}};
}

}  // namespace

const ModelSpec& StudyConfig::spec(ModelKind k) const {
    static const std::map<ModelKind, ModelSpec> defaults = [] {
        std::map<ModelKind, ModelSpec> m;
        for (auto k2 : {ModelKind::transe, ModelKind::complex, ModelKind::rotate})
            m[k2] = ModelSpec{64, TrainConfig::defaults(k2)};
        return m;
    }();
    auto it = model_specs.find(k);
    return it != model_specs.end() ? it->second : defaults.at(k);
}

void StudyConfig::validate() const {
    try {
        if (dataset_files.has_value() == synthetic.has_value())
            throw ConfigError("dataset: give either train/valid/test paths or a synthetic block");
        sampler.validate();
        if (corpus_size < 1) throw ConfigError("sampler.count must be >= 1");
        if (models.empty()) throw ConfigError("models: at least one model kind required");
        for (auto k : models) {
            if (spec(k).dim < 1) throw ConfigError("model_config: dim must be >= 1");
            spec(k).train.validate();
        }
        if ((correlation || sobol) && corpus_size < 10)
            throw ConfigError("insufficient records for surrogate: sampler.count must be >= 10 when correlation or sobol stages are enabled");
        if (grid && (grid->epochs.empty() || grid->dims.empty())) throw ConfigError("grid: epochs and dims must be nonempty");
        if (lime && !(lime_quantile > 0 && lime_quantile <= 0.5)) throw ConfigError("lime.quantile must lie in (0, 0.5]");
        if (sobol_samples < 64 || (sobol_samples & (sobol_samples - 1)) != 0)
            throw ConfigError("stats.sobol_n must be a power of two >= 64");
        if (workers < 1) throw ConfigError("workers must be >= 1");
    } catch (const std::domain_error& e) {
        throw ConfigError(e.what());
    }
}

StudyConfig StudyConfig::from_json(const json& j, const fs::path& base_dir) {
    check_keys(j, {"dataset", "sampler", "models", "model_config", "reference", "grid", "lime", "stats",
                   "category_threshold", "out_dir", "master_seed", "workers"},
               "config");
    StudyConfig c;
    if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset'");
    const auto& d = j.at("dataset");
    check_keys(d, {"train", "valid", "test", "synthetic"}, "dataset");
    if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        check_keys(s, {"core_entities", "core_relations", "core_triples_per_relation", "chains", "chain_length",
                       "valid_fraction", "test_fraction", "seed"},
                   "dataset.synthetic");
        CategoryFamilyParams p;
        read(s, "core_entities", p.core_entities, "dataset.synthetic");
        read(s, "core_relations", p.core_relations, "dataset.synthetic");
        read(s, "core_triples_per_relation", p.core_triples_per_relation, "dataset.synthetic");
        read(s, "chains", p.chains, "dataset.synthetic");
        read(s, "chain_length", p.chain_length, "dataset.synthetic");
        read(s, "valid_fraction", p.valid_fraction, "dataset.synthetic");
        read(s, "test_fraction", p.test_fraction, "dataset.synthetic");
        read(s, "seed", p.seed, "dataset.synthetic");
        c.synthetic = p;
    }
    if (d.contains("train") || d.contains("valid") || d.contains("test")) {
        std::array<fs::path, 3> paths;
        const char* names[3] = {"train", "valid", "test"};
        for (int i = 0; i < 3; ++i) {
            if (!d.contains(names[i])) throw ConfigError(std::string("dataset: missing '") + names[i] + "'");
            fs::path p = d.at(names[i]).get<std::string>();
            paths[static_cast<std::size_t>(i)] = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
        c.dataset_files = paths;
    }

    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        check_keys(s, {"r_min", "r_max", "k", "count"}, "sampler");
        read(s, "r_min", c.sampler.r_min, "sampler");
        read(s, "r_max", c.sampler.r_max, "sampler");
        read(s, "k", c.sampler.k, "sampler");
        read(s, "count", c.corpus_size, "sampler");
    }
    if (j.contains("models")) {
        c.models.clear();
        for (const auto& m : j.at("models")) {
            try {
                c.models.push_back(parse_model(m.get<std::string>()));
            } catch (const std::exception& e) {
                throw ConfigError(std::string("models: ") + e.what());
            }
        }
    }
    if (j.contains("model_config")) {
        const auto& mc = j.at("model_config");
        check_keys(mc, {"transe", "complex", "rotate"}, "model_config");
        for (const auto& [name, body] : mc.items()) {
            const auto kind = parse_model(name);
            c.model_specs[kind] = parse_model_spec(body, kind, "model_config." + name);
        }
    }
    read(j, "reference", c.reference, "config");
    if (j.contains("grid") && !j.at("grid").is_null()) {
        const auto& g = j.at("grid");
        check_keys(g, {"epochs", "dims"}, "grid");
        Grid grid;
        read(g, "epochs", grid.epochs, "grid");
        read(g, "dims", grid.dims, "grid");
        c.grid = grid;
    }
    if (j.contains("lime") && !j.at("lime").is_null()) {
        const auto& l = j.at("lime");
        check_keys(l, {"samples", "kernel_width", "perturbation_scale", "ridge", "quantile"}, "lime");
        LimeConfig lc;
        read(l, "samples", lc.samples, "lime");
        read(l, "kernel_width", lc.kernel_width, "lime");
        read(l, "perturbation_scale", lc.perturbation_scale, "lime");
        read(l, "ridge", lc.ridge, "lime");
        read(l, "quantile", c.lime_quantile, "lime");
        c.lime = lc;
    }
    if (j.contains("stats")) {
        const auto& s = j.at("stats");
        check_keys(s, {"correlation", "sobol", "sobol_n", "bootstrap", "min_r2"}, "stats");
        read(s, "correlation", c.correlation, "stats");
        read(s, "sobol", c.sobol, "stats");
        read(s, "sobol_n", c.sobol_samples, "stats");
        read(s, "bootstrap", c.bootstrap, "stats");
        read(s, "min_r2", c.min_r2, "stats");
    }
    read(j, "category_threshold", c.category_threshold, "config");
    if (j.contains("out_dir")) {
        fs::path p = j.at("out_dir").get<std::string>();
        c.out_dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    read(j, "master_seed", c.master_seed, "config");
    read(j, "workers", c.workers, "config");
    c.validate();
    return c;
}

ordered_json StudyConfig::to_json() const {
    ordered_json j;
    if (dataset_files) {
        j["dataset"] = {{"train", (*dataset_files)[0].string()},
                        {"valid", (*dataset_files)[1].string()},
                        {"test", (*dataset_files)[2].string()}};
    } else if (synthetic) {
        const auto& p = *synthetic;
        j["dataset"]["synthetic"] = {{"core_entities", p.core_entities},
                                     {"core_relations", p.core_relations},
                                     {"core_triples_per_relation", p.core_triples_per_relation},
                                     {"chains", p.chains},
                                     {"chain_length", p.chain_length},
                                     {"valid_fraction", p.valid_fraction},
                                     {"test_fraction", p.test_fraction},
                                     {"seed", p.seed}};
    }
    j["sampler"] = {{"r_min", sampler.r_min}, {"r_max", sampler.r_max}, {"k", sampler.k}, {"count", corpus_size}};
    j["models"] = ordered_json::array();
    for (auto k : models) j["models"].push_back(model_name(k));
    for (auto k : models) j["model_config"][std::string(model_name(k))] = model_spec_json(spec(k));
    j["reference"] = reference;
    if (grid) j["grid"] = {{"epochs", grid->epochs}, {"dims", grid->dims}};
    if (lime)
        j["lime"] = {{"samples", lime->samples},
                     {"kernel_width", lime->kernel_width},
                     {"perturbation_scale", lime->perturbation_scale},
                     {"ridge", lime->ridge},
                     {"quantile", lime_quantile}};
    j["stats"] = {{"correlation", correlation},
                  {"sobol", sobol},
                  {"sobol_n", sobol_samples},
                  {"bootstrap", bootstrap},
                  {"min_r2", min_r2}};
    j["category_threshold"] = category_threshold;
    j["master_seed"] = master_seed;
    return j;
}

StudyConfig load_study_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return StudyConfig::from_json(j, path.parent_path());
}

std::uint64_t experiment_seed(std::uint64_t master_seed, std::size_t sample_index, ModelKind kind) {
    return derive_seed(derive_seed(master_seed, static_cast<std::uint64_t>(sample_index)), model_name(kind));
}

std::string_view stage_name(Stage s) {
    switch (s) {
        case Stage::sample: return "sample";
        case Stage::featurize: return "featurize";
        case Stage::train: return "train";
        case Stage::eval: return "eval";
        case Stage::correlate: return "correlate";
        case Stage::sobol: return "sobol";
        case Stage::reference: return "reference";
        case Stage::grid: return "grid";
        case Stage::explain: return "explain";
    }
    return "?";
}

std::set<Stage> stages_for_command(std::string_view command) {
    using S = Stage;
    if (command == "sample") return {S::sample};
    if (command == "featurize") return {S::sample, S::featurize};
    if (command == "train") return {S::sample, S::train};
    if (command == "eval") return {S::sample, S::featurize, S::train, S::eval};
    if (command == "correlate") return {S::sample, S::featurize, S::train, S::eval, S::correlate};
    if (command == "sobol") return {S::sample, S::featurize, S::train, S::eval, S::sobol};
    if (command == "explain") return {S::reference, S::explain};
    if (command == "study" || command == "report")
        return {S::sample, S::featurize, S::train, S::eval, S::correlate, S::sobol, S::reference, S::grid, S::explain};
    throw ConfigError("unknown subcommand '" + std::string(command) + "'");
}

bool StudyReport::aggregate_failed() const {
    for (const auto& [name, s] : stages)
        if (s.status == "failed") return true;
    return false;
}

// ---------------------------------------------------------------------------
// Study execution

namespace {

ordered_json eval_json(const EvalReport& r) {
    auto metrics = [](const RankMetrics& m) {
        return ordered_json{{"mrr", m.mrr},
                            {"hits_at", {{"1", m.hits1}, {"3", m.hits3}, {"10", m.hits10}}},
                            {"queries", m.queries}};
    };
    ordered_json j = metrics(r.overall);
    j["side"] = "both-averaged";
    j["triples"] = r.triples;
    j["per_category"] = ordered_json::object();
    for (const auto& [c, m] : r.per_category) j["per_category"][std::string(category_name(c))] = metrics(m);
    return j;
}

EvalReport eval_from_json(const json& j) {
    auto metrics = [](const json& m) {
        RankMetrics r;
        r.mrr = m.at("mrr").get<double>();
        r.hits1 = m.at("hits_at").at("1").get<double>();
        r.hits3 = m.at("hits_at").at("3").get<double>();
        r.hits10 = m.at("hits_at").at("10").get<double>();
        r.queries = m.at("queries").get<std::size_t>();
        return r;
    };
    EvalReport r;
    r.overall = metrics(j);
    r.triples = j.at("triples").get<std::size_t>();
    for (const auto& [name, m] : j.at("per_category").items()) r.per_category[parse_category(name)] = metrics(m);
    return r;
}

void write_atomic(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << text;
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::optional<json> read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        return json::parse(in);
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::string fingerprint(const ordered_json& j) { return std::to_string(fnv1a64(j.dump())); }

/// Train-or-reuse for one model on one graph; cached under `dir`.
struct CachedRun {
    EvalReport eval;
    bool reused = false;
};

CachedRun train_and_evaluate(const KnowledgeGraph& g, ModelKind kind, const ModelSpec& spec, std::uint64_t seed,
                             const fs::path& dir, bool do_eval, const CategoryMap* categories,
                             const ordered_json& identity) {
    const auto key = fingerprint(identity);
    const fs::path model_path = dir / "model.bin";
    const fs::path sidecar_path = dir / "model.json";
    const fs::path eval_path = dir / "eval.json";

    CachedRun run;
    if (auto cached = read_json(eval_path); cached && cached->value("key", "") == key) {
        run.eval = eval_from_json(cached->at("eval"));
        run.reused = true;
        return run;
    }

    EmbeddingModel model;
    auto sidecar = read_json(sidecar_path);
    if (sidecar && sidecar->value("key", "") == key && fs::exists(model_path)) {
        model = load_model(model_path);
        run.reused = true;
    } else {
        Rng init_rng(derive_seed(seed, "init"));
        model = init_model(kind, spec.dim, g.num_entities(), g.num_relations(), init_rng);
        TrainConfig cfg = spec.train;
        cfg.seed = derive_seed(seed, "train");
        const auto trace = train(model, g, cfg);
        fs::create_directories(dir);
        save_model(model, model_path.string() + ".tmp");
        fs::rename(model_path.string() + ".tmp", model_path);
        ordered_json side{{"key", key},
                          {"identity", identity},
                          {"entity_vocab_hash", fnv1a64(ordered_json(g.entities().labels()).dump())},
                          {"relation_vocab_hash", fnv1a64(ordered_json(g.relations().labels()).dump())},
                          {"loss_trace", trace}};
        write_atomic(sidecar_path, side.dump(2) + "\n");
    }
    if (!do_eval) return run;

    if (categories) {
        std::vector<Triple> eval;
        for (const auto& t : g.split(Split::test))
            if (categories->covers(t.relation)) eval.push_back(t);
        run.eval = evaluate_by_category(model, g, eval, *categories);
    } else {
        run.eval = evaluate(model, g, Split::test);
    }
    write_atomic(eval_path, ordered_json{{"key", key}, {"eval", eval_json(run.eval)}}.dump(2) + "\n");
    return run;
}

KnowledgeGraph load_dataset(const StudyConfig& config, LoadReport& report) {
    if (config.synthetic) {
        auto g = make_category_family(*config.synthetic);
        report = make_load_report(g);
        return g;
    }
    const auto& p = *config.dataset_files;
    try {
        return load_graph(p[0], p[1], p[2], &report);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
    }
}

class Stopwatch {
public:
    explicit Stopwatch(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
    ~Stopwatch() {
        sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    double& sink_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace

StudyReport run_study(const StudyConfig& config, const std::set<Stage>& stages) {
    config.validate();
    StudyReport report;
    report.config = config;
    auto wants = [&](Stage s) { return stages.contains(s); };
    auto mark = [&](Stage s, std::string status, std::string detail = {}) {
        report.stages[std::string(stage_name(s))] = {std::move(status), std::move(detail)};
    };
    for (Stage s : {Stage::sample, Stage::featurize, Stage::train, Stage::eval, Stage::correlate, Stage::sobol,
                    Stage::reference, Stage::grid, Stage::explain})
        if (!wants(s)) mark(s, "skipped", "not requested by this subcommand");

    const fs::path out = config.out_dir;
    const KnowledgeGraph graph = load_dataset(config, report.dataset);
    if (config.synthetic) write_splits(graph, out / "dataset");

    // -- sample -------------------------------------------------------------
    std::vector<SubgraphSample> corpus;
    if (wants(Stage::sample)) {
        Stopwatch t(report.wall_seconds["sample"]);
        SamplerParams params = config.sampler;
        try {
            corpus = generate_corpus(graph, config.corpus_size, params, derive_seed(config.master_seed, "corpus"),
                                     config.workers);
        } catch (const std::domain_error& e) {
            throw ConfigError(std::string("sampler: ") + e.what());
        }
        const fs::path corpus_dir = out / "corpus";
        const auto manifest = read_json(corpus_dir / "manifest.json");
        bool fresh = !manifest || manifest->size() != corpus.size();
        for (std::size_t i = 0; !fresh && i < corpus.size(); ++i)
            fresh = (*manifest)[i].value("seed", std::uint64_t{0}) != corpus[i].meta.seed ||
                    (*manifest)[i].value("nodes", std::size_t{0}) != corpus[i].nodes.size();
        if (fresh) write_corpus(graph, corpus, corpus_dir);
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            SampleSummary s;
            s.index = i;
            s.meta = corpus[i].meta;
            s.nodes = corpus[i].nodes.size();
            for (int k = 0; k < 3; ++k) s.triples[static_cast<std::size_t>(k)] = corpus[i].splits[k].size();
            if (!s.meta.usable) s.note = "unusable: an induced split is empty";
            else if (s.meta.exhausted) s.note = "component exhausted before target size";
            report.samples.push_back(std::move(s));
        }
        mark(Stage::sample, "done", std::to_string(corpus.size()) + " samples");
    }

    std::vector<std::optional<KnowledgeGraph>> subgraphs(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (corpus[i].meta.usable) subgraphs[i] = materialize(graph, corpus[i]);

    // -- featurize ----------------------------------------------------------
    if (wants(Stage::featurize)) {
        Stopwatch t(report.wall_seconds["featurize"]);
        parallel_for(corpus.size(), config.workers, [&](std::size_t i) {
            if (!subgraphs[i]) return;
            try {
                report.samples[i].features = compute_features(*subgraphs[i], config.category_threshold);
            } catch (const std::exception& e) {
                report.samples[i].note = std::string("features failed: ") + e.what();
            }
        });
        mark(Stage::featurize, "done");
    }

    // -- train / eval ---------------------------------------------------------
    if (wants(Stage::train) || wants(Stage::eval)) {
        Stopwatch t(report.wall_seconds["train_eval"]);
        struct Job {
            std::size_t sample;
            ModelKind kind;
        };
        std::vector<Job> jobs;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            for (auto k : config.models)
                if (subgraphs[i]) jobs.push_back({i, k});
        std::vector<ExperimentOutcome> outcomes(jobs.size());
        parallel_for(jobs.size(), config.workers, [&](std::size_t j) {
            const auto [i, kind] = jobs[j];
            auto& o = outcomes[j];
            o.sample_index = i;
            o.model = kind;
            o.seed = experiment_seed(config.master_seed, i, kind);
            const auto& spec = config.spec(kind);
            ordered_json identity{{"sample_seed", corpus[i].meta.seed},
                                  {"nodes", corpus[i].nodes.size()},
                                  {"model", model_name(kind)},
                                  {"config", model_spec_json(spec)},
                                  {"seed", o.seed}};
            try {
                auto run = train_and_evaluate(*subgraphs[i], kind, spec, o.seed,
                                              out / "experiments" / ("sample-" + std::to_string(i)) /
                                                  std::string(model_name(kind)),
                                              wants(Stage::eval), nullptr, identity);
                o.reused = run.reused;
                if (wants(Stage::eval)) o.eval = run.eval;
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        });
        for (const auto& o : outcomes) (o.reused ? report.reused : report.trained) += o.error.empty() ? 1 : 0;
        report.experiments = std::move(outcomes);
        std::size_t failed = 0;
        for (const auto& o : report.experiments) failed += !o.error.empty();
        const std::string detail = std::to_string(report.experiments.size()) + " experiments, " +
                                   std::to_string(failed) + " failed";
        if (wants(Stage::train)) mark(Stage::train, "done", detail);
        if (wants(Stage::eval)) mark(Stage::eval, "done", detail);

        for (const auto& o : report.experiments)
            if (o.eval && report.samples[o.sample_index].features)
                report.records.push_back({o.sample_index, *report.samples[o.sample_index].features, o.model,
                                          o.eval->overall.mrr});
    }

    // -- correlate / sobol ------------------------------------------------------
    if (wants(Stage::correlate)) {
        if (!config.correlation) {
            mark(Stage::correlate, "skipped", "disabled in config");
        } else {
            try {
                report.correlations = correlation_table(report.records, 10);
                mark(Stage::correlate, "done");
            } catch (const std::exception& e) {
                mark(Stage::correlate, "failed", std::string("insufficient records: ") + e.what());
            }
        }
    }
    if (wants(Stage::sobol)) {
        if (!config.sobol) {
            mark(Stage::sobol, "skipped", "disabled in config");
        } else {
            Stopwatch t(report.wall_seconds["sobol"]);
            std::string errors;
            for (auto kind : config.models) {
                std::vector<ExperimentRecord> rows;
                for (const auto& r : report.records)
                    if (r.model == kind) rows.push_back(r);
                try {
                    if (rows.size() < 10)
                        throw std::domain_error("insufficient records for surrogate: " + std::to_string(rows.size()) +
                                                " usable records");
                    SobolOptions opts{config.sobol_samples, config.bootstrap,
                                      derive_seed(config.master_seed, std::string("sobol-") + std::string(model_name(kind)))};
                    report.sobol[kind] = sobol_over_records(rows, opts, config.min_r2);
                } catch (const std::exception& e) {
                    errors += std::string(model_name(kind)) + ": " + e.what() + "; ";
                }
            }
            if (errors.empty()) mark(Stage::sobol, "done");
            else mark(Stage::sobol, "failed", errors);
        }
    }

    // -- reference model, grid, explanations --------------------------------------
    const bool need_reference = wants(Stage::reference) || wants(Stage::explain);
    CategoryMap categories;
    if (need_reference || wants(Stage::grid)) {
        categories = classify_relations(graph, config.category_threshold);
        report.category_counts = category_distribution(graph, categories);
    }
    std::map<ModelKind, EmbeddingModel> reference_models;
    if (need_reference && !config.reference) {
        mark(Stage::reference, "skipped", "disabled in config");
        if (wants(Stage::explain)) mark(Stage::explain, "skipped", "requires the reference stage");
    } else if (need_reference) {
        Stopwatch t(report.wall_seconds["reference"]);
        std::string errors;
        for (auto kind : config.models) {
            const auto seed = derive_seed(config.master_seed, std::string("reference-") + std::string(model_name(kind)));
            report.reference_seeds[kind] = seed;
            const auto& spec = config.spec(kind);
            const fs::path dir = out / "reference" / std::string(model_name(kind));
            ordered_json identity{{"dataset", make_load_report(graph).entities},
                                  {"triples", graph.num_triples()},
                                  {"model", model_name(kind)},
                                  {"config", model_spec_json(spec)},
                                  {"seed", seed}};
            try {
                auto run = train_and_evaluate(graph, kind, spec, seed, dir, true, &categories, identity);
                (run.reused ? report.reused : report.trained) += 1;
                report.reference_eval[kind] = run.eval;
                reference_models[kind] = load_model(dir / "model.bin");
            } catch (const std::exception& e) {
                errors += std::string(model_name(kind)) + ": " + e.what() + "; ";
            }
        }
        if (errors.empty()) mark(Stage::reference, "done");
        else mark(Stage::reference, "failed", errors);

        if (wants(Stage::explain)) {
            if (!config.lime) {
                mark(Stage::explain, "skipped", "no lime block in config");
            } else {
                Stopwatch t2(report.wall_seconds["explain"]);
                for (const auto& [kind, model] : reference_models) {
                    LimeConfig lc = *config.lime;
                    lc.seed = derive_seed(config.master_seed, std::string("lime-") + std::string(model_name(kind)));
                    report.profiles[kind] = category_importance_profile(model, graph, categories, config.lime_quantile,
                                                                        lc, config.workers, &report.explanations[kind]);
                }
                report.entity_labels = graph.entities().labels();
                report.relation_labels = graph.relations().labels();
                mark(Stage::explain, reference_models.empty() ? "failed" : "done");
            }
        }
    }

    if (wants(Stage::grid)) {
        if (!config.grid) {
            mark(Stage::grid, "skipped", "no grid block in config");
        } else {
            Stopwatch t(report.wall_seconds["grid"]);
            std::string errors;
            for (auto kind : config.models) {
                TrainConfig base = config.spec(kind).train;
                base.seed = derive_seed(config.master_seed, std::string("grid-") + std::string(model_name(kind)));
                ordered_json identity{{"model", model_name(kind)},
                                      {"config", model_spec_json(config.spec(kind))},
                                      {"epochs", config.grid->epochs},
                                      {"dims", config.grid->dims},
                                      {"seed", base.seed},
                                      {"triples", graph.num_triples()}};
                const auto key = fingerprint(identity);
                const fs::path cache = out / "grid" / (std::string(model_name(kind)) + ".json");
                try {
                    if (auto cached = read_json(cache); cached && cached->value("key", "") == key) {
                        for (const auto& r : cached->at("rows"))
                            report.grid[kind].push_back({r.at("epochs").get<int>(), r.at("dim").get<int>(),
                                                         parse_category(r.at("category").get<std::string>()),
                                                         r.at("mrr").get<double>(), r.at("queries").get<std::size_t>()});
                        report.reused += config.grid->epochs.size() * config.grid->dims.size();
                        continue;
                    }
                    auto rows = hyperparam_grid(graph, kind, config.grid->epochs, config.grid->dims, base, config.workers);
                    report.trained += config.grid->epochs.size() * config.grid->dims.size();
                    ordered_json cached{{"key", key}, {"rows", ordered_json::array()}};
                    for (const auto& r : rows)
                        cached["rows"].push_back({{"epochs", r.epochs},
                                                  {"dim", r.dim},
                                                  {"category", category_name(r.category)},
                                                  {"mrr", r.mrr},
                                                  {"queries", r.queries}});
                    write_atomic(cache, cached.dump(2) + "\n");
                    report.grid[kind] = std::move(rows);
                } catch (const std::exception& e) {
                    errors += std::string(model_name(kind)) + ": " + e.what() + "; ";
                }
            }
            if (errors.empty()) mark(Stage::grid, "done");
            else mark(Stage::grid, "failed", errors);
        }
    }
    return report;
}

}  // namespace kgstruct
