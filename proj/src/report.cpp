#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "kgstruct/pipeline.hpp"

namespace kgstruct {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

const EvalReport* find_eval(const std::vector<ExperimentOutcome>& outcomes, std::size_t sample, ModelKind kind) {
    for (const auto& o : outcomes)
        if (o.sample_index == sample && o.model == kind && o.eval) return &*o.eval;
    return nullptr;
}

ordered_json nan_to_null(const Eigen::MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(std::isnan(m(i, j)) ? ordered_json(nullptr) : ordered_json(m(i, j)));
        rows.push_back(row);
    }
    return rows;
}

ordered_json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

ordered_json sobol_json(const SobolResult& r) {
    ordered_json j;
    j["features"] = StructuralFeatures::kNames;
    j["s1"] = vec(r.s1);
    j["st"] = vec(r.st);
    j["s2"] = nan_to_null(r.s2);
    j["ci"] = {{"level", 0.95},
               {"s1", {{"low", vec(r.s1_ci_low)}, {"high", vec(r.s1_ci_high)}}},
               {"st", {{"low", vec(r.st_ci_low)}, {"high", vec(r.st_ci_high)}}},
               {"s2", {{"low", nan_to_null(r.s2_ci_low)}, {"high", nan_to_null(r.s2_ci_high)}}}};
    j["N"] = r.base_samples;
    j["surrogate_r2"] = r.surrogate_r2 ? ordered_json(*r.surrogate_r2) : ordered_json(nullptr);
    j["degenerate"] = r.degenerate;
    j["caveats"] = r.caveats;
    return j;
}

std::string features_csv(const std::vector<SampleSummary>& samples) {
    std::ostringstream out;
    out << "index";
    for (auto n : StructuralFeatures::kNames) out << ',' << n;
    out << ",nodes,train_triples,valid_triples,test_triples,requested_ratio,achieved_ratio,connected,usable\n";
    for (const auto& s : samples) {
        out << s.index;
        for (int f = 0; f < StructuralFeatures::kCount; ++f)
            out << ',' << (s.features ? format_double(s.features->as_vector()[f]) : std::string());
        out << ',' << s.nodes << ',' << s.triples[0] << ',' << s.triples[1] << ',' << s.triples[2] << ','
            << format_double(s.meta.requested_ratio) << ',' << format_double(s.meta.achieved_ratio) << ','
            << (s.meta.connected ? "true" : "false") << ',' << (s.meta.usable ? "true" : "false") << '\n';
    }
    return out.str();
}

std::string fig4_csv(const StudyReport& r) {
    std::ostringstream out;
    out << "model,category,train_triples,test_queries,mrr,hits10\n";
    for (const auto& [kind, eval] : r.reference_eval)
        for (auto c : kAllCategories) {
            out << model_name(kind) << ',' << category_name(c) << ','
                << format_double(r.category_counts[static_cast<int>(c)]) << ',';
            auto it = eval.per_category.find(c);
            if (it == eval.per_category.end())
                out << "0,,\n";
            else
                out << it->second.queries << ',' << format_double(it->second.mrr) << ','
                    << format_double(it->second.hits10) << '\n';
        }
    return out.str();
}

std::string fig5_csv(const StudyReport& r) {
    std::ostringstream out;
    out << "model,epochs,dim,category,mrr,queries\n";
    for (const auto& [kind, rows] : r.grid)
        for (const auto& row : rows)
            out << model_name(kind) << ',' << row.epochs << ',' << row.dim << ',' << category_name(row.category) << ','
                << format_double(row.mrr) << ',' << row.queries << '\n';
    return out.str();
}

std::string fig6_csv(const StudyReport& r) {
    std::ostringstream out;
    out << "model,category,group,i_head,i_relation,i_tail,group_size\n";
    for (const auto& [kind, rows] : r.profiles)
        for (const auto& row : rows)
            out << model_name(kind) << ',' << category_name(row.category) << ',' << (row.high ? "high" : "low") << ','
                << format_double(row.head) << ',' << format_double(row.relation) << ',' << format_double(row.tail)
                << ',' << row.group_size << '\n';
    return out.str();
}

std::string scatter_svg(const StudyReport& r, int feature) {
    constexpr double width = 480, height = 360, margin = 50;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c"};
    std::map<ModelKind, std::vector<std::pair<double, double>>> series;
    for (auto k : r.config.models) series[k];
    double xmin = 1e300, xmax = -1e300;
    for (const auto& rec : r.records) {
        const double x = rec.features.as_vector()[feature];
        series[rec.model].emplace_back(x, rec.mrr);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    if (!(xmax > xmin)) {
        xmin = r.records.empty() ? 0.0 : xmin - 0.5;
        xmax = xmin + 1.0;
    }
    auto px = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); };
    auto py = [&](double y) { return height - margin - y * (height - 2 * margin); };
    const auto name = StructuralFeatures::kNames[static_cast<std::size_t>(feature)];

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">" << name << "</text>\n"
        << "<text x=\"14\" y=\"" << height / 2 << "\" transform=\"rotate(-90 14 " << height / 2
        << ")\" text-anchor=\"middle\">MRR</text>\n"
        << "<text x=\"" << margin << "\" y=\"" << height - margin + 16 << "\" font-size=\"10\">"
        << format_double(xmin) << "</text>\n"
        << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 16
        << "\" font-size=\"10\" text-anchor=\"end\">" << format_double(xmax) << "</text>\n";
    int s = 0;
    for (const auto& [kind, points] : series) {
        const char* color = colors[s % 3];
        out << "<g class=\"series\" data-model=\"" << model_name(kind) << "\" fill=\"" << color << "\">\n";
        for (const auto& [x, y] : points)
            out << "  <circle cx=\"" << format_double(px(x)) << "\" cy=\"" << format_double(py(y)) << "\" r=\"3\"/>\n";
        out << "</g>\n";
        out << "<text x=\"" << width - margin << "\" y=\"" << margin + 14 * s << "\" fill=\"" << color
            << "\" text-anchor=\"end\" font-size=\"12\">" << model_name(kind) << "</text>\n";
        ++s;
    }
    out << "</svg>\n";
    return out.str();
}

ordered_json manifest_json(const StudyReport& r) {
    ordered_json m;
    m["version"] = kVersion;
    m["config"] = r.config.to_json();
    m["dataset"] = {{"entities", r.dataset.entities},
                    {"relations", r.dataset.relations},
                    {"triples_per_split",
                     {{"train", r.dataset.triples[0]}, {"valid", r.dataset.triples[1]}, {"test", r.dataset.triples[2]}}},
                    {"unseen_in_train",
                     {{"entities", r.dataset.unseen_in_train_entities},
                      {"relations", r.dataset.unseen_in_train_relations}}}};
    ordered_json seeds;
    seeds["master"] = r.config.master_seed;
    seeds["corpus"] = derive_seed(r.config.master_seed, "corpus");
    seeds["samples"] = ordered_json::array();
    for (const auto& s : r.samples) seeds["samples"].push_back(s.meta.seed);
    seeds["experiments"] = ordered_json::array();
    for (const auto& o : r.experiments)
        seeds["experiments"].push_back(
            {{"sample", o.sample_index}, {"model", model_name(o.model)}, {"seed", o.seed}});
    for (const auto& [kind, seed] : r.reference_seeds) seeds["reference"][std::string(model_name(kind))] = seed;
    for (auto kind : r.config.models) {
        const auto name = std::string(model_name(kind));
        if (r.sobol.contains(kind)) seeds["sobol"][name] = derive_seed(r.config.master_seed, "sobol-" + name);
        if (r.grid.contains(kind)) seeds["grid"][name] = derive_seed(r.config.master_seed, "grid-" + name);
        if (r.profiles.contains(kind)) seeds["lime"][name] = derive_seed(r.config.master_seed, "lime-" + name);
    }
    m["seeds"] = seeds;
    m["stages"] = ordered_json::object();
    for (const auto& [name, s] : r.stages) m["stages"][name] = {{"status", s.status}, {"detail", s.detail}};
    m["samples"] = ordered_json::array();
    for (const auto& s : r.samples)
        m["samples"].push_back({{"index", s.index},
                                {"usable", s.meta.usable},
                                {"exhausted", s.meta.exhausted},
                                {"note", s.note}});
    m["experiments"] = ordered_json::array();
    for (const auto& o : r.experiments)
        m["experiments"].push_back({{"sample", o.sample_index},
                                    {"model", model_name(o.model)},
                                    {"status", o.error.empty() ? "ok" : "failed"},
                                    {"error", o.error}});
    m["training"] = {{"mode", "single-threaded per experiment, deterministic"}};
    m["files"] = r.files;
    return m;
}

ordered_json explanation_json(const StudyReport& r, const TripleExplanation& x) {
    const auto& e = x.explanation;
    const auto& lc = *r.config.lime;
    const auto& t = x.triple;
    auto label = [](const std::vector<std::string>& labels, std::int64_t id) {
        return static_cast<std::size_t>(id) < labels.size() ? labels[static_cast<std::size_t>(id)] : std::string();
    };
    ordered_json j;
    j["triple"] = {{"head", t.head},
                   {"relation", t.relation},
                   {"tail", t.tail},
                   {"labels", {label(r.entity_labels, t.head), label(r.relation_labels, t.relation),
                               label(r.entity_labels, t.tail)}}};
    j["category"] = category_name(x.category);
    j["group"] = x.high ? "high" : "low";
    j["config"] = {{"samples", lc.samples},
                   {"kernel_width", lc.resolved_kernel_width(e.beta.size())},
                   {"perturbation_scale", lc.perturbation_scale},
                   {"ridge", lc.ridge},
                   {"seed", x.seed}};
    j["target_score"] = e.target_score;
    j["intercept"] = e.intercept;
    j["beta"] = vec(e.beta);
    j["importance"] = vec(e.importance);
    j["block_importance"] = {{"head", e.head_importance}, {"relation", e.relation_importance}, {"tail", e.tail_importance}};
    j["r2"] = e.fit_r2;
    j["floored_dims"] = e.floored_dims;
    return j;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

std::string records_csv(const std::vector<ExperimentRecord>& records, const std::vector<ExperimentOutcome>& outcomes) {
    std::ostringstream out;
    out << "sample_index,model";
    for (auto n : StructuralFeatures::kNames) out << ',' << n;
    out << ",mrr,hits1,hits3,hits10\n";
    for (const auto& r : records) {
        out << r.sample_index << ',' << model_name(r.model);
        const auto f = r.features.as_vector();
        for (int i = 0; i < StructuralFeatures::kCount; ++i) out << ',' << format_double(f[i]);
        out << ',' << format_double(r.mrr);
        if (const auto* e = find_eval(outcomes, r.sample_index, r.model))
            out << ',' << format_double(e->overall.hits1) << ',' << format_double(e->overall.hits3) << ','
                << format_double(e->overall.hits10);
        else
            out << ",,,";
        out << '\n';
    }
    return out.str();
}

std::vector<ExperimentRecord> parse_records_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);  // header
    std::vector<ExperimentRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (cells.size() < 9) throw std::runtime_error("records.csv: short row '" + line + "'");
        ExperimentRecord r;
        r.sample_index = std::stoul(cells[0]);
        r.model = parse_model(cells[1]);
        Eigen::Matrix<double, 6, 1> f;
        for (int i = 0; i < 6; ++i) f[i] = std::strtod(cells[static_cast<std::size_t>(2 + i)].c_str(), nullptr);
        r.features = StructuralFeatures::from_vector(f);
        r.mrr = std::strtod(cells[8].c_str(), nullptr);
        out.push_back(r);
    }
    return out;
}

std::string correlation_csv(const std::vector<CorrelationEntry>& table) {
    std::vector<ModelKind> models;
    for (const auto& e : table)
        if (std::find(models.begin(), models.end(), e.model) == models.end()) models.push_back(e.model);
    std::ostringstream out;
    out << "feature,method";
    for (auto m : models) out << ',' << model_name(m);
    out << '\n';
    for (auto feature : StructuralFeatures::kNames)
        for (const char* method : {"pearson", "spearman"}) {
            out << feature << ',' << method;
            for (auto m : models) {
                out << ',';
                for (const auto& e : table) {
                    if (e.feature != feature || e.model != m) continue;
                    const auto& v = std::string(method) == "pearson" ? e.pearson : e.spearman;
                    out << (v ? format_double(*v) : std::string("undefined"));
                }
            }
            out << '\n';
        }
    return out.str();
}

void emit_report(StudyReport& report, const fs::path& dir) {
    const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::current_path();
    fs::create_directories(parent);
    const fs::path staging = parent / (dir.filename().string() + ".staging-" + std::to_string(::getpid()));
    fs::remove_all(staging);
    if (!fs::create_directory(staging)) throw std::runtime_error("cannot create staging directory " + staging.string());

    std::vector<std::pair<std::string, std::string>> files;
    auto add = [&](std::string name, std::string text) { files.emplace_back(std::move(name), std::move(text)); };
    if (!report.samples.empty()) add("features.csv", features_csv(report.samples));
    if (!report.experiments.empty() || !report.records.empty())
        add("records.csv", records_csv(report.records, report.experiments));
    if (!report.correlations.empty()) add("correlation.csv", correlation_csv(report.correlations));
    if (!report.sobol.empty()) {
        ordered_json j = ordered_json::object();
        for (const auto& [kind, r] : report.sobol) j[std::string(model_name(kind))] = sobol_json(r);
        add("sobol.json", j.dump(2) + "\n");
    }
    if (!report.reference_eval.empty()) {
        add("fig4.csv", fig4_csv(report));
        ordered_json j = ordered_json::object();
        for (const auto& [kind, e] : report.reference_eval) {
            auto& m = j[std::string(model_name(kind))];
            m["mrr"] = e.overall.mrr;
            m["hits_at"] = {{"1", e.overall.hits1}, {"3", e.overall.hits3}, {"10", e.overall.hits10}};
            m["side"] = "both-averaged";
            for (const auto& [c, pc] : e.per_category)
                m["per_category"][std::string(category_name(c))] = {
                    {"mrr", pc.mrr}, {"hits_at", {{"1", pc.hits1}, {"3", pc.hits3}, {"10", pc.hits10}}},
                    {"count", pc.queries}};
        }
        add("eval.json", j.dump(2) + "\n");
    }
    if (!report.grid.empty()) add("fig5.csv", fig5_csv(report));
    if (!report.profiles.empty()) add("fig6.csv", fig6_csv(report));
    for (const auto& [kind, list] : report.explanations)
        for (const auto& x : list)
            add("lime/" + std::string(model_name(kind)) + "/" + std::string(category_name(x.category)) + "-" +
                    (x.high ? "high" : "low") + "-" + std::to_string(x.triple.head) + "_" +
                    std::to_string(x.triple.relation) + "_" + std::to_string(x.triple.tail) + ".json",
                explanation_json(report, x).dump(2) + "\n");
    if (!report.records.empty())
        for (int f = 0; f < StructuralFeatures::kCount; ++f)
            add("scatter_" + std::string(StructuralFeatures::kNames[static_cast<std::size_t>(f)]) + ".svg",
                scatter_svg(report, f));

    report.files.clear();
    for (const auto& [name, text] : files) report.files.push_back(name);
    report.files.push_back("manifest.json");
    add("manifest.json", manifest_json(report).dump(2) + "\n");

    try {
        for (const auto& [name, text] : files) write_file(staging / name, text);
        fs::remove_all(dir);
        fs::rename(staging, dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(staging, ec);
        throw;
    }
}

}  // namespace kgstruct
