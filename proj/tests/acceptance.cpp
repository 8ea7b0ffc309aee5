// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <complex>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include <Eigen/Dense>

#include "kgstruct/explain.hpp"
#include "kgstruct/features.hpp"
#include "kgstruct/pipeline.hpp"
#include "kgstruct/sampler.hpp"
#include "kgstruct/stats.hpp"
#include "kgstruct/synthetic.hpp"
#include "support.hpp"

using namespace kgstruct;
using namespace testing;
namespace fs = std::filesystem;

namespace {

/// Collects failed checks of one criterion.
struct Checks {
    std::vector<std::string> failures;
    std::ostringstream info;

    void expect(bool ok, const std::string& what) {
        if (!ok && failures.size() < 5) failures.push_back(what);
        else if (!ok) failures.back() = "... and more";
    }
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<void(Checks&)> run;
};

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---------------------------------------------------------------------------

void gini_suite(Checks& c) {
    c.expect(gini(std::vector<double>{5, 5, 5, 5}) == 0.0, "gini(5,5,5,5)");
    c.expect(std::abs(gini(std::vector<double>{1, 0, 0, 0}) - 0.75) < 1e-12, "gini(1,0,0,0)");
    c.expect(std::abs(gini(std::vector<double>{1, 2, 3}) - 2.0 / 9.0) < 1e-12, "gini(1,2,3)");
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 2 + uniform_index(rng, 40);
        std::vector<double> x(n);
        for (auto& v : x) v = uniform01(rng) * 100;
        const double g = gini(x);
        std::vector<double> scaled = x;
        const double a = 0.01 + uniform01(rng) * 50;
        for (auto& v : scaled) v *= a;
        c.expect(std::abs(gini(scaled) - g) < 1e-12, "scale invariance");
        c.expect(std::abs(g - pairwise_gini(x)) < 1e-12, "pairwise definition");
        const double max = (static_cast<double>(n) - 1) / static_cast<double>(n);
        c.expect(g <= max + 1e-12, "bounded by the one-hot value");
        std::vector<double> one_hot(n, 0.0);
        one_hot[uniform_index(rng, n)] = a;
        c.expect(std::abs(gini(one_hot) - max) < 1e-12, "one-hot maximum");
    }
}

void graph_metric_suite(Checks& c) {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto nodes = 2 + uniform_index(rng, 49);
        const auto edges = uniform_index(rng, 3 * nodes);
        const auto g = random_graph(rng, nodes, 3, edges, true);
        c.expect(scc_count(g) == closure_scc_count(g), "scc vs closure, trial " + std::to_string(trial));
        c.expect(std::abs(global_clustering(g) - census_clustering(g)) < 1e-12,
                 "clustering vs census, trial " + std::to_string(trial));
    }
}

void sampler_suite(Checks& c) {
    Rng graph_rng(3);
    int samples = 0;
    while (samples < 200) {
        const auto n = 20 + uniform_index(graph_rng, 100);
        const auto g = random_connected_graph(graph_rng, n, 3, uniform_index(graph_rng, 2 * n));
        std::size_t max_batch = 0;
        for (EntityId v = 0; v < static_cast<EntityId>(n); ++v) max_batch = std::max(max_batch, g.degree(v));
        SamplerParams p;
        p.r_min = 0.05;
        p.r_max = 0.9;
        p.k = 10;
        for (int rep = 0; rep < 10; ++rep, ++samples) {
            const auto seed = static_cast<std::uint64_t>(samples);
            Rng a(seed), b(seed);
            const auto s = sample_subgraph(g, p, a);
            const auto again = sample_subgraph(g, p, b);
            const auto target = static_cast<std::size_t>(std::ceil(s.meta.requested_ratio * static_cast<double>(n)));
            const std::string tag = "sample " + std::to_string(samples);
            c.expect(flood_fill_connected(s.nodes, s.splits) && s.meta.connected, tag + " connected");
            c.expect(s.nodes.size() >= target && s.nodes.size() < target + max_batch, tag + " size bounds");
            c.expect(s.nodes == again.nodes && s.splits == again.splits, tag + " determinism");
        }
    }
    c.info << samples << " samples";
}

void ranking_oracle(Checks& c) {
    Rng rng(4);
    std::size_t queries = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const auto n = 5 + uniform_index(rng, 26);
        const auto g = random_graph(rng, n, 3, 3 * n);
        if (g.split(Split::test).empty()) continue;
        for (auto kind : {ModelKind::transe, ModelKind::complex, ModelKind::rotate}) {
            Rng init(static_cast<std::uint64_t>(trial));
            auto m = init_model(kind, 3, n, 3, init);
            if (trial % 2 == 0) m.entities = (m.entities.array() * 2).round() / 2;  // plant ties
            const auto expect = sorted_ranks(m, g, g.split(Split::test));
            std::vector<double> got;
            for (const auto& t : g.split(Split::test)) {
                const auto [tr, hr] = filtered_ranks(m, g, t);
                got.push_back(tr);
                got.push_back(hr);
            }
            c.expect(got == expect, "ranks differ from the full sort");
            const auto report = evaluate(m, g, Split::test);
            const auto oracle = metrics_from_ranks(expect);
            c.expect(report.overall.mrr == oracle.mrr && report.overall.hits1 == oracle.hits1 &&
                         report.overall.hits3 == oracle.hits3 && report.overall.hits10 == oracle.hits10,
                     "metrics differ from the full sort");
            queries += expect.size();
        }
    }
    c.info << queries << " queries";
}

void gradient_checks(Checks& c) {
    Rng graph_rng(5);
    const auto g = random_graph(graph_rng, 15, 3, 60);
    for (auto kind : {ModelKind::transe, ModelKind::complex, ModelKind::rotate}) {
        Rng init(6);
        auto model = init_model(kind, 4, g.num_entities(), g.num_relations(), init);
        auto cfg = TrainConfig::defaults(kind);
        cfg.negatives = 3;
        cfg.l2_weight = 1e-2;
        if (kind == ModelKind::transe) cfg.margin = 1.0;
        const auto positives = g.split(Split::train).subspan(0, 6);
        Rng rng(7);
        std::vector<Triple> negatives;
        for (const auto& t : positives)
            for (int j = 0; j < cfg.negatives; ++j) negatives.push_back(corrupt(t, g, rng));
        GradientBuffer grad(model);
        batch_loss(model, positives, negatives, cfg, &grad);
        Rng pick(8);
        double worst = 0;
        for (int checked = 0; checked < 10;) {
            const bool entity = uniform01(pick) < 0.6;
            Table& table = entity ? model.entities : model.relations;
            const Table& gtab = entity ? grad.entities : grad.relations;
            const auto i = static_cast<Eigen::Index>(uniform_index(pick, static_cast<std::uint64_t>(table.rows())));
            const auto j = static_cast<Eigen::Index>(uniform_index(pick, static_cast<std::uint64_t>(table.cols())));
            if (std::abs(gtab(i, j)) < 1e-4) continue;  // below finite-difference resolution
            const double h = 1e-5, saved = table(i, j);
            table(i, j) = saved + h;
            const double up = batch_loss(model, positives, negatives, cfg, nullptr);
            table(i, j) = saved - h;
            const double down = batch_loss(model, positives, negatives, cfg, nullptr);
            table(i, j) = saved;
            const double numeric = (up - down) / (2 * h);
            const double rel = std::abs(numeric - gtab(i, j)) / std::max(std::abs(numeric), std::abs(gtab(i, j)));
            worst = std::max(worst, rel);
            ++checked;
        }
        c.expect(worst < 1e-4, std::string(model_name(kind)) + " relative error " + std::to_string(worst));
        c.info << model_name(kind) << " " << worst << " ";
    }
}

void trainability(Checks& c) {
    const auto toy = make_bijection_toy();
    Rng init(1);
    auto m = init_model(ModelKind::transe, 16, toy.num_entities(), toy.num_relations(), init);
    auto cfg = TrainConfig::defaults(ModelKind::transe);
    cfg.epochs = 300;
    cfg.seed = 1;
    train(m, toy, cfg);
    const double mrr = evaluate(m, toy, Split::test).overall.mrr;
    c.info << "test MRR " << mrr;
    c.expect(mrr >= 0.8, "MRR below 0.8");
}

void sobol_suite(Checks& c) {
    SobolOptions opts;
    opts.base_samples = 1 << 15;
    opts.bootstrap = 100;
    opts.seed = 9;
    const auto add = sobol_indices([](const Eigen::Ref<const Eigen::VectorXd>& v) { return v[0] + v[1]; },
                                   Eigen::VectorXd::Zero(6), Eigen::VectorXd::Ones(6), opts);
    Eigen::VectorXd half = Eigen::VectorXd::Zero(6);
    half.head(2).setConstant(0.5);
    c.expect((add.s1 - half).cwiseAbs().maxCoeff() <= 0.02, "additive S1");
    c.expect((add.st - half).cwiseAbs().maxCoeff() <= 0.02, "additive ST");

    auto ishigami = [](const Eigen::Ref<const Eigen::VectorXd>& x) {
        return std::sin(x[0]) + 7.0 * std::pow(std::sin(x[1]), 2) + 0.1 * std::pow(x[2], 4) * std::sin(x[0]);
    };
    const auto r = sobol_indices(ishigami, Eigen::VectorXd::Constant(3, -M_PI), Eigen::VectorXd::Constant(3, M_PI), opts);
    // closed forms for a = 7, b = 0.1
    const double a = 7, b = 0.1, pi4 = std::pow(M_PI, 4), pi8 = pi4 * pi4;
    const double v1 = 0.5 * std::pow(1 + b * pi4 / 5, 2), v2 = a * a / 8, v13 = b * b * pi8 * (1.0 / 18 - 1.0 / 50);
    const double v = v1 + v2 + v13;
    const Eigen::Vector3d s1(v1 / v, v2 / v, 0), st((v1 + v13) / v, v2 / v, v13 / v);
    c.expect((r.s1 - s1).cwiseAbs().maxCoeff() <= 0.02, "Ishigami S1");
    c.expect((r.st - st).cwiseAbs().maxCoeff() <= 0.02, "Ishigami ST");
    c.expect(std::abs(r.s2(0, 2) - v13 / v) <= 0.02, "Ishigami S2 13");
    for (Eigen::Index i = 0; i < 3; ++i)
        c.expect(r.st[i] >= r.s1[i] - (r.s1_half_width(i) + r.st_half_width(i)), "ST >= S1");
    c.info << "S1 " << r.s1.transpose() << " ST " << r.st.transpose() << " S2_13 " << r.s2(0, 2);
}

void lime_suite(Checks& c) {
    Rng rng(10);
    const Eigen::Index p = 12;
    Eigen::VectorXd x(p), beta(p);
    for (auto& v : x) v = standard_normal(rng);
    for (auto& v : beta) v = standard_normal(rng);
    const BlockLayout layout{4, 4, 4};
    LimeConfig cfg;
    cfg.samples = 2000;
    cfg.ridge = 1e-8;
    cfg.seed = 11;
    const Eigen::VectorXd sd = Eigen::VectorXd::Ones(p);

    const BlackBox linear = [&](const Eigen::Ref<const Eigen::VectorXd>& v) { return 0.3 + beta.dot(v); };
    const auto e = explain(linear, x, sd, layout, cfg);
    const double rel = (e.beta - beta).norm() / beta.norm();
    c.expect(rel < 1e-6, "linear recovery " + std::to_string(rel));

    Eigen::VectorXd partial = beta;
    partial.tail(4).setZero();
    const BlackBox no_tail = [&](const Eigen::Ref<const Eigen::VectorXd>& v) { return partial.dot(v); };
    const auto f = explain(no_tail, x, sd, layout, cfg);
    const double total = f.importance.sum();
    c.expect(f.tail_importance < 1e-3 * total, "irrelevant tail block");
    c.expect(f.head_importance + f.relation_importance + f.tail_importance ==
                 f.importance.segment(0, 4).sum() + f.importance.segment(4, 4).sum() + f.importance.segment(8, 4).sum(),
             "block sums");
    c.expect(std::abs(f.head_importance + f.relation_importance + f.tail_importance - total) <= 1e-12 * total,
             "block sums cover the total");

    Rng model_rng(12);
    const auto m = init_model(ModelKind::rotate, 6, 10, 2, model_rng);
    LimeConfig mc;
    mc.samples = 500;
    mc.seed = 13;
    const auto first = explain_triple(m, {1, 0, 2}, mc);
    const auto second = explain_triple(m, {1, 0, 2}, mc);
    c.expect(first.beta == second.beta && first.intercept == second.intercept, "seeded determinism");
    c.info << "relative error " << rel;
}

void correlation_suite(Checks& c) {
    Rng rng(14);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 3 + uniform_index(rng, 60);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = trial % 3 == 0 ? std::round(standard_normal(rng) * 2) : standard_normal(rng);
            y[i] = 0.4 * x[i] + standard_normal(rng);
        }
        const double expect_p = direct_pearson(x, y);
        const double expect_s = direct_pearson(counting_ranks(x), counting_ranks(y));
        if (!std::isfinite(expect_p) || !std::isfinite(expect_s)) continue;
        const double rp = pearson(to_eigen(x), to_eigen(y));
        const double rs = spearman(to_eigen(x), to_eigen(y));
        worst = std::max({worst, std::abs(rp - expect_p), std::abs(rs - expect_s)});
        const Eigen::VectorXd fx = to_eigen(x).unaryExpr([](double v) { return std::atan(v) * 3 + 1; });
        const Eigen::VectorXd fy = to_eigen(y).unaryExpr([](double v) { return v * v * v + v; });
        c.expect(spearman(fx, fy) == rs, "monotone invariance, trial " + std::to_string(trial));
    }
    c.expect(worst < 1e-12, "oracle difference " + std::to_string(worst));
    c.info << "max difference " << worst;
}

// ---------------------------------------------------------------------------
// Desk study on the synthetic category family

StudyConfig desk_study(const fs::path& out) {
    const nlohmann::json j = {
        {"dataset", {{"synthetic", {{"seed", 3}}}}},
        {"sampler", {{"r_min", 0.1}, {"r_max", 0.9}, {"k", 10}, {"count", 20}}},
        {"models", {"transe"}},
        {"model_config", {{"transe", {{"dim", 32}, {"epochs", 200}}}}},
        {"grid", {{"epochs", {50, 200}}, {"dims", {16, 32}}}},
        {"lime", {{"samples", 400}}},
        {"out_dir", out.string()},
        {"master_seed", 7},
        {"workers", 4},
    };
    return StudyConfig::from_json(j);
}

std::map<std::string, std::string> bundle(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
    return files;
}

const fs::path& study_root() {
    static const fs::path root = scratch_dir("acceptance-study");
    return root;
}

void directional_study(Checks& c) {
    const auto config = desk_study(study_root() / "run");
    auto report = run_study(config, stages_for_command("study"));
    emit_report(report, study_root() / "run" / "report");
    c.expect(!report.aggregate_failed(), "an aggregate stage failed");

    std::optional<double> r;
    for (const auto& e : report.correlations)
        if (e.feature == "category_gini" && e.model == ModelKind::transe) r = e.pearson;
    c.expect(r && *r < 0, "Pearson(category_gini, MRR) is not negative");

    const auto& eval = report.reference_eval.at(ModelKind::transe);
    const auto one = eval.per_category.find(RelationCategory::one_one);
    const auto many = eval.per_category.find(RelationCategory::n_n);
    const bool both = one != eval.per_category.end() && many != eval.per_category.end();
    c.expect(both && many->second.mrr < one->second.mrr, "MRR(n-n) is not below MRR(1-1)");
    c.info << "pearson " << (r ? *r : NAN) << ", records " << report.records.size();
    if (both) c.info << ", 1-1 MRR " << one->second.mrr << ", n-n MRR " << many->second.mrr;
}

void determinism_and_resume(Checks& c) {
    const fs::path first = study_root() / "run" / "report";
    if (!fs::exists(first)) {
        c.expect(false, "criterion 10 produced no bundle");
        return;
    }
    const auto reference = bundle(first);
    const auto config = desk_study(study_root() / "run");

    auto rerun = run_study(config, stages_for_command("study"));
    emit_report(rerun, study_root() / "rerun-report");
    c.expect(rerun.trained == 0, "rerun retrained " + std::to_string(rerun.trained) + " models");
    c.expect(bundle(study_root() / "rerun-report") == reference, "rerun bundle differs");

    // A fresh directory must give the same bytes, not just the cache.
    const auto fresh_config = desk_study(study_root() / "fresh");
    auto fresh = run_study(fresh_config, stages_for_command("study"));
    emit_report(fresh, study_root() / "fresh-report");
    c.expect(bundle(study_root() / "fresh-report") == reference, "fresh run bundle differs");

    // Interrupt: drop the artefacts of later experiments and leave a partial checkpoint behind.
    std::size_t removed = 0;
    for (std::size_t i = 12; i < 20; ++i) {
        const fs::path dir = study_root() / "fresh" / "experiments" / ("sample-" + std::to_string(i)) / "transe";
        if (!fs::exists(dir / "eval.json")) continue;
        fs::remove_all(dir);
        ++removed;
    }
    const fs::path partial = study_root() / "fresh" / "experiments" / "sample-13" / "transe";
    fs::create_directories(partial);
    spit(partial / "model.bin.tmp", "KGSEMB01 truncated");
    auto resumed = run_study(fresh_config, stages_for_command("study"));
    emit_report(resumed, study_root() / "resumed-report");
    c.expect(resumed.trained == removed,
             "resume trained " + std::to_string(resumed.trained) + ", expected " + std::to_string(removed));
    c.expect(bundle(study_root() / "resumed-report") == reference, "resumed bundle differs");
    c.info << reference.size() << " files; resume retrained " << resumed.trained << " of "
           << resumed.trained + resumed.reused;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "gini suite", 1, gini_suite},
        {2, "graph metric oracles", 10, graph_metric_suite},
        {3, "sampler suite", 10, sampler_suite},
        {4, "ranking oracle", 5, ranking_oracle},
        {5, "gradient checks", 5, gradient_checks},
        {6, "trainability", 30, trainability},
        {7, "sobol suite", 60, sobol_suite},
        {8, "lime suite", 30, lime_suite},
        {9, "correlation suite", 60, correlation_suite},
        {10, "directional desk study", 300, directional_study},
        {11, "determinism and resume", 600, determinism_and_resume},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        Checks checks;
        const auto start = std::chrono::steady_clock::now();
        try {
            cr.run(checks);
        } catch (const std::exception& e) {
            checks.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > cr.budget_seconds)
            checks.failures.push_back("took " + std::to_string(secs) + " s, budget " +
                                      std::to_string(cr.budget_seconds) + " s");
        const bool ok = checks.failures.empty();
        failed += !ok;
        std::printf("%s %2d %-24s %8.2fs  %s\n", ok ? "PASS" : "FAIL", cr.id, cr.name.c_str(), secs,
                    checks.info.str().c_str());
        for (const auto& f : checks.failures) std::printf("       - %s\n", f.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
