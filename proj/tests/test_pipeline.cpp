#include <doctest.h>

#include <cstdlib>
#include <regex>

#include "kgstruct/pipeline.hpp"
#include "support.hpp"

using namespace kgstruct;
using namespace testing;
namespace fs = std::filesystem;

namespace {

nlohmann::json small_config(const fs::path& out) {
    return {
        {"dataset", {{"synthetic", {{"core_entities", 30}, {"chains", 8}, {"chain_length", 3}, {"seed", 2}}}}},
        {"sampler", {{"r_min", 0.3}, {"r_max", 0.9}, {"k", 8}, {"count", 12}}},
        {"models", {"transe"}},
        {"model_config", {{"transe", {{"dim", 8}, {"epochs", 15}, {"batch_size", 64}}}}},
        {"stats", {{"sobol_n", 512}, {"bootstrap", 20}, {"min_r2", 0.0}}},
        {"out_dir", out.string()},
        {"master_seed", 3},
    };
}

std::map<std::string, std::string> bundle(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
    return files;
}

int run_cli(const std::string& args) {
    const char* bin = std::getenv("KGSTRUCTLAB_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "KGSTRUCTLAB_BIN is not set");
    const int status = std::system((std::string(bin) + " " + args + " 2>/dev/null").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config validation") {
    const auto dir = scratch_dir("config");
    SUBCASE("round trip") {
        const auto c = StudyConfig::from_json(small_config(dir));
        CHECK(c.corpus_size == 12);
        CHECK(c.spec(ModelKind::transe).dim == 8);
        CHECK(c.spec(ModelKind::transe).train.batch_size == 64);
        const auto again = StudyConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
        CHECK(again.to_json() == c.to_json());
    }
    SUBCASE("unknown keys are rejected") {
        auto j = small_config(dir);
        j["sampler"]["ratio"] = 0.5;
        CHECK_THROWS_AS(StudyConfig::from_json(j), ConfigError);
        j = small_config(dir);
        j["colour"] = "blue";
        CHECK_THROWS_AS(StudyConfig::from_json(j), ConfigError);
    }
    SUBCASE("too few samples for the surrogate") {
        auto j = small_config(dir);
        j["sampler"]["count"] = 5;
        try {
            StudyConfig::from_json(j).validate();
            FAIL("expected a config error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("insufficient records for surrogate") != std::string::npos);
        }
        j["stats"]["sobol"] = false;
        j["stats"]["correlation"] = false;
        CHECK_NOTHROW(StudyConfig::from_json(j).validate());
    }
    SUBCASE("bad values") {
        auto j = small_config(dir);
        j["models"] = {"distmult"};
        CHECK_THROWS_AS(StudyConfig::from_json(j), ConfigError);
        j = small_config(dir);
        j["sampler"]["r_min"] = 0.95;
        CHECK_THROWS_AS(StudyConfig::from_json(j).validate(), ConfigError);
        j = small_config(dir);
        j["sampler"]["count"] = "many";
        CHECK_THROWS_AS(StudyConfig::from_json(j), ConfigError);
    }
}

TEST_CASE("stages per subcommand") {
    CHECK(stages_for_command("sample") == std::set<Stage>{Stage::sample});
    CHECK(stages_for_command("correlate").contains(Stage::eval));
    CHECK_FALSE(stages_for_command("correlate").contains(Stage::sobol));
    CHECK(stages_for_command("explain") == std::set<Stage>{Stage::reference, Stage::explain});
    CHECK(stages_for_command("report").size() == 9);
    CHECK_THROWS_AS(stages_for_command("plot"), ConfigError);
}

TEST_CASE("seeds do not depend on the model list") {
    const auto a = experiment_seed(7, 3, ModelKind::transe);
    CHECK(a == experiment_seed(7, 3, ModelKind::transe));
    CHECK(a != experiment_seed(7, 4, ModelKind::transe));
    CHECK(a != experiment_seed(7, 3, ModelKind::rotate));
    CHECK(a != experiment_seed(8, 3, ModelKind::transe));
}

TEST_CASE("study with two models") {
    const auto dir = scratch_dir("two-models");
    auto j = small_config(dir / "run");
    j["models"] = {"transe", "rotate"};
    j["model_config"]["rotate"] = {{"dim", 4}, {"epochs", 10}, {"batch_size", 64}};
    j["lime"] = {{"samples", 60}, {"quantile", 0.2}};
    const auto config = StudyConfig::from_json(j);

    auto report = run_study(config, stages_for_command("report"));
    CHECK(report.records.size() > 12);
    CHECK(report.trained == report.experiments.size() + 2);
    CHECK(report.stages.at("grid").status == "skipped");
    CHECK(report.stages.at("correlate").status == "done");
    emit_report(report, dir / "report");
    const auto files = bundle(dir / "report");

    SUBCASE("one scatter plot per feature with a series per model") {
        int svgs = 0;
        for (const auto& [name, text] : files) {
            if (!name.ends_with(".svg")) continue;
            ++svgs;
            const std::regex series("<g class=\"series\"");
            CHECK(std::distance(std::sregex_iterator(text.begin(), text.end(), series), std::sregex_iterator()) == 2);
            CHECK(text.find("data-model=\"rotate\"") != std::string::npos);
        }
        CHECK(svgs == 6);
    }
    SUBCASE("skipped grid leaves no figure and says so") {
        CHECK_FALSE(files.contains("fig5.csv"));
        const auto manifest = nlohmann::json::parse(files.at("manifest.json"));
        CHECK(manifest.at("stages").at("grid").at("status") == "skipped");
        CHECK(manifest.at("seeds").contains("master"));
        for (const char* f : {"features.csv", "records.csv", "correlation.csv", "sobol.json", "fig4.csv", "eval.json",
                              "fig6.csv"})
            CHECK_MESSAGE(files.contains(f), f);
    }
    SUBCASE("one explanation file per representative triple") {
        std::size_t lime_files = 0;
        for (const auto& [name, text] : files) {
            if (!name.starts_with("lime/")) continue;
            ++lime_files;
            const auto j = nlohmann::json::parse(text);
            const double sum = j.at("block_importance").at("head").get<double>() +
                               j.at("block_importance").at("relation").get<double>() +
                               j.at("block_importance").at("tail").get<double>();
            double total = 0;
            for (double v : j.at("importance")) total += v;
            CHECK(sum == doctest::Approx(total).epsilon(1e-12));
            CHECK(j.at("config").at("samples") == 60);
        }
        std::size_t expect = 0;
        for (const auto& [kind, rows] : report.profiles)
            for (const auto& row : rows) expect += row.group_size;
        CHECK(lime_files == expect);
        CHECK(lime_files > 0);
        const auto manifest = nlohmann::json::parse(files.at("manifest.json"));
        CHECK(manifest.at("files").size() == files.size());
    }
    SUBCASE("an unwritable destination fails before touching anything") {
        spit(dir / "blocker", "a file, not a directory\n");
        CHECK_THROWS(emit_report(report, dir / "blocker" / "report"));
        CHECK(slurp(dir / "blocker") == "a file, not a directory\n");
        CHECK(bundle(dir / "report") == files);
    }
    SUBCASE("records reload and reproduce the correlation table") {
        const auto reloaded = parse_records_csv(files.at("records.csv"));
        REQUIRE(reloaded.size() == report.records.size());
        for (std::size_t i = 0; i < reloaded.size(); ++i) {
            CHECK(reloaded[i].mrr == report.records[i].mrr);
            CHECK(reloaded[i].features.as_vector() == report.records[i].features.as_vector());
        }
        CHECK(correlation_csv(correlation_table(reloaded, 10)) == files.at("correlation.csv"));
    }
    SUBCASE("a rerun reuses everything and writes the same bundle") {
        auto again = run_study(config, stages_for_command("report"));
        CHECK(again.trained == 0);
        CHECK(again.reused == report.trained);
        emit_report(again, dir / "report-again");
        CHECK(bundle(dir / "report-again") == files);
    }
}

TEST_CASE("resume after losing part of a run") {
    const auto dir = scratch_dir("resume");
    const auto config = StudyConfig::from_json(small_config(dir / "run"));
    auto first = run_study(config, stages_for_command("study"));
    emit_report(first, dir / "a");
    fs::remove_all(dir / "run" / "experiments" / "sample-1");
    fs::remove_all(dir / "run" / "experiments" / "sample-4");
    auto second = run_study(config, stages_for_command("study"));
    CHECK(second.trained == 2);
    emit_report(second, dir / "b");
    CHECK(bundle(dir / "a") == bundle(dir / "b"));
}

TEST_CASE("command line") {
    const auto dir = scratch_dir("cli");
    spit(dir / "good.json", small_config(dir / "run").dump());
    auto bad = small_config(dir / "run");
    bad["extra"] = 1;
    spit(dir / "bad.json", bad.dump());
    auto strict = small_config(dir / "strict");
    strict["stats"]["min_r2"] = 1.0;
    spit(dir / "strict.json", strict.dump());
    spit(dir / "broken.json", "{ not json");

    CHECK(run_cli("sample --config " + (dir / "good.json").string()) == 0);
    CHECK(fs::exists(dir / "run" / "corpus" / "manifest.json"));
    CHECK(run_cli("eval --config " + (dir / "good.json").string() + " --workers 2") == 0);
    const auto log = nlohmann::json::parse(slurp(dir / "run" / "run_log.json"));
    CHECK(log.at("command") == "eval");
    CHECK(log.at("trained").get<int>() > 0);

    CHECK(run_cli("study --config " + (dir / "missing.json").string()) == 1);
    CHECK(run_cli("study --config " + (dir / "bad.json").string()) == 1);
    CHECK(run_cli("study --config " + (dir / "broken.json").string()) == 1);
    CHECK(run_cli("frobnicate") == 1);
    // min_r2 of 1 makes the surrogate fit fail, an aggregate stage failure
    CHECK(run_cli("sobol --config " + (dir / "strict.json").string()) == 2);
    CHECK(fs::exists(dir / "strict" / "report" / "records.csv"));
}
