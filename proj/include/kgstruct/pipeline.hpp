#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgstruct/explain.hpp"
#include "kgstruct/features.hpp"
#include "kgstruct/kge.hpp"
#include "kgstruct/sampler.hpp"
#include "kgstruct/stats.hpp"
#include "kgstruct/synthetic.hpp"

namespace kgstruct {

inline constexpr std::string_view kVersion = "kgstructlab 0.1.0";

/// Invalid configuration or unreadable inputs (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An aggregate stage could not run on the available inputs (CLI exit code 2).
class StageFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelSpec {
    int dim = 64;
    TrainConfig train;
};

struct StudyConfig {
    std::optional<std::array<std::filesystem::path, 3>> dataset_files;
    std::optional<CategoryFamilyParams> synthetic;

    SamplerParams sampler;
    int corpus_size = 60;
    double category_threshold = 1.5;

    std::vector<ModelKind> models{ModelKind::transe};
    std::map<ModelKind, ModelSpec> model_specs;

    bool reference = true;

    struct Grid {
        std::vector<int> epochs;
        std::vector<int> dims;
    };
    std::optional<Grid> grid;

    std::optional<LimeConfig> lime;
    double lime_quantile = 0.1;

    bool correlation = true;
    bool sobol = true;
    int sobol_samples = 4096;
    int bootstrap = 200;
    double min_r2 = 0.3;

    std::filesystem::path out_dir = "out";
    std::uint64_t master_seed = 0;
    int workers = 1;

    const ModelSpec& spec(ModelKind k) const;
    void validate() const;

    /// Unknown keys are rejected. Relative dataset paths resolve against `base_dir`.
    static StudyConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    nlohmann::ordered_json to_json() const;
};

StudyConfig load_study_config(const std::filesystem::path& path);

/// Per-experiment seed; independent of which other models are configured.
std::uint64_t experiment_seed(std::uint64_t master_seed, std::size_t sample_index, ModelKind kind);

enum class Stage { sample, featurize, train, eval, correlate, sobol, reference, grid, explain };
std::string_view stage_name(Stage s);
std::set<Stage> stages_for_command(std::string_view command);

struct StageStatus {
    std::string status;  // "done", "skipped" or "failed"
    std::string detail;
};

struct SampleSummary {
    std::size_t index = 0;
    SampleMeta meta;
    std::size_t nodes = 0;
    std::array<std::size_t, 3> triples{};
    std::optional<StructuralFeatures> features;
    std::string note;
};

struct ExperimentOutcome {
    std::size_t sample_index = 0;
    ModelKind model = ModelKind::transe;
    std::uint64_t seed = 0;
    std::optional<EvalReport> eval;
    std::string error;
    bool reused = false;
};

struct StudyReport {
    StudyConfig config;
    LoadReport dataset;
    std::vector<SampleSummary> samples;
    std::vector<ExperimentOutcome> experiments;
    std::vector<ExperimentRecord> records;
    std::vector<CorrelationEntry> correlations;
    std::map<ModelKind, SobolResult> sobol;
    Eigen::Vector4d category_counts = Eigen::Vector4d::Zero();
    std::map<ModelKind, EvalReport> reference_eval;
    std::map<ModelKind, std::uint64_t> reference_seeds;
    std::map<ModelKind, std::vector<GridRow>> grid;
    std::map<ModelKind, std::vector<ImportanceProfileRow>> profiles;
    std::map<ModelKind, std::vector<TripleExplanation>> explanations;
    std::vector<std::string> entity_labels, relation_labels;  // of the full graph, for explanations
    std::map<std::string, StageStatus> stages;
    std::vector<std::string> files;

    // Run statistics; reported in run_log.json, outside the deterministic bundle.
    std::size_t trained = 0;
    std::size_t reused = 0;
    std::map<std::string, double> wall_seconds;

    bool aggregate_failed() const;
};

/// Runs the requested stages. Intermediate artefacts live under
/// config.out_dir; finished experiments found there are reused.
StudyReport run_study(const StudyConfig& config, const std::set<Stage>& stages);

/// Writes the report bundle into `dir` via a staging directory and rename.
void emit_report(StudyReport& report, const std::filesystem::path& dir);

/// CSV text of records / correlations (shared by emit_report and tests).
std::string records_csv(const std::vector<ExperimentRecord>& records, const std::vector<ExperimentOutcome>& outcomes);
std::string correlation_csv(const std::vector<CorrelationEntry>& table);
std::vector<ExperimentRecord> parse_records_csv(const std::string& text);

std::string format_double(double v);

}  // namespace kgstruct
