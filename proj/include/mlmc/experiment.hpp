#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlmc/engine.hpp"

namespace mlmc {

enum class ExperimentKind { MlmcSde, PfVsMlpf, SmcVsMlsmc, PmmhVsMlpmmh, EnkfVsMlenkf, Rates };
enum class OracleKind { ClosedForm, Kalman, Grid, LongReference };

std::string to_string(ExperimentKind kind);
std::string to_string(OracleKind kind);

/// Rates used to plan L and N_1..N_L for each epsilon.
struct PlanningSpec {
    RateParams rates;
    /// Allocation constant: N_l = ceil(scale eps^-2 h_l^((beta+zeta)/2) K_L);
    /// single-level baselines use N = ceil(scale eps^-2).
    double scale = 1.0;
    AllocationRule rule = AllocationRule::Standard;
    /// Levels added to choose_max_level(eps, alpha); may be negative.
    int level_offset = 0;
    int min_level = 2;
    /// When positive, one pilot run with this many samples per level sets the
    /// constant for every epsilon so that sum_l V_l / N_l = variance_fraction
    /// eps^2 (and N = V_1 / (variance_fraction eps^2) for the baseline),
    /// replacing `scale`. SDE experiments only.
    std::int64_t pilot_samples = 0;
    double variance_fraction = 0.5;
};

/// Pilot-run settings for the rates experiment.
struct RatesSpec {
    int first_level = 3;
    int last_level = 8;
    std::int64_t samples_per_level = 100000;
};

/**
 * One experiment. Model parameters are a flat name -> value map whose
 * allowed keys and defaults depend on the model; canonical form lists every
 * key with its resolved value.
 */
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::MlmcSde;
    std::string model = "gbm";
    std::map<std::string, double> parameters;
    std::vector<double> epsilons;
    int replicates = 2;
    std::uint64_t seed = 1;
    std::string output = "results.csv";
    OracleKind oracle = OracleKind::ClosedForm;
    PlanningSpec planning;
    RatesSpec rates;
    /// Wall-clock timing breaks byte-identical output, so it is opt-in.
    bool record_wall_clock = false;
};

struct ConfigValidation {
    std::optional<ExperimentConfig> config;
    std::vector<std::string> errors;  // every violation, "field: message"

    [[nodiscard]] bool ok() const { return config.has_value(); }
};

/// Parses JSON text, fills model defaults and reports all problems at once.
ConfigValidation validate_config(std::string_view text);

/// Pretty-printed JSON with sorted keys and every field present.
std::string canonical_text(const ExperimentConfig& config);

/// Parameter names and defaults of a model, or nullopt for unknown models.
std::optional<std::map<std::string, double>> model_defaults(const std::string& model);

/// One CSV row; columns in field order.
struct ResultRow {
    std::string method;
    double epsilon = 0.0;
    int replicate = 0;
    double value = 0.0;
    std::optional<double> oracle_value;
    std::optional<double> squared_error;
    double total_cost = 0.0;
    std::optional<double> wall_seconds;
    int L = 0;
    std::uint64_t seed = 0;
};

/// Per-observation-step output of the filtering experiments.
struct StepRow {
    std::string method;
    double epsilon = 0.0;
    int replicate = 0;
    int k = 0;
    double mean = 0.0;
    double oracle_mean = 0.0;
    std::optional<double> covariance;
    std::optional<double> oracle_covariance;
};

/// Per-level pilot statistics of the rates experiment.
struct LevelRow {
    int level = 0;
    double abs_mean_diff = 0.0;
    double var_diff = 0.0;
    std::int64_t samples = 0;
};

struct MethodSummary {
    std::string method;
    std::vector<double> epsilons;
    std::vector<double> mean_cost;  // per epsilon, over replicates
    std::vector<double> mse;        // per epsilon; NaN without an oracle
    double cost_vs_eps_slope = 0.0;
    double cost_vs_mse_slope = 0.0;  // NaN without an oracle
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<StepRow> step_rows;
    std::vector<LevelRow> level_rows;
    std::optional<RateFit> fitted_rates;
    /// Pilot level statistics when the allocation was calibrated.
    std::vector<LevelRow> pilot_rows;
    std::optional<double> oracle_value;
    std::string oracle_label;
    std::vector<MethodSummary> summaries;
};

/// Runs every (epsilon, replicate) grid point; rows are ordered by
/// (epsilon index, replicate, method) whatever the thread count.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Pilot level statistics and fitted alpha/beta for the config's model.
ExperimentResult run_rates(const ExperimentConfig& config);

std::string format_csv(std::span<const ResultRow> rows);
std::string format_step_csv(std::span<const StepRow> rows);
std::string format_level_csv(std::span<const LevelRow> rows);

/// Per-method summary table and fitted slopes.
std::string summary_table(const ExperimentResult& result);

/// results.csv -> results.steps.csv
std::string steps_path(const std::string& output);

/// Writes text to a file (LF endings, no BOM); throws on I/O failure.
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mlmc
