#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pxeval/analysis.hpp"
#include "pxeval/error.hpp"
#include "pxeval/metrics_rank.hpp"
#include "pxeval/scoring.hpp"

namespace pxeval {

/// Entrant id of the baseline that scores the raw example input.
inline constexpr std::string_view kNoPromptId = "no_prompt";

/// Environment variable consulted for the backend URL when --backend-url is absent.
inline constexpr const char* kBackendUrlEnv = "PXEVAL_BACKEND_URL";

struct AnalysisOptions {
    QuantileMethod quantile_method = QuantileMethod::Linear;
    LengthBucketing bucketing;
    CorrelationMethod correlation = CorrelationMethod::Pearson;
};

struct RunConfig {
    std::string run_name = "run";
    std::filesystem::path prompts;
    std::vector<std::filesystem::path> tasks;
    std::filesystem::path rules;
    BackendDescriptor backend;
    std::vector<Decision> decisions{Decision::Eq1, Decision::Eq2};
    McqTarget mcq_target = McqTarget::ChoiceText;
    bool include_no_prompt = true;
    std::filesystem::path out_dir = "runs";
    std::size_t parallelism = 1;
    std::uint64_t seed = 0;  // statistical tests only; scoring never reads it
    AnalysisOptions analysis;
};

/// Relative paths resolve against base_dir. Throws InvalidConfig.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
void validate_run_config(const RunConfig& config);

/// Replaces the backend with an HTTP client for url, keeping other settings.
void override_backend_url(RunConfig& config, const std::string& url);

/// Content hash over the inputs and every setting that can change scores.
/// Task order, output location and parallelism do not contribute.
std::string config_hash(const RunConfig& config);
std::string run_id(const RunConfig& config);
std::filesystem::path run_directory(const RunConfig& config);

struct PairOutcome {
    std::string prompt_id;
    std::string task_id;
    bool ok = false;
    bool resumed = false;
    ErrorKind error = ErrorKind::Io;
    std::string message;
    std::vector<Prediction> predictions;
    std::vector<EvalResult> results;  // one per configured decision
};

struct RunRecord {
    std::string config_hash;
    std::string run_id;
    std::filesystem::path run_dir;
    std::vector<PairOutcome> pairs;  // sorted by (prompt_id, task_id)
    double elapsed_seconds = 0.0;

    std::size_t failed_pairs() const;
    /// 0 all pairs ok, 2 any backend failure, 1 any other pair failure.
    int exit_code() const;
};

/// Evaluates the full (prompt x task) matrix, persisting per-pair predictions
/// and the metrics file. Completed pairs from an earlier run of the same
/// config are loaded instead of rescored.
RunRecord run_eval(const RunConfig& config);
/// As above with an explicit backend (the configured descriptor is still hashed).
RunRecord run_eval(const RunConfig& config, const Backend& backend);

// Files inside a run directory.
std::filesystem::path metrics_path(const std::filesystem::path& run_dir, const std::string& run_id);
std::filesystem::path ranks_path(const std::filesystem::path& run_dir, const std::string& run_id);

struct LoadedRun {
    std::string run_id;
    std::filesystem::path run_dir;
    std::vector<std::string> prompt_ids;  // includes the baseline when evaluated
    std::vector<std::string> task_ids;
    std::vector<Decision> decisions;
    AnalysisOptions analysis;
    std::vector<PromptTemplate> prompts;
    std::vector<EvalResult> results;  // successful pairs only
    std::vector<std::pair<std::string, std::string>> failed;  // (prompt, task)

    std::vector<EvalResult> results_for(Decision d) const;
    bool complete() const;
};

/// Throws MissingRun if run_dir lacks a finished eval.
LoadedRun load_run(const std::filesystem::path& run_dir);

struct StageOutput {
    std::vector<std::filesystem::path> files;
    std::vector<std::string> warnings;
};

/// Writes per-task fractional ranks and per-prompt MAR/MFR for every decision.
StageOutput run_rank(const LoadedRun& run);
StageOutput run_ablate(const LoadedRun& run, Decision decision);
StageOutput run_correlate(const LoadedRun& run, Decision decision);
/// rank + ablate + correlate + length buckets + JSON summary; plot data optional.
StageOutput run_report(const LoadedRun& run, Decision decision, bool plot_data);

/// Ranks for one decision, warning (not failing) on an incomplete matrix.
RankTable rank_table_for(const LoadedRun& run, Decision decision, std::vector<std::string>* warnings);

Decision parse_decision(std::string_view name);

} // namespace pxeval
