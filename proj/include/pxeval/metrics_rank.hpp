#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "pxeval/scoring.hpp"
#include "pxeval/task_model.hpp"

namespace pxeval {

/// Fraction of predictions whose decided index matches the gold index.
double accuracy(const std::vector<Prediction>& predictions, const FixedChoiceTask& task,
                Decision decision);

/// Unweighted mean of per-class F1 over every class in the task's choice set,
/// including classes absent from both gold and predictions (their F1 is 0).
double macro_f1(const std::vector<Prediction>& predictions, const FixedChoiceTask& task,
                Decision decision);

/// Both metrics above from bare index vectors.
double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold);
double macro_f1(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold,
                std::size_t num_classes);

struct EvalResult {
    std::string prompt_id;
    std::string task_id;
    Decision decision = Decision::Eq2;
    std::size_t n_examples = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::size_t> choice_histogram;
};

EvalResult evaluate(const std::string& prompt_id, const FixedChoiceTask& task,
                    const std::vector<Prediction>& predictions, Decision decision);

/// Higher metric ranks first (rank 1). Ties share the mean of the positions
/// they span.
std::map<std::string, double> rank_within_task(const std::map<std::string, double>& metric_values);

/// Interpolation used between order statistics, named after the equivalent
/// numpy.quantile methods.
enum class QuantileMethod { Linear, Lower, Higher, Nearest, Midpoint };

QuantileMethod parse_quantile_method(const std::string& name);

double quantile(std::vector<double> values, double q, QuantileMethod method = QuantileMethod::Linear);
double median(std::vector<double> values);

struct Quartiles {
    double q1;
    double median;
    double q3;
};
Quartiles quartiles(const std::vector<double>& values, QuantileMethod method = QuantileMethod::Linear);

/// Median of a prompt's per-task ranks.
double median_rank(const std::vector<double>& ranks_across_tasks);

struct PromptRank {
    double mar = 0.0;  // median accuracy rank
    double mfr = 0.0;  // median F1 rank
};

struct RankTable {
    std::map<std::string, std::map<std::string, double>> accuracy_ranks;  // task -> prompt -> rank
    std::map<std::string, std::map<std::string, double>> f1_ranks;
    std::map<std::string, PromptRank> per_prompt;
};

/// Ranks every prompt within each task (accuracy and F1 separately) and takes
/// per-prompt medians across the tasks the prompt was evaluated on.
RankTable build_rank_table(const std::vector<EvalResult>& results);

} // namespace pxeval
