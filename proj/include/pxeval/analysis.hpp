#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pxeval/metrics_rank.hpp"
#include "pxeval/template_engine.hpp"

namespace pxeval {

enum class AblationAxis { TrainingVsUnseen, Choices, Mcq, ExtraText, LengthBucket };

std::string_view to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

struct GroupStats {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
};

GroupStats group_stats(const std::vector<double>& values, QuantileMethod method = QuantileMethod::Linear);

struct AblationGroup {
    std::string label;
    std::vector<std::string> prompts;
    GroupStats mar;
    GroupStats mfr;
};

struct AblationReport {
    AblationAxis axis = AblationAxis::Choices;
    std::vector<AblationGroup> groups;  // fixed label order per axis
};

/// Ascending cut points; n cut points give n+1 buckets, each closed below.
struct LengthBucketing {
    std::vector<std::size_t> boundaries{14, 21, 25};

    void validate() const;
    std::size_t bucket_of(std::size_t length) const;
    std::size_t bucket_count() const { return boundaries.size() + 1; }
    /// "<14", "[14,21)", ..., ">=25".
    std::string label(std::size_t bucket) const;
};

struct PromptFacts {
    AttributeSet attributes;
    std::size_t length = 0;
    std::size_t shared_tokens = 0;
};

/// Groups the MAR/MFR populations of prompts along one axis. Prompts missing
/// from `facts` (such as the no-prompt baseline) are skipped. The MCQ axis
/// partitions only prompts that present their choices. Throws EmptyGroup if
/// any group is empty.
AblationReport group_ablation(const std::map<std::string, PromptRank>& prompt_ranks,
                              const std::map<std::string, PromptFacts>& facts, AblationAxis axis,
                              const LengthBucketing& bucketing = {},
                              QuantileMethod method = QuantileMethod::Linear);

/// Percentage by which `better_mar` improves on `worse_mar`, relative to the
/// better rank: 100 * (worse - better) / better.
double relative_improvement(double better_mar, double worse_mar);

enum class CorrelationMethod { Pearson, Spearman };
CorrelationMethod parse_correlation_method(const std::string& name);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Point-biserial correlation from group means and the population standard
/// deviation of y. Algebraically equal to pearson() for 0/1 x.
double point_biserial(const std::vector<double>& binary, const std::vector<double>& y);

/// Correlation between an attribute and ranks over the prompts present in
/// both maps. Needs at least three prompts and nonzero variance on both sides.
double correlate(const std::map<std::string, double>& attribute_values,
                 const std::map<std::string, double>& ranks,
                 CorrelationMethod method = CorrelationMethod::Pearson);

enum class CorrelationAttribute { HasChoices, IsMcq, IsTrainingPrompt, Length, SharedTokens };
std::string_view to_string(CorrelationAttribute a);

struct CorrelationRow {
    CorrelationAttribute attribute;
    std::optional<double> r_accuracy;  // empty when undefined (zero variance)
    std::optional<double> r_f1;
};

std::vector<CorrelationRow> correlation_rows(const std::map<std::string, PromptRank>& prompt_ranks,
                                             const std::map<std::string, PromptFacts>& facts,
                                             CorrelationMethod method = CorrelationMethod::Pearson);

struct LengthBucketRow {
    std::string label;
    std::size_t count = 0;
    std::optional<GroupStats> mar;
    std::optional<GroupStats> mfr;
};

/// Every prompt lands in exactly one bucket; empty buckets carry no stats.
std::vector<LengthBucketRow> length_bucket_summary(const std::map<std::string, std::size_t>& prompt_lengths,
                                                   const std::map<std::string, PromptRank>& prompt_ranks,
                                                   const LengthBucketing& bucketing = {},
                                                   QuantileMethod method = QuantileMethod::Linear);

/// Attributes, length and training-vocabulary overlap for each template.
std::map<std::string, PromptFacts> prompt_facts(const std::vector<PromptTemplate>& prompts);

// CSV/JSON emitters.
std::string ablation_csv(const std::vector<AblationReport>& reports);
std::string correlation_csv(const std::vector<CorrelationRow>& rows);
std::string length_bucket_csv(const std::vector<LengthBucketRow>& rows);
/// Tidy long-format rows: prompt_id,length,bucket,metric,rank.
std::string plot_data_csv(const std::map<std::string, PromptRank>& prompt_ranks,
                          const std::map<std::string, PromptFacts>& facts,
                          const LengthBucketing& bucketing);
std::string analysis_summary_json(const std::vector<AblationReport>& reports,
                                  const std::vector<CorrelationRow>& correlations,
                                  const std::vector<LengthBucketRow>& buckets);

} // namespace pxeval
