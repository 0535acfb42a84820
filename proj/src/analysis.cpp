#include "pxeval/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "pxeval/error.hpp"

namespace pxeval {

std::string_view to_string(AblationAxis axis) {
    switch (axis) {
    case AblationAxis::TrainingVsUnseen: return "training_vs_unseen";
    case AblationAxis::Choices: return "choices";
    case AblationAxis::Mcq: return "mcq";
    case AblationAxis::ExtraText: return "extra_text";
    case AblationAxis::LengthBucket: return "length_bucket";
    }
    return "?";
}

AblationAxis parse_ablation_axis(std::string_view name) {
    for (auto axis : {AblationAxis::TrainingVsUnseen, AblationAxis::Choices, AblationAxis::Mcq,
                      AblationAxis::ExtraText, AblationAxis::LengthBucket})
        if (to_string(axis) == name) return axis;
    throw Error(ErrorKind::InvalidConfig, "unknown ablation axis '" + std::string(name) + "'");
}

GroupStats group_stats(const std::vector<double>& values, QuantileMethod method) {
    if (values.empty()) throw Error(ErrorKind::EmptyGroup, "statistics of an empty group");
    GroupStats s;
    s.count = values.size();
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    s.median = median(values);
    s.q1 = quantile(values, 0.25, method);
    s.q3 = quantile(values, 0.75, method);
    return s;
}

void LengthBucketing::validate() const {
    if (boundaries.empty()) throw Error(ErrorKind::InvalidConfig, "length bucketing needs a cut point");
    for (std::size_t i = 1; i < boundaries.size(); ++i)
        if (boundaries[i] <= boundaries[i - 1])
            throw Error(ErrorKind::InvalidConfig, "length cut points must be strictly ascending");
}

std::size_t LengthBucketing::bucket_of(std::size_t length) const {
    return static_cast<std::size_t>(
        std::upper_bound(boundaries.begin(), boundaries.end(), length) - boundaries.begin());
}

std::string LengthBucketing::label(std::size_t bucket) const {
    if (bucket == 0) return "<" + std::to_string(boundaries.front());
    if (bucket >= boundaries.size()) return ">=" + std::to_string(boundaries.back());
    return "[" + std::to_string(boundaries[bucket - 1]) + "," + std::to_string(boundaries[bucket]) + ")";
}

AblationReport group_ablation(const std::map<std::string, PromptRank>& prompt_ranks,
                              const std::map<std::string, PromptFacts>& facts, AblationAxis axis,
                              const LengthBucketing& bucketing, QuantileMethod method) {
    std::vector<std::string> labels;
    switch (axis) {
    case AblationAxis::TrainingVsUnseen: labels = {"training", "unseen"}; break;
    case AblationAxis::Choices: labels = {"with_choices", "no_choices"}; break;
    case AblationAxis::Mcq: labels = {"mcq", "not_mcq"}; break;
    case AblationAxis::ExtraText: labels = {"extra_text", "no_extra_text"}; break;
    case AblationAxis::LengthBucket:
        bucketing.validate();
        for (std::size_t b = 0; b < bucketing.bucket_count(); ++b) labels.push_back(bucketing.label(b));
        break;
    }

    AblationReport report;
    report.axis = axis;
    report.groups.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) report.groups[i].label = labels[i];

    std::vector<std::vector<double>> mars(labels.size()), mfrs(labels.size());
    for (const auto& [prompt, rank] : prompt_ranks) {
        auto it = facts.find(prompt);
        if (it == facts.end()) continue;
        const auto& a = it->second.attributes;
        std::size_t g = 0;
        switch (axis) {
        case AblationAxis::TrainingVsUnseen: g = a.is_training_prompt ? 0 : 1; break;
        case AblationAxis::Choices: g = a.has_choices ? 0 : 1; break;
        case AblationAxis::Mcq:
            if (!a.has_choices) continue;
            g = a.is_mcq ? 0 : 1;
            break;
        case AblationAxis::ExtraText: g = a.has_extra_text ? 0 : 1; break;
        case AblationAxis::LengthBucket: g = bucketing.bucket_of(it->second.length); break;
        }
        report.groups[g].prompts.push_back(prompt);
        mars[g].push_back(rank.mar);
        mfrs[g].push_back(rank.mfr);
    }
    for (std::size_t g = 0; g < labels.size(); ++g) {
        if (mars[g].empty())
            throw Error(ErrorKind::EmptyGroup, std::string(to_string(axis)) + " group '" + labels[g] +
                                                   "' has no prompts");
        report.groups[g].mar = group_stats(mars[g], method);
        report.groups[g].mfr = group_stats(mfrs[g], method);
    }
    return report;
}

double relative_improvement(double better_mar, double worse_mar) {
    if (!(better_mar > 0.0) || !(worse_mar > 0.0))
        throw Error(ErrorKind::NonPositiveRank, "ranks must be positive");
    return 100.0 * (worse_mar - better_mar) / better_mar;
}

CorrelationMethod parse_correlation_method(const std::string& name) {
    if (name == "pearson") return CorrelationMethod::Pearson;
    if (name == "spearman") return CorrelationMethod::Spearman;
    throw Error(ErrorKind::InvalidConfig, "unknown correlation method '" + name + "'");
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error(ErrorKind::CountMismatch, "correlation inputs differ in length");
    if (x.size() < 3) throw Error(ErrorKind::InsufficientData, "correlation needs at least 3 points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::ZeroVariance, "constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double point_biserial(const std::vector<double>& binary, const std::vector<double>& y) {
    if (binary.size() != y.size()) throw Error(ErrorKind::CountMismatch, "inputs differ in length");
    if (y.size() < 3) throw Error(ErrorKind::InsufficientData, "correlation needs at least 3 points");
    double sum1 = 0.0, sum0 = 0.0;
    std::size_t n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (binary[i] == 1.0) {
            sum1 += y[i];
            ++n1;
        } else if (binary[i] == 0.0) {
            sum0 += y[i];
            ++n0;
        } else {
            throw Error(ErrorKind::InvalidConfig, "point-biserial attribute must be 0 or 1");
        }
    }
    if (n1 == 0 || n0 == 0) throw Error(ErrorKind::ZeroVariance, "binary attribute is constant");
    const double n = static_cast<double>(y.size());
    const double mean = (sum1 + sum0) / n;
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    if (sd == 0.0) throw Error(ErrorKind::ZeroVariance, "ranks are constant");
    const double p = static_cast<double>(n1) / n;
    const double m1 = sum1 / static_cast<double>(n1);
    const double m0 = sum0 / static_cast<double>(n0);
    return (m1 - m0) / sd * std::sqrt(p * (1.0 - p));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double shared = static_cast<double>(i + j + 2) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double correlate(const std::map<std::string, double>& attribute_values,
                 const std::map<std::string, double>& ranks, CorrelationMethod method) {
    std::vector<double> x, y;
    for (const auto& [prompt, value] : attribute_values) {
        auto it = ranks.find(prompt);
        if (it == ranks.end()) continue;
        x.push_back(value);
        y.push_back(it->second);
    }
    if (x.size() < 3) throw Error(ErrorKind::InsufficientData, "correlation needs at least 3 prompts");
    if (method == CorrelationMethod::Spearman) return pearson(average_ranks(x), average_ranks(y));
    return pearson(x, y);
}

std::string_view to_string(CorrelationAttribute a) {
    switch (a) {
    case CorrelationAttribute::HasChoices: return "has_choices";
    case CorrelationAttribute::IsMcq: return "is_mcq";
    case CorrelationAttribute::IsTrainingPrompt: return "is_training_prompt";
    case CorrelationAttribute::Length: return "length";
    case CorrelationAttribute::SharedTokens: return "shared_token_count";
    }
    return "?";
}

std::vector<CorrelationRow> correlation_rows(const std::map<std::string, PromptRank>& prompt_ranks,
                                             const std::map<std::string, PromptFacts>& facts,
                                             CorrelationMethod method) {
    std::map<std::string, double> mar, mfr;
    for (const auto& [prompt, rank] : prompt_ranks) {
        if (!facts.contains(prompt)) continue;
        mar[prompt] = rank.mar;
        mfr[prompt] = rank.mfr;
    }

    auto try_correlate = [&](const std::map<std::string, double>& attr,
                             const std::map<std::string, double>& ranks) -> std::optional<double> {
        try {
            return correlate(attr, ranks, method);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::ZeroVariance || e.kind() == ErrorKind::InsufficientData)
                return std::nullopt;
            throw;
        }
    };

    std::vector<CorrelationRow> rows;
    for (auto attr : {CorrelationAttribute::HasChoices, CorrelationAttribute::IsMcq,
                      CorrelationAttribute::IsTrainingPrompt, CorrelationAttribute::Length,
                      CorrelationAttribute::SharedTokens}) {
        std::map<std::string, double> values;
        for (const auto& [prompt, f] : facts) {
            if (!prompt_ranks.contains(prompt)) continue;
            switch (attr) {
            case CorrelationAttribute::HasChoices: values[prompt] = f.attributes.has_choices; break;
            case CorrelationAttribute::IsMcq: values[prompt] = f.attributes.is_mcq; break;
            case CorrelationAttribute::IsTrainingPrompt: values[prompt] = f.attributes.is_training_prompt; break;
            case CorrelationAttribute::Length: values[prompt] = static_cast<double>(f.length); break;
            case CorrelationAttribute::SharedTokens: values[prompt] = static_cast<double>(f.shared_tokens); break;
            }
        }
        rows.push_back({attr, try_correlate(values, mar), try_correlate(values, mfr)});
    }
    return rows;
}

std::vector<LengthBucketRow> length_bucket_summary(const std::map<std::string, std::size_t>& prompt_lengths,
                                                   const std::map<std::string, PromptRank>& prompt_ranks,
                                                   const LengthBucketing& bucketing, QuantileMethod method) {
    bucketing.validate();
    std::vector<std::vector<double>> mars(bucketing.bucket_count()), mfrs(bucketing.bucket_count());
    for (const auto& [prompt, length] : prompt_lengths) {
        auto it = prompt_ranks.find(prompt);
        if (it == prompt_ranks.end()) continue;
        auto b = bucketing.bucket_of(length);
        mars[b].push_back(it->second.mar);
        mfrs[b].push_back(it->second.mfr);
    }
    std::vector<LengthBucketRow> rows;
    for (std::size_t b = 0; b < bucketing.bucket_count(); ++b) {
        LengthBucketRow row;
        row.label = bucketing.label(b);
        row.count = mars[b].size();
        if (row.count > 0) {
            row.mar = group_stats(mars[b], method);
            row.mfr = group_stats(mfrs[b], method);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::map<std::string, PromptFacts> prompt_facts(const std::vector<PromptTemplate>& prompts) {
    auto vocab = build_training_vocab(prompts);
    std::map<std::string, PromptFacts> out;
    for (const auto& p : prompts)
        out[p.id] = {p.attributes, prompt_token_length(p), shared_token_count(p, vocab)};
    return out;
}

// ---------------------------------------------------------------------------
// Emitters

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

std::string stats_cells(const GroupStats& s) {
    return num(s.mean) + "," + num(s.median) + "," + num(s.q1) + "," + num(s.q3);
}

nlohmann::ordered_json stats_json(const GroupStats& s) {
    return {{"count", s.count}, {"mean", s.mean}, {"median", s.median}, {"q1", s.q1}, {"q3", s.q3}};
}

} // namespace

std::string ablation_csv(const std::vector<AblationReport>& reports) {
    std::string out =
        "axis,group,count,mar_mean,mar_median,mar_q1,mar_q3,mfr_mean,mfr_median,mfr_q1,mfr_q3\n";
    for (const auto& r : reports)
        for (const auto& g : r.groups)
            out += std::string(to_string(r.axis)) + "," + g.label + "," + std::to_string(g.mar.count) +
                   "," + stats_cells(g.mar) + "," + stats_cells(g.mfr) + "\n";
    return out;
}

std::string correlation_csv(const std::vector<CorrelationRow>& rows) {
    std::string out = "attribute,r_accuracy_rank,r_f1_rank\n";
    for (const auto& r : rows)
        out += std::string(to_string(r.attribute)) + "," + opt_num(r.r_accuracy) + "," + opt_num(r.r_f1) + "\n";
    return out;
}

std::string length_bucket_csv(const std::vector<LengthBucketRow>& rows) {
    std::string out =
        "bucket,count,mar_mean,mar_median,mar_q1,mar_q3,mfr_mean,mfr_median,mfr_q1,mfr_q3\n";
    for (const auto& r : rows) {
        out += "\"" + r.label + "\"," + std::to_string(r.count) + ",";
        out += r.mar ? stats_cells(*r.mar) : ",,,";
        out += ",";
        out += r.mfr ? stats_cells(*r.mfr) : ",,,";
        out += "\n";
    }
    return out;
}

std::string plot_data_csv(const std::map<std::string, PromptRank>& prompt_ranks,
                          const std::map<std::string, PromptFacts>& facts,
                          const LengthBucketing& bucketing) {
    bucketing.validate();
    std::string out = "prompt_id,length,bucket,metric,rank\n";
    for (const auto& [prompt, rank] : prompt_ranks) {
        auto it = facts.find(prompt);
        if (it == facts.end()) continue;
        const auto prefix = prompt + "," + std::to_string(it->second.length) + ",\"" +
                            bucketing.label(bucketing.bucket_of(it->second.length)) + "\",";
        out += prefix + "mar," + num(rank.mar) + "\n";
        out += prefix + "mfr," + num(rank.mfr) + "\n";
    }
    return out;
}

std::string analysis_summary_json(const std::vector<AblationReport>& reports,
                                  const std::vector<CorrelationRow>& correlations,
                                  const std::vector<LengthBucketRow>& buckets) {
    using ojson = nlohmann::ordered_json;
    ojson doc;
    doc["ablations"] = ojson::array();
    for (const auto& r : reports) {
        ojson groups = ojson::array();
        for (const auto& g : r.groups)
            groups.push_back({{"group", g.label}, {"prompts", g.prompts},
                              {"mar", stats_json(g.mar)}, {"mfr", stats_json(g.mfr)}});
        doc["ablations"].push_back({{"axis", to_string(r.axis)}, {"groups", groups}});
    }
    doc["correlations"] = ojson::array();
    for (const auto& c : correlations) {
        ojson row = {{"attribute", to_string(c.attribute)}};
        row["r_accuracy_rank"] = c.r_accuracy ? ojson(*c.r_accuracy) : ojson(nullptr);
        row["r_f1_rank"] = c.r_f1 ? ojson(*c.r_f1) : ojson(nullptr);
        doc["correlations"].push_back(row);
    }
    doc["length_buckets"] = ojson::array();
    for (const auto& b : buckets) {
        ojson row = {{"bucket", b.label}, {"count", b.count}};
        row["mar"] = b.mar ? stats_json(*b.mar) : ojson(nullptr);
        row["mfr"] = b.mfr ? stats_json(*b.mfr) : ojson(nullptr);
        doc["length_buckets"].push_back(row);
    }
    return doc.dump(2) + "\n";
}

} // namespace pxeval
