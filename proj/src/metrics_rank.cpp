#include "pxeval/metrics_rank.hpp"

#include <algorithm>
#include <cmath>

#include "pxeval/error.hpp"

namespace pxeval {

namespace {

std::vector<std::size_t> decided(const std::vector<Prediction>& predictions, Decision decision) {
    std::vector<std::size_t> out;
    out.reserve(predictions.size());
    for (const auto& p : predictions) out.push_back(p.decided(decision));
    return out;
}

std::vector<std::size_t> gold_of(const FixedChoiceTask& task) {
    std::vector<std::size_t> out;
    out.reserve(task.examples.size());
    for (const auto& ex : task.examples) out.push_back(ex.gold_index);
    return out;
}

void check_counts(std::size_t predicted, std::size_t gold) {
    if (predicted != gold)
        throw Error(ErrorKind::CountMismatch, std::to_string(predicted) + " predictions for " +
                                                  std::to_string(gold) + " examples");
    if (gold == 0) throw Error(ErrorKind::EmptyList, "no examples to score");
}

} // namespace

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold) {
    check_counts(predicted.size(), gold.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == gold[i];
    return static_cast<double>(correct) / static_cast<double>(gold.size());
}

double macro_f1(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& gold,
                std::size_t num_classes) {
    check_counts(predicted.size(), gold.size());
    if (num_classes == 0) throw Error(ErrorKind::EmptyList, "no classes");
    std::vector<std::size_t> tp(num_classes), fp(num_classes), fn(num_classes);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (predicted[i] >= num_classes || gold[i] >= num_classes)
            throw Error(ErrorKind::BadGoldIndex, "class index outside the choice set");
        if (predicted[i] == gold[i]) {
            ++tp[gold[i]];
        } else {
            ++fp[predicted[i]];
            ++fn[gold[i]];
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        // F1 = 2tp / (2tp + fp + fn); zero when precision + recall = 0.
        const auto denom = 2 * tp[c] + fp[c] + fn[c];
        if (tp[c] > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(num_classes);
}

double accuracy(const std::vector<Prediction>& predictions, const FixedChoiceTask& task,
                Decision decision) {
    return accuracy(decided(predictions, decision), gold_of(task));
}

double macro_f1(const std::vector<Prediction>& predictions, const FixedChoiceTask& task,
                Decision decision) {
    return macro_f1(decided(predictions, decision), gold_of(task), task.num_choices());
}

EvalResult evaluate(const std::string& prompt_id, const FixedChoiceTask& task,
                    const std::vector<Prediction>& predictions, Decision decision) {
    EvalResult r;
    r.prompt_id = prompt_id;
    r.task_id = task.id;
    r.decision = decision;
    r.n_examples = predictions.size();
    auto pred = decided(predictions, decision);
    auto gold = gold_of(task);
    r.accuracy = accuracy(pred, gold);
    r.macro_f1 = macro_f1(pred, gold, task.num_choices());
    r.choice_histogram.assign(task.num_choices(), 0);
    for (auto idx : pred) ++r.choice_histogram.at(idx);
    return r;
}

std::map<std::string, double> rank_within_task(const std::map<std::string, double>& metric_values) {
    std::vector<std::pair<double, const std::string*>> order;
    order.reserve(metric_values.size());
    for (const auto& [id, value] : metric_values) {
        if (std::isnan(value)) throw Error(ErrorKind::InvalidConfig, "metric for '" + id + "' is NaN");
        order.emplace_back(value, &id);
    }
    // Stable on id so equal values form one contiguous group independent of input order.
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    });

    std::map<std::string, double> ranks;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && order[j + 1].first == order[i].first) ++j;
        // Positions i+1 .. j+1 share their mean.
        const double shared = static_cast<double>(i + 1 + j + 1) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[*order[k].second] = shared;
        i = j + 1;
    }
    return ranks;
}

QuantileMethod parse_quantile_method(const std::string& name) {
    if (name == "linear") return QuantileMethod::Linear;
    if (name == "lower") return QuantileMethod::Lower;
    if (name == "higher") return QuantileMethod::Higher;
    if (name == "nearest") return QuantileMethod::Nearest;
    if (name == "midpoint") return QuantileMethod::Midpoint;
    throw Error(ErrorKind::InvalidConfig, "unknown quantile method '" + name + "'");
}

double quantile(std::vector<double> values, double q, QuantileMethod method) {
    if (values.empty()) throw Error(ErrorKind::EmptyList, "quantile of an empty list");
    if (q < 0.0 || q > 1.0) throw Error(ErrorKind::InvalidConfig, "quantile outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    switch (method) {
    case QuantileMethod::Linear: return values[lo] + frac * (values[hi] - values[lo]);
    case QuantileMethod::Lower: return values[lo];
    case QuantileMethod::Higher: return values[hi];
    case QuantileMethod::Nearest: {
        // Round half to even, like numpy.
        auto idx = static_cast<std::size_t>(std::nearbyint(pos));
        return values[idx];
    }
    case QuantileMethod::Midpoint: return (values[lo] + values[hi]) / 2.0;
    }
    return values[lo];
}

double median(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorKind::EmptyList, "median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

Quartiles quartiles(const std::vector<double>& values, QuantileMethod method) {
    if (values.empty()) throw Error(ErrorKind::EmptyList, "quartiles of an empty list");
    return {quantile(values, 0.25, method), quantile(values, 0.5, method),
            quantile(values, 0.75, method)};
}

double median_rank(const std::vector<double>& ranks_across_tasks) { return median(ranks_across_tasks); }

RankTable build_rank_table(const std::vector<EvalResult>& results) {
    std::map<std::string, std::map<std::string, double>> acc_by_task, f1_by_task;
    for (const auto& r : results) {
        if (!acc_by_task[r.task_id].emplace(r.prompt_id, r.accuracy).second)
            throw Error(ErrorKind::DuplicateId,
                        "two results for (" + r.prompt_id + ", " + r.task_id + ")");
        f1_by_task[r.task_id].emplace(r.prompt_id, r.macro_f1);
    }

    RankTable table;
    std::map<std::string, std::vector<double>> acc_ranks, f1_ranks;
    for (const auto& [task, values] : acc_by_task) {
        table.accuracy_ranks[task] = rank_within_task(values);
        table.f1_ranks[task] = rank_within_task(f1_by_task[task]);
        for (const auto& [prompt, rank] : table.accuracy_ranks[task]) acc_ranks[prompt].push_back(rank);
        for (const auto& [prompt, rank] : table.f1_ranks[task]) f1_ranks[prompt].push_back(rank);
    }
    for (const auto& [prompt, ranks] : acc_ranks)
        table.per_prompt[prompt] = {median_rank(ranks), median_rank(f1_ranks[prompt])};
    return table;
}

} // namespace pxeval
