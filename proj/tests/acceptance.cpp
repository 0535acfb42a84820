// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "oracle/oracle.hpp"
#include "pxeval/analysis.hpp"
#include "pxeval/harness.hpp"
#include "pxeval/io.hpp"
#include "pxeval/metrics_rank.hpp"
#include "pxeval/scoring.hpp"
#include "pxeval/task_model.hpp"
#include "pxeval/template_engine.hpp"

using namespace pxeval;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = PXEVAL_FIXTURES;

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("pxeval_acceptance_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int failures = 0;

void criterion(const char* name, const std::function<std::string()>& check) {
    std::string detail;
    try {
        detail = check();
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const bool ok = detail.empty();
    failures += !ok;
    std::printf("%s %s%s%s\n", ok ? "PASS" : "FAIL", name, ok ? "" : " :: ", detail.c_str());
}

// Fixed log-probabilities per choice token.
class TableBackend final : public Backend {
public:
    explicit TableBackend(std::map<std::string, std::vector<double>> table) : table_(std::move(table)) {}
    ScoredChoice score(std::string_view, std::string_view continuation) const override {
        ScoredChoice s;
        s.token_logprobs = table_.at(std::string(continuation));
        for (std::size_t i = 0; i < s.token_logprobs.size(); ++i) s.tokens.push_back("t" + std::to_string(i));
        return s;
    }
    std::string describe() const override { return "table"; }

private:
    std::map<std::string, std::vector<double>> table_;
};

std::string eq1_eq2_divergence() {
    // "a" is one token at -2.0; "b" is four tokens at -0.6 each (sum -2.4, mean -0.6).
    TableBackend backend({{"a", {-2.0}}, {"b", {-0.6, -0.6, -0.6, -0.6}}});
    auto p = predict_with_prompt(backend, "Q:", "e", {"a", "b"});
    if (p.eq1_index != 0) return "eq1 picked " + std::to_string(p.eq1_index);
    if (p.eq2_index != 1) return "eq2 picked " + std::to_string(p.eq2_index);
    return "";
}

std::string fixture_oracle_equivalence() {
    auto c = load_run_config(kFixtures / "config.json");
    c.out_dir = scratch("fixture");
    const auto start = std::chrono::steady_clock::now();
    auto rec = run_eval(c);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (rec.exit_code() != 0) return "run failed";
    std::vector<std::string> files;
    for (const auto& t : c.tasks) files.push_back(t.filename().string());
    auto want = oracle::evaluate_fixture(kFixtures.string(), files, PXEVAL_CORPUS, true,
                                         std::get<NgramParams>(c.backend.params).order);
    if (want.size() != rec.pairs.size()) return "pair count differs from oracle";
    std::size_t examples = 0;
    for (const auto& p : rec.pairs) {
        const auto& w = want.at({p.prompt_id, p.task_id});
        for (std::size_t i = 0; i < p.predictions.size(); ++i) {
            if (p.predictions[i].eq1_index != w.predictions[i].eq1 || p.predictions[i].eq2_index != w.predictions[i].eq2)
                return p.prompt_id + "/" + p.task_id + " example " + std::to_string(i) + " disagrees";
            ++examples;
        }
        if (std::abs(p.results[0].accuracy - w.accuracy_eq1) > 1e-12 ||
            std::abs(p.results[1].accuracy - w.accuracy_eq2) > 1e-12 ||
            std::abs(p.results[0].macro_f1 - w.f1_eq1) > 1e-12 || std::abs(p.results[1].macro_f1 - w.f1_eq2) > 1e-12)
            return p.prompt_id + "/" + p.task_id + " metrics disagree";
    }
    if (examples < 5 * 3 * 20) return "too few examples scored";
    if (secs >= 10.0) return "took " + std::to_string(secs) + " s";
    return "";
}

std::string rank_suite() {
    auto tie = rank_within_task({{"p1", 0.9}, {"p2", 0.7}, {"p3", 0.9}});
    if (tie["p1"] != 1.5 || tie["p3"] != 1.5 || tie["p2"] != 3.0) return "tie example wrong";
    std::mt19937 rng(1000);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 40;
        std::map<std::string, double> values;
        for (std::size_t i = 0; i < n; ++i) values["p" + std::to_string(i)] = static_cast<double>(rng() % 9) / 8.0;
        auto ranks = rank_within_task(values);
        if (ranks != oracle::reference_ranks(values)) return "trial " + std::to_string(trial) + " differs";
        double sum = 0;
        for (const auto& [id, r] : ranks) sum += r;
        if (sum != static_cast<double>(n * (n + 1)) / 2.0) return "rank sum wrong";
        std::vector<double> rv;
        for (const auto& [id, r] : ranks) rv.push_back(r);
        if (std::abs(median_rank(rv) - oracle::reference_quantile(rv, 0.5)) > 1e-12) return "median wrong";
    }
    return "";
}

std::string relative_improvement_check() {
    const double v = relative_improvement(42.00, 50.25);
    if (std::abs(v - 19.64) > 0.01) return "got " + std::to_string(v);
    return "";
}

std::string macro_f1_fixtures() {
    std::mt19937 rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t c = 2 + rng() % 4, n = 5 + rng() % 80;
        std::vector<std::size_t> pred(n), gold(n);
        std::vector<std::vector<std::size_t>> confusion(c, std::vector<std::size_t>(c));
        for (std::size_t i = 0; i < n; ++i) {
            gold[i] = rng() % c;
            pred[i] = rng() % 3 == 0 ? gold[i] : rng() % c;
            ++confusion[gold[i]][pred[i]];
        }
        if (std::abs(macro_f1(pred, gold, c) - oracle::reference_macro_f1(confusion)) > 1e-12)
            return "fixture " + std::to_string(trial) + " differs";
        if (std::abs(accuracy(pred, gold) - oracle::reference_accuracy(confusion)) > 1e-12) return "accuracy differs";
    }
    return "";
}

std::string determinism() {
    auto dir = scratch("determinism");
    auto a = load_run_config(kFixtures / "config.json");
    a.out_dir = dir / "one";
    a.parallelism = 1;
    auto b = a;
    b.out_dir = dir / "eight";
    b.parallelism = 8;
    std::mt19937 rng(9);
    std::shuffle(b.tasks.begin(), b.tasks.end(), rng);
    std::rotate(b.tasks.begin(), b.tasks.begin() + 1, b.tasks.end());
    auto r1 = run_eval(a);
    auto r8 = run_eval(b);
    if (r1.run_id != r8.run_id) return "run ids differ";
    if (io::read_file(metrics_path(r1.run_dir, r1.run_id)) != io::read_file(metrics_path(r8.run_dir, r8.run_id)))
        return "metrics differ";
    run_rank(load_run(r1.run_dir));
    run_rank(load_run(r8.run_dir));
    if (io::read_file(ranks_path(r1.run_dir, r1.run_id)) != io::read_file(ranks_path(r8.run_dir, r8.run_id)))
        return "ranks differ";
    return "";
}

std::string choice_string_goldens() {
    if (format_choice_string({"A", "B", "C", "D", "E"}, {ChoiceStyle::Plain}) != R"("A", "B", "C", "D" or "E")")
        return "plain five";
    if (format_choice_string({"yes", "no", "maybe"}, {ChoiceStyle::McqLetters}) != "A) yes B) no C) maybe")
        return "mcq three";
    if (format_choice_string({"True", "False"}, {ChoiceStyle::Plain}) != R"("True" or "False")") return "plain two";
    return "";
}

std::string render_golden() {
    auto t = make_template(
        "wic", "wic", Category::Entailment,
        R"(Sentence A: {{premise}} Sentence B: {{hypothesis}} "{{domain}}" has a similar meaning in sentences A and B. {{choice_string}}?)",
        {true, false, true, false});
    AlignmentRule rule;
    rule.field_map = {{"premise", Placeholder::Premise},
                      {"hypothesis", Placeholder::Hypothesis},
                      {"domain", Placeholder::Domain}};
    Example ex{"m", {{"premise", "What is 2+2?"}, {"hypothesis", "Choices are: ∞, -10, fish, 4, √2"},
                     {"domain", "math problem"}}, 0};
    const std::string want =
        R"(Sentence A: What is 2+2? Sentence B: Choices are: ∞, -10, fish, 4, √2 "math problem" has a similar meaning in sentences A and B. "A", "B", "C", "D" or "E"?)";
    auto got = render(t, ex, rule, format_choice_string({"A", "B", "C", "D", "E"}, {ChoiceStyle::Plain}));
    return got == want ? "" : "rendered: " + got;
}

// Independent uniform draws: an always-uninformed predictor on 4 choices.
std::string random_baseline() {
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<std::size_t> pick(0, 3);
    const std::size_t n = 2000;
    std::vector<std::size_t> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
        gold[i] = pick(rng);
        pred[i] = pick(rng);
    }
    const double acc = accuracy(pred, gold);
    const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
    if (std::abs(acc - 0.25) > 3 * sigma) return "accuracy " + std::to_string(acc);
    return "";
}

} // namespace

int main() {
    criterion("eq1_eq2_decisions_diverge_on_length", eq1_eq2_divergence);
    criterion("fixture_matrix_matches_oracle_under_10s", fixture_oracle_equivalence);
    criterion("fractional_ranks_and_medians", rank_suite);
    criterion("relative_improvement_19_64", relative_improvement_check);
    criterion("macro_f1_matches_reference", macro_f1_fixtures);
    criterion("deterministic_across_parallelism_and_task_order", determinism);
    criterion("choice_string_goldens", choice_string_goldens);
    criterion("render_golden", render_golden);
    criterion("uniform_random_accuracy_within_3_sigma", random_baseline);
    fs::remove_all(fs::temp_directory_path() / ("pxeval_acceptance_" + std::to_string(::getpid())));
    return failures == 0 ? 0 : 1;
}
