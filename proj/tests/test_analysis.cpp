#include <random>

#include "doctest.h"
#include "oracle/oracle.hpp"
#include "pxeval/analysis.hpp"
#include "pxeval/error.hpp"

using namespace pxeval;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected pxeval::Error");
    return ErrorKind::Io;
}

struct Fixture {
    std::map<std::string, PromptRank> ranks;
    std::map<std::string, PromptFacts> facts;
};

// Six prompts, three with choices and three without.
Fixture six_prompts() {
    const std::vector<double> mar = {10.0, 12.5, 30.0, 40.25, 41.0, 55.5};
    const std::vector<double> mfr = {8.0, 20.0, 33.5, 39.0, 60.0, 61.75};
    const std::vector<std::size_t> len = {9, 14, 20, 21, 24, 30};
    Fixture f;
    for (std::size_t i = 0; i < mar.size(); ++i) {
        const auto id = "p" + std::to_string(i);
        f.ranks[id] = {mar[i], mfr[i]};
        AttributeSet a;
        a.has_choices = i < 3;
        a.is_mcq = i == 0;
        a.is_training_prompt = i % 2 == 0;
        a.has_extra_text = i == 1 || i == 4;
        f.facts[id] = {a, len[i], i};
    }
    f.ranks["no_prompt"] = {45.0, 45.0};
    return f;
}

} // namespace

TEST_CASE("group ablation matches reference statistics") {
    auto f = six_prompts();
    auto report = group_ablation(f.ranks, f.facts, AblationAxis::Choices);
    REQUIRE(report.groups.size() == 2);
    const auto& with = report.groups[0];
    const auto& without = report.groups[1];
    CHECK(with.label == "with_choices");
    CHECK(with.mar.count == 3);
    // Frozen from numpy (mean, median, quantile linear) over the same lists.
    CHECK(with.mar.mean == doctest::Approx(17.5));
    CHECK(with.mar.median == doctest::Approx(12.5));
    CHECK(with.mar.q1 == doctest::Approx(11.25));
    CHECK(with.mar.q3 == doctest::Approx(21.25));
    CHECK(with.mfr.mean == doctest::Approx(20.5));
    CHECK(with.mfr.q3 == doctest::Approx(26.75));
    CHECK(without.mar.mean == doctest::Approx(45.583333333333336));
    CHECK(without.mar.median == doctest::Approx(41.0));
    CHECK(without.mar.q1 == doctest::Approx(40.625));
    CHECK(without.mar.q3 == doctest::Approx(48.25));
    CHECK(without.mfr.median == doctest::Approx(60.0));
    CHECK(without.mfr.q1 == doctest::Approx(49.5));
    CHECK(without.mfr.q3 == doctest::Approx(60.875));
    // The baseline has no attributes and is left out.
    CHECK(with.prompts.size() + without.prompts.size() == 6);
}

TEST_CASE("mcq axis partitions only prompts with choices") {
    auto f = six_prompts();
    auto report = group_ablation(f.ranks, f.facts, AblationAxis::Mcq);
    CHECK(report.groups[0].prompts == std::vector<std::string>{"p0"});
    CHECK(report.groups[1].prompts == std::vector<std::string>{"p1", "p2"});
}

TEST_CASE("empty ablation group") {
    auto f = six_prompts();
    for (auto& [id, facts] : f.facts) facts.attributes.is_training_prompt = true;
    CHECK(kind_of([&] { group_ablation(f.ranks, f.facts, AblationAxis::TrainingVsUnseen); }) ==
          ErrorKind::EmptyGroup);
}

TEST_CASE("group statistics ignore prompt order") {
    auto f = six_prompts();
    auto base = group_ablation(f.ranks, f.facts, AblationAxis::ExtraText);
    // Renaming changes map order without changing any attribute/rank pairing.
    Fixture g;
    for (const auto& [id, r] : f.ranks) g.ranks["z" + std::string(id.rbegin(), id.rend())] = r;
    for (const auto& [id, x] : f.facts) g.facts["z" + std::string(id.rbegin(), id.rend())] = x;
    auto shuffled = group_ablation(g.ranks, g.facts, AblationAxis::ExtraText);
    for (std::size_t i = 0; i < base.groups.size(); ++i) {
        CHECK(base.groups[i].mar.mean == doctest::Approx(shuffled.groups[i].mar.mean));
        CHECK(base.groups[i].mar.median == shuffled.groups[i].mar.median);
        CHECK(base.groups[i].mfr.q1 == shuffled.groups[i].mfr.q1);
    }
}

TEST_CASE("relative improvement") {
    CHECK(relative_improvement(42.00, 50.25) == doctest::Approx(19.642857142857142));
    CHECK(relative_improvement(7.0, 7.0) == 0.0);
    CHECK(relative_improvement(33.12, 52.25) == doctest::Approx(57.76).epsilon(1e-4));
    CHECK(kind_of([] { relative_improvement(0.0, 3.0); }) == ErrorKind::NonPositiveRank);
    CHECK(kind_of([] { relative_improvement(3.0, -1.0); }) == ErrorKind::NonPositiveRank);

    std::mt19937 rng(8);
    std::uniform_real_distribution<double> u(1.0, 95.0);
    for (int i = 0; i < 500; ++i) {
        const double a = u(rng), b = u(rng);
        const double x = relative_improvement(a, b) / 100.0;
        CHECK(relative_improvement(b, a) == doctest::Approx(-100.0 * x / (1.0 + x)).epsilon(1e-12));
    }
}

TEST_CASE("correlation") {
    std::map<std::string, double> attr, ranks;
    for (int i = 0; i < 5; ++i) {
        attr["p" + std::to_string(i)] = i;
        ranks["p" + std::to_string(i)] = 10.0 - 2.0 * i;
    }
    CHECK(correlate(attr, ranks) == doctest::Approx(-1.0));

    std::map<std::string, double> constant = {{"a", 1}, {"b", 1}, {"c", 1}};
    std::map<std::string, double> r3 = {{"a", 1}, {"b", 2}, {"c", 3}};
    CHECK(kind_of([&] { correlate(constant, r3); }) == ErrorKind::ZeroVariance);
    CHECK(kind_of([&] { correlate(r3, constant); }) == ErrorKind::ZeroVariance);
    CHECK(kind_of([&] { correlate({{"a", 1}, {"b", 2}}, r3); }) == ErrorKind::InsufficientData);

    // Frozen from numpy.corrcoef.
    const std::vector<double> x = {3, 7, 1, 9, 4, 6, 2};
    const std::vector<double> y = {20.5, 11.0, 30.25, 5.0, 18.0, 12.5, 27.0};
    const std::vector<double> b = {1, 0, 1, 0, 0, 1, 1};
    CHECK(pearson(x, y) == doctest::Approx(-0.9868088900611888).epsilon(1e-12));
    CHECK(pearson(b, y) == doctest::Approx(0.6675169575393525).epsilon(1e-12));
    CHECK(point_biserial(b, y) == doctest::Approx(0.6675169575393525).epsilon(1e-12));
}

TEST_CASE("point-biserial equals Pearson on binary attributes") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> u(1.0, 96.0);
    int checked = 0;
    while (checked < 300) {
        const std::size_t n = 3 + rng() % 40;
        std::vector<double> bin(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            bin[i] = static_cast<double>(rng() % 2);
            y[i] = u(rng);
        }
        if (std::count(bin.begin(), bin.end(), 1.0) == 0 || std::count(bin.begin(), bin.end(), 0.0) == 0) continue;
        ++checked;
        CHECK(point_biserial(bin, y) == doctest::Approx(pearson(bin, y)).epsilon(1e-12));
        CHECK(pearson(bin, y) == doctest::Approx(oracle::reference_pearson(bin, y)).epsilon(1e-12));
    }
}

TEST_CASE("spearman correlation ranks both sides") {
    std::map<std::string, double> attr = {{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}};
    std::map<std::string, double> ranks = {{"a", 1}, {"b", 10}, {"c", 100}, {"d", 1000}};
    CHECK(correlate(attr, ranks, CorrelationMethod::Spearman) == doctest::Approx(1.0));
    CHECK(correlate(attr, ranks, CorrelationMethod::Pearson) < 0.99);
}

TEST_CASE("correlation rows over prompt facts") {
    auto f = six_prompts();
    auto rows = correlation_rows(f.ranks, f.facts);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].attribute == CorrelationAttribute::HasChoices);
    // With choices the ranks are lower (better), so the correlation is negative.
    REQUIRE(rows[0].r_accuracy.has_value());
    CHECK(*rows[0].r_accuracy < 0);
    for (const auto& r : rows) {
        if (r.r_accuracy) CHECK(std::abs(*r.r_accuracy) <= 1.0);
        if (r.r_f1) CHECK(std::abs(*r.r_f1) <= 1.0);
    }
}

TEST_CASE("length buckets") {
    LengthBucketing b;
    CHECK(b.bucket_of(14) == 1);
    CHECK(b.label(b.bucket_of(14)) == "[14,21)");
    CHECK(b.label(b.bucket_of(13)) == "<14");
    CHECK(b.label(b.bucket_of(24)) == "[21,25)");
    CHECK(b.label(b.bucket_of(25)) == ">=25");
    CHECK(kind_of([] { LengthBucketing{{}}.validate(); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([] { LengthBucketing{{5, 5}}.validate(); }) == ErrorKind::InvalidConfig);

    auto f = six_prompts();
    std::map<std::string, std::size_t> lengths;
    for (const auto& [id, facts] : f.facts) lengths[id] = facts.length;
    auto rows = length_bucket_summary(lengths, f.ranks, b);
    REQUIRE(rows.size() == 4);
    std::size_t total = 0;
    for (const auto& r : rows) total += r.count;
    CHECK(total == lengths.size());
    CHECK(rows[0].count == 1);
    CHECK(rows[1].count == 2);
    CHECK(rows[1].mar->median == doctest::Approx((12.5 + 30.0) / 2));
    CHECK(rows[2].count == 2);
    CHECK(rows[3].count == 1);

    LengthBucketing wide{{100}};
    auto sparse = length_bucket_summary(lengths, f.ranks, wide);
    CHECK(sparse[1].count == 0);
    CHECK_FALSE(sparse[1].mar.has_value());
}

TEST_CASE("emitters") {
    auto f = six_prompts();
    std::vector<AblationReport> reports = {group_ablation(f.ranks, f.facts, AblationAxis::Choices)};
    auto csv = ablation_csv(reports);
    CHECK(csv.rfind("axis,group,count", 0) == 0);
    CHECK(csv.find("choices,with_choices,3,17.500000,12.500000,11.250000,21.250000") != std::string::npos);
    auto plot = plot_data_csv(f.ranks, f.facts, LengthBucketing{});
    CHECK(plot.find("p1,14,\"[14,21)\",mar,12.500000") != std::string::npos);
    auto summary = analysis_summary_json(reports, correlation_rows(f.ranks, f.facts), {});
    CHECK(summary.find("\"axis\": \"choices\"") != std::string::npos);
}
