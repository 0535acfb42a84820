#include <atomic>
#include <cmath>
#include <cstring>
#include <future>
#include <random>
#include <thread>

#include <boost/multiprecision/cpp_int.hpp>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "oracle/oracle.hpp"
#include "pxeval/error.hpp"
#include "pxeval/io.hpp"
#include "pxeval/scoring.hpp"

using namespace pxeval;
using boost::multiprecision::cpp_rational;

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

ScoredChoice sc(std::vector<double> lps) {
    ScoredChoice s;
    s.tokens.resize(lps.size(), "t");
    s.token_logprobs = std::move(lps);
    return s;
}

const std::string& corpus() {
    static const std::string text = io::read_file(PXEVAL_CORPUS);
    return text;
}

} // namespace

TEST_CASE("toy backend matches the brute-force bigram formula") {
    NgramBackend backend(corpus(), 2, 1.0);
    auto s = score_continuation(backend, "ab", "c");
    REQUIRE(s.length() == 1);
    // Frozen from an independent script: count(b,c)=0, count(b,*)=16 -> log(1/272).
    CHECK(s.token_logprobs[0] == doctest::Approx(-5.605802066295998).epsilon(1e-15));
    CHECK(s.token_logprobs[0] == doctest::Approx(oracle::bigram_logprob(corpus(), 'b', 'c')).epsilon(1e-15));
    // count(h,e)=55, count(h,*)=81 -> log(56/337).
    auto he = score_continuation(backend, "th", "e");
    CHECK(he.token_logprobs[0] == doctest::Approx(-1.7947312396172126).epsilon(1e-15));

    auto multi = score_continuation(backend, "The ", "answer");
    REQUIRE(multi.length() == 6);
    CHECK(multi.tokens[0] == "a");
    CHECK(multi.token_logprobs[0] == doctest::Approx(oracle::bigram_logprob(corpus(), ' ', 'a')));
    CHECK(multi.token_logprobs[3] == doctest::Approx(oracle::bigram_logprob(corpus(), 's', 'w')));
}

TEST_CASE("uniform toy backend gives -ln V") {
    NgramBackend uniform("", 2, 1.0);
    auto s = score_continuation(uniform, "anything", "x");
    CHECK(s.token_logprobs[0] == doctest::Approx(-std::log(256.0)).epsilon(1e-15));
}

TEST_CASE("empty continuation is rejected") {
    NgramBackend backend(corpus());
    CHECK(kind_of([&] { score_continuation(backend, "ctx", ""); }) == ErrorKind::EmptyContinuation);
}

TEST_CASE("toy backend distributions sum to one") {
    for (std::size_t order : {1u, 2u, 3u}) {
        for (double k : {1.0, 0.5}) {
            NgramBackend backend(corpus(), order, k);
            for (std::string history : {"", "a", "th", "zq", "\xff\xfe", "The answer"}) {
                double total = 0.0;
                for (int next = 0; next < 256; ++next)
                    total += std::exp(backend.logprob(history, static_cast<unsigned char>(next)));
                CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("order-3 histories are padded at the start") {
    NgramBackend backend("abab", 3, 1.0);
    // Training histories: [S,S]->a, [S,a]->b, [a,b]->a, [b,a]->b.
    CHECK(backend.logprob("", 'a') == doctest::Approx(std::log(2.0 / 257.0)));
    CHECK(backend.logprob("a", 'b') == doctest::Approx(std::log(2.0 / 257.0)));
    CHECK(backend.logprob("ab", 'a') == doctest::Approx(std::log(2.0 / 257.0)));
    CHECK(backend.logprob("xab", 'b') == doctest::Approx(std::log(1.0 / 257.0)));
}

TEST_CASE("eq1 and eq2 decisions") {
    CHECK(predict_eq1({sc({-1.0}), sc({-1.5})}) == 0);
    CHECK(predict_eq1({sc({-2.0}), sc({-2.0})}) == 0);
    CHECK(predict_eq1({sc({-1.0}), sc({-0.5, -0.5, -0.5})}) == 0);

    CHECK(predict_eq2({sc({-1.0}), sc({-0.5}), sc({-2.0})}) == 1);
    CHECK(predict_eq2({sc({-1.0}), sc({-0.5, -0.5, -0.5})}) == 1);
    CHECK(predict_eq2({sc({-3.0})}) == 0);

    CHECK(kind_of([] { predict_eq1({}); }) == ErrorKind::EmptyScoreList);
    CHECK(kind_of([] { predict_eq2({}); }) == ErrorKind::EmptyScoreList);
}

TEST_CASE("invalid log-probabilities are rejected") {
    CHECK(kind_of([] { validate_scored(sc({-1.0, NAN})); }) == ErrorKind::NonFiniteLogProb);
    CHECK(kind_of([] { validate_scored(sc({-INFINITY})); }) == ErrorKind::NonFiniteLogProb);
    CHECK(kind_of([] { validate_scored(sc({0.25})); }) == ErrorKind::NonFiniteLogProb);
    CHECK_NOTHROW(validate_scored(sc({0.0, -3.0})));
}

TEST_CASE("summed logs pick the same argmax as the exact probability product") {
    std::mt19937 rng(5);
    int compared = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const int choices = 2 + static_cast<int>(rng() % 4);
        std::vector<ScoredChoice> scored;
        std::vector<cpp_rational> products;
        for (int c = 0; c < choices; ++c) {
            const int len = 1 + static_cast<int>(rng() % 4);
            cpp_rational product = 1;
            std::vector<double> lps;
            for (int k = 0; k < len; ++k) {
                const int den = 2 + static_cast<int>(rng() % 9);
                const int num = 1 + static_cast<int>(rng() % static_cast<unsigned>(den));
                product *= cpp_rational(num, den);
                lps.push_back(std::log(static_cast<double>(num) / den));
            }
            products.push_back(product);
            scored.push_back(sc(lps));
        }
        std::size_t exact = 0;
        for (std::size_t i = 1; i < products.size(); ++i)
            if (products[i] > products[exact]) exact = i;
        // Skip near-ties that double rounding cannot resolve.
        bool close = false;
        for (std::size_t i = 0; i < products.size(); ++i) {
            if (i == exact) continue;
            cpp_rational ratio = products[i] / products[exact];
            if (ratio > cpp_rational(999999, 1000000)) close = true;
        }
        if (close) continue;
        ++compared;
        CHECK(predict_eq1(scored) == exact);
    }
    CHECK(compared > 1500);
}

TEST_CASE("length-one choices make both rules agree") {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> lp(-8.0, 0.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<ScoredChoice> scored;
        const int choices = 1 + static_cast<int>(rng() % 6);
        for (int c = 0; c < choices; ++c) scored.push_back(sc({rng() % 5 == 0 ? -1.0 : lp(rng)}));
        CHECK(predict_eq1(scored) == predict_eq2(scored));
    }
}

TEST_CASE("raising the winner's log-probability keeps it winning") {
    std::mt19937 rng(13);
    std::uniform_real_distribution<double> lp(-6.0, 0.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<ScoredChoice> scored;
        const int choices = 2 + static_cast<int>(rng() % 4);
        for (int c = 0; c < choices; ++c) {
            std::vector<double> lps(1 + rng() % 4);
            for (auto& v : lps) v = lp(rng);
            scored.push_back(sc(lps));
        }
        for (auto rule : {predict_eq1, predict_eq2}) {
            auto copy = scored;
            const auto winner = rule(copy);
            auto& target = copy[winner].token_logprobs[rng() % copy[winner].length()];
            target = std::min(0.0, target + std::uniform_real_distribution<double>(0.0, 2.0)(rng));
            CHECK(rule(copy) == winner);
        }
    }
}

TEST_CASE("toy scores are bit-identical across threads") {
    NgramBackend backend(corpus());
    const std::string ctx = "Question: what is the sentiment? ";
    auto reference = backend.score(ctx, "positive");
    std::vector<std::future<ScoredChoice>> futures;
    for (int i = 0; i < 16; ++i)
        futures.push_back(std::async(std::launch::async, [&] { return backend.score(ctx, "positive"); }));
    for (auto& f : futures) {
        auto s = f.get();
        CHECK(s.tokens == reference.tokens);
        CHECK(std::memcmp(s.token_logprobs.data(), reference.token_logprobs.data(),
                          sizeof(double) * reference.length()) == 0);
    }
}

TEST_CASE("predict_example on a constructed two-choice task") {
    // The corpus only continues "is " with "yes", so the gold choice wins under eq2 everywhere.
    NgramBackend backend("is yes. is yes. is yes.");
    FixedChoiceTask task{"t", Category::Classification, {"yes", "qqq"}, {}};
    for (int i = 0; i < 5; ++i) task.examples.push_back({"e" + std::to_string(i), {{"text", "it is"}}, 0});
    auto tmpl = make_template("p", "s", Category::Classification, "Q: {{premise}}", {});
    AlignmentRule rule;
    rule.field_map = {{"text", Placeholder::Premise}};
    for (const auto& ex : task.examples) {
        auto p = predict_example(backend, tmpl, rule, task, ex, {});
        CHECK(p.eq2_index == 0);
        CHECK(p.per_choice.size() == 2);
        CHECK(p.per_choice[1].choice_index == 1);
    }
}

TEST_CASE("mcq prompts score choice text by default and letters on request") {
    NgramBackend backend(corpus());
    FixedChoiceTask task{"t", Category::Entailment, {"yes", "no", "maybe"}, {{"e", {{"p", "x"}}, 2}}};
    auto tmpl = make_template("m", "s", Category::Entailment, "{{premise}} Options: {{choice_string}}",
                              {true, true, false, false});
    AlignmentRule rule;
    rule.field_map = {{"p", Placeholder::Premise}};
    const ChoiceFormat mcq{ChoiceStyle::McqLetters};
    CHECK(render_prompt(tmpl, task.examples[0], rule, task, mcq) == "x Options: A) yes B) no C) maybe");
    auto text = predict_example(backend, tmpl, rule, task, task.examples[0], mcq);
    CHECK(text.per_choice[2].length() == 5);
    auto letters = predict_example(backend, tmpl, rule, task, task.examples[0], mcq, McqTarget::Letter);
    CHECK(letters.per_choice[2].length() == 1);
    CHECK(letters.per_choice[2].token_logprobs[0] ==
          doctest::Approx(oracle::bigram_logprob(corpus(), ' ', 'C')));
}

namespace {

// Minimal in-process implementation of the scoring wire protocol backed by a toy model.
class FakeScoringServer {
public:
    explicit FakeScoringServer(const NgramBackend& model) : model_(model) {
        server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok","model":"toy"})", "application/json");
        });
        server_.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
            if (fail) {
                res.status = 500;
                res.set_content(R"({"error":"inference failed"})", "application/json");
                return;
            }
            auto j = nlohmann::json::parse(req.body);
            if (j["continuation"].get<std::string>().empty()) {
                res.status = 400;
                return;
            }
            res.set_content(encode(j).dump(), "application/json");
        });
        server_.Post("/v1/score_batch", [this](const httplib::Request& req, httplib::Response& res) {
            ++batch_calls;
            auto j = nlohmann::json::parse(req.body);
            nlohmann::json results = nlohmann::json::array();
            for (const auto& item : j["items"]) results.push_back(encode(item));
            res.set_content(nlohmann::json{{"results", results}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeScoringServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    std::atomic<int> batch_calls{0};
    std::atomic<bool> fail{false};

private:
    nlohmann::json encode(const nlohmann::json& item) const {
        // Tokens are hex-escaped bytes so arbitrary UTF-8 survives JSON.
        auto s = model_.score(item["context"].get<std::string>(), item["continuation"].get<std::string>());
        nlohmann::json tokens = nlohmann::json::array();
        for (std::size_t i = 0; i < s.tokens.size(); ++i) tokens.push_back("b" + std::to_string(i));
        return {{"tokens", tokens}, {"logprobs", s.token_logprobs}};
    }

    const NgramBackend& model_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

} // namespace

TEST_CASE("http backend speaks the score protocol") {
    NgramBackend model(corpus());
    FakeScoringServer server(model);
    HttpBackend http(server.url(), 5.0, 2);

    CHECK(http.health() == "toy");
    auto single = score_continuation(http, "ab", "cd");
    auto local = model.score("ab", "cd");
    REQUIRE(single.length() == 2);
    CHECK(single.token_logprobs == local.token_logprobs);

    std::vector<std::string> conts = {"yes", "no", "maybe", "x", "positive"};
    std::vector<ScoreRequest> reqs;
    for (const auto& c : conts) reqs.push_back({"ctx ", c});
    auto batch = http.score_batch(reqs);
    CHECK(server.batch_calls == 3);  // 5 items at batch size 2
    REQUIRE(batch.size() == conts.size());
    for (std::size_t i = 0; i < conts.size(); ++i)
        CHECK(batch[i].token_logprobs == model.score("ctx ", conts[i]).token_logprobs);

    CHECK(kind_of([&] { http.score("ctx", ""); }) == ErrorKind::BackendUnavailable);
    server.fail = true;
    CHECK(kind_of([&] { http.score("ctx", "x"); }) == ErrorKind::BackendUnavailable);
}

TEST_CASE("unreachable http backend") {
    HttpBackend http("http://127.0.0.1:9", 1.0, 4);
    CHECK(kind_of([&] { http.health(); }) == ErrorKind::BackendUnavailable);
    CHECK(kind_of([&] { score_continuation(http, "a", "b"); }) == ErrorKind::BackendUnavailable);
}
