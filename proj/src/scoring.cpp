#include "pxeval/scoring.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "pxeval/error.hpp"
#include "pxeval/io.hpp"

namespace pxeval {

using json = nlohmann::json;

double ScoredChoice::sum_logprob() const {
    return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0);
}

void validate_scored(const ScoredChoice& s) {
    if (s.token_logprobs.empty())
        throw Error(ErrorKind::MalformedRecord, "scored continuation has no tokens");
    if (s.tokens.size() != s.token_logprobs.size())
        throw Error(ErrorKind::MalformedRecord, "token/logprob length mismatch");
    for (double lp : s.token_logprobs) {
        if (!std::isfinite(lp))
            throw Error(ErrorKind::NonFiniteLogProb, "log-probability is not finite");
        if (lp > 0.0)
            throw Error(ErrorKind::NonFiniteLogProb, "log-probability " + std::to_string(lp) + " > 0");
    }
}

std::vector<ScoredChoice> Backend::score_batch(const std::vector<ScoreRequest>& requests) const {
    std::vector<ScoredChoice> out;
    out.reserve(requests.size());
    for (const auto& r : requests) out.push_back(score(r.context, r.continuation));
    return out;
}

// ---------------------------------------------------------------------------
// NgramBackend

namespace {
constexpr char16_t kStartSymbol = 256;
}

NgramBackend::NgramBackend(std::string_view corpus, std::size_t order, double smoothing)
    : order_(order), smoothing_(smoothing) {
    if (order_ < 1) throw Error(ErrorKind::InvalidConfig, "n-gram order must be >= 1");
    if (!(smoothing_ > 0.0) || !std::isfinite(smoothing_))
        throw Error(ErrorKind::InvalidConfig, "smoothing constant must be positive");

    std::u16string history(order_ - 1, kStartSymbol);
    for (unsigned char byte : corpus) {
        auto& row = rows_[history];
        ++row.counts[byte];
        ++row.total;
        if (!history.empty()) {
            history.erase(history.begin());
            history.push_back(static_cast<char16_t>(byte));
        }
    }
}

NgramBackend NgramBackend::from_file(const std::filesystem::path& corpus, std::size_t order,
                                     double smoothing) {
    return NgramBackend(io::read_file(corpus), order, smoothing);
}

std::u16string NgramBackend::history_key(std::string_view history) const {
    const std::size_t want = order_ - 1;
    std::u16string key(want, kStartSymbol);
    const std::size_t have = std::min(want, history.size());
    for (std::size_t i = 0; i < have; ++i)
        key[want - have + i] =
            static_cast<char16_t>(static_cast<unsigned char>(history[history.size() - have + i]));
    return key;
}

double NgramBackend::logprob(std::string_view history, unsigned char next) const {
    const double denom_extra = smoothing_ * static_cast<double>(kAlphabetSize);
    auto it = rows_.find(history_key(history));
    if (it == rows_.end()) return std::log(smoothing_ / denom_extra);
    const auto& row = it->second;
    return std::log((static_cast<double>(row.counts[next]) + smoothing_) /
                    (static_cast<double>(row.total) + denom_extra));
}

ScoredChoice NgramBackend::score(std::string_view context, std::string_view continuation) const {
    ScoredChoice out;
    std::string history(context);
    history.reserve(context.size() + continuation.size());
    for (char ch : continuation) {
        out.tokens.emplace_back(1, ch);
        out.token_logprobs.push_back(logprob(history, static_cast<unsigned char>(ch)));
        history.push_back(ch);
    }
    return out;
}

std::string NgramBackend::describe() const {
    std::ostringstream ss;
    ss << "ngram_toy(order=" << order_ << ", k=" << smoothing_ << ")";
    return ss.str();
}

// ---------------------------------------------------------------------------
// HttpBackend

HttpBackend::HttpBackend(std::string base_url, double timeout_seconds, std::size_t batch_size)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds), batch_size_(batch_size) {
    if (base_url_.empty()) throw Error(ErrorKind::InvalidConfig, "http backend needs a base URL");
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    if (batch_size_ < 1) throw Error(ErrorKind::InvalidConfig, "batch size must be >= 1");
    if (!(timeout_seconds_ > 0.0)) throw Error(ErrorKind::InvalidConfig, "timeout must be positive");
}

namespace {

httplib::Client make_client(const std::string& base_url, double timeout_seconds) {
    httplib::Client cli(base_url);
    auto secs = static_cast<time_t>(timeout_seconds);
    auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    return cli;
}

json post_json(const std::string& base_url, double timeout, const std::string& path, const json& body) {
    auto cli = make_client(base_url, timeout);
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res)
        throw Error(ErrorKind::BackendUnavailable,
                    base_url + path + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw Error(ErrorKind::BackendUnavailable,
                    base_url + path + ": HTTP " + std::to_string(res->status) + " " + res->body);
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::BackendUnavailable, base_url + path + ": bad JSON: " + e.what());
    }
}

ScoredChoice scored_from_json(const json& j) {
    if (!j.is_object() || !j.contains("tokens") || !j.contains("logprobs") ||
        !j["tokens"].is_array() || !j["logprobs"].is_array())
        throw Error(ErrorKind::BackendUnavailable, "score response lacks tokens/logprobs");
    ScoredChoice s;
    for (const auto& t : j["tokens"]) {
        if (!t.is_string()) throw Error(ErrorKind::BackendUnavailable, "token is not a string");
        s.tokens.push_back(t.get<std::string>());
    }
    for (const auto& lp : j["logprobs"]) {
        if (!lp.is_number())
            throw Error(ErrorKind::NonFiniteLogProb, "logprob is not a finite number");
        s.token_logprobs.push_back(lp.get<double>());
    }
    return s;
}

} // namespace

ScoredChoice HttpBackend::score(std::string_view context, std::string_view continuation) const {
    json body = {{"context", context}, {"continuation", continuation}};
    return scored_from_json(post_json(base_url_, timeout_seconds_, "/v1/score", body));
}

std::vector<ScoredChoice> HttpBackend::score_batch(const std::vector<ScoreRequest>& requests) const {
    std::vector<ScoredChoice> out;
    out.reserve(requests.size());
    for (std::size_t start = 0; start < requests.size(); start += batch_size_) {
        const std::size_t end = std::min(requests.size(), start + batch_size_);
        json items = json::array();
        for (std::size_t i = start; i < end; ++i)
            items.push_back({{"context", requests[i].context},
                             {"continuation", requests[i].continuation}});
        auto resp = post_json(base_url_, timeout_seconds_, "/v1/score_batch", {{"items", items}});
        if (!resp.contains("results") || !resp["results"].is_array() ||
            resp["results"].size() != end - start)
            throw Error(ErrorKind::BackendUnavailable, "score_batch returned the wrong result count");
        for (const auto& r : resp["results"]) out.push_back(scored_from_json(r));
    }
    return out;
}

std::string HttpBackend::health() const {
    auto cli = make_client(base_url_, timeout_seconds_);
    auto res = cli.Get("/health");
    if (!res)
        throw Error(ErrorKind::BackendUnavailable, base_url_ + "/health: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw Error(ErrorKind::BackendUnavailable, base_url_ + "/health: HTTP " + std::to_string(res->status));
    try {
        auto j = json::parse(res->body);
        if (j.value("status", "") != "ok")
            throw Error(ErrorKind::BackendUnavailable, base_url_ + "/health: status not ok");
        return j.value("model", "");
    } catch (const json::exception& e) {
        throw Error(ErrorKind::BackendUnavailable, base_url_ + "/health: " + e.what());
    }
}

std::string HttpBackend::describe() const { return "http(" + base_url_ + ")"; }

std::unique_ptr<Backend> make_backend(const BackendDescriptor& desc) {
    if (const auto* ng = std::get_if<NgramParams>(&desc.params))
        return std::make_unique<NgramBackend>(NgramBackend::from_file(ng->corpus, ng->order, ng->smoothing));
    const auto& http = std::get<HttpParams>(desc.params);
    return std::make_unique<HttpBackend>(http.base_url, http.timeout_seconds, http.batch_size);
}

// ---------------------------------------------------------------------------
// Decision rules

ScoredChoice score_continuation(const Backend& backend, std::string_view context,
                                std::string_view continuation) {
    if (continuation.empty()) throw Error(ErrorKind::EmptyContinuation, "continuation is empty");
    auto s = backend.score(context, continuation);
    validate_scored(s);
    return s;
}

namespace {

template <class Key>
std::size_t argmax_by(const std::vector<ScoredChoice>& scored, Key key) {
    if (scored.empty()) throw Error(ErrorKind::EmptyScoreList, "no scored choices");
    std::size_t best = 0;
    double best_value = key(scored[0]);
    for (std::size_t i = 1; i < scored.size(); ++i) {
        double v = key(scored[i]);
        if (v > best_value) {
            best = i;
            best_value = v;
        }
    }
    return best;
}

} // namespace

std::size_t predict_eq1(const std::vector<ScoredChoice>& scored) {
    return argmax_by(scored, [](const ScoredChoice& s) { return s.sum_logprob(); });
}

std::size_t predict_eq2(const std::vector<ScoredChoice>& scored) {
    return argmax_by(scored, [](const ScoredChoice& s) {
        if (s.length() == 0) throw Error(ErrorKind::MalformedRecord, "scored choice has length 0");
        return s.mean_logprob();
    });
}

std::string_view to_string(Decision d) { return d == Decision::Eq1 ? "eq1" : "eq2"; }

std::string render_prompt(const PromptTemplate& t, const Example& example, const AlignmentRule& rule,
                          const FixedChoiceTask& task, ChoiceFormat format) {
    std::string choice_string;
    if (t.attributes.has_choices) choice_string = format_choice_string(task.choices, format);
    return render(t, example, rule, choice_string);
}

std::vector<std::string> choice_continuations(const FixedChoiceTask& task, ChoiceFormat format,
                                              McqTarget mcq_target) {
    if (format.style == ChoiceStyle::McqLetters && mcq_target == McqTarget::Letter) {
        std::vector<std::string> letters;
        for (std::size_t i = 0; i < task.choices.size(); ++i) letters.push_back(mcq_letter(i));
        return letters;
    }
    return task.choices;
}

Prediction predict_with_prompt(const Backend& backend, std::string_view rendered_prompt,
                               std::string_view example_id,
                               const std::vector<std::string>& continuations) {
    if (continuations.empty()) throw Error(ErrorKind::EmptyScoreList, "no choices to score");
    std::string context(rendered_prompt);
    context += kContextSeparator;

    std::vector<ScoreRequest> requests;
    requests.reserve(continuations.size());
    for (const auto& c : continuations) {
        if (c.empty()) throw Error(ErrorKind::EmptyContinuation, "choice text is empty");
        requests.push_back({context, c});
    }

    Prediction p;
    p.example_id = example_id;
    p.per_choice = backend.score_batch(requests);
    if (p.per_choice.size() != continuations.size())
        throw Error(ErrorKind::BackendUnavailable, "backend returned the wrong number of scores");
    for (std::size_t i = 0; i < p.per_choice.size(); ++i) {
        validate_scored(p.per_choice[i]);
        p.per_choice[i].choice_index = i;
    }
    p.eq1_index = predict_eq1(p.per_choice);
    p.eq2_index = predict_eq2(p.per_choice);
    return p;
}

Prediction predict_example(const Backend& backend, const PromptTemplate& t, const AlignmentRule& rule,
                           const FixedChoiceTask& task, const Example& example, ChoiceFormat format,
                           McqTarget mcq_target) {
    auto prompt = render_prompt(t, example, rule, task, format);
    return predict_with_prompt(backend, prompt, example.id,
                               choice_continuations(task, format, mcq_target));
}

std::string no_prompt_context(const Example& example) {
    std::string out;
    for (const auto& [key, value] : example.fields) {
        if (!out.empty()) out += ' ';
        out += value;
    }
    return out;
}

} // namespace pxeval
