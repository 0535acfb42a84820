#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "pxeval/task_model.hpp"
#include "pxeval/template_engine.hpp"

namespace pxeval {

/// Log-probabilities of one continuation, token by token, each conditioned on
/// the context and the preceding continuation tokens.
struct ScoredChoice {
    std::size_t choice_index = 0;
    std::vector<std::string> tokens;
    std::vector<double> token_logprobs;

    std::size_t length() const { return token_logprobs.size(); }
    double sum_logprob() const;
    double mean_logprob() const { return sum_logprob() / static_cast<double>(length()); }
};

/// Throws NonFiniteLogProb / MalformedRecord if the invariants do not hold.
void validate_scored(const ScoredChoice& s);

struct ScoreRequest {
    std::string_view context;
    std::string_view continuation;
};

/// Scoring backends must be safe to call from several threads at once.
class Backend {
public:
    virtual ~Backend() = default;
    virtual ScoredChoice score(std::string_view context, std::string_view continuation) const = 0;
    /// Results in request order. The default calls score() per item.
    virtual std::vector<ScoredChoice> score_batch(const std::vector<ScoreRequest>& requests) const;
    virtual std::string describe() const = 0;
};

/// Byte-level n-gram model with add-k smoothing over all 256 byte values.
/// Histories shorter than order-1 are padded with a start symbol outside the
/// byte range.
class NgramBackend final : public Backend {
public:
    static constexpr std::size_t kAlphabetSize = 256;

    NgramBackend(std::string_view corpus, std::size_t order = 2, double smoothing = 1.0);

    static NgramBackend from_file(const std::filesystem::path& corpus, std::size_t order = 2,
                                  double smoothing = 1.0);

    ScoredChoice score(std::string_view context, std::string_view continuation) const override;
    std::string describe() const override;

    /// log P(next | last order-1 bytes of history).
    double logprob(std::string_view history, unsigned char next) const;

    std::size_t order() const { return order_; }
    double smoothing() const { return smoothing_; }

private:
    struct Row {
        std::array<std::uint32_t, kAlphabetSize> counts{};
        std::uint64_t total = 0;
    };

    std::u16string history_key(std::string_view history) const;

    std::size_t order_;
    double smoothing_;
    std::unordered_map<std::u16string, Row> rows_;
};

/// Client for the /v1/score wire protocol.
class HttpBackend final : public Backend {
public:
    HttpBackend(std::string base_url, double timeout_seconds = 30.0, std::size_t batch_size = 16);

    ScoredChoice score(std::string_view context, std::string_view continuation) const override;
    std::vector<ScoredChoice> score_batch(const std::vector<ScoreRequest>& requests) const override;
    std::string describe() const override;

    /// GET /health; returns the model id. Throws BackendUnavailable.
    std::string health() const;

private:
    std::string base_url_;
    double timeout_seconds_;
    std::size_t batch_size_;
};

struct NgramParams {
    std::filesystem::path corpus;
    std::size_t order = 2;
    double smoothing = 1.0;
};

struct HttpParams {
    std::string base_url;
    double timeout_seconds = 30.0;
    std::size_t batch_size = 16;
};

struct BackendDescriptor {
    std::variant<NgramParams, HttpParams> params;
};

std::unique_ptr<Backend> make_backend(const BackendDescriptor& desc);

/// Scores continuation against context through the backend, rejecting empty
/// continuations and invalid log-probabilities.
ScoredChoice score_continuation(const Backend& backend, std::string_view context,
                                std::string_view continuation);

/// Unnormalized rank scoring: argmax of summed log-probabilities. Ties go to
/// the lowest index.
std::size_t predict_eq1(const std::vector<ScoredChoice>& scored);
/// Length-normalized rank scoring: argmax of mean log-probability.
std::size_t predict_eq2(const std::vector<ScoredChoice>& scored);

enum class Decision { Eq1, Eq2 };
std::string_view to_string(Decision d);

struct Prediction {
    std::string example_id;
    std::size_t eq1_index = 0;
    std::size_t eq2_index = 0;
    std::vector<ScoredChoice> per_choice;

    std::size_t decided(Decision d) const { return d == Decision::Eq1 ? eq1_index : eq2_index; }
};

/// Which string is scored as the continuation for an MCQ-formatted prompt.
enum class McqTarget { ChoiceText, Letter };

/// Separator appended to the rendered prompt before the continuation.
inline constexpr std::string_view kContextSeparator = " ";

/// Renders the template for one example, filling choice_string from the
/// task's choices when the template presents them.
std::string render_prompt(const PromptTemplate& t, const Example& example, const AlignmentRule& rule,
                          const FixedChoiceTask& task, ChoiceFormat format);

/// Continuations scored for each choice: the choice texts, or the MCQ
/// letters when requested for an MCQ-formatted prompt.
std::vector<std::string> choice_continuations(const FixedChoiceTask& task, ChoiceFormat format,
                                              McqTarget mcq_target);

/// Renders once, scores every choice, and records both decisions.
Prediction predict_example(const Backend& backend, const PromptTemplate& t, const AlignmentRule& rule,
                           const FixedChoiceTask& task, const Example& example, ChoiceFormat format,
                           McqTarget mcq_target = McqTarget::ChoiceText);

/// Same decisions for an already rendered prompt (used by the no-prompt baseline).
Prediction predict_with_prompt(const Backend& backend, std::string_view rendered_prompt,
                               std::string_view example_id,
                               const std::vector<std::string>& continuations);

/// Raw example input without any template: field values joined by single spaces.
std::string no_prompt_context(const Example& example);

} // namespace pxeval
