#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pxeval/task_model.hpp"

namespace pxeval {

/// The four standardized input slots a generalized prompt may reference.
enum class Placeholder { Premise, Hypothesis, Domain, ChoiceString };

std::string_view to_string(Placeholder p);
/// Throws UnknownPlaceholder for anything outside the four standard names.
Placeholder parse_placeholder(std::string_view name);

struct AttributeSet {
    bool has_choices = false;
    bool is_mcq = false;
    bool is_training_prompt = false;
    bool has_extra_text = false;

    bool operator==(const AttributeSet&) const = default;
};

/// A `{{ name }}` occurrence inside a template body.
struct PlaceholderSpan {
    std::size_t offset;  // of the opening "{{"
    std::size_t length;  // through the closing "}}"
    Placeholder name;
};

struct PromptTemplate {
    std::string id;
    std::string source_task;
    Category category = Category::Classification;
    std::string body;
    AttributeSet attributes;

    // Derived from body at parse time.
    std::vector<PlaceholderSpan> spans;
    std::set<Placeholder> placeholders;

    bool operator==(const PromptTemplate& other) const {
        return id == other.id && source_task == other.source_task &&
               category == other.category && body == other.body &&
               attributes == other.attributes;
    }
};

/// Finds every `{{ ... }}` in body. Inner whitespace is trimmed; unknown
/// names throw UnknownPlaceholder.
std::vector<PlaceholderSpan> scan_placeholders(std::string_view body);

/// Builds and validates a template from its fields.
PromptTemplate make_template(std::string id, std::string source_task, Category category,
                             std::string body, AttributeSet attributes);

/// Parses one JSON object (a single JSON Lines record).
PromptTemplate parse_template(std::string_view record);
std::string serialize_template(const PromptTemplate& t);

/// Parses a whole prompt set, rejecting repeated ids with DuplicateId.
std::vector<PromptTemplate> parse_prompt_set(std::string_view jsonl,
                                             std::string_view source = "<memory>");
std::vector<PromptTemplate> load_prompt_set(const std::filesystem::path& path);

/// How a template of one category is fed from a task of another.
struct AlignmentRule {
    Category template_category = Category::Classification;
    Category task_category = Category::Classification;
    std::map<std::string, Placeholder> field_map;      // task field -> slot
    std::map<Placeholder, std::string> extra_text;     // slot -> literal fill
};

void validate_rule(const AlignmentRule& rule);

class AlignmentRules {
public:
    void add(AlignmentRule rule);
    /// Throws MissingRule when no rule exists for the pair.
    const AlignmentRule& find(Category template_category, Category task_category) const;
    bool contains(Category template_category, Category task_category) const;
    std::size_t size() const { return rules_.size(); }
    const std::map<std::pair<Category, Category>, AlignmentRule>& all() const { return rules_; }

private:
    std::map<std::pair<Category, Category>, AlignmentRule> rules_;
};

AlignmentRules parse_alignment_rules(std::string_view json_text);
AlignmentRules load_alignment_rules(const std::filesystem::path& path);

/// Substitutes every placeholder in a single left-to-right pass; substituted
/// text is never rescanned.
std::string render(const PromptTemplate& t, const Example& example, const AlignmentRule& rule,
                   std::string_view choice_string);

// Token rule used by length and vocabulary analytics: lowercase, split on
// Unicode whitespace, strip surrounding punctuation, drop tokens left empty.
std::vector<std::string> literal_tokens(std::string_view text);

/// Body with each placeholder replaced by a single space.
std::string strip_placeholders(const PromptTemplate& t);

std::size_t prompt_token_length(const PromptTemplate& t);

std::set<std::string> build_training_vocab(const std::vector<PromptTemplate>& prompts);
std::size_t shared_token_count(const PromptTemplate& t, const std::set<std::string>& training_vocab);

} // namespace pxeval
