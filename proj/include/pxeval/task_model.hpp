#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>


namespace pxeval {

enum class Category { Classification, Entailment, QA };

std::string_view to_string(Category c);
Category parse_category(std::string_view s);

/// One labelled input. Fields keep file order so the no-prompt baseline
/// concatenates them reproducibly.
struct Example {
    std::string id;
    std::vector<std::pair<std::string, std::string>> fields;
    std::size_t gold_index = 0;

    const std::string* field(std::string_view name) const;
};

/// A multiple-choice task whose choice set is the same for every example.
struct FixedChoiceTask {
    std::string id;
    Category category = Category::Classification;
    std::vector<std::string> choices;
    std::vector<Example> examples;

    std::size_t num_choices() const { return choices.size(); }
};

enum class ChoiceStyle { Plain, McqLetters };

struct ChoiceFormat {
    ChoiceStyle style = ChoiceStyle::Plain;
};

inline constexpr std::size_t kMaxMcqChoices = 26;

/// Checks every FixedChoiceTask invariant; throws pxeval::Error.
void validate_task(const FixedChoiceTask& task);

FixedChoiceTask parse_task(std::string_view jsonl, std::string_view source = "<memory>");
FixedChoiceTask load_task(const std::filesystem::path& path);

std::string serialize_task(const FixedChoiceTask& task);
void save_task(const FixedChoiceTask& task, const std::filesystem::path& path);

/// `"A", "B" or "C"` for Plain, `A) x B) y` for McqLetters.
std::string format_choice_string(const std::vector<std::string>& choices, ChoiceFormat format);

/// Letter label used inside MCQ prompts ("A" for index 0).
std::string mcq_letter(std::size_t index);

} // namespace pxeval
