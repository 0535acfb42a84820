#include "pxeval/task_model.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "pxeval/error.hpp"
#include "pxeval/io.hpp"

namespace pxeval {

using ojson = nlohmann::ordered_json;

std::string_view to_string(Category c) {
    switch (c) {
    case Category::Classification: return "Classification";
    case Category::Entailment: return "Entailment";
    case Category::QA: return "QA";
    }
    return "?";
}

Category parse_category(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (lower == "classification") return Category::Classification;
    if (lower == "entailment") return Category::Entailment;
    if (lower == "qa" || lower == "question answering") return Category::QA;
    throw Error(ErrorKind::MalformedRecord, "unknown category '" + std::string(s) + "'");
}

const std::string* Example::field(std::string_view name) const {
    for (const auto& [key, value] : fields)
        if (key == name) return &value;
    return nullptr;
}

void validate_task(const FixedChoiceTask& task) {
    if (task.id.empty()) throw Error(ErrorKind::MalformedRecord, "task id is empty");
    if (task.choices.empty())
        throw Error(ErrorKind::EmptyChoiceSet, "task '" + task.id + "' has no choices");
    if (task.choices.size() < 2)
        throw Error(ErrorKind::EmptyChoiceSet,
                    "task '" + task.id + "' needs at least two choices");
    std::set<std::string_view> seen;
    for (const auto& choice : task.choices) {
        if (choice.empty())
            throw Error(ErrorKind::MalformedRecord, "task '" + task.id + "' has an empty choice");
        if (!seen.insert(choice).second)
            throw Error(ErrorKind::DuplicateChoice,
                        "task '" + task.id + "' repeats choice '" + choice + "'");
    }
    std::set<std::string_view> ids;
    for (const auto& ex : task.examples) {
        if (ex.id.empty()) throw Error(ErrorKind::MalformedRecord, "example with empty id");
        if (!ids.insert(ex.id).second)
            throw Error(ErrorKind::MalformedRecord, "duplicate example id '" + ex.id + "'");
        if (ex.fields.empty())
            throw Error(ErrorKind::MalformedRecord, "example '" + ex.id + "' has no fields");
        if (ex.gold_index >= task.choices.size())
            throw Error(ErrorKind::BadGoldIndex,
                        "example '" + ex.id + "' gold_index " + std::to_string(ex.gold_index) +
                            " outside [0, " + std::to_string(task.choices.size()) + ")");
    }
}

namespace {

[[noreturn]] void malformed(std::string_view source, std::size_t line, const std::string& msg) {
    throw Error(ErrorKind::MalformedRecord,
                std::string(source) + ":" + std::to_string(line) + ": " + msg);
}

Example parse_example(const ojson& rec, std::string_view source, std::size_t line) {
    Example ex;
    if (!rec.contains("id") || !rec["id"].is_string()) malformed(source, line, "missing string 'id'");
    ex.id = rec["id"].get<std::string>();
    if (!rec.contains("fields") || !rec["fields"].is_object())
        malformed(source, line, "missing object 'fields'");
    for (const auto& [key, value] : rec["fields"].items()) {
        if (!value.is_string()) malformed(source, line, "field '" + key + "' is not a string");
        ex.fields.emplace_back(key, value.get<std::string>());
    }
    if (!rec.contains("gold_index") || !rec["gold_index"].is_number_integer())
        malformed(source, line, "missing integer 'gold_index'");
    auto gold = rec["gold_index"].get<long long>();
    if (gold < 0)
        throw Error(ErrorKind::BadGoldIndex,
                    "example '" + ex.id + "' has negative gold_index " + std::to_string(gold));
    ex.gold_index = static_cast<std::size_t>(gold);
    return ex;
}

} // namespace

FixedChoiceTask parse_task(std::string_view jsonl, std::string_view source) {
    auto lines = io::nonblank_lines(jsonl);
    if (lines.empty()) malformed(source, 0, "no header record");

    FixedChoiceTask task;
    bool header = true;
    for (const auto& line : lines) {
        ojson rec;
        try {
            rec = ojson::parse(line.text);
        } catch (const ojson::parse_error& e) {
            malformed(source, line.number, e.what());
        }
        if (!rec.is_object()) malformed(source, line.number, "record is not an object");
        if (header) {
            if (!rec.contains("id") || !rec["id"].is_string())
                malformed(source, line.number, "header lacks string 'id'");
            if (!rec.contains("category") || !rec["category"].is_string())
                malformed(source, line.number, "header lacks string 'category'");
            if (!rec.contains("choices") || !rec["choices"].is_array())
                malformed(source, line.number, "header lacks array 'choices'");
            task.id = rec["id"].get<std::string>();
            task.category = parse_category(rec["category"].get<std::string>());
            for (const auto& c : rec["choices"]) {
                if (!c.is_string()) malformed(source, line.number, "choice is not a string");
                task.choices.push_back(c.get<std::string>());
            }
            header = false;
            continue;
        }
        task.examples.push_back(parse_example(rec, source, line.number));
    }
    validate_task(task);
    return task;
}

FixedChoiceTask load_task(const std::filesystem::path& path) {
    return parse_task(io::read_file(path), path.string());
}

std::string serialize_task(const FixedChoiceTask& task) {
    std::string out;
    ojson header;
    header["id"] = task.id;
    header["category"] = to_string(task.category);
    header["choices"] = task.choices;
    out += header.dump() + "\n";
    for (const auto& ex : task.examples) {
        ojson rec;
        rec["id"] = ex.id;
        rec["fields"] = ojson::object();
        for (const auto& [key, value] : ex.fields) rec["fields"][key] = value;
        rec["gold_index"] = ex.gold_index;
        out += rec.dump() + "\n";
    }
    return out;
}

void save_task(const FixedChoiceTask& task, const std::filesystem::path& path) {
    validate_task(task);
    io::write_file_atomic(path, serialize_task(task));
}

std::string mcq_letter(std::size_t index) {
    if (index >= kMaxMcqChoices)
        throw Error(ErrorKind::TooManyChoices, "no letter for choice " + std::to_string(index));
    return std::string(1, static_cast<char>('A' + index));
}

std::string format_choice_string(const std::vector<std::string>& choices, ChoiceFormat format) {
    if (choices.empty()) throw Error(ErrorKind::EmptyChoiceSet, "no choices to format");
    std::string out;
    switch (format.style) {
    case ChoiceStyle::Plain:
        for (std::size_t i = 0; i < choices.size(); ++i) {
            if (i > 0) out += (i + 1 == choices.size()) ? " or " : ", ";
            out += '"' + choices[i] + '"';
        }
        break;
    case ChoiceStyle::McqLetters:
        if (choices.size() > kMaxMcqChoices)
            throw Error(ErrorKind::TooManyChoices,
                        std::to_string(choices.size()) + " choices exceed the 26 MCQ letters");
        for (std::size_t i = 0; i < choices.size(); ++i) {
            if (i > 0) out += ' ';
            out += mcq_letter(i) + ") " + choices[i];
        }
        break;
    }
    return out;
}

} // namespace pxeval
