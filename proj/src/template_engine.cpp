#include "pxeval/template_engine.hpp"

#include <algorithm>
#include <array>

#include "json.hpp"
#include "pxeval/error.hpp"
#include "pxeval/io.hpp"

namespace pxeval {

using ojson = nlohmann::ordered_json;

std::string_view to_string(Placeholder p) {
    switch (p) {
    case Placeholder::Premise: return "premise";
    case Placeholder::Hypothesis: return "hypothesis";
    case Placeholder::Domain: return "domain";
    case Placeholder::ChoiceString: return "choice_string";
    }
    return "?";
}

Placeholder parse_placeholder(std::string_view name) {
    if (name == "premise") return Placeholder::Premise;
    if (name == "hypothesis") return Placeholder::Hypothesis;
    if (name == "domain") return Placeholder::Domain;
    if (name == "choice_string") return Placeholder::ChoiceString;
    throw Error(ErrorKind::UnknownPlaceholder, "'" + std::string(name) + "'");
}

namespace {

std::string_view trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

} // namespace

std::vector<PlaceholderSpan> scan_placeholders(std::string_view body) {
    std::vector<PlaceholderSpan> spans;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto open = body.find("{{", pos);
        auto stray_close = body.find("}}", pos);
        if (stray_close != std::string_view::npos &&
            (open == std::string_view::npos || stray_close < open))
            throw Error(ErrorKind::UnknownPlaceholder,
                        "unmatched '}}' at offset " + std::to_string(stray_close));
        if (open == std::string_view::npos) break;
        auto close = body.find("}}", open + 2);
        if (close == std::string_view::npos)
            throw Error(ErrorKind::UnknownPlaceholder,
                        "unterminated '{{' at offset " + std::to_string(open));
        auto inner = body.substr(open + 2, close - open - 2);
        if (inner.find("{{") != std::string_view::npos)
            throw Error(ErrorKind::UnknownPlaceholder,
                        "nested '{{' at offset " + std::to_string(open));
        spans.push_back({open, close + 2 - open, parse_placeholder(trim(inner))});
        pos = close + 2;
    }
    return spans;
}

namespace {

std::string remove_spans(std::string_view body, const std::vector<PlaceholderSpan>& spans,
                         std::string_view replacement) {
    std::string out;
    std::size_t cursor = 0;
    for (const auto& span : spans) {
        out.append(body.substr(cursor, span.offset - cursor));
        out.append(replacement);
        cursor = span.offset + span.length;
    }
    out.append(body.substr(cursor));
    return out;
}

} // namespace

PromptTemplate make_template(std::string id, std::string source_task, Category category,
                             std::string body, AttributeSet attributes) {
    if (id.empty()) throw Error(ErrorKind::MalformedRecord, "template id is empty");
    PromptTemplate t;
    t.id = std::move(id);
    t.source_task = std::move(source_task);
    t.category = category;
    t.body = std::move(body);
    t.attributes = attributes;
    try {
        t.spans = scan_placeholders(t.body);
    } catch (const Error& e) {
        throw Error(e.kind(), "template '" + t.id + "': " + e.what());
    }
    for (const auto& span : t.spans) t.placeholders.insert(span.name);

    if (trim(remove_spans(t.body, t.spans, " ")).empty())
        throw Error(ErrorKind::EmptyBody, "template '" + t.id + "' has no literal text");
    if (attributes.is_mcq && !attributes.has_choices)
        throw Error(ErrorKind::InvalidAttributes, "template '" + t.id + "' is_mcq without has_choices");
    if (attributes.has_choices != t.placeholders.contains(Placeholder::ChoiceString))
        throw Error(ErrorKind::InvalidAttributes,
                    "template '" + t.id + "' has_choices disagrees with its choice_string slot");
    return t;
}

namespace {

bool require_bool(const ojson& attrs, const char* key, const std::string& id) {
    if (!attrs.contains(key) || !attrs[key].is_boolean())
        throw Error(ErrorKind::MalformedRecord,
                    "template '" + id + "' attributes lack boolean '" + key + "'");
    return attrs[key].get<bool>();
}

std::string require_string(const ojson& rec, const char* key) {
    if (!rec.contains(key) || !rec[key].is_string())
        throw Error(ErrorKind::MalformedRecord, std::string("template record lacks string '") + key + "'");
    return rec[key].get<std::string>();
}

PromptTemplate template_from_json(const ojson& rec) {
    if (!rec.is_object()) throw Error(ErrorKind::MalformedRecord, "template record is not an object");
    auto id = require_string(rec, "id");
    auto source_task = require_string(rec, "source_task");
    auto category = parse_category(require_string(rec, "category"));
    auto body = require_string(rec, "body");
    if (!rec.contains("attributes") || !rec["attributes"].is_object())
        throw Error(ErrorKind::MalformedRecord, "template '" + id + "' lacks object 'attributes'");
    const auto& a = rec["attributes"];
    AttributeSet attrs{require_bool(a, "has_choices", id), require_bool(a, "is_mcq", id),
                       require_bool(a, "is_training_prompt", id),
                       require_bool(a, "has_extra_text", id)};
    return make_template(std::move(id), std::move(source_task), category, std::move(body), attrs);
}

} // namespace

PromptTemplate parse_template(std::string_view record) {
    ojson rec;
    try {
        rec = ojson::parse(record);
    } catch (const ojson::parse_error& e) {
        throw Error(ErrorKind::MalformedRecord, e.what());
    }
    return template_from_json(rec);
}

std::string serialize_template(const PromptTemplate& t) {
    ojson rec;
    rec["id"] = t.id;
    rec["source_task"] = t.source_task;
    rec["category"] = to_string(t.category);
    rec["body"] = t.body;
    rec["attributes"] = {{"has_choices", t.attributes.has_choices},
                         {"is_mcq", t.attributes.is_mcq},
                         {"is_training_prompt", t.attributes.is_training_prompt},
                         {"has_extra_text", t.attributes.has_extra_text}};
    return rec.dump();
}

std::vector<PromptTemplate> parse_prompt_set(std::string_view jsonl, std::string_view source) {
    std::vector<PromptTemplate> out;
    std::set<std::string> ids;
    for (const auto& line : io::nonblank_lines(jsonl)) {
        PromptTemplate t;
        try {
            t = parse_template(line.text);
        } catch (const Error& e) {
            throw Error(e.kind(), std::string(source) + ":" + std::to_string(line.number) + ": " + e.what());
        }
        if (!ids.insert(t.id).second)
            throw Error(ErrorKind::DuplicateId, std::string(source) + ":" +
                                                    std::to_string(line.number) + ": '" + t.id + "'");
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<PromptTemplate> load_prompt_set(const std::filesystem::path& path) {
    return parse_prompt_set(io::read_file(path), path.string());
}

void validate_rule(const AlignmentRule& rule) {
    std::set<Placeholder> mapped;
    for (const auto& [field, slot] : rule.field_map) {
        if (slot == Placeholder::ChoiceString)
            throw Error(ErrorKind::InvalidConfig, "choice_string cannot be fed from task field '" + field + "'");
        if (!mapped.insert(slot).second)
            throw Error(ErrorKind::InvalidConfig,
                        "slot '" + std::string(to_string(slot)) + "' mapped from two task fields");
    }
    for (const auto& [slot, text] : rule.extra_text) {
        if (slot == Placeholder::ChoiceString)
            throw Error(ErrorKind::InvalidConfig, "choice_string cannot take extra text");
        if (mapped.contains(slot))
            throw Error(ErrorKind::InvalidConfig,
                        "slot '" + std::string(to_string(slot)) + "' covered by both field_map and extra_text");
    }
}

void AlignmentRules::add(AlignmentRule rule) {
    validate_rule(rule);
    auto key = std::make_pair(rule.template_category, rule.task_category);
    if (rules_.contains(key))
        throw Error(ErrorKind::DuplicateId, "alignment rule for (" +
                                                std::string(to_string(key.first)) + ", " +
                                                std::string(to_string(key.second)) + ") repeated");
    rules_.emplace(key, std::move(rule));
}

bool AlignmentRules::contains(Category template_category, Category task_category) const {
    return rules_.contains({template_category, task_category});
}

const AlignmentRule& AlignmentRules::find(Category template_category, Category task_category) const {
    auto it = rules_.find({template_category, task_category});
    if (it == rules_.end())
        throw Error(ErrorKind::MissingRule, "no alignment rule for template category " +
                                                std::string(to_string(template_category)) +
                                                " on task category " +
                                                std::string(to_string(task_category)));
    return it->second;
}

AlignmentRules parse_alignment_rules(std::string_view json_text) {
    ojson doc;
    try {
        doc = ojson::parse(json_text);
    } catch (const ojson::parse_error& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("alignment rules: ") + e.what());
    }
    const ojson& list = doc.is_object() && doc.contains("rules") ? doc["rules"] : doc;
    if (!list.is_array()) throw Error(ErrorKind::InvalidConfig, "alignment rules must be an array");

    AlignmentRules rules;
    for (const auto& rec : list) {
        if (!rec.is_object() || !rec.contains("template_category") || !rec.contains("task_category"))
            throw Error(ErrorKind::InvalidConfig, "rule lacks template_category/task_category");
        AlignmentRule rule;
        try {
            rule.template_category = parse_category(rec["template_category"].get<std::string>());
            rule.task_category = parse_category(rec["task_category"].get<std::string>());
            if (rec.contains("field_map"))
                for (const auto& [field, slot] : rec["field_map"].items())
                    rule.field_map.emplace(field, parse_placeholder(slot.get<std::string>()));
            if (rec.contains("extra_text"))
                for (const auto& [slot, text] : rec["extra_text"].items())
                    rule.extra_text.emplace(parse_placeholder(slot), text.get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::InvalidConfig, std::string("alignment rule: ") + e.what());
        }
        rules.add(std::move(rule));
    }
    return rules;
}

AlignmentRules load_alignment_rules(const std::filesystem::path& path) {
    return parse_alignment_rules(io::read_file(path));
}

std::string render(const PromptTemplate& t, const Example& example, const AlignmentRule& rule,
                   std::string_view choice_string) {
    auto fill = [&](Placeholder slot) -> std::string_view {
        if (slot == Placeholder::ChoiceString) {
            if (choice_string.empty())
                throw Error(ErrorKind::UncoveredPlaceholder,
                            "template '" + t.id + "' needs a choice string");
            return choice_string;
        }
        for (const auto& [field, target] : rule.field_map) {
            if (target != slot) continue;
            const auto* value = example.field(field);
            if (value == nullptr)
                throw Error(ErrorKind::MissingField, "example '" + example.id + "' lacks field '" +
                                                         field + "' for template '" + t.id + "'");
            return *value;
        }
        if (auto it = rule.extra_text.find(slot); it != rule.extra_text.end()) return it->second;
        throw Error(ErrorKind::UncoveredPlaceholder, "template '" + t.id + "' slot '" +
                                                         std::string(to_string(slot)) +
                                                         "' has no mapping");
    };

    std::string out;
    out.reserve(t.body.size() + 64);
    std::size_t cursor = 0;
    for (const auto& span : t.spans) {
        out.append(t.body, cursor, span.offset - cursor);
        out.append(fill(span.name));
        cursor = span.offset + span.length;
    }
    out.append(t.body, cursor, std::string::npos);
    return out;
}

namespace {

// Length in bytes of a Unicode whitespace sequence starting at s, or 0.
std::size_t whitespace_len(std::string_view s) {
    auto u = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
    if (s.empty()) return 0;
    switch (u(0)) {
    case ' ': case '\t': case '\n': case '\v': case '\f': case '\r': return 1;
    default: break;
    }
    if (s.size() >= 2 && u(0) == 0xC2 && (u(1) == 0x85 || u(1) == 0xA0)) return 2;
    if (s.size() >= 3) {
        if (u(0) == 0xE1 && u(1) == 0x9A && u(2) == 0x80) return 3;  // U+1680
        if (u(0) == 0xE2 && u(1) == 0x80 &&
            ((u(2) >= 0x80 && u(2) <= 0x8A) || u(2) == 0xA8 || u(2) == 0xA9 || u(2) == 0xAF))
            return 3;
        if (u(0) == 0xE2 && u(1) == 0x81 && u(2) == 0x9F) return 3;  // U+205F
        if (u(0) == 0xE3 && u(1) == 0x80 && u(2) == 0x80) return 3;  // U+3000
    }
    return 0;
}

constexpr std::array<std::string_view, 12> kUnicodePunct = {
    "“", "”", "‘", "’", "«", "»",
    "…", "–", "—", "¿", "¡", "·"};

std::string_view strip_punct(std::string_view tok) {
    bool changed = true;
    while (changed && !tok.empty()) {
        changed = false;
        if (std::ispunct(static_cast<unsigned char>(tok.front()))) {
            tok.remove_prefix(1);
            changed = true;
        } else if (std::ispunct(static_cast<unsigned char>(tok.back()))) {
            tok.remove_suffix(1);
            changed = true;
        } else {
            for (auto p : kUnicodePunct) {
                if (tok.starts_with(p)) {
                    tok.remove_prefix(p.size());
                    changed = true;
                    break;
                }
                if (tok.ends_with(p)) {
                    tok.remove_suffix(p.size());
                    changed = true;
                    break;
                }
            }
        }
    }
    return tok;
}

} // namespace

std::vector<std::string> literal_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        auto tok = strip_punct(text.substr(start, end - start));
        if (tok.empty()) return;
        std::string lowered(tok);
        std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char ch) {
            return static_cast<char>(ch < 0x80 ? std::tolower(ch) : ch);
        });
        tokens.push_back(std::move(lowered));
    };
    while (i < text.size()) {
        if (auto w = whitespace_len(text.substr(i)); w > 0) {
            flush(i);
            i += w;
            start = i;
        } else {
            ++i;
        }
    }
    flush(text.size());
    return tokens;
}

std::string strip_placeholders(const PromptTemplate& t) {
    return remove_spans(t.body, t.spans, " ");
}

std::size_t prompt_token_length(const PromptTemplate& t) {
    return literal_tokens(strip_placeholders(t)).size();
}

std::set<std::string> build_training_vocab(const std::vector<PromptTemplate>& prompts) {
    std::set<std::string> vocab;
    for (const auto& p : prompts) {
        if (!p.attributes.is_training_prompt) continue;
        for (auto& tok : literal_tokens(strip_placeholders(p))) vocab.insert(std::move(tok));
    }
    return vocab;
}

std::size_t shared_token_count(const PromptTemplate& t, const std::set<std::string>& training_vocab) {
    auto toks = literal_tokens(strip_placeholders(t));
    std::set<std::string> distinct(toks.begin(), toks.end());
    return static_cast<std::size_t>(std::count_if(
        distinct.begin(), distinct.end(), [&](const auto& tok) { return training_vocab.contains(tok); }));
}

} // namespace pxeval
