// pxeval: evaluate generalized prompt templates across fixed-choice tasks.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pxeval/harness.hpp"

namespace fs = std::filesystem;
using namespace pxeval;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitBackend = 2;

struct Common {
    std::string config;
    std::string backend_url;
    std::string out;
};

RunConfig resolve_config(const Common& c) {
    auto config = load_run_config(c.config);
    std::string url = c.backend_url;
    if (url.empty())
        if (const char* env = std::getenv(kBackendUrlEnv)) url = env;
    if (!url.empty()) override_backend_url(config, url);
    if (!c.out.empty()) config.out_dir = c.out;
    return config;
}

fs::path locate_run(const Common& c, const std::string& run_dir) {
    if (!run_dir.empty()) return run_dir;
    if (c.config.empty()) throw Error(ErrorKind::MissingRun, "pass --run <dir> or --config <path>");
    return run_directory(resolve_config(c));
}

Decision pick_decision(const LoadedRun& run, const std::string& requested) {
    if (!requested.empty()) return parse_decision(requested);
    for (auto d : run.decisions)
        if (d == Decision::Eq2) return d;
    return run.decisions.front();
}

void print_stage(const StageOutput& out) {
    for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& f : out.files) std::cout << f.string() << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot prompt transfer evaluation harness"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Run config (JSON)");
        sub->add_option("--backend-url", common.backend_url,
                        std::string("Scoring service URL (falls back to $") + kBackendUrlEnv + ")");
        sub->add_option("--out", common.out, "Output directory for runs");
    };

    auto* eval = app.add_subcommand("eval", "Evaluate every (prompt, task) pair");
    add_common(eval);
    std::optional<std::size_t> parallelism;
    eval->add_option("-j,--parallelism", parallelism, "Concurrent scoring jobs");

    std::string run_dir, decision;
    bool plot_data = false;
    auto add_run = [&](CLI::App* sub) {
        add_common(sub);
        sub->add_option("--run", run_dir, "Run directory produced by eval");
        sub->add_option("--decision", decision, "eq1 or eq2 (default eq2 when available)");
    };
    auto* rank = app.add_subcommand("rank", "Fractional ranks and MAR/MFR per prompt");
    add_run(rank);
    auto* ablate = app.add_subcommand("ablate", "Rank statistics grouped by prompt attribute");
    add_run(ablate);
    auto* correlate = app.add_subcommand("correlate", "Attribute / rank correlations");
    add_run(correlate);
    auto* report = app.add_subcommand("report", "All post-processing stages");
    add_run(report);
    report->add_flag("--plot-data", plot_data, "Also write tidy CSV for plotting");

    auto* render_cmd = app.add_subcommand("render", "Print one rendered prompt");
    std::string prompts_path, task_path, rules_path, template_id, example_id, style;
    render_cmd->add_option("--prompts", prompts_path, "Prompt set (JSON Lines)")->required();
    render_cmd->add_option("--task", task_path, "Task file (JSON Lines)")->required();
    render_cmd->add_option("--rules", rules_path, "Alignment rules (JSON)")->required();
    render_cmd->add_option("--template", template_id, "Template id")->required();
    render_cmd->add_option("--example", example_id, "Example id (default: first)");
    render_cmd->add_option("--style", style, "plain or mcq (default from template attributes)");

    auto* validate = app.add_subcommand("validate", "Lint prompt, task and rule files");
    std::vector<std::string> task_paths;
    add_common(validate);
    validate->add_option("--prompts", prompts_path, "Prompt set (JSON Lines)");
    validate->add_option("--task", task_paths, "Task file(s)");
    validate->add_option("--rules", rules_path, "Alignment rules (JSON)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (eval->parsed()) {
            if (common.config.empty()) throw Error(ErrorKind::InvalidConfig, "eval needs --config");
            auto config = resolve_config(common);
            if (parallelism) config.parallelism = *parallelism;
            auto record = run_eval(config);
            std::size_t resumed = 0;
            for (const auto& p : record.pairs) {
                resumed += p.resumed;
                if (!p.ok)
                    std::cerr << "failed: " << p.prompt_id << " x " << p.task_id << ": " << p.message << "\n";
            }
            std::cout << record.run_dir.string() << "\n"
                      << record.pairs.size() << " pairs, " << record.failed_pairs() << " failed, "
                      << resumed << " resumed\n";
            return record.exit_code();
        }
        if (render_cmd->parsed()) {
            auto prompts = load_prompt_set(prompts_path);
            auto task = load_task(task_path);
            auto rules = load_alignment_rules(rules_path);
            const PromptTemplate* tmpl = nullptr;
            for (const auto& p : prompts)
                if (p.id == template_id) tmpl = &p;
            if (tmpl == nullptr) throw Error(ErrorKind::MissingField, "no template '" + template_id + "'");
            const Example* example = task.examples.empty() ? nullptr : &task.examples.front();
            if (!example_id.empty()) {
                example = nullptr;
                for (const auto& ex : task.examples)
                    if (ex.id == example_id) example = &ex;
            }
            if (example == nullptr) throw Error(ErrorKind::MissingField, "no such example");
            ChoiceFormat format{tmpl->attributes.is_mcq ? ChoiceStyle::McqLetters : ChoiceStyle::Plain};
            if (style == "plain") format.style = ChoiceStyle::Plain;
            else if (style == "mcq") format.style = ChoiceStyle::McqLetters;
            else if (!style.empty()) throw Error(ErrorKind::InvalidConfig, "--style must be plain or mcq");
            const auto& rule = rules.find(tmpl->category, task.category);
            std::cout << render_prompt(*tmpl, *example, rule, task, format) << "\n";
            return kExitOk;
        }
        if (validate->parsed()) {
            int problems = 0;
            auto check = [&](const std::string& what, auto&& fn) {
                try {
                    fn();
                    std::cout << "ok: " << what << "\n";
                } catch (const Error& e) {
                    std::cerr << "error: " << what << ": " << e.what() << "\n";
                    ++problems;
                }
            };
            if (!common.config.empty()) {
                check(common.config, [&] {
                    auto config = resolve_config(common);
                    prompts_path = config.prompts.string();
                    rules_path = config.rules.string();
                    for (const auto& t : config.tasks) task_paths.push_back(t.string());
                });
            }
            if (prompts_path.empty() && task_paths.empty() && rules_path.empty())
                throw Error(ErrorKind::InvalidConfig, "nothing to validate");
            if (!prompts_path.empty()) check(prompts_path, [&] { load_prompt_set(prompts_path); });
            for (const auto& t : task_paths) check(t, [&] { load_task(t); });
            if (!rules_path.empty()) check(rules_path, [&] { load_alignment_rules(rules_path); });
            return problems == 0 ? kExitOk : kExitValidation;
        }

        auto run = load_run(locate_run(common, run_dir));
        if (rank->parsed()) {
            print_stage(run_rank(run));
        } else if (ablate->parsed()) {
            print_stage(run_ablate(run, pick_decision(run, decision)));
        } else if (correlate->parsed()) {
            print_stage(run_correlate(run, pick_decision(run, decision)));
        } else if (report->parsed()) {
            print_stage(run_report(run, pick_decision(run, decision), plot_data));
        }
        return kExitOk;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::BackendUnavailable ? kExitBackend : kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}
