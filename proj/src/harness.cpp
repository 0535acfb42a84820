#include "pxeval/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"
#include "pxeval/io.hpp"

namespace pxeval {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

Decision parse_decision(std::string_view name) {
    if (name == "eq1") return Decision::Eq1;
    if (name == "eq2") return Decision::Eq2;
    throw Error(ErrorKind::InvalidConfig, "unknown decision rule '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Config

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("config key '") + key + "': " + e.what());
    }
}

std::string quantile_name(QuantileMethod m) {
    switch (m) {
    case QuantileMethod::Linear: return "linear";
    case QuantileMethod::Lower: return "lower";
    case QuantileMethod::Higher: return "higher";
    case QuantileMethod::Nearest: return "nearest";
    case QuantileMethod::Midpoint: return "midpoint";
    }
    return "linear";
}

std::string correlation_name(CorrelationMethod m) {
    return m == CorrelationMethod::Spearman ? "spearman" : "pearson";
}

AnalysisOptions parse_analysis(const json& a) {
    AnalysisOptions opts;
    if (a.is_null()) return opts;
    if (!a.is_object()) throw Error(ErrorKind::InvalidConfig, "'analysis' must be an object");
    opts.quantile_method = parse_quantile_method(get_or<std::string>(a, "quantile_method", "linear"));
    opts.correlation = parse_correlation_method(get_or<std::string>(a, "correlation", "pearson"));
    if (a.contains("length_cuts"))
        opts.bucketing.boundaries = get_or<std::vector<std::size_t>>(a, "length_cuts", {});
    opts.bucketing.validate();
    return opts;
}

json analysis_json(const AnalysisOptions& a) {
    return {{"quantile_method", quantile_name(a.quantile_method)},
            {"correlation", correlation_name(a.correlation)},
            {"length_cuts", a.bucketing.boundaries}};
}

} // namespace

RunConfig parse_run_config(std::string_view json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::InvalidConfig, e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");

    RunConfig c;
    c.run_name = get_or<std::string>(doc, "run_name", "run");
    if (!doc.contains("prompts") || !doc.contains("tasks") || !doc.contains("rules"))
        throw Error(ErrorKind::InvalidConfig, "config needs 'prompts', 'tasks' and 'rules'");
    c.prompts = resolve(base_dir, get_or<std::string>(doc, "prompts", ""));
    for (const auto& t : get_or<std::vector<std::string>>(doc, "tasks", {}))
        c.tasks.push_back(resolve(base_dir, t));
    c.rules = resolve(base_dir, get_or<std::string>(doc, "rules", ""));

    const json backend = doc.value("backend", json::object());
    const auto kind = get_or<std::string>(backend, "kind", "ngram_toy");
    if (kind == "ngram_toy") {
        NgramParams p;
        if (!backend.contains("corpus"))
            throw Error(ErrorKind::InvalidConfig, "ngram_toy backend needs 'corpus'");
        p.corpus = resolve(base_dir, get_or<std::string>(backend, "corpus", ""));
        p.order = get_or<std::size_t>(backend, "order", 2);
        p.smoothing = get_or<double>(backend, "smoothing", 1.0);
        c.backend.params = p;
    } else if (kind == "http") {
        HttpParams p;
        p.base_url = get_or<std::string>(backend, "url", "");
        p.timeout_seconds = get_or<double>(backend, "timeout_s", 30.0);
        p.batch_size = get_or<std::size_t>(backend, "batch_size", 16);
        c.backend.params = p;
    } else {
        throw Error(ErrorKind::InvalidConfig, "unknown backend kind '" + kind + "'");
    }

    const auto decision = get_or<std::string>(doc, "decision", "both");
    if (decision == "both")
        c.decisions = {Decision::Eq1, Decision::Eq2};
    else
        c.decisions = {parse_decision(decision)};

    const auto target = get_or<std::string>(doc, "mcq_target", "choice_text");
    if (target == "choice_text")
        c.mcq_target = McqTarget::ChoiceText;
    else if (target == "letter")
        c.mcq_target = McqTarget::Letter;
    else
        throw Error(ErrorKind::InvalidConfig, "mcq_target must be 'choice_text' or 'letter'");

    c.include_no_prompt = get_or<bool>(doc, "include_no_prompt", true);
    c.out_dir = resolve(base_dir, get_or<std::string>(doc, "out_dir", "runs"));
    const auto parallelism = get_or<long long>(doc, "parallelism", 1);
    if (parallelism < 1) throw Error(ErrorKind::InvalidConfig, "parallelism must be >= 1");
    c.parallelism = static_cast<std::size_t>(parallelism);
    c.seed = get_or<std::uint64_t>(doc, "seed", 0);
    c.analysis = parse_analysis(doc.value("analysis", json()));
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    auto config = parse_run_config(io::read_file(path), path.parent_path());
    validate_run_config(config);
    return config;
}

void validate_run_config(const RunConfig& c) {
    auto require = [](const fs::path& p, const char* what) {
        if (!fs::exists(p)) throw Error(ErrorKind::InvalidConfig, std::string(what) + " not found: " + p.string());
    };
    require(c.prompts, "prompt set");
    require(c.rules, "alignment rules");
    if (c.tasks.empty()) throw Error(ErrorKind::InvalidConfig, "config lists no tasks");
    for (const auto& t : c.tasks) require(t, "task file");
    if (const auto* ng = std::get_if<NgramParams>(&c.backend.params)) require(ng->corpus, "n-gram corpus");
    if (c.parallelism < 1) throw Error(ErrorKind::InvalidConfig, "parallelism must be >= 1");
    if (c.decisions.empty()) throw Error(ErrorKind::InvalidConfig, "no decision rule selected");
    c.analysis.bucketing.validate();
}

void override_backend_url(RunConfig& config, const std::string& url) {
    HttpParams p;
    if (const auto* existing = std::get_if<HttpParams>(&config.backend.params)) p = *existing;
    p.base_url = url;
    config.backend.params = p;
}

std::string config_hash(const RunConfig& c) {
    ojson doc;
    doc["prompts"] = io::sha256_hex(io::read_file(c.prompts));
    doc["rules"] = io::sha256_hex(io::read_file(c.rules));
    std::vector<std::string> task_hashes;
    for (const auto& t : c.tasks) task_hashes.push_back(io::sha256_hex(io::read_file(t)));
    std::sort(task_hashes.begin(), task_hashes.end());
    doc["tasks"] = task_hashes;
    if (const auto* ng = std::get_if<NgramParams>(&c.backend.params)) {
        doc["backend"] = {{"kind", "ngram_toy"},
                          {"corpus", io::sha256_hex(io::read_file(ng->corpus))},
                          {"order", ng->order},
                          {"smoothing", ng->smoothing}};
    } else {
        doc["backend"] = {{"kind", "http"}, {"url", std::get<HttpParams>(c.backend.params).base_url}};
    }
    std::vector<std::string> decisions;
    for (auto d : c.decisions) decisions.emplace_back(to_string(d));
    doc["decisions"] = decisions;
    doc["mcq_target"] = c.mcq_target == McqTarget::Letter ? "letter" : "choice_text";
    doc["include_no_prompt"] = c.include_no_prompt;
    return io::sha256_hex(doc.dump()).substr(0, 16);
}

std::string run_id(const RunConfig& config) { return config.run_name + "-" + config_hash(config); }

fs::path run_directory(const RunConfig& config) { return config.out_dir / run_id(config); }

fs::path metrics_path(const fs::path& run_dir, const std::string& id) {
    return run_dir / ("metrics." + id + ".jsonl");
}

fs::path ranks_path(const fs::path& run_dir, const std::string& id) {
    return run_dir / ("ranks." + id + ".jsonl");
}

std::size_t RunRecord::failed_pairs() const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return !p.ok; }));
}

int RunRecord::exit_code() const {
    int code = 0;
    for (const auto& p : pairs) {
        if (p.ok) continue;
        if (p.error == ErrorKind::BackendUnavailable) return 2;
        code = 1;
    }
    return code;
}

// ---------------------------------------------------------------------------
// Eval

namespace {

fs::path pair_path(const fs::path& run_dir, const std::string& prompt, const std::string& task) {
    const auto key = io::sha256_hex(prompt + '\0' + task).substr(0, 16);
    return run_dir / "pairs" / (key + ".jsonl");
}

std::string serialize_pair(const std::string& prompt, const std::string& task,
                           const FixedChoiceTask& t, const std::vector<Prediction>& predictions) {
    std::string out;
    ojson header = {{"prompt_id", prompt}, {"task_id", task}, {"n_examples", predictions.size()}};
    out += header.dump() + "\n";
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        ojson rec;
        rec["example_id"] = p.example_id;
        rec["gold"] = t.examples[i].gold_index;
        rec["eq1"] = p.eq1_index;
        rec["eq2"] = p.eq2_index;
        rec["choices"] = ojson::array();
        for (const auto& s : p.per_choice)
            rec["choices"].push_back({{"length", s.length()}, {"token_logprobs", s.token_logprobs}});
        out += rec.dump() + "\n";
    }
    return out;
}

// Returns nullopt if the file is absent or does not match the task.
std::optional<std::vector<Prediction>> load_pair(const fs::path& path, const std::string& prompt,
                                                 const FixedChoiceTask& task) {
    if (!fs::exists(path)) return std::nullopt;
    try {
        const auto text = io::read_file(path);
        auto lines = io::nonblank_lines(text);
        if (lines.empty()) return std::nullopt;
        auto header = json::parse(lines[0].text);
        if (header.at("prompt_id") != prompt || header.at("task_id") != task.id ||
            header.at("n_examples").get<std::size_t>() != task.examples.size() ||
            lines.size() != task.examples.size() + 1)
            return std::nullopt;
        std::vector<Prediction> out;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            auto rec = json::parse(lines[i].text);
            Prediction p;
            p.example_id = rec.at("example_id").get<std::string>();
            if (p.example_id != task.examples[i - 1].id) return std::nullopt;
            p.eq1_index = rec.at("eq1").get<std::size_t>();
            p.eq2_index = rec.at("eq2").get<std::size_t>();
            std::size_t idx = 0;
            for (const auto& c : rec.at("choices")) {
                ScoredChoice s;
                s.choice_index = idx++;
                s.token_logprobs = c.at("token_logprobs").get<std::vector<double>>();
                s.tokens.resize(s.token_logprobs.size());
                p.per_choice.push_back(std::move(s));
            }
            if (p.per_choice.size() != task.num_choices() || p.eq1_index >= task.num_choices() ||
                p.eq2_index >= task.num_choices())
                return std::nullopt;
            out.push_back(std::move(p));
        }
        return out;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

ojson result_json(const EvalResult& r) {
    return {{"prompt_id", r.prompt_id},      {"task_id", r.task_id},
            {"decision", to_string(r.decision)}, {"status", "ok"},
            {"n_examples", r.n_examples},    {"accuracy", r.accuracy},
            {"macro_f1", r.macro_f1},        {"choice_histogram", r.choice_histogram}};
}

struct Entrant {
    std::string id;
    const PromptTemplate* tmpl = nullptr;  // null for the no-prompt baseline
};

} // namespace

RunRecord run_eval(const RunConfig& config) {
    validate_run_config(config);
    auto backend = make_backend(config.backend);
    return run_eval(config, *backend);
}

RunRecord run_eval(const RunConfig& config, const Backend& backend) {
    const auto started = std::chrono::steady_clock::now();
    validate_run_config(config);

    // Config errors abort the run; everything later is isolated per pair.
    const auto prompts = load_prompt_set(config.prompts);
    const auto rules = load_alignment_rules(config.rules);
    std::vector<FixedChoiceTask> tasks;
    std::set<std::string> task_ids;
    for (const auto& path : config.tasks) {
        tasks.push_back(load_task(path));
        if (!task_ids.insert(tasks.back().id).second)
            throw Error(ErrorKind::DuplicateId, "task id '" + tasks.back().id + "' appears twice");
    }
    std::sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

    std::vector<Entrant> entrants;
    for (const auto& p : prompts) {
        if (p.id == kNoPromptId)
            throw Error(ErrorKind::DuplicateId, "template id '" + p.id + "' is reserved for the baseline");
        entrants.push_back({p.id, &p});
    }
    if (config.include_no_prompt) entrants.push_back({std::string(kNoPromptId), nullptr});
    std::sort(entrants.begin(), entrants.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

    RunRecord record;
    record.config_hash = config_hash(config);
    record.run_id = config.run_name + "-" + record.config_hash;
    record.run_dir = config.out_dir / record.run_id;
    fs::create_directories(record.run_dir / "pairs");

    // Snapshot of what analysis needs, so later stages read only the run directory.
    {
        std::string snapshot;
        for (const auto& p : prompts) snapshot += serialize_template(p) + "\n";
        io::write_file_atomic(record.run_dir / "prompts.jsonl", snapshot);
        ojson meta;
        meta["run_id"] = record.run_id;
        meta["config_hash"] = record.config_hash;
        meta["prompt_ids"] = ojson::array();
        for (const auto& e : entrants) meta["prompt_ids"].push_back(e.id);
        meta["task_ids"] = ojson::array();
        for (const auto& t : tasks) meta["task_ids"].push_back(t.id);
        meta["decisions"] = ojson::array();
        for (auto d : config.decisions) meta["decisions"].push_back(to_string(d));
        meta["include_no_prompt"] = config.include_no_prompt;
        meta["mcq_target"] = config.mcq_target == McqTarget::Letter ? "letter" : "choice_text";
        meta["backend"] = backend.describe();
        meta["analysis"] = analysis_json(config.analysis);
        io::write_file_atomic(record.run_dir / "run.json", meta.dump(2) + "\n");
    }

    struct PairWork {
        const Entrant* entrant;
        const FixedChoiceTask* task;
        const AlignmentRule* rule = nullptr;
        ChoiceFormat format;
        std::vector<std::optional<Prediction>> predictions;
        std::vector<std::optional<Error>> errors;
    };

    record.pairs.reserve(entrants.size() * tasks.size());
    std::vector<PairWork> work;
    work.reserve(entrants.size() * tasks.size());
    std::optional<Error> backend_down;
    if (const auto* http = dynamic_cast<const HttpBackend*>(&backend)) {
        try {
            http->health();
        } catch (const Error& e) {
            backend_down = e;
        }
    }

    for (const auto& entrant : entrants) {
        for (const auto& task : tasks) {
            PairOutcome outcome;
            outcome.prompt_id = entrant.id;
            outcome.task_id = task.id;
            if (auto loaded = load_pair(pair_path(record.run_dir, entrant.id, task.id), entrant.id, task)) {
                outcome.ok = true;
                outcome.resumed = true;
                outcome.predictions = std::move(*loaded);
                record.pairs.push_back(std::move(outcome));
                continue;
            }
            if (backend_down) {
                outcome.error = backend_down->kind();
                outcome.message = backend_down->what();
                record.pairs.push_back(std::move(outcome));
                continue;
            }
            PairWork w{&entrant, &task, nullptr, {}, {}, {}};
            if (entrant.tmpl != nullptr) {
                w.format.style = entrant.tmpl->attributes.is_mcq ? ChoiceStyle::McqLetters : ChoiceStyle::Plain;
                try {
                    w.rule = &rules.find(entrant.tmpl->category, task.category);
                    if (w.format.style == ChoiceStyle::McqLetters && task.num_choices() > kMaxMcqChoices)
                        throw Error(ErrorKind::TooManyChoices, "task '" + task.id + "' has too many choices for MCQ letters");
                } catch (const Error& e) {
                    outcome.error = e.kind();
                    outcome.message = e.what();
                    record.pairs.push_back(std::move(outcome));
                    continue;
                }
            }
            w.predictions.resize(task.examples.size());
            w.errors.resize(task.examples.size());
            record.pairs.push_back(std::move(outcome));
            work.push_back(std::move(w));
        }
    }

    // Fan out (pair, example) jobs; each job writes only its own slot.
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t w = 0; w < work.size(); ++w)
        for (std::size_t e = 0; e < work[w].task->examples.size(); ++e) jobs.emplace_back(w, e);

    auto run_job = [&](std::size_t job) {
        auto [w, e] = jobs[job];
        auto& pw = work[w];
        const auto& example = pw.task->examples[e];
        try {
            if (pw.entrant->tmpl == nullptr) {
                pw.predictions[e] = predict_with_prompt(backend, no_prompt_context(example), example.id,
                                                        pw.task->choices);
            } else {
                pw.predictions[e] = predict_example(backend, *pw.entrant->tmpl, *pw.rule, *pw.task, example,
                                                    pw.format, config.mcq_target);
            }
        } catch (const Error& err) {
            pw.errors[e] = err;
        } catch (const std::exception& err) {
            pw.errors[e] = Error(ErrorKind::Io, err.what());
        }
    };

    const std::size_t threads = std::min(config.parallelism, std::max<std::size_t>(jobs.size(), 1));
    if (threads <= 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) run_job(j);
            });
    }

    // Keyed merge back into the sorted pair list.
    std::map<std::pair<std::string, std::string>, PairOutcome*> by_key;
    for (auto& p : record.pairs) by_key[{p.prompt_id, p.task_id}] = &p;
    for (auto& pw : work) {
        auto& outcome = *by_key.at({pw.entrant->id, pw.task->id});
        auto first_error = std::find_if(pw.errors.begin(), pw.errors.end(), [](const auto& e) { return e.has_value(); });
        if (first_error != pw.errors.end()) {
            outcome.error = (*first_error)->kind();
            outcome.message = (*first_error)->what();
            continue;
        }
        outcome.ok = true;
        for (auto& p : pw.predictions) outcome.predictions.push_back(std::move(*p));
        io::write_file_atomic(pair_path(record.run_dir, outcome.prompt_id, outcome.task_id),
                              serialize_pair(outcome.prompt_id, outcome.task_id, *pw.task, outcome.predictions));
    }

    std::map<std::string, const FixedChoiceTask*> task_by_id;
    for (const auto& t : tasks) task_by_id[t.id] = &t;
    std::string metrics;
    for (auto& outcome : record.pairs) {
        if (outcome.ok) {
            for (auto d : config.decisions) {
                outcome.results.push_back(evaluate(outcome.prompt_id, *task_by_id.at(outcome.task_id), outcome.predictions, d));
                metrics += result_json(outcome.results.back()).dump() + "\n";
            }
        } else {
            ojson rec = {{"prompt_id", outcome.prompt_id}, {"task_id", outcome.task_id},
                         {"status", "failed"}, {"error", to_string(outcome.error)},
                         {"message", outcome.message}};
            metrics += rec.dump() + "\n";
        }
    }
    io::write_file_atomic(metrics_path(record.run_dir, record.run_id), metrics);

    record.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::size_t resumed = 0;
    for (const auto& p : record.pairs) resumed += p.resumed;
    ojson timing = {{"elapsed_seconds", record.elapsed_seconds},
                    {"pairs", record.pairs.size()},
                    {"pairs_resumed", resumed},
                    {"pairs_failed", record.failed_pairs()},
                    {"parallelism", config.parallelism}};
    io::write_file_atomic(record.run_dir / "timing.json", timing.dump(2) + "\n");
    return record;
}

// ---------------------------------------------------------------------------
// Post-processing stages

std::vector<EvalResult> LoadedRun::results_for(Decision d) const {
    std::vector<EvalResult> out;
    for (const auto& r : results)
        if (r.decision == d) out.push_back(r);
    return out;
}

bool LoadedRun::complete() const {
    return failed.empty() && results.size() == prompt_ids.size() * task_ids.size() * decisions.size();
}

LoadedRun load_run(const fs::path& run_dir) {
    const auto meta_path = run_dir / "run.json";
    if (!fs::exists(meta_path)) throw Error(ErrorKind::MissingRun, "no run.json in " + run_dir.string());
    LoadedRun run;
    run.run_dir = run_dir;
    try {
        auto meta = json::parse(io::read_file(meta_path));
        run.run_id = meta.at("run_id").get<std::string>();
        run.prompt_ids = meta.at("prompt_ids").get<std::vector<std::string>>();
        run.task_ids = meta.at("task_ids").get<std::vector<std::string>>();
        for (const auto& d : meta.at("decisions")) run.decisions.push_back(parse_decision(d.get<std::string>()));
        run.analysis = parse_analysis(meta.value("analysis", json()));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::MissingRun, "unreadable run.json: " + std::string(e.what()));
    }
    const auto mpath = metrics_path(run_dir, run.run_id);
    if (!fs::exists(mpath)) throw Error(ErrorKind::MissingRun, "no metrics file in " + run_dir.string());
    run.prompts = load_prompt_set(run_dir / "prompts.jsonl");

    const auto metrics_text = io::read_file(mpath);
    for (const auto& line : io::nonblank_lines(metrics_text)) {
        try {
            auto rec = json::parse(line.text);
            if (rec.at("status") != "ok") {
                run.failed.emplace_back(rec.at("prompt_id").get<std::string>(), rec.at("task_id").get<std::string>());
                continue;
            }
            EvalResult r;
            r.prompt_id = rec.at("prompt_id").get<std::string>();
            r.task_id = rec.at("task_id").get<std::string>();
            r.decision = parse_decision(rec.at("decision").get<std::string>());
            r.n_examples = rec.at("n_examples").get<std::size_t>();
            r.accuracy = rec.at("accuracy").get<double>();
            r.macro_f1 = rec.at("macro_f1").get<double>();
            r.choice_histogram = rec.at("choice_histogram").get<std::vector<std::size_t>>();
            run.results.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::MalformedRecord, mpath.string() + ":" + std::to_string(line.number) + ": " + e.what());
        }
    }
    return run;
}

RankTable rank_table_for(const LoadedRun& run, Decision decision, std::vector<std::string>* warnings) {
    auto results = run.results_for(decision);
    if (results.empty())
        throw Error(ErrorKind::MissingRun, "run has no " + std::string(to_string(decision)) + " results");
    if (warnings != nullptr && !run.complete()) {
        Error warn(ErrorKind::IncompleteMatrix,
                   std::to_string(run.failed.size()) + " failed pair(s); ranking over available pairs");
        warnings->push_back(warn.what());
    }
    return build_rank_table(results);
}

StageOutput run_rank(const LoadedRun& run) {
    StageOutput out;
    std::string text;
    for (auto d : run.decisions) {
        auto table = rank_table_for(run, d, out.warnings.empty() ? &out.warnings : nullptr);
        for (const auto& [metric, per_task] :
             {std::pair{"accuracy", &table.accuracy_ranks}, std::pair{"macro_f1", &table.f1_ranks}}) {
            for (const auto& [task, ranks] : *per_task) {
                ojson rec = {{"type", "task_ranks"}, {"decision", to_string(d)}, {"task_id", task},
                             {"metric", metric}, {"ranks", ranks}};
                text += rec.dump() + "\n";
            }
        }
        for (const auto& [prompt, pr] : table.per_prompt) {
            std::size_t n_tasks = 0;
            for (const auto& [task, ranks] : table.accuracy_ranks) n_tasks += ranks.contains(prompt);
            ojson rec = {{"type", "prompt"}, {"decision", to_string(d)}, {"prompt_id", prompt},
                         {"mar", pr.mar}, {"mfr", pr.mfr}, {"n_tasks", n_tasks}};
            text += rec.dump() + "\n";
        }
    }
    const auto path = ranks_path(run.run_dir, run.run_id);
    io::write_file_atomic(path, text);
    out.files.push_back(path);
    return out;
}

namespace {

std::string stage_file(const LoadedRun& run, const std::string& stem, Decision d, const std::string& ext) {
    return stem + "." + std::string(to_string(d)) + "." + run.run_id + ext;
}

} // namespace

StageOutput run_ablate(const LoadedRun& run, Decision decision) {
    StageOutput out;
    auto table = rank_table_for(run, decision, &out.warnings);
    auto facts = prompt_facts(run.prompts);
    std::vector<AblationReport> reports;
    for (auto axis : {AblationAxis::TrainingVsUnseen, AblationAxis::Choices, AblationAxis::Mcq,
                      AblationAxis::ExtraText, AblationAxis::LengthBucket}) {
        try {
            reports.push_back(group_ablation(table.per_prompt, facts, axis, run.analysis.bucketing,
                                             run.analysis.quantile_method));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::EmptyGroup) throw;
            out.warnings.push_back(std::string(to_string(axis)) + " skipped: " + e.what());
        }
    }
    const auto path = run.run_dir / stage_file(run, "ablation", decision, ".csv");
    io::write_file_atomic(path, ablation_csv(reports));
    out.files.push_back(path);
    return out;
}

StageOutput run_correlate(const LoadedRun& run, Decision decision) {
    StageOutput out;
    auto table = rank_table_for(run, decision, &out.warnings);
    auto rows = correlation_rows(table.per_prompt, prompt_facts(run.prompts), run.analysis.correlation);
    const auto path = run.run_dir / stage_file(run, "correlations", decision, ".csv");
    io::write_file_atomic(path, correlation_csv(rows));
    out.files.push_back(path);
    return out;
}

StageOutput run_report(const LoadedRun& run, Decision decision, bool plot_data) {
    StageOutput out = run_rank(run);
    auto merge = [&](StageOutput s) {
        out.files.insert(out.files.end(), s.files.begin(), s.files.end());
        for (auto& w : s.warnings)
            if (std::find(out.warnings.begin(), out.warnings.end(), w) == out.warnings.end())
                out.warnings.push_back(std::move(w));
    };
    merge(run_ablate(run, decision));
    merge(run_correlate(run, decision));

    auto table = rank_table_for(run, decision, nullptr);
    auto facts = prompt_facts(run.prompts);
    std::map<std::string, std::size_t> lengths;
    for (const auto& [id, f] : facts) lengths[id] = f.length;
    auto buckets = length_bucket_summary(lengths, table.per_prompt, run.analysis.bucketing,
                                         run.analysis.quantile_method);
    const auto bucket_path = run.run_dir / stage_file(run, "length_buckets", decision, ".csv");
    io::write_file_atomic(bucket_path, length_bucket_csv(buckets));
    out.files.push_back(bucket_path);

    std::vector<AblationReport> reports;
    for (auto axis : {AblationAxis::TrainingVsUnseen, AblationAxis::Choices, AblationAxis::Mcq,
                      AblationAxis::ExtraText, AblationAxis::LengthBucket}) {
        try {
            reports.push_back(group_ablation(table.per_prompt, facts, axis, run.analysis.bucketing,
                                             run.analysis.quantile_method));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::EmptyGroup) throw;
        }
    }
    auto correlations = correlation_rows(table.per_prompt, facts, run.analysis.correlation);
    const auto summary_path = run.run_dir / stage_file(run, "summary", decision, ".json");
    io::write_file_atomic(summary_path, analysis_summary_json(reports, correlations, buckets));
    out.files.push_back(summary_path);

    if (plot_data) {
        const auto plot_path = run.run_dir / stage_file(run, "plot_data", decision, ".csv");
        io::write_file_atomic(plot_path, plot_data_csv(table.per_prompt, facts, run.analysis.bucketing));
        out.files.push_back(plot_path);
    }
    return out;
}

} // namespace pxeval
