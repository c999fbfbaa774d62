#include "sage/app.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "sage/embedding.hpp"
#include "sage/error.hpp"
#include "sage/evaluation.hpp"
#include "sage/text.hpp"

namespace sage {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------ config

namespace {

std::string exemplar_source_name(ExemplarSource s) { return s == ExemplarSource::shipped ? "shipped" : "stratified"; }

ExemplarSource parse_exemplar_source(std::string_view s) {
    if (s == "stratified") return ExemplarSource::stratified;
    if (s == "shipped") return ExemplarSource::shipped;
    throw ConfigError(fmt::format("unknown exemplar source '{}' (expected stratified or shipped)", s));
}

template <class T>
T parse_unsigned(std::string_view s, std::string_view what) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(fmt::format("{}: '{}' is not a count", what, s));
    return v;
}

double parse_real(std::string_view s, std::string_view what) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(fmt::format("{}: '{}' is not a number", what, s));
    return v;
}

std::vector<std::uint64_t> parse_seeds(std::string_view s) {
    std::vector<std::uint64_t> out;
    while (true) {
        const auto comma = s.find(',');
        out.push_back(parse_unsigned<std::uint64_t>(trim(s.substr(0, comma)), "seeds"));
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    return out;
}

std::string data_format_name(DataFormat f) { return f == DataFormat::csv ? "csv" : "jsonl"; }

}  // namespace

const std::vector<std::string>& scorer_names() {
    static const std::vector<std::string> names = {"llm", "embedding-cosine", "token-greedy"};
    return names;
}

std::string scorer_label(const std::string& scorer, StrategyKind strategy) {
    return scorer == "llm" ? "llm-" + std::string(to_string(strategy)) : scorer;
}

AppConfig AppConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = {
        "dataset",     "format",        "normalization",     "scorers",       "strategy",
        "runs",        "seeds",         "exemplar_source",   "rationales",    "templates",
        "base_url",    "model",         "api_key_env",       "max_in_flight", "requests_per_minute",
        "retry_attempts", "timeout_seconds", "mock",         "embeddings",    "token_embeddings",
        "embedding_model", "embedding_dimension", "cache_dir", "output_dir", "threshold",
        "k",           "seed"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    AppConfig c;
    try {
        if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
        if (j.contains("format")) c.format = parse_data_format(j["format"].get<std::string>());
        if (j.contains("normalization")) c.normalization = parse_normalization(j["normalization"].get<std::string>());
        if (j.contains("scorers")) {
            c.scorers = j["scorers"].is_string() ? std::vector<std::string>{j["scorers"].get<std::string>()}
                                                 : j["scorers"].get<std::vector<std::string>>();
        }
        if (j.contains("strategy")) c.strategy = parse_strategy(j["strategy"].get<std::string>()).kind();
        if (j.contains("runs")) c.runs = j["runs"].get<std::size_t>();
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("exemplar_source")) c.exemplar_source = parse_exemplar_source(j["exemplar_source"].get<std::string>());
        if (j.contains("rationales")) c.rationales = j["rationales"].get<std::string>();
        if (j.contains("templates")) c.templates = j["templates"].get<std::string>();
        if (j.contains("base_url")) c.base_url = j["base_url"].get<std::string>();
        if (j.contains("model")) c.model = j["model"].get<std::string>();
        if (j.contains("api_key_env")) c.api_key_env = j["api_key_env"].get<std::string>();
        if (j.contains("max_in_flight")) c.max_in_flight = j["max_in_flight"].get<std::size_t>();
        if (j.contains("requests_per_minute")) c.requests_per_minute = j["requests_per_minute"].get<std::size_t>();
        if (j.contains("retry_attempts")) c.retry_attempts = j["retry_attempts"].get<int>();
        if (j.contains("timeout_seconds")) c.timeout_seconds = j["timeout_seconds"].get<int>();
        if (j.contains("mock")) c.mock = j["mock"].get<std::string>();
        if (j.contains("embeddings")) c.embeddings = j["embeddings"].get<std::string>();
        if (j.contains("token_embeddings")) c.token_embeddings = j["token_embeddings"].get<std::string>();
        if (j.contains("embedding_model")) c.embedding_model = j["embedding_model"].get<std::string>();
        if (j.contains("embedding_dimension")) c.embedding_dimension = j["embedding_dimension"].get<std::size_t>();
        if (j.contains("cache_dir")) c.cache_dir = j["cache_dir"].get<std::string>();
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
        if (j.contains("threshold")) c.threshold = j["threshold"].get<double>();
        if (j.contains("k")) c.k = j["k"].get<std::size_t>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

AppConfig AppConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

json AppConfig::to_json() const {
    return {
        {"dataset", dataset.string()},
        {"format", format ? json(data_format_name(*format)) : json(nullptr)},
        {"normalization", std::string(sage::to_string(normalization))},
        {"scorers", scorers},
        {"strategy", std::string(sage::to_string(strategy))},
        {"runs", runs},
        {"seeds", seeds},
        {"exemplar_source", exemplar_source_name(exemplar_source)},
        {"rationales", rationales.string()},
        {"templates", templates.string()},
        {"base_url", base_url},
        {"model", model},
        {"api_key_env", api_key_env},
        {"max_in_flight", max_in_flight},
        {"requests_per_minute", requests_per_minute},
        {"retry_attempts", retry_attempts},
        {"timeout_seconds", timeout_seconds},
        {"mock", mock},
        {"embeddings", embeddings.string()},
        {"token_embeddings", token_embeddings.string()},
        {"embedding_model", embedding_model},
        {"embedding_dimension", embedding_dimension},
        {"cache_dir", cache_dir.string()},
        {"output_dir", output_dir.string()},
        {"threshold", threshold},
        {"k", k},
        {"seed", seed},
    };
}

namespace {

void require_file(const fs::path& p, std::string_view what) {
    if (!p.empty() && !fs::exists(p)) throw ConfigError(fmt::format("{} not found: {}", what, p.string()));
}

void validate_threshold(const AppConfig& c) {
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) {
        throw ConfigError(fmt::format("threshold must lie in [0,1], got {}", c.threshold));
    }
}

void validate_dataset_path(const AppConfig& c) {
    if (c.dataset.empty()) throw ConfigError("no dataset given (use --dataset)");
}

/// Everything `score` needs, checked before any data is read or request sent.
void validate_for_score(const AppConfig& c) {
    validate_dataset_path(c);
    if (c.scorers.empty()) throw ConfigError("no scorer selected");
    for (const auto& s : c.scorers) {
        if (std::find(scorer_names().begin(), scorer_names().end(), s) == scorer_names().end()) {
            throw ConfigError(fmt::format("unknown scorer '{}' (valid: {})", s, fmt::join(scorer_names(), ", ")));
        }
    }
    if (std::set<std::string>(c.scorers.begin(), c.scorers.end()).size() != c.scorers.size()) {
        throw ConfigError("scorer listed twice");
    }
    if (c.runs == 0) throw ConfigError("runs must be positive");
    if (c.seeds.size() != c.runs) throw ConfigError(fmt::format("{} seeds given for {} runs", c.seeds.size(), c.runs));
    if (c.max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
    if (c.retry_attempts < 1) throw ConfigError("retry_attempts must be at least 1");
    if (c.timeout_seconds < 1) throw ConfigError("timeout_seconds must be positive");
    require_file(c.rationales, "rationales file");
    require_file(c.templates, "template directory");
    if (!c.mock.empty() && c.mock != "echo-benchmark") require_file(c.mock, "mock ruleset");
    const bool llm = std::find(c.scorers.begin(), c.scorers.end(), "llm") != c.scorers.end();
    if (llm && c.mock.empty() && c.base_url.empty()) throw ConfigError("llm scorer needs base_url or --mock");
    if (llm && c.exemplar_source == ExemplarSource::shipped && c.strategy != StrategyKind::cot_0to1) {
        throw ConfigError("shipped exemplars exist only for the cot strategy");
    }
    require_file(c.embeddings, "embeddings file");
    require_file(c.token_embeddings, "token embeddings file");
    for (const auto& s : c.scorers) {
        if (s == "embedding-cosine" && c.embeddings.empty() &&
            (c.embedding_model.empty() || c.embedding_dimension == 0 || !c.mock.empty())) {
            throw ConfigError("embedding-cosine needs an embeddings file, or embedding_model and embedding_dimension");
        }
        if (s == "token-greedy" && c.token_embeddings.empty()) {
            throw ConfigError("token-greedy needs a token embeddings file");
        }
    }
}

Dataset load_configured(const AppConfig& c) {
    if (!fs::exists(c.dataset)) throw ValidationError("dataset not found: " + c.dataset.string());
    return c.format ? load_dataset(c.dataset, *c.format) : load_dataset(c.dataset);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << content;
    if (!out) throw Error("write failed: " + p.string());
}

std::vector<EchoEntry> echo_entries(const Dataset& d, Normalization mode) {
    std::vector<EchoEntry> out;
    for (const auto& p : d) {
        if (auto b = effective_benchmark(p, mode)) out.push_back({p.student, p.expert, b->value()});
    }
    return out;
}

std::string backend_id(const AppConfig& c, const Dataset& d) {
    if (c.mock == "echo-benchmark") {
        std::string digest;
        for (const auto& e : echo_entries(d, c.normalization)) {
            digest += fmt::format("{}\x1f{}\x1f{}\x1e", e.student, e.expert, e.benchmark);
        }
        return "mock-echo:" + sha256_hex(digest);
    }
    if (!c.mock.empty()) return "mock-rules:" + sha256_hex(read_file(c.mock));
    return c.base_url;
}

std::optional<std::string> env_lookup(const AppHooks& hooks, const std::string& name) {
    if (hooks.getenv) return hooks.getenv(name);
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

}  // namespace

std::shared_ptr<Transport> make_transport(const AppConfig& c, const Dataset& d, const AppHooks& hooks) {
    if (c.mock == "echo-benchmark") return MockTransport::echo_benchmark(echo_entries(d, c.normalization));
    if (!c.mock.empty()) return MockTransport::with_rules(load_mock_rules(c.mock));
    const auto key = env_lookup(hooks, c.api_key_env).value_or("");
    return std::make_shared<HttpTransport>(c.base_url, key, std::chrono::seconds(c.timeout_seconds));
}

// ------------------------------------------------------------------ commands

namespace {

struct Io {
    std::ostream& out;
    std::ostream& err;
    const AppHooks& hooks;
};

int cmd_stats(const AppConfig& c, Labeling labeling, Io io) {
    validate_dataset_path(c);
    const auto d = load_configured(c);
    if (d.empty()) {
        io.out << "0 pairs\n";
        return exit_ok;
    }
    const auto stats = dataset_stats(d, labeling);
    io.out << fmt::format("{} pairs, {} labels\n", d.size(), stats.total);
    // Percentages are truncated, not rounded, to two decimals.
    for (const auto& [label, n] : stats.counts) {
        const auto bp = n * 10000 / stats.total;
        io.out << fmt::format("{}: {} ({}.{:02}%)\n", label, n, bp / 100, bp % 100);
    }
    return exit_ok;
}

int cmd_sample(const AppConfig& c, Io io) {
    validate_dataset_path(c);
    const auto d = load_configured(c);
    const auto sample = stratified_sample(d, c.k, c.seed);
    const auto format = c.format ? *c.format : data_format_for(c.dataset);
    const auto ext = format == DataFormat::csv ? ".csv" : ".jsonl";
    fs::create_directories(c.output_dir);
    save_dataset(Dataset(sample.exemplars), c.output_dir / (std::string("exemplars") + ext), format);
    save_dataset(sample.remainder, c.output_dir / (std::string("remainder") + ext), format);
    io.out << fmt::format("{} exemplars, {} remaining -> {}\n", sample.exemplars.size(), sample.remainder.size(),
                          c.output_dir.string());
    for (const auto& p : sample.exemplars) {
        io.out << fmt::format("  {} (label {})\n", p.id, label_of(p).value_or(0));
    }
    return exit_ok;
}

struct ScorerOutcome {
    std::size_t scored = 0;
    std::size_t partial = 0;
    std::size_t unscored = 0;
};

Prediction prediction_for(const ExplanationPair& pair, std::optional<SimilarityScore> score, Normalization mode) {
    Prediction p;
    p.pair_id = pair.id;
    p.predicted = score;
    p.benchmark = effective_benchmark(pair, mode);
    p.label = label_of(pair);
    return p;
}

std::string jsonl(const std::vector<json>& rows) {
    std::string s;
    for (const auto& r : rows) s += r.dump() + '\n';
    return s;
}

BackendContext make_context(const AppConfig& c, const Dataset& d, const AppHooks& hooks) {
    BackendContext ctx;
    ctx.id = backend_id(c, d);
    ctx.transport = hooks.transport ? hooks.transport(c, d) : make_transport(c, d, hooks);
    ctx.cache = std::make_shared<ResponseCache>(c.cache_dir);
    ctx.limiter = std::make_shared<RateLimiter>(c.max_in_flight, c.requests_per_minute);
    ctx.retry.attempts = c.retry_attempts;
    if (hooks.sleep) ctx.retry.sleep = hooks.sleep;
    return ctx;
}

ScorerOutcome score_llm(const AppConfig& c, const Dataset& d, const fs::path& dir, Io io) {
    RunConfig rc;
    rc.n_runs = c.runs;
    rc.seeds = c.seeds;
    rc.strategy = PromptStrategy(c.strategy);
    rc.normalization = c.normalization;
    rc.exemplar_source = c.exemplar_source;
    if (!c.rationales.empty()) {
        try {
            rc.rationales = json::parse(read_file(c.rationales)).get<std::map<std::string, std::string>>();
        } catch (const json::exception& e) {
            throw ConfigError(fmt::format("{}: {}", c.rationales.string(), e.what()));
        }
    }
    rc.backend.client = std::make_shared<ChatClient>(make_context(c, d, io.hooks));
    rc.backend.model = c.mock.empty() ? c.model : "mock";
    if (!c.templates.empty()) rc.backend.templates = PromptTemplates::load(c.templates);

    const auto result = score_dataset_multi_run(d, rc);

    std::vector<json> preds, runs, exemplars, errors;
    ScorerOutcome o;
    for (const auto& out : result.pairs) {
        auto p = prediction_for(*d.find(out.pair_id), out.score, c.normalization);
        p.partial = out.partial;
        preds.push_back(to_json(p));
        if (!out.score) {
            ++o.unscored;
        } else {
            ++o.scored;
            if (out.partial) ++o.partial;
        }
        for (const auto& f : out.failures) errors.push_back({{"pair_id", out.pair_id}, {"error", f}});
    }
    for (const auto& r : result.records) {
        json j = {{"pair_id", r.pair_id},
                  {"run", r.run},
                  {"prompt_sha256", r.prompt_sha256},
                  {"response", r.response},
                  {"parsed", r.parsed ? json(*r.parsed) : json(nullptr)},
                  {"method", r.method ? json(to_string(*r.method)) : json(nullptr)},
                  {"clamped", r.clamped}};
        if (!r.error.empty()) j["error"] = r.error;
        runs.push_back(std::move(j));
    }
    for (std::size_t r = 0; r < result.exemplar_ids.size(); ++r) {
        exemplars.push_back({{"run", r}, {"seed", c.seeds[r]}, {"ids", result.exemplar_ids[r]}});
    }
    write_file(dir / "predictions.jsonl", jsonl(preds));
    write_file(dir / "runs.jsonl", jsonl(runs));
    write_file(dir / "exemplars.jsonl", jsonl(exemplars));
    write_file(dir / "errors.jsonl", jsonl(errors));
    return o;
}

ScorerOutcome score_embedding(const AppConfig& c, const std::string& scorer, const Dataset& d, const fs::path& dir,
                              Io io) {
    std::shared_ptr<const EmbeddingProvider> sentence;
    std::shared_ptr<const FileEmbeddingProvider> words;
    std::shared_ptr<const TokenEmbeddingProvider> tokens;
    if (!c.embeddings.empty()) {
        auto f = std::make_shared<const FileEmbeddingProvider>(c.embeddings);
        words = f;
        sentence = f;
    }
    if (scorer == "embedding-cosine" && !sentence) {
        sentence = std::make_shared<const HttpEmbeddingProvider>(make_context(c, d, io.hooks), c.embedding_model,
                                                                 static_cast<Eigen::Index>(c.embedding_dimension));
    }
    if (scorer == "token-greedy") tokens = std::make_shared<const FileTokenEmbeddingProvider>(c.token_embeddings, words);

    std::vector<json> preds, errors;
    ScorerOutcome o;
    for (const auto& pair : d) {
        std::optional<SimilarityScore> score;
        try {
            score = scorer == "token-greedy" ? token_score(pair.expert, pair.student, *tokens)
                                             : sentence_score(pair.expert, pair.student, *sentence);
            ++o.scored;
        } catch (const ProviderError&) {
            throw;
        } catch (const Error& e) {
            ++o.unscored;
            errors.push_back({{"pair_id", pair.id}, {"error", e.what()}});
        }
        preds.push_back(to_json(prediction_for(pair, score, c.normalization)));
    }
    write_file(dir / "predictions.jsonl", jsonl(preds));
    write_file(dir / "errors.jsonl", jsonl(errors));
    return o;
}

int cmd_score(const AppConfig& c, Io io) {
    validate_for_score(c);
    const auto d = load_configured(c);
    fs::create_directories(c.output_dir);
    write_file(c.output_dir / "config.json", c.to_json().dump(2) + '\n');

    int code = exit_ok;
    for (const auto& scorer : c.scorers) {
        const auto label = scorer_label(scorer, c.strategy);
        const auto dir = c.output_dir / label;
        const auto o = scorer == "llm" ? score_llm(c, d, dir, io) : score_embedding(c, scorer, d, dir, io);
        write_file(dir / "meta.json", json{{"scorer", label}, {"family", scorer_family(label)}}.dump(2) + '\n');
        io.out << fmt::format("{}: scored {} pairs ({} partial, {} unscored) -> {}\n", label, o.scored, o.partial,
                              o.unscored, (dir / "predictions.jsonl").string());
        if (o.scored == 0 && o.unscored > 0) {
            io.err << fmt::format("{}: every pair failed; see {}\n", label, (dir / "errors.jsonl").string());
            code = std::max(code, static_cast<int>(exit_provider));
        } else if (o.partial > 0 || o.unscored > 0) {
            code = code == exit_provider ? code : static_cast<int>(exit_partial);
        }
    }
    return code;
}

std::pair<std::string, std::string> name_for(const fs::path& predictions) {
    const auto meta = predictions.parent_path() / "meta.json";
    if (fs::exists(meta)) {
        try {
            const auto j = json::parse(read_file(meta));
            return {j.at("scorer").get<std::string>(), j.at("family").get<std::string>()};
        } catch (const json::exception&) {
        }
    }
    auto name = predictions.stem().string();
    if (name == "predictions" && predictions.has_parent_path()) name = predictions.parent_path().filename().string();
    return {name, scorer_family(name)};
}

std::vector<Prediction> read_predictions_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ValidationError("cannot open predictions file " + p.string());
    return read_predictions(in, p.string());
}

int cmd_evaluate(const AppConfig& c, const std::vector<std::string>& paths, TableFormat format, bool write_out,
                 Io io) {
    if (paths.empty()) throw ConfigError("evaluate needs at least one predictions file");
    std::optional<Dataset> d;
    if (!c.dataset.empty()) d = load_configured(c);

    std::vector<EvalReport> reports;
    for (const auto& path : paths) {
        auto preds = read_predictions_file(path);
        try {
            if (d) preds = join_predictions(*d, std::move(preds), c.normalization);
            auto [name, family] = name_for(path);
            reports.push_back(evaluate(preds, name, family));
        } catch (const Error& e) {
            throw ValidationError(fmt::format("{}: {}", path, e.what()));
        }
    }
    const auto table = results_table(reports, format);
    io.out << table;
    if (write_out) {
        json all = json::array();
        for (const auto& r : reports) all.push_back(to_json(r));
        write_file(c.output_dir / "reports.json", all.dump(2) + '\n');
        write_file(c.output_dir / (format == TableFormat::csv ? "results.csv" : "results.txt"), table);
    }
    return exit_ok;
}

std::string number_set(const std::set<double>& s) {
    std::vector<std::string> parts;
    for (double v : s) parts.push_back(fmt::format("{}", v));
    return "{" + fmt::format("{}", fmt::join(parts, ", ")) + "}";
}

int cmd_flag_errors(const AppConfig& c, const std::string& path, bool write_out, Io io) {
    validate_threshold(c);
    validate_dataset_path(c);
    const auto d = load_configured(c);
    const auto preds = read_predictions_file(path);
    const auto flags = numeric_mismatch_flags(d, preds, c.threshold);
    io.out << fmt::format("{} flagged at threshold {}\n", flags.size(), c.threshold);
    std::vector<json> rows;
    for (const auto& f : flags) {
        io.out << fmt::format("{}: expert {} student {} predicted {:.3f}{}\n", f.pair_id, number_set(f.expert_numbers),
                              number_set(f.student_numbers), f.predicted,
                              f.benchmark ? fmt::format(" benchmark {:.3f}", *f.benchmark) : "");
        rows.push_back(to_json(f));
    }
    if (write_out) write_file(c.output_dir / "flags.jsonl", jsonl(rows));
    return exit_ok;
}

int cmd_cache(const AppConfig& c, const std::string& action, const std::string& key, Io io) {
    if (c.cache_dir.empty()) throw ConfigError("no cache directory configured");
    if (!fs::is_directory(c.cache_dir)) {
        io.out << fmt::format("0 entries in {}\n", c.cache_dir.string());
        return exit_ok;
    }
    ResponseCache cache(c.cache_dir);
    if (action == "purge") {
        io.out << fmt::format("purged {} entries from {}\n", cache.purge(), c.cache_dir.string());
        return exit_ok;
    }
    if (!key.empty()) {
        const auto entry = cache.get(key);
        if (!entry) throw ValidationError("no cache entry " + key);
        io.out << entry->dump(2) << '\n';
        return exit_ok;
    }
    const auto keys = cache.keys();
    io.out << fmt::format("{} entries in {}\n", keys.size(), c.cache_dir.string());
    for (const auto& k : keys) {
        const auto entry = cache.get(k);
        io.out << fmt::format("{}  {}\n", k, entry ? entry->value("backend", std::string("?")) : "?");
    }
    return exit_ok;
}

}  // namespace

// ------------------------------------------------------------------ parsing

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const AppHooks& hooks) {
    CLI::App app{"Scores student code explanations against expert references and evaluates the scorers.", "sage"};
    app.require_subcommand(1);

    // Overrides are collected as strings and applied on top of the config file.
    std::map<std::string, std::string> set;
    std::string config_path;
    auto opt = [&](CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
        return cmd->add_option_function<std::string>(flag, [&set, key](const std::string& v) { set[key] = v; }, help);
    };
    auto common = [&](CLI::App* cmd, bool data_format) {
        cmd->add_option("--config", config_path, "JSON config file; flags override it");
        opt(cmd, "--dataset", "dataset", "dataset file (.jsonl or .csv)");
        if (data_format) opt(cmd, "--format", "format", "dataset format: jsonl or csv");
        opt(cmd, "--normalization", "normalization", "mean-over-5 or shifted-quarter");
    };

    auto* stats = app.add_subcommand("stats", "label distribution of a dataset");
    common(stats, true);
    std::string labeling = "round-mean";
    stats->add_option("--labeling", labeling, "round-mean or per-annotator");

    auto* sample = app.add_subcommand("sample", "stratified exemplar draw");
    common(sample, true);
    opt(sample, "--k", "k", "number of exemplars");
    opt(sample, "--seed", "seed", "random seed");
    opt(sample, "--out", "output_dir", "output directory");

    auto* score = app.add_subcommand("score", "score a dataset");
    common(score, true);
    opt(score, "--scorer", "scorers", "comma-separated: " + fmt::format("{}", fmt::join(scorer_names(), ", ")));
    opt(score, "--strategy", "strategy", "baseline-1-5, baseline-0-1, few-shot or cot");
    opt(score, "--runs", "runs", "independent runs per pair");
    opt(score, "--seeds", "seeds", "comma-separated exemplar seeds, one per run");
    opt(score, "--exemplars", "exemplar_source", "stratified or shipped");
    opt(score, "--rationales", "rationales", "JSON object of CoT rationales by pair id");
    opt(score, "--templates", "templates", "directory of prompt templates");
    opt(score, "--mock", "mock", "mock ruleset file or echo-benchmark");
    opt(score, "--model", "model", "chat model name");
    opt(score, "--base-url", "base_url", "OpenAI-compatible endpoint");
    opt(score, "--max-in-flight", "max_in_flight", "concurrent request bound");
    opt(score, "--embeddings", "embeddings", "sentence embedding JSONL");
    opt(score, "--token-embeddings", "token_embeddings", "token embedding JSONL");
    opt(score, "--cache-dir", "cache_dir", "response cache directory");
    opt(score, "--out", "output_dir", "output directory");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "correlate predictions with the benchmark");
    common(evaluate_cmd, false);
    std::string table_format = "text";
    evaluate_cmd->add_option("--format", table_format, "table format: text or csv");
    std::vector<std::string> prediction_paths;
    evaluate_cmd->add_option("predictions", prediction_paths, "predictions.jsonl files")->required();
    opt(evaluate_cmd, "--out", "output_dir", "write reports.json and the table here");

    auto* flag = app.add_subcommand("flag-errors", "numeric-mismatch error analysis");
    common(flag, true);
    std::string flag_path;
    flag->add_option("predictions", flag_path, "predictions.jsonl")->required();
    opt(flag, "--threshold", "threshold", "minimum predicted score to flag");
    opt(flag, "--out", "output_dir", "write flags.jsonl here");

    auto* cache = app.add_subcommand("cache", "inspect or purge the response cache");
    cache->require_subcommand(1);
    cache->add_option("--config", config_path, "JSON config file");
    std::string cache_key_arg;
    auto* purge = cache->add_subcommand("purge", "delete every cached response");
    auto* inspect = cache->add_subcommand("inspect", "list cached responses, or print one");
    inspect->add_option("key", cache_key_arg, "cache key to print");
    for (auto* sub : {purge, inspect}) opt(sub, "--cache-dir", "cache_dir", "response cache directory");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    }

    const Io io{out, err, hooks};
    try {
        AppConfig c = config_path.empty() ? AppConfig{} : AppConfig::load(config_path);
        for (const auto& [key, value] : set) {
            if (key == "dataset") c.dataset = value;
            else if (key == "format") c.format = parse_data_format(value);
            else if (key == "normalization") c.normalization = parse_normalization(value);
            else if (key == "scorers") {
                c.scorers.clear();
                std::string_view rest = value;
                while (true) {
                    const auto comma = rest.find(',');
                    c.scorers.emplace_back(trim(rest.substr(0, comma)));
                    if (comma == std::string_view::npos) break;
                    rest.remove_prefix(comma + 1);
                }
            }
            else if (key == "strategy") c.strategy = parse_strategy(value).kind();
            else if (key == "runs") c.runs = parse_unsigned<std::size_t>(value, "--runs");
            else if (key == "seeds") c.seeds = parse_seeds(value);
            else if (key == "exemplar_source") c.exemplar_source = parse_exemplar_source(value);
            else if (key == "rationales") c.rationales = value;
            else if (key == "templates") c.templates = value;
            else if (key == "mock") c.mock = value;
            else if (key == "model") c.model = value;
            else if (key == "base_url") c.base_url = value;
            else if (key == "max_in_flight") c.max_in_flight = parse_unsigned<std::size_t>(value, "--max-in-flight");
            else if (key == "embeddings") c.embeddings = value;
            else if (key == "token_embeddings") c.token_embeddings = value;
            else if (key == "cache_dir") c.cache_dir = value;
            else if (key == "output_dir") c.output_dir = value;
            else if (key == "threshold") c.threshold = parse_real(value, "--threshold");
            else if (key == "k") c.k = parse_unsigned<std::size_t>(value, "--k");
            else if (key == "seed") c.seed = parse_unsigned<std::uint64_t>(value, "--seed");
        }
        // --runs alone resizes the default seed list.
        if (set.count("runs") && !set.count("seeds") && config_path.empty()) {
            c.seeds.resize(c.runs);
            for (std::size_t i = 0; i < c.runs; ++i) c.seeds[i] = i;
        }

        if (*stats) {
            if (labeling != "round-mean" && labeling != "per-annotator") {
                throw ConfigError("unknown labeling '" + labeling + "' (expected round-mean or per-annotator)");
            }
            return cmd_stats(c, labeling == "round-mean" ? Labeling::round_mean : Labeling::per_annotator, io);
        }
        if (*sample) return cmd_sample(c, io);
        if (*score) return cmd_score(c, io);
        if (*evaluate_cmd) {
            return cmd_evaluate(c, prediction_paths, parse_table_format(table_format), set.count("output_dir") > 0, io);
        }
        if (*flag) return cmd_flag_errors(c, flag_path, set.count("output_dir") > 0, io);
        if (*cache) return cmd_cache(c, *purge ? "purge" : "inspect", cache_key_arg, io);
        return exit_usage;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ProviderError& e) {
        err << "error: " << e.what() << '\n';
        return exit_provider;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_data;
    }
}

}  // namespace sage
