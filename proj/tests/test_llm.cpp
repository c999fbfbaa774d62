#include "sage/llm.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "generators.hpp"
#include "sage/error.hpp"

using namespace sage;
using nlohmann::json;

namespace {

const std::filesystem::path source_dir = SAGE_SOURCE_DIR;

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in, path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExplanationPair num_pair() {
    return {"c2", "int num = 15;", "In this program, we initialize variable num to 15.",
            "creates variable integer entitled \"num\" with initial value 5", {4}, 0.8};
}

std::shared_ptr<const ChatClient> client_for(std::shared_ptr<Transport> t) {
    BackendContext ctx;
    ctx.id = "mock";
    ctx.transport = std::move(t);
    ctx.retry.sleep = [](std::chrono::milliseconds) {};
    return std::make_shared<ChatClient>(std::move(ctx));
}

LlmBackend rules_backend(std::vector<MockRule> rules) {
    return {client_for(MockTransport::with_rules(std::move(rules)))};
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

std::vector<Exemplar> golden_few_shot_exemplars() {
    auto ex = shipped_few_shot_exemplars();
    auto add = [&](std::string user, std::string expert, double score) {
        ExplanationPair p{"fx" + std::to_string(ex.size()), "", std::move(expert), std::move(user), {}, score};
        ex.push_back({p, SimilarityScore(score, ScoreOrigin::human_benchmark), ""});
    };
    add("This statement increments the element at the index i of the array by 1.",
        "Increment the current element in the array by 1.", 1.0);
    add("Create the variable minutes",
        "To obtain the minutes in seconds, we divide the minutes by 60 because there are 60 seconds in a minute", 0.4);
    add("This statement prints that the integer is positive.",
        "Print that the integer is positive if it is greater than 0..", 1.0);
    add("we initialize another variable named divisor with the value 2.",
        "We define variable divisor to store the smallest divisor of the number.", 1.0 / 3.0);
    return ex;
}

std::string chat_body(const std::string& text) {
    return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}}},
                {"usage", {{"prompt_tokens", 1}, {"completion_tokens", 1}, {"total_tokens", 2}}}}
        .dump();
}

// Replies 0.4, 0.5, 0.6, ... to successive distinct prompts sharing a query.
class SteppingTransport : public Transport {
protected:
    HttpReply do_post(const std::string&, const std::string& body) override {
        const auto prompt = json::parse(body)["messages"][0]["content"].get<std::string>();
        const auto query = prompt.substr(prompt.rfind("\n\n") + 2);
        std::lock_guard lock(mutex_);
        const int n = seen_[query]++;
        return {200, chat_body(fmt::format("Thus [semantic similarity = {}]", 0.4 + 0.1 * n))};
    }

private:
    std::mutex mutex_;
    std::map<std::string, int> seen_;
};

}  // namespace

TEST_CASE("strategies fix their exemplar counts") {
    CHECK(parse_strategy("baseline-1-5").exemplar_count() == 0);
    CHECK(parse_strategy("baseline-0-1").exemplar_count() == 0);
    CHECK(parse_strategy("few-shot").exemplar_count() == 6);
    CHECK(parse_strategy("cot").exemplar_count() == 3);
    CHECK_THROWS_AS(parse_strategy("zero-shot"), ConfigError);
    for (const auto& s : all_strategies()) CHECK(parse_strategy(to_string(s.kind())) == s);
}

TEST_CASE("shown scores use at most two decimals") {
    CHECK(format_shown_score(0.87) == "0.87");
    CHECK(format_shown_score(0.2) == "0.2");
    CHECK(format_shown_score(1.0) == "1");
    CHECK(format_shown_score(0.0) == "0");
    CHECK(format_shown_score(1.0 / 3.0) == "0.33");
}

TEST_CASE("rendered prompts match the golden files byte for byte") {
    const auto pair = num_pair();
    const auto golden = source_dir / "tests" / "golden";
    CHECK(render_prompt(parse_strategy("baseline-1-5"), pair, {})[0].content == slurp(golden / "baseline_1to5.txt"));
    CHECK(render_prompt(parse_strategy("baseline-0-1"), pair, {})[0].content == slurp(golden / "baseline_0to1.txt"));
    const auto fs = golden_few_shot_exemplars();
    CHECK(render_prompt(parse_strategy("few-shot"), pair, fs)[0].content == slurp(golden / "few_shot.txt"));
    const auto cot = shipped_cot_exemplars();
    CHECK(render_prompt(parse_strategy("cot"), pair, cot)[0].content == slurp(golden / "cot.txt"));
}

TEST_CASE("shipped template files equal the built-in defaults") {
    const auto loaded = PromptTemplates::load(source_dir / "templates");
    const auto& d = PromptTemplates::defaults();
    CHECK(loaded.baseline_1to5 == d.baseline_1to5);
    CHECK(loaded.baseline_0to1 == d.baseline_0to1);
    CHECK(loaded.few_shot == d.few_shot);
    CHECK(loaded.few_shot_exemplar == d.few_shot_exemplar);
    CHECK(loaded.cot == d.cot);
    CHECK(loaded.cot_exemplar == d.cot_exemplar);
}

TEST_CASE("render shape") {
    const auto pair = num_pair();
    for (const auto& s : all_strategies()) {
        std::vector<Exemplar> ex;
        if (s.kind() == StrategyKind::few_shot_0to1) ex = golden_few_shot_exemplars();
        if (s.kind() == StrategyKind::cot_0to1) ex = shipped_cot_exemplars();
        const auto msgs = render_prompt(s, pair, ex);
        REQUIRE(msgs.size() == 1);
        CHECK(msgs[0].role == Role::user);
        const auto& p = msgs[0].content;
        CHECK(p.find(pair.student) != std::string::npos);
        CHECK(p.find(pair.expert) != std::string::npos);
        CHECK(p.find('{') == std::string::npos);
        switch (s.kind()) {
            case StrategyKind::baseline_1to5:
                CHECK(p.find("between 1 to 5") != std::string::npos);
                CHECK(p.find("Only provide the score without any other text.") != std::string::npos);
                break;
            case StrategyKind::baseline_0to1:
                CHECK(p.find("Only provide the score without any other text.") != std::string::npos);
                break;
            case StrategyKind::few_shot_0to1:
                CHECK(count_of(p, "Similarity Score:") == 7);
                break;
            case StrategyKind::cot_0to1:
                CHECK(count_of(p, "Lets think step by step") == 4);
                break;
        }
    }
}

TEST_CASE("wrong exemplar count is a configuration error") {
    CHECK_THROWS_AS(render_prompt(parse_strategy("cot"), num_pair(), {}), ConfigError);
    const auto ex = shipped_cot_exemplars();
    CHECK_THROWS_AS(render_prompt(parse_strategy("baseline-0-1"), num_pair(), ex), ConfigError);
}

TEST_CASE("placeholders inside explanations are not expanded") {
    auto pair = num_pair();
    pair.student = "prints {expert_explanation} literally";
    const auto p = render_prompt(parse_strategy("baseline-0-1"), pair, {})[0].content;
    CHECK(p.find("prints {expert_explanation} literally") != std::string::npos);
    CHECK(fill_template("{a}{b}{c}", {{"a", "{b}"}, {"b", "x"}}) == "{b}x{c}");
}

TEST_CASE("templates round-trip through a directory") {
    const auto dir = std::filesystem::temp_directory_path() / ("sage-templates-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    auto t = PromptTemplates::defaults();
    t.baseline_0to1 = "Rate {user_explanation} vs {expert_explanation}.";
    t.save(dir);
    const auto back = PromptTemplates::load(dir);
    CHECK(back.baseline_0to1 == t.baseline_0to1);
    CHECK(back.cot == t.cot);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(PromptTemplates::load(dir), ConfigError);
}

TEST_CASE("parser fixtures") {
    const PromptStrategy cot(StrategyKind::cot_0to1);
    const PromptStrategy zero_one(StrategyKind::baseline_0to1);

    const std::string c1 =
        "Both texts are about printing that the integer is positive. The first text is more general, while the "
        "second text adds the condition. Thus, these sentences have a [semantic similarity = 0.8]\n"
        "have a [semantic similarity = 0.8]";
    auto r = parse_score(c1, cot);
    CHECK(r.value == 0.8);
    CHECK(r.method == ParseMethod::delimiter);
    CHECK_FALSE(r.clamped);

    CHECK(parse_score("Thus, these sentences have a [semantic similarity = 0.6]", cot).value == 0.6);
    CHECK(parse_score("[semantic similarity = 0.3] then [Semantic Similarity = 0.8]", cot).value == 0.8);

    r = parse_score("0.75", zero_one);
    CHECK(r.value == 0.75);
    CHECK(r.method == ParseMethod::bare_number);
    CHECK(parse_score("  0.75\n", cot).method == ParseMethod::bare_number);

    CHECK_THROWS_AS(parse_score("I cannot assess these sentences.", zero_one), ParseError);
    try {
        parse_score("I cannot assess these sentences.", cot);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.response() == "I cannot assess these sentences.");
    }
}

TEST_CASE("five-point replies map onto the unit interval") {
    const PromptStrategy five(StrategyKind::baseline_1to5);
    CHECK(parse_score("1", five).value == 0.0);
    CHECK(parse_score("3", five).value == 0.5);
    CHECK(parse_score("5", five).value == 1.0);
    CHECK(parse_score("4.2", five).value == doctest::Approx(0.8));
    auto r = parse_score("Score: 4 out of 5. I'd say 4", five);
    CHECK(r.value == 0.75);
    CHECK(r.method == ParseMethod::fallback_last_number);
    r = parse_score("7", five);
    CHECK(r.clamped);
    CHECK(r.value == 1.0);
}

TEST_CASE("fallback prefers the last in-range number") {
    const PromptStrategy zero_one(StrategyKind::baseline_0to1);
    auto r = parse_score("On a scale of 0 to 1 I rate it 0.65, given 15 matches.", zero_one);
    CHECK(r.value == 0.65);
    CHECK(r.method == ParseMethod::fallback_last_number);
    CHECK_FALSE(r.clamped);
    r = parse_score("score 85 out of 100", zero_one);
    CHECK(r.clamped);
    CHECK(r.value == 1.0);
    r = parse_score("-3", zero_one);
    CHECK(r.clamped);
    CHECK(r.value == 0.0);
}

TEST_CASE("parse clamping fuzz") {
    std::mt19937_64 rng(7);
    const auto strategies = all_strategies();
    const std::string alphabet = "0123456789.-+eE []=:semanticlry\n,abc";
    for (int i = 0; i < 3000; ++i) {
        std::string s;
        const auto len = std::uniform_int_distribution<int>(0, 40)(rng);
        for (int j = 0; j < len; ++j) s += alphabet[std::uniform_int_distribution<std::size_t>(0, alphabet.size() - 1)(rng)];
        for (const auto& st : strategies) {
            try {
                const auto r = parse_score(s, st);
                CHECK(r.value >= 0.0);
                CHECK(r.value <= 1.0);
            } catch (const ParseError&) {
            }
        }
    }
}

TEST_CASE("score_pair through the mock backend") {
    const auto pair = num_pair();
    const auto cot = shipped_cot_exemplars();
    auto backend = rules_backend({{"initial value 5", "Numbers differ. Thus [semantic similarity = 0.4]"}});
    const auto s = score_pair(pair, parse_strategy("cot"), cot, backend);
    CHECK(s.value() == 0.4);
    CHECK(s.origin() == ScoreOrigin::llm_scorer);

    auto refusing = rules_backend({{"", "I cannot assess these sentences."}});
    try {
        score_pair(pair, parse_strategy("baseline-0-1"), {}, refusing);
        FAIL("expected ScoringError");
    } catch (const ScoringError& e) {
        CHECK(e.pair_id() == "c2");
        CHECK(e.cause() == ScoringError::Cause::parse);
        CHECK(e.response() == "I cannot assess these sentences.");
    }

    auto down = rules_backend({{"", "0.5", 503}});
    try {
        score_pair(pair, parse_strategy("baseline-0-1"), {}, down);
        FAIL("expected ScoringError");
    } catch (const ScoringError& e) {
        CHECK(e.cause() == ScoringError::Cause::transport);
    }
}

TEST_CASE("requests are sent at temperature 0 with 1200 max tokens") {
    auto mock = MockTransport::with_rules({{"", "0.5"}});
    LlmBackend backend{client_for(mock)};
    score_pair(num_pair(), parse_strategy("baseline-0-1"), {}, backend);
    const auto body = json::parse(mock->received().at(0));
    CHECK(body["temperature"] == 0);
    CHECK(body["max_tokens"] == 1200);
    CHECK(body["messages"].size() == 1);
    CHECK(body["messages"][0]["role"] == "user");
}

namespace {

std::vector<EchoEntry> echo_entries(const Dataset& d) {
    std::vector<EchoEntry> out;
    for (const auto& p : d) out.push_back({p.student, p.expert, effective_benchmark(p)->value()});
    return out;
}

Dataset echo_dataset(std::size_t n, std::uint64_t seed) {
    std::vector<ExplanationPair> pairs;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 5) + 1;
        pairs.push_back({"e" + std::to_string(i), "", fmt::format("expert explanation number {} ", i),
                         fmt::format("student says item {} ", i), {label},
                         std::uniform_real_distribution<double>(0, 1)(rng)});
    }
    return Dataset(std::move(pairs));
}

}  // namespace

TEST_CASE("multi-run with the echo backend reproduces the benchmark") {
    const auto d = echo_dataset(40, 3);
    for (const auto& s : all_strategies()) {
        RunConfig cfg;
        cfg.strategy = s;
        cfg.backend = {client_for(MockTransport::echo_benchmark(echo_entries(d)))};
        const auto result = score_dataset_multi_run(d, cfg);
        CHECK(result.unscored == 0);
        REQUIRE(result.exemplar_ids.size() == 3);
        std::set<std::string> used;
        for (const auto& ids : result.exemplar_ids) {
            CHECK(ids.size() == s.exemplar_count());
            used.insert(ids.begin(), ids.end());
        }
        CHECK(result.pairs.size() == d.size() - used.size());
        CHECK(result.records.size() == 3 * result.pairs.size());
        for (const auto& out : result.pairs) {
            CHECK_FALSE(used.count(out.pair_id));
            REQUIRE(out.score);
            CHECK(out.score->value() == doctest::Approx(*d.find(out.pair_id)->benchmark).epsilon(1e-12));
        }
    }
}

TEST_CASE("baseline runs repeat identical prompts and hit the cache") {
    const auto d = echo_dataset(12, 4);
    auto mock = MockTransport::echo_benchmark(echo_entries(d));
    RunConfig cfg;
    cfg.strategy = parse_strategy("baseline-0-1");
    cfg.backend = {client_for(mock)};
    const auto result = score_dataset_multi_run(d, cfg);
    CHECK(mock->calls() == d.size());
    for (const auto& out : result.pairs) {
        REQUIRE(out.runs.size() == 3);
        CHECK(out.runs[0] == out.runs[1]);
        CHECK(out.runs[1] == out.runs[2]);
    }
}

TEST_CASE("per-pair score is the mean over runs") {
    const auto d = echo_dataset(30, 5);
    RunConfig cfg;
    cfg.backend = {client_for(std::make_shared<SteppingTransport>())};
    cfg.workers = 4;
    const auto result = score_dataset_multi_run(d, cfg);
    CHECK(result.exemplar_ids[0] != result.exemplar_ids[1]);
    CHECK(result.exemplar_ids[1] != result.exemplar_ids[2]);
    for (const auto& out : result.pairs) {
        REQUIRE(out.score);
        CHECK(out.score->value() == doctest::Approx(0.5));
        CHECK(out.runs[0] == doctest::Approx(0.4));
        CHECK(out.runs[2] == doctest::Approx(0.6));
    }
}

TEST_CASE("failed runs are reported without losing the pair") {
    const auto d = echo_dataset(8, 6);
    const std::string victim = d.pairs()[2].student;
    RunConfig cfg;
    cfg.n_runs = 1;
    cfg.seeds = {0};
    cfg.strategy = parse_strategy("baseline-0-1");
    cfg.backend = rules_backend({{victim, "no idea"}, {"", "0.5"}});
    const auto result = score_dataset_multi_run(d, cfg);
    CHECK(result.pairs.size() == d.size());
    CHECK(result.unscored == 1);
    CHECK_FALSE(result.pairs[2].score);
    REQUIRE(result.pairs[2].failures.size() == 1);
    CHECK(result.pairs[2].failures[0].find("run 0") == 0);
    CHECK(result.records[2].error.size() > 0);
    CHECK(result.pairs[0].score->value() == 0.5);
}

TEST_CASE("run configuration is validated") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // no backend
    cfg.backend = rules_backend({{"", "0.5"}});
    CHECK_NOTHROW(cfg.validate());
    cfg.seeds = {0, 0, 1};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.seeds = {0, 1};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.seeds = {0, 1, 2};
    cfg.strategy = parse_strategy("few-shot");
    cfg.exemplar_source = ExemplarSource::shipped;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("rendering is deterministic") {
    std::mt19937_64 rng(11);
    const auto d = sage::testing::random_dataset(rng, 20, true);
    const auto cot = shipped_cot_exemplars();
    for (const auto& p : d) {
        const auto a = render_prompt(parse_strategy("cot"), p, cot);
        const auto b = render_prompt(parse_strategy("cot"), p, cot);
        CHECK(a[0].content == b[0].content);
    }
}
