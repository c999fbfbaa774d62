#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sage/corpus.hpp"
#include "sage/providers.hpp"

namespace sage {

enum class StrategyKind { baseline_1to5, baseline_0to1, few_shot_0to1, cot_0to1 };

/// One of the four prompting protocols. The exemplar count is fixed by the
/// kind: none for the baselines, six for few-shot, three for CoT.
class PromptStrategy {
public:
    explicit PromptStrategy(StrategyKind kind) : kind_(kind) {}

    StrategyKind kind() const noexcept { return kind_; }
    std::size_t exemplar_count() const noexcept;
    bool five_point() const noexcept { return kind_ == StrategyKind::baseline_1to5; }

    bool operator==(const PromptStrategy&) const = default;

private:
    StrategyKind kind_;
};

/// "baseline-1-5", "baseline-0-1", "few-shot", "cot".
PromptStrategy parse_strategy(std::string_view name);
std::string_view to_string(StrategyKind kind);
std::vector<PromptStrategy> all_strategies();

struct Exemplar {
    ExplanationPair pair;
    SimilarityScore shown_score;
    std::string rationale;  // worked reasoning, CoT only
};

/// Exemplar showing the pair's normalized benchmark.
Exemplar make_exemplar(const ExplanationPair& pair, Normalization mode = Normalization::mean_over_5,
                       std::string rationale = {});

/// The two worked few-shot examples that ship with the default prompts.
std::vector<Exemplar> shipped_few_shot_exemplars();
/// The three hand-written chain-of-thought examples.
std::vector<Exemplar> shipped_cot_exemplars();

/// Two decimals, trailing zeros dropped: 0.87, 0.2, 1.
std::string format_shown_score(double value);

/// Template texts with {user_explanation}, {expert_explanation},
/// {exemplars}, {score} and {rationale} placeholders.
struct PromptTemplates {
    std::string baseline_1to5;
    std::string baseline_0to1;
    std::string few_shot;
    std::string few_shot_exemplar;
    std::string cot;
    std::string cot_exemplar;

    static const PromptTemplates& defaults();
    /// Reads the six files written by save(); missing files keep defaults.
    static PromptTemplates load(const std::filesystem::path& dir);
    void save(const std::filesystem::path& dir) const;
};

/// Single-pass placeholder substitution; substituted text is not rescanned
/// and unknown placeholders are left as-is.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& slots);

/// One user message holding the whole prompt; no system preamble.
std::vector<ChatMessage> render_prompt(const PromptStrategy& strategy, const ExplanationPair& pair,
                                       std::span<const Exemplar> exemplars,
                                       const PromptTemplates& templates = PromptTemplates::defaults());

enum class ParseMethod { delimiter, bare_number, fallback_last_number };

std::string_view to_string(ParseMethod method);

struct ParsedScore {
    double value;  // unit interval after clamping and 1-5 mapping
    std::string raw_span;
    ParseMethod method;
    bool clamped;
};

/// CoT: number inside the last "[semantic similarity = X]". Otherwise a bare
/// numeric response, else the last in-range number in the text (0-1, or an
/// integer 1-5 for the five-point prompt), else the last number clamped.
/// 1-5 values map to (s-1)/4. Throws ParseError when no number is present.
ParsedScore parse_score(std::string_view response, const PromptStrategy& strategy);

struct LlmBackend {
    std::shared_ptr<const ChatClient> client;
    std::string model = "mock";
    PromptTemplates templates = PromptTemplates::defaults();
};

/// render, complete at temperature 0 / 1200 tokens, parse. Errors come back
/// as ScoringError carrying the pair id.
SimilarityScore score_pair(const ExplanationPair& pair, const PromptStrategy& strategy,
                           std::span<const Exemplar> exemplars, const LlmBackend& backend);

enum class ExemplarSource {
    stratified,  // drawn from the dataset per run
    shipped,     // the hand-written CoT examples, reused verbatim
};

struct RunConfig {
    std::size_t n_runs = 3;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    PromptStrategy strategy{StrategyKind::cot_0to1};
    LlmBackend backend;
    Normalization normalization = Normalization::mean_over_5;
    ExemplarSource exemplar_source = ExemplarSource::stratified;
    /// Worked reasoning for drawn CoT exemplars, keyed by pair id.
    std::map<std::string, std::string> rationales;
    /// Concurrent pairs per run; 0 uses the backend's in-flight bound.
    std::size_t workers = 0;

    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

struct RunRecord {
    std::string pair_id;
    std::size_t run = 0;
    std::string prompt_sha256;
    std::string response;
    std::optional<double> parsed;
    std::optional<ParseMethod> method;
    bool clamped = false;
    std::string error;
};

struct PairOutcome {
    std::string pair_id;
    std::optional<SimilarityScore> score;  // mean over successful runs
    std::vector<std::optional<double>> runs;
    std::vector<std::string> failures;
    bool partial = false;
};

struct MultiRunResult {
    std::vector<PairOutcome> pairs;  // the pairs no run used as an exemplar
    std::vector<std::vector<std::string>> exemplar_ids;  // per run
    std::vector<RunRecord> records;  // run-major, dataset order within a run
    std::size_t unscored = 0;
};

MultiRunResult score_dataset_multi_run(const Dataset& dataset, const RunConfig& config);

}  // namespace sage
