#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "sage/error.hpp"
#include "sage/llm.hpp"

namespace sage {

std::size_t PromptStrategy::exemplar_count() const noexcept {
    switch (kind_) {
        case StrategyKind::few_shot_0to1: return 6;
        case StrategyKind::cot_0to1: return 3;
        default: return 0;
    }
}

PromptStrategy parse_strategy(std::string_view name) {
    if (name == "baseline-1-5") return PromptStrategy(StrategyKind::baseline_1to5);
    if (name == "baseline-0-1") return PromptStrategy(StrategyKind::baseline_0to1);
    if (name == "few-shot") return PromptStrategy(StrategyKind::few_shot_0to1);
    if (name == "cot") return PromptStrategy(StrategyKind::cot_0to1);
    throw ConfigError(fmt::format("unknown strategy '{}' (expected baseline-1-5, baseline-0-1, few-shot or cot)", name));
}

std::string_view to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::baseline_1to5: return "baseline-1-5";
        case StrategyKind::baseline_0to1: return "baseline-0-1";
        case StrategyKind::few_shot_0to1: return "few-shot";
        case StrategyKind::cot_0to1: return "cot";
    }
    return "?";
}

std::vector<PromptStrategy> all_strategies() {
    return {PromptStrategy(StrategyKind::baseline_1to5), PromptStrategy(StrategyKind::baseline_0to1),
            PromptStrategy(StrategyKind::few_shot_0to1), PromptStrategy(StrategyKind::cot_0to1)};
}

Exemplar make_exemplar(const ExplanationPair& pair, Normalization mode, std::string rationale) {
    auto shown = effective_benchmark(pair, mode);
    if (!shown) throw ValidationError(fmt::format("exemplar '{}' has no benchmark to show", pair.id));
    return {pair, *shown, std::move(rationale)};
}

namespace {

const std::string declares_array = "Declares the array we want to use for our assignment";
const std::string initialize_array = "We initialize the array of type int to hold the specified numbers.";
const std::string while_loop = "run a while-loop as long as the remainder of num/divisor is not equal to 0";
const std::string check_divisor =
    "We could check whether the divisor is not a factor of the number by computing the remainder of the division "
    "of the number by the divisor.";

Exemplar shipped(std::string id, std::string user, std::string expert, double score, std::string rationale = {}) {
    ExplanationPair p{std::move(id), "", std::move(expert), std::move(user), {}, score};
    return {std::move(p), SimilarityScore(score, ScoreOrigin::human_benchmark), std::move(rationale)};
}

}  // namespace

std::vector<Exemplar> shipped_few_shot_exemplars() {
    return {shipped("shipped-fs-1", declares_array, initialize_array, 0.87),
            shipped("shipped-fs-2", while_loop, check_divisor, 0.75)};
}

std::vector<Exemplar> shipped_cot_exemplars() {
    return {
        shipped("shipped-cot-1", declares_array, initialize_array, 0.87,
                "Both the text is about declaration or initialization of array. The slight difference between the "
                "two texts is the second text provides additional information about the type of the declared array."),
        shipped("shipped-cot-2", while_loop, check_divisor, 0.75,
                "Both the text is about computing the checking whether divisor is a factor of number or not.  However, "
                "the first text is more specific about using a while-loop and the condition for the loop to continue, "
                "while the second text is more focused on the purpose of the operation, which is to check if the "
                "divisor is a factor of the number."),
        shipped("shipped-cot-3", "Loop start",
                "We need to increment the divisor repeatedly as long as the divisor is not a factor of the number.", 0.2,
                "Both texts are discussing loop. The first text is simply stating the start of a loop, while the "
                "second text is explaining a specific condition within a loop."),
    };
}

std::string format_shown_score(double value) {
    std::string s = fmt::format("{:.2f}", std::round(value * 100.0) / 100.0);
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    return s;
}

// ------------------------------------------------------------------ templates

namespace {

constexpr const char* assess_0to1 =
    "Assess the similarity of the two sentences and assign a similarity score on a scale from 0 to 1, with 0 "
    "indicating minimal similarity and 1 representing maximal similarity.";

constexpr const char* discuss =
    "Discuss how these two texts are similar and different, then assign a semantic similarity score between "
    "[0.0-1.0] which describes their semantic similarity:";

PromptTemplates make_defaults() {
    PromptTemplates t;
    t.baseline_1to5 =
        "Analyze if the two sentences are similar and provide a score between 1 to 5,  with 1 indicating minimal "
        "similarity and 5 representing maximal similarity. Provide semantic similarity score for  {user_explanation} "
        "and {expert_explanation} between 1 to 5. Only provide the score without any other text.";
    t.baseline_0to1 = fmt::format(
        "{} Provide semantic similarity score for {{user_explanation}} and {{expert_explanation}} between 0 to 1. "
        "Only provide the score without any other text.",
        assess_0to1);
    t.few_shot_exemplar = fmt::format(
        "{} Provide semantic similarity score for `{{user_explanation}}' and `{{expert_explanation}}' between 0 and "
        "1. Only provide the score without any other text. Similarity Score: {{score}}",
        assess_0to1);
    t.few_shot = fmt::format(
        "{{exemplars}}\n\n{} Provide semantic similarity score for {{user_explanation}} and {{expert_explanation}} "
        "between 0 to 1. Only provide the score without any other text. Similarity Score:",
        assess_0to1);
    t.cot_exemplar = fmt::format(
        "{}\n`{{user_explanation}}' and `{{expert_explanation}}'\nSimilarity: Lets think step by step. "
        "{{rationale}}Thus, these sentences have a [semantic similarity = {{score}}]",
        discuss);
    t.cot = fmt::format(
        "{{exemplars}}\n\n{}\n{{user_explanation}} and {{expert_explanation}}\nSimilarity: Lets think step by step",
        discuss);
    return t;
}

struct TemplateFile {
    const char* name;
    std::string PromptTemplates::*field;
};

constexpr TemplateFile template_files[] = {
    {"baseline_1to5.txt", &PromptTemplates::baseline_1to5},
    {"baseline_0to1.txt", &PromptTemplates::baseline_0to1},
    {"few_shot.txt", &PromptTemplates::few_shot},
    {"few_shot_exemplar.txt", &PromptTemplates::few_shot_exemplar},
    {"cot.txt", &PromptTemplates::cot},
    {"cot_exemplar.txt", &PromptTemplates::cot_exemplar},
};

}  // namespace

const PromptTemplates& PromptTemplates::defaults() {
    static const PromptTemplates t = make_defaults();
    return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("template directory not found: " + dir.string());
    PromptTemplates t = defaults();
    for (const auto& f : template_files) {
        std::ifstream in(dir / f.name, std::ios::binary);
        if (!in) continue;
        std::ostringstream ss;
        ss << in.rdbuf();
        t.*f.field = ss.str();
    }
    return t;
}

void PromptTemplates::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& f : template_files) {
        std::ofstream out(dir / f.name, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write template " + (dir / f.name).string());
        out << this->*f.field;
    }
}

std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& slots) {
    std::string out;
    out.reserve(tmpl.size() * 2);
    std::size_t i = 0;
    while (i < tmpl.size()) {
        const auto open = tmpl.find('{', i);
        if (open == std::string_view::npos) break;
        const auto close = tmpl.find('}', open + 1);
        if (close == std::string_view::npos) break;
        out.append(tmpl.substr(i, open - i));
        auto it = slots.find(tmpl.substr(open + 1, close - open - 1));
        if (it != slots.end()) {
            out.append(it->second);
            i = close + 1;
        } else {
            out.push_back('{');
            i = open + 1;
        }
    }
    out.append(tmpl.substr(std::min(i, tmpl.size())));
    return out;
}

std::vector<ChatMessage> render_prompt(const PromptStrategy& strategy, const ExplanationPair& pair,
                                       std::span<const Exemplar> exemplars, const PromptTemplates& templates) {
    if (exemplars.size() != strategy.exemplar_count()) {
        throw ConfigError(fmt::format("strategy {} takes {} exemplars, got {}", to_string(strategy.kind()),
                                      strategy.exemplar_count(), exemplars.size()));
    }
    std::map<std::string, std::string, std::less<>> slots = {
        {"user_explanation", pair.student},
        {"expert_explanation", pair.expert},
    };

    const std::string* body = nullptr;
    const std::string* block = nullptr;
    switch (strategy.kind()) {
        case StrategyKind::baseline_1to5: body = &templates.baseline_1to5; break;
        case StrategyKind::baseline_0to1: body = &templates.baseline_0to1; break;
        case StrategyKind::few_shot_0to1:
            body = &templates.few_shot;
            block = &templates.few_shot_exemplar;
            break;
        case StrategyKind::cot_0to1:
            body = &templates.cot;
            block = &templates.cot_exemplar;
            break;
    }

    if (block) {
        std::string joined;
        for (std::size_t i = 0; i < exemplars.size(); ++i) {
            const auto& ex = exemplars[i];
            const std::string rationale = ex.rationale.empty() ? "" : ex.rationale + " ";
            if (i) joined += "\n\n";
            joined += fill_template(*block, {{"user_explanation", ex.pair.student},
                                             {"expert_explanation", ex.pair.expert},
                                             {"score", format_shown_score(ex.shown_score.value())},
                                             {"rationale", rationale}});
        }
        slots.emplace("exemplars", std::move(joined));
    }
    return {{Role::user, fill_template(*body, slots)}};
}

}  // namespace sage
