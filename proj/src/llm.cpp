#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "sage/error.hpp"
#include "sage/llm.hpp"
#include "sage/text.hpp"

namespace sage {

std::string_view to_string(ParseMethod method) {
    switch (method) {
        case ParseMethod::delimiter: return "delimiter";
        case ParseMethod::bare_number: return "bare-number";
        case ParseMethod::fallback_last_number: return "fallback-last-number";
    }
    return "?";
}

namespace {

std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

const std::regex& cot_delimiter() {
    static const std::regex re(R"(\[\s*semantic\s+similarity\s*[=:]\s*(-?(?:\d+(?:\.\d*)?|\.\d+))\s*\])",
                               std::regex::icase | std::regex::optimize);
    return re;
}

}  // namespace

ParsedScore parse_score(std::string_view response, const PromptStrategy& strategy) {
    const bool five = strategy.five_point();
    const double lo = five ? 1.0 : 0.0;
    const double hi = five ? 5.0 : 1.0;

    auto finish = [&](double raw, std::string_view span, ParseMethod method) {
        const bool clamped = !(raw >= lo && raw <= hi);
        double v = clamped ? (raw > hi ? hi : lo) : raw;
        if (five) v = (v - 1.0) / 4.0;
        return ParsedScore{v, std::string(span), method, clamped};
    };

    if (strategy.kind() == StrategyKind::cot_0to1) {
        std::cmatch last;
        bool found = false;
        const char* begin = response.data();
        const char* end = begin + response.size();
        for (std::cregex_iterator it(begin, end, cot_delimiter()), stop; it != stop; ++it) {
            last = *it;
            found = true;
        }
        if (found) {
            if (auto v = parse_number(std::string_view(last[1].first, static_cast<std::size_t>(last[1].length())))) {
                return finish(*v, std::string_view(last[0].first, static_cast<std::size_t>(last[0].length())),
                              ParseMethod::delimiter);
            }
        }
    }

    const auto trimmed = trim(response);
    if (auto v = parse_number(trimmed)) return finish(*v, trimmed, ParseMethod::bare_number);

    const auto numbers = scan_numbers(response);
    for (auto it = numbers.rbegin(); it != numbers.rend(); ++it) {
        const bool in_range = five ? (it->value >= 1.0 && it->value <= 5.0 && it->value == std::floor(it->value) &&
                                      it->text.find('.') == std::string_view::npos)
                                   : (it->value >= 0.0 && it->value <= 1.0);
        if (in_range) return finish(it->value, it->text, ParseMethod::fallback_last_number);
    }
    if (!numbers.empty()) {
        return finish(numbers.back().value, numbers.back().text, ParseMethod::fallback_last_number);
    }
    throw ParseError("no score found in model response", std::string(response));
}

// ------------------------------------------------------------------ scoring

namespace {

struct Attempt {
    std::string prompt;
    std::string response;
    std::optional<ParsedScore> parsed;
    std::string error;
    ScoringError::Cause cause = ScoringError::Cause::other;
};

Attempt attempt(const ExplanationPair& pair, const PromptStrategy& strategy, std::span<const Exemplar> exemplars,
                const LlmBackend& backend) {
    Attempt a;
    ChatRequest request;
    request.model = backend.model;
    request.messages = render_prompt(strategy, pair, exemplars, backend.templates);
    a.prompt = request.messages.front().content;
    try {
        const auto response = backend.client->complete(request);
        a.response = response.text;
        a.parsed = parse_score(response.text, strategy);
    } catch (const ParseError& e) {
        a.error = e.what();
        a.cause = ScoringError::Cause::parse;
    } catch (const ProviderError& e) {
        a.error = e.what();
        a.cause = ScoringError::Cause::transport;
    } catch (const std::exception& e) {
        a.error = e.what();
    }
    return a;
}

}  // namespace

SimilarityScore score_pair(const ExplanationPair& pair, const PromptStrategy& strategy,
                           std::span<const Exemplar> exemplars, const LlmBackend& backend) {
    if (!backend.client) throw ConfigError("LLM backend is not configured");
    const auto a = attempt(pair, strategy, exemplars, backend);
    if (!a.parsed) throw ScoringError(pair.id, a.cause, a.error, a.response);
    return SimilarityScore::clamp(a.parsed->value, ScoreOrigin::llm_scorer);
}

void RunConfig::validate() const {
    if (n_runs == 0) throw ConfigError("n_runs must be positive");
    if (seeds.size() != n_runs) {
        throw ConfigError(fmt::format("{} seeds given for {} runs", seeds.size(), n_runs));
    }
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ConfigError("seeds must be pairwise distinct");
    }
    if (!backend.client) throw ConfigError("LLM backend is not configured");
    if (exemplar_source == ExemplarSource::shipped && strategy.kind() != StrategyKind::cot_0to1) {
        throw ConfigError("shipped exemplars exist only for the cot strategy");
    }
}

MultiRunResult score_dataset_multi_run(const Dataset& dataset, const RunConfig& config) {
    config.validate();
    const auto& strategy = config.strategy;
    const std::size_t need = strategy.exemplar_count();

    MultiRunResult result;
    std::vector<std::vector<Exemplar>> run_exemplars(config.n_runs);
    std::set<std::string> used;
    for (std::size_t r = 0; r < config.n_runs; ++r) {
        std::vector<std::string> ids;
        if (need > 0 && config.exemplar_source == ExemplarSource::shipped) {
            run_exemplars[r] = shipped_cot_exemplars();
        } else if (need > 0) {
            auto sample = stratified_sample(dataset, need, config.seeds[r]);
            for (const auto& p : sample.exemplars) {
                std::string rationale;
                if (strategy.kind() == StrategyKind::cot_0to1) {
                    if (auto it = config.rationales.find(p.id); it != config.rationales.end()) rationale = it->second;
                }
                run_exemplars[r].push_back(make_exemplar(p, config.normalization, std::move(rationale)));
            }
        }
        for (const auto& ex : run_exemplars[r]) ids.push_back(ex.pair.id);
        for (const auto& p : run_exemplars[r]) used.insert(p.pair.id);
        result.exemplar_ids.push_back(std::move(ids));
    }

    std::vector<const ExplanationPair*> scored;
    for (const auto& p : dataset) {
        if (!used.count(p.id)) scored.push_back(&p);
    }

    const std::size_t workers =
        std::max<std::size_t>(1, config.workers ? config.workers : config.backend.client->max_in_flight());
    std::vector<std::vector<Attempt>> attempts(config.n_runs, std::vector<Attempt>(scored.size()));
    for (std::size_t r = 0; r < config.n_runs; ++r) {
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (std::size_t i = next++; i < scored.size(); i = next++) {
                attempts[r][i] = attempt(*scored[i], strategy, run_exemplars[r], config.backend);
            }
        };
        if (workers == 1 || scored.size() < 2) {
            work();
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t w = 0; w < std::min(workers, scored.size()); ++w) pool.emplace_back(work);
        }
    }

    for (std::size_t r = 0; r < config.n_runs; ++r) {
        for (std::size_t i = 0; i < scored.size(); ++i) {
            const auto& a = attempts[r][i];
            RunRecord rec;
            rec.pair_id = scored[i]->id;
            rec.run = r;
            rec.prompt_sha256 = sha256_hex(a.prompt);
            rec.response = a.response;
            if (a.parsed) {
                rec.parsed = a.parsed->value;
                rec.method = a.parsed->method;
                rec.clamped = a.parsed->clamped;
            } else {
                rec.error = a.error;
            }
            result.records.push_back(std::move(rec));
        }
    }

    for (std::size_t i = 0; i < scored.size(); ++i) {
        PairOutcome out;
        out.pair_id = scored[i]->id;
        double sum = 0.0;
        std::size_t ok = 0;
        bool clamped = false;
        for (std::size_t r = 0; r < config.n_runs; ++r) {
            const auto& a = attempts[r][i];
            if (a.parsed) {
                out.runs.emplace_back(a.parsed->value);
                sum += a.parsed->value;
                clamped = clamped || a.parsed->clamped;
                ++ok;
            } else {
                out.runs.emplace_back(std::nullopt);
                out.failures.push_back(fmt::format("run {}: {}", r, a.error));
            }
        }
        if (ok > 0) {
            auto s = SimilarityScore::clamp(sum / static_cast<double>(ok), ScoreOrigin::llm_scorer);
            out.score = clamped ? s.marked_clamped() : s;
            out.partial = ok < config.n_runs;
        } else {
            ++result.unscored;
        }
        result.pairs.push_back(std::move(out));
    }
    return result;
}

}  // namespace sage
