#include "sage/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "sage/error.hpp"
#include "sage/text.hpp"

namespace sage {

using nlohmann::json;

namespace {

void check_inputs(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw ValidationError(fmt::format("correlation inputs differ in length ({} vs {})", xs.size(), ys.size()));
    }
    if (xs.size() < 2) throw ValidationError("correlation needs at least two values");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw ValidationError("correlation input is not finite");
    }
}

}  // namespace

double pearson(std::span<const double> xs, std::span<const double> ys) {
    check_inputs(xs, ys);
    const auto n = static_cast<long double>(xs.size());
    long double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    long double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const long double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) throw ValidationError("correlation undefined for constant input");
    const long double r = sxy / std::sqrt(sxx * syy);
    return static_cast<double>(std::clamp(r, -1.0L, 1.0L));
}

std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    check_inputs(xs, ys);
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    return pearson(rx, ry);
}

// ------------------------------------------------------------------ predictions

std::vector<Prediction> join_predictions(const Dataset& dataset, std::vector<Prediction> predictions,
                                         Normalization mode) {
    std::vector<std::string> unknown;
    for (auto& p : predictions) {
        const auto* pair = dataset.find(p.pair_id);
        if (!pair) {
            unknown.push_back(p.pair_id);
            continue;
        }
        p.benchmark = effective_benchmark(*pair, mode);
        p.label = label_of(*pair);
    }
    if (!unknown.empty()) {
        std::string ids;
        for (std::size_t i = 0; i < unknown.size() && i < 20; ++i) ids += (i ? ", " : "") + unknown[i];
        if (unknown.size() > 20) ids += fmt::format(" (+{} more)", unknown.size() - 20);
        throw LookupError(fmt::format("predictions reference unknown pair ids: {}", ids));
    }
    return predictions;
}

namespace {

ScoreOrigin parse_origin(const std::string& s) {
    if (s == "human-benchmark") return ScoreOrigin::human_benchmark;
    if (s == "embedding-scorer") return ScoreOrigin::embedding_scorer;
    if (s == "llm-scorer") return ScoreOrigin::llm_scorer;
    throw ValidationError("unknown score origin '" + s + "'");
}

}  // namespace

json to_json(const Prediction& p) {
    json j;
    j["pair_id"] = p.pair_id;
    if (p.predicted) {
        j["predicted"] = p.predicted->value();
        j["origin"] = to_string(p.predicted->origin());
        j["clamped"] = p.predicted->clamped();
    } else {
        j["predicted"] = nullptr;
    }
    j["benchmark"] = p.benchmark ? json(p.benchmark->value()) : json(nullptr);
    j["label"] = p.label ? json(*p.label) : json(nullptr);
    j["partial"] = p.partial;
    return j;
}

Prediction prediction_from_json(const json& j) {
    Prediction p;
    p.pair_id = j.at("pair_id").get<std::string>();
    if (auto it = j.find("predicted"); it != j.end() && !it->is_null()) {
        const auto origin = parse_origin(j.value("origin", std::string("llm-scorer")));
        SimilarityScore s(it->get<double>(), origin);
        p.predicted = j.value("clamped", false) ? s.marked_clamped() : s;
    }
    if (auto it = j.find("benchmark"); it != j.end() && !it->is_null()) {
        p.benchmark = SimilarityScore(it->get<double>(), ScoreOrigin::human_benchmark);
    }
    if (auto it = j.find("label"); it != j.end() && !it->is_null()) p.label = it->get<int>();
    p.partial = j.value("partial", false);
    return p;
}

void write_predictions(std::span<const Prediction> predictions, std::ostream& out) {
    for (const auto& p : predictions) out << to_json(p).dump() << '\n';
}

std::vector<Prediction> read_predictions(std::istream& in, const std::string& source) {
    std::vector<Prediction> out;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        try {
            out.push_back(prediction_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw ValidationError(fmt::format("{}: row {}: {}", source, row, e.what()));
        }
    }
    return out;
}

// ------------------------------------------------------------------ reports

json to_json(const EvalReport& r) {
    json mae = json::object();
    for (const auto& [label, v] : r.per_label_mae) mae[std::to_string(label)] = v;
    return {{"scorer", r.scorer_name}, {"family", r.family},     {"n", r.n},
            {"pearson", r.pearson},    {"spearman", r.spearman}, {"per_label_mae", mae},
            {"unscored", r.unscored}};
}

EvalReport evaluate(std::span<const Prediction> predictions, std::string scorer_name, std::string family) {
    EvalReport report;
    report.scorer_name = std::move(scorer_name);
    report.family = std::move(family);
    std::vector<double> xs, ys;
    std::map<int, std::pair<double, std::size_t>> mae;
    for (const auto& p : predictions) {
        if (!p.predicted || !p.benchmark) {
            ++report.unscored;
            continue;
        }
        xs.push_back(p.predicted->value());
        ys.push_back(p.benchmark->value());
        if (p.label) {
            auto& [sum, n] = mae[*p.label];
            sum += std::abs(p.predicted->value() - p.benchmark->value());
            ++n;
        }
    }
    if (xs.size() < 2) {
        throw ValidationError(fmt::format("insufficient data: {} scored prediction(s), need at least 2", xs.size()));
    }
    report.n = xs.size();
    report.pearson = pearson(xs, ys);
    report.spearman = spearman(xs, ys);
    for (const auto& [label, acc] : mae) report.per_label_mae[label] = acc.first / static_cast<double>(acc.second);
    return report;
}

std::string scorer_family(std::string_view scorer_name) {
    if (scorer_name.starts_with("llm")) return "llm";
    if (scorer_name.starts_with("embedding") || scorer_name.starts_with("token")) return "embedding";
    return "other";
}

// ------------------------------------------------------------------ error analysis

std::set<double> numeric_tokens(std::string_view text) {
    std::set<double> out;
    for (const auto& t : scan_numbers(text)) out.insert(t.value);
    return out;
}

json to_json(const ErrorFlag& f) {
    return {{"pair_id", f.pair_id},
            {"expert_numbers", f.expert_numbers},
            {"student_numbers", f.student_numbers},
            {"predicted", f.predicted},
            {"benchmark", f.benchmark ? json(*f.benchmark) : json(nullptr)},
            {"reason", f.reason}};
}

std::vector<ErrorFlag> numeric_mismatch_flags(const Dataset& dataset, std::span<const Prediction> predictions,
                                              double threshold) {
    std::vector<ErrorFlag> flags;
    for (const auto& p : predictions) {
        if (!p.predicted || p.predicted->value() < threshold) continue;
        const auto* pair = dataset.find(p.pair_id);
        if (!pair) continue;
        auto expert = numeric_tokens(pair->expert);
        auto student = numeric_tokens(pair->student);
        if (expert == student) continue;
        ErrorFlag f;
        f.pair_id = p.pair_id;
        f.expert_numbers = std::move(expert);
        f.student_numbers = std::move(student);
        f.predicted = p.predicted->value();
        if (p.benchmark) {
            f.benchmark = p.benchmark->value();
        } else if (auto b = effective_benchmark(*pair)) {
            f.benchmark = b->value();
        }
        flags.push_back(std::move(f));
    }
    return flags;
}

// ------------------------------------------------------------------ table

TableFormat parse_table_format(std::string_view name) {
    if (name == "text") return TableFormat::text;
    if (name == "csv") return TableFormat::csv;
    throw ConfigError(fmt::format("unknown table format '{}' (expected text or csv)", name));
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

}  // namespace

std::string results_table(std::span<const EvalReport> reports, TableFormat format) {
    // Group by family, keeping first-appearance order of families and rows.
    std::vector<std::string> families;
    for (const auto& r : reports) {
        if (std::find(families.begin(), families.end(), r.family) == families.end()) families.push_back(r.family);
    }
    std::vector<const EvalReport*> rows;
    for (const auto& fam : families) {
        for (const auto& r : reports) {
            if (r.family == fam) rows.push_back(&r);
        }
    }

    auto fixed = [](double v) { return fmt::format("{:.3f}", v); };
    std::string best_p, best_s;
    for (const auto* r : rows) {
        // Compare the printed values so that ties after rounding share the mark.
        if (best_p.empty() || std::stod(fixed(r->pearson)) > std::stod(best_p)) best_p = fixed(r->pearson);
        if (best_s.empty() || std::stod(fixed(r->spearman)) > std::stod(best_s)) best_s = fixed(r->spearman);
    }

    std::string out;
    if (format == TableFormat::csv) {
        out = "family,scorer,n,pearson,spearman,best_pearson,best_spearman,unscored\n";
        for (const auto* r : rows) {
            out += fmt::format("{},{},{},{},{},{},{},{}\n", csv_field(r->family), csv_field(r->scorer_name), r->n,
                               fixed(r->pearson), fixed(r->spearman), fixed(r->pearson) == best_p ? 1 : 0,
                               fixed(r->spearman) == best_s ? 1 : 0, r->unscored);
        }
        return out;
    }

    std::size_t wf = 6, ws = 6;
    for (const auto* r : rows) {
        wf = std::max(wf, r->family.size());
        ws = std::max(ws, r->scorer_name.size());
    }
    out += fmt::format("{:<{}}  {:<{}}  {:>6}  {:>8}  {:>8}\n", "Family", wf, "Scorer", ws, "n", "Pearson", "Spearman");
    for (const auto* r : rows) {
        const auto p = fixed(r->pearson) + (fixed(r->pearson) == best_p ? "*" : " ");
        const auto s = fixed(r->spearman) + (fixed(r->spearman) == best_s ? "*" : " ");
        out += fmt::format("{:<{}}  {:<{}}  {:>6}  {:>8}  {:>8}\n", r->family, wf, r->scorer_name, ws, r->n, p, s);
    }
    return out;
}

}  // namespace sage
