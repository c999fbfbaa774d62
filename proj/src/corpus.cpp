#include "sage/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "sage/error.hpp"

namespace sage {

using nlohmann::json;

std::string_view to_string(ScoreOrigin origin) {
    switch (origin) {
        case ScoreOrigin::human_benchmark: return "human-benchmark";
        case ScoreOrigin::embedding_scorer: return "embedding-scorer";
        case ScoreOrigin::llm_scorer: return "llm-scorer";
    }
    return "unknown";
}

SimilarityScore::SimilarityScore(double value, ScoreOrigin origin) : value_(value), origin_(origin) {
    if (!(value >= 0.0 && value <= 1.0)) {
        throw ValidationError(fmt::format("similarity score {} outside [0,1]", value));
    }
}

SimilarityScore SimilarityScore::clamp(double raw, ScoreOrigin origin) {
    if (raw >= 0.0 && raw <= 1.0) return {raw, origin, false};
    // NaN lands on 0.
    return {raw > 1.0 ? 1.0 : 0.0, origin, true};
}

namespace {

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string row_error(std::size_t row, std::string_view field, std::string_view what) {
    return fmt::format("row {}: {}: {}", row, field, what);
}

void validate_row(const ExplanationPair& pair, std::size_t row) {
    try {
        validate(pair);
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("row {}: {}", row, e.what()));
    }
}

}  // namespace

void validate(const ExplanationPair& pair) {
    if (pair.id.empty()) throw ValidationError("id: empty identifier");
    if (blank(pair.expert)) throw ValidationError("expert: explanation is empty");
    if (blank(pair.student)) throw ValidationError("student: explanation is empty");
    for (int s : pair.scores) {
        if (s < 1 || s > 5) {
            throw ValidationError(fmt::format("annotator_scores: score {} outside 1..5", s));
        }
    }
    if (pair.benchmark && !(*pair.benchmark >= 0.0 && *pair.benchmark <= 1.0)) {
        throw ValidationError(fmt::format("benchmark: {} outside [0,1]", *pair.benchmark));
    }
}

DataFormat parse_data_format(std::string_view name) {
    if (name == "csv") return DataFormat::csv;
    if (name == "jsonl") return DataFormat::jsonl;
    throw ConfigError(fmt::format("unknown dataset format '{}' (expected csv or jsonl)", name));
}

DataFormat data_format_for(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".csv") return DataFormat::csv;
    if (ext == ".jsonl" || ext == ".json") return DataFormat::jsonl;
    throw ConfigError(fmt::format("cannot infer dataset format of {}; pass --format", path.string()));
}

Dataset::Dataset(std::vector<ExplanationPair> pairs, Provenance provenance)
    : pairs_(std::move(pairs)), provenance_(std::move(provenance)) {
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        auto [it, fresh] = index_.emplace(pairs_[i].id, i);
        if (!fresh) {
            throw ValidationError(fmt::format("row {}: id: duplicate id '{}'", i + 1, pairs_[i].id));
        }
    }
}

const ExplanationPair* Dataset::find(std::string_view id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &pairs_[it->second];
}

// ---------------------------------------------------------------- JSONL

namespace {

std::string take_string(const json& obj, const char* key, std::size_t row) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw ValidationError(row_error(row, key, "missing or not a string"));
    }
    return it->get<std::string>();
}

ExplanationPair pair_from_json(const json& obj, std::size_t row) {
    if (!obj.is_object()) throw ValidationError(row_error(row, "row", "not a JSON object"));
    ExplanationPair p;
    p.id = take_string(obj, "id", row);
    p.code = take_string(obj, "code", row);
    p.expert = take_string(obj, "expert", row);
    p.student = take_string(obj, "student", row);
    auto scores = obj.find("scores");
    if (scores == obj.end() || !scores->is_array()) {
        throw ValidationError(row_error(row, "annotator_scores", "missing or not an array"));
    }
    for (const auto& s : *scores) {
        if (!s.is_number_integer()) {
            throw ValidationError(row_error(row, "annotator_scores", "non-integer score " + s.dump()));
        }
        p.scores.push_back(s.get<int>());
    }
    auto bench = obj.find("benchmark");
    if (bench != obj.end() && !bench->is_null()) {
        if (!bench->is_number()) throw ValidationError(row_error(row, "benchmark", "not a number"));
        p.benchmark = bench->get<double>();
    }
    validate_row(p, row);
    return p;
}

json pair_to_json(const ExplanationPair& p) {
    json obj = {{"id", p.id}, {"code", p.code}, {"expert", p.expert}, {"student", p.student},
                {"scores", p.scores}};
    obj["benchmark"] = p.benchmark ? json(*p.benchmark) : json(nullptr);
    return obj;
}

}  // namespace

Dataset read_jsonl(std::istream& in, const std::string& source) {
    std::vector<ExplanationPair> pairs;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (blank(line)) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError(row_error(row, "row", std::string("malformed JSON: ") + e.what()));
        }
        pairs.push_back(pair_from_json(obj, row));
    }
    return Dataset(std::move(pairs), {source, DataFormat::jsonl});
}

void write_jsonl(const Dataset& dataset, std::ostream& out) {
    for (const auto& p : dataset) out << pair_to_json(p).dump() << '\n';
}

// ---------------------------------------------------------------- CSV

namespace {

constexpr std::string_view csv_header = "id,code,expert,student,scores,benchmark";

// Reads one RFC 4180 record; quoted fields may span lines. False at EOF.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    if (in.peek() == std::char_traits<char>::eof()) return false;
    std::string field;
    bool quoted = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            break;
        } else if (c == '\r') {
            if (in.peek() == '\n') in.get(c);
            break;
        } else {
            field.push_back(c);
        }
    }
    if (quoted) throw ValidationError("unterminated quoted CSV field");
    fields.push_back(std::move(field));
    return any;
}

std::string csv_quote(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::vector<int> parse_scores(const std::string& cell, std::size_t row) {
    std::vector<int> scores;
    if (blank(cell)) return scores;
    std::stringstream ss(cell);
    std::string item;
    while (std::getline(ss, item, ';')) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || !blank(std::string_view(item).substr(used))) {
            throw ValidationError(row_error(row, "annotator_scores", "non-integer score '" + item + "'"));
        }
        scores.push_back(v);
    }
    return scores;
}

}  // namespace

Dataset read_csv(std::istream& in, const std::string& source) {
    std::vector<std::string> fields;
    if (!read_record(in, fields)) {
        throw ValidationError(fmt::format("{}: missing CSV header", source));
    }
    std::string header;
    for (std::size_t i = 0; i < fields.size(); ++i) header += (i ? "," : "") + fields[i];
    if (header != csv_header) {
        throw ValidationError(fmt::format("{}: CSV header must be '{}', got '{}'", source, csv_header, header));
    }
    std::vector<ExplanationPair> pairs;
    std::size_t row = 0;
    while (true) {
        try {
            if (!read_record(in, fields)) break;
        } catch (const ValidationError& e) {
            throw ValidationError(row_error(row + 1, "row", e.what()));
        }
        ++row;
        if (fields.size() == 1 && blank(fields[0])) continue;
        if (fields.size() != 6) {
            throw ValidationError(row_error(row, "row", fmt::format("expected 6 fields, got {}", fields.size())));
        }
        ExplanationPair p;
        p.id = fields[0];
        p.code = fields[1];
        p.expert = fields[2];
        p.student = fields[3];
        p.scores = parse_scores(fields[4], row);
        if (!blank(fields[5])) {
            try {
                std::size_t used = 0;
                p.benchmark = std::stod(fields[5], &used);
                if (!blank(std::string_view(fields[5]).substr(used))) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ValidationError(row_error(row, "benchmark", "not a number: '" + fields[5] + "'"));
            }
        }
        validate_row(p, row);
        pairs.push_back(std::move(p));
    }
    return Dataset(std::move(pairs), {source, DataFormat::csv});
}

void write_csv(const Dataset& dataset, std::ostream& out) {
    out << csv_header << '\n';
    for (const auto& p : dataset) {
        std::string scores;
        for (std::size_t i = 0; i < p.scores.size(); ++i) scores += (i ? ";" : "") + std::to_string(p.scores[i]);
        out << csv_quote(p.id) << ',' << csv_quote(p.code) << ',' << csv_quote(p.expert) << ','
            << csv_quote(p.student) << ',' << scores << ',';
        if (p.benchmark) out << fmt::format("{}", *p.benchmark);
        out << '\n';
    }
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(fmt::format("cannot open dataset {}", path.string()));
    try {
        return format == DataFormat::csv ? read_csv(in, path.string()) : read_jsonl(in, path.string());
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

Dataset load_dataset(const std::filesystem::path& path) { return load_dataset(path, data_format_for(path)); }

void save_dataset(const Dataset& dataset, const std::filesystem::path& path, DataFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    if (format == DataFormat::csv) {
        write_csv(dataset, out);
    } else {
        write_jsonl(dataset, out);
    }
}

// ---------------------------------------------------------------- labels

Normalization parse_normalization(std::string_view name) {
    if (name == "mean-over-5") return Normalization::mean_over_5;
    if (name == "shifted-quarter") return Normalization::shifted_quarter;
    throw ConfigError(fmt::format("unknown normalization '{}' (expected mean-over-5 or shifted-quarter)", name));
}

std::string_view to_string(Normalization mode) {
    return mode == Normalization::mean_over_5 ? "mean-over-5" : "shifted-quarter";
}

SimilarityScore normalize_benchmark(std::span<const int> scores, Normalization mode) {
    if (scores.empty()) throw ValidationError("annotator_scores: cannot normalize an empty score list");
    long sum = 0;
    for (int s : scores) {
        if (s < 1 || s > 5) throw ValidationError(fmt::format("annotator_scores: score {} outside 1..5", s));
        sum += s;
    }
    const double n = static_cast<double>(scores.size());
    const double value = mode == Normalization::mean_over_5 ? sum / (5.0 * n) : (sum - n) / (4.0 * n);
    return SimilarityScore(value, ScoreOrigin::human_benchmark);
}

std::optional<SimilarityScore> effective_benchmark(const ExplanationPair& pair, Normalization mode) {
    if (pair.benchmark) return SimilarityScore(*pair.benchmark, ScoreOrigin::human_benchmark);
    if (!pair.scores.empty()) return normalize_benchmark(pair.scores, mode);
    return std::nullopt;
}

std::optional<int> label_of(const ExplanationPair& pair) {
    if (pair.scores.empty()) return std::nullopt;
    const long n = static_cast<long>(pair.scores.size());
    const long sum = std::accumulate(pair.scores.begin(), pair.scores.end(), 0L);
    // floor(sum/n + 1/2) in integers
    return static_cast<int>((2 * sum + n) / (2 * n));
}

LabelDistribution dataset_stats(const Dataset& dataset, Labeling labeling) {
    LabelDistribution dist;
    for (const auto& p : dataset) {
        if (p.scores.empty()) throw ValidationError(fmt::format("pair '{}' has no annotator scores", p.id));
        if (labeling == Labeling::round_mean) {
            ++dist.counts[*label_of(p)];
            ++dist.total;
        } else {
            for (int s : p.scores) ++dist.counts[s];
            dist.total += p.scores.size();
        }
    }
    for (const auto& [label, count] : dist.counts) {
        dist.fractions[label] = static_cast<double>(count) / static_cast<double>(dist.total);
    }
    return dist;
}

// ---------------------------------------------------------------- sampling

std::map<int, std::size_t> stratum_allocation(const std::map<int, std::size_t>& counts, std::size_t k) {
    struct Stratum {
        int label;
        std::size_t count;
        std::size_t alloc;
        std::size_t capacity;
        std::uint64_t remainder = 0;
        bool active = true;
    };
    std::vector<Stratum> strata;
    std::size_t total = 0;
    for (const auto& [label, count] : counts) {
        if (count == 0) continue;
        strata.push_back({label, count, 0, count});
        total += count;
    }
    if (k > total) throw ValidationError(fmt::format("sample size {} exceeds dataset size {}", k, total));

    std::size_t seats = k;
    if (k >= strata.size()) {
        for (auto& s : strata) {
            s.alloc = 1;
            s.capacity = s.count - 1;
        }
        seats -= strata.size();
    }

    // Proportional quotas seats*count/weight; strata whose quota exceeds
    // their capacity are saturated and the rest re-divided.
    while (true) {
        std::uint64_t weight = 0;
        for (const auto& s : strata)
            if (s.active) weight += s.count;
        bool saturated = false;
        for (auto& s : strata) {
            if (s.active && static_cast<std::uint64_t>(seats) * s.count > s.capacity * weight) {
                s.alloc += s.capacity;
                seats -= s.capacity;
                s.capacity = 0;
                s.active = false;
                saturated = true;
            }
        }
        if (saturated) continue;
        std::size_t handed = 0;
        for (auto& s : strata) {
            if (!s.active || weight == 0) continue;
            const std::uint64_t num = static_cast<std::uint64_t>(seats) * s.count;
            s.alloc += num / weight;
            handed += num / weight;
            s.remainder = num % weight;
        }
        std::vector<Stratum*> order;
        for (auto& s : strata)
            if (s.active) order.push_back(&s);
        std::stable_sort(order.begin(), order.end(), [](const Stratum* a, const Stratum* b) {
            if (a->remainder != b->remainder) return a->remainder > b->remainder;
            return a->count > b->count;
        });
        for (std::size_t i = 0; i < seats - handed; ++i) ++order[i]->alloc;
        break;
    }

    std::map<int, std::size_t> out;
    for (const auto& s : strata) out[s.label] = s.alloc;
    return out;
}

namespace {

// Uniform integer in [0, bound) from the raw engine output, so draws are
// identical across standard library implementations.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % bound);
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

}  // namespace

Sample stratified_sample(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    if (k > dataset.size()) {
        throw ValidationError(fmt::format("sample size {} exceeds dataset size {}", k, dataset.size()));
    }
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto label = label_of(dataset.pairs()[i]);
        if (!label) {
            throw ValidationError(fmt::format("pair '{}' has no annotator scores to stratify on", dataset.pairs()[i].id));
        }
        members[*label].push_back(i);
    }
    std::map<int, std::size_t> counts;
    for (const auto& [label, idx] : members) counts[label] = idx.size();
    const auto alloc = stratum_allocation(counts, k);

    std::mt19937_64 rng(seed);
    std::vector<bool> chosen(dataset.size(), false);
    for (auto& [label, idx] : members) {
        const std::size_t take = alloc.at(label);
        for (std::size_t i = 0; i < take; ++i) {
            std::swap(idx[i], idx[i + bounded(rng, idx.size() - i)]);
            chosen[idx[i]] = true;
        }
    }

    Sample out;
    std::vector<ExplanationPair> rest;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        (chosen[i] ? out.exemplars : rest).push_back(dataset.pairs()[i]);
    }
    out.remainder = Dataset(std::move(rest), dataset.provenance());
    return out;
}

}  // namespace sage
