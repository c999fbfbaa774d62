#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sage {

enum class ScoreOrigin { human_benchmark, embedding_scorer, llm_scorer };

std::string_view to_string(ScoreOrigin origin);

/// A similarity value on the unit interval. The constructor rejects values
/// outside [0,1]; use clamp() for raw scorer output.
class SimilarityScore {
public:
    SimilarityScore(double value, ScoreOrigin origin);

    /// Clamp a raw value into [0,1], recording whether clamping happened.
    static SimilarityScore clamp(double raw, ScoreOrigin origin);

    double value() const noexcept { return value_; }
    ScoreOrigin origin() const noexcept { return origin_; }
    bool clamped() const noexcept { return clamped_; }

    /// Same value, flagged as derived from clamped input.
    SimilarityScore marked_clamped() const noexcept { return {value_, origin_, true}; }

private:
    SimilarityScore(double value, ScoreOrigin origin, bool clamped)
        : value_(value), origin_(origin), clamped_(clamped) {}

    double value_;
    ScoreOrigin origin_;
    bool clamped_ = false;
};

struct ExplanationPair {
    std::string id;
    std::string code;
    std::string expert;
    std::string student;
    std::vector<int> scores;          // annotator scores, each 1..5
    std::optional<double> benchmark;  // unit interval when present
};

/// Throws ValidationError naming the violated field.
void validate(const ExplanationPair& pair);

enum class DataFormat { csv, jsonl };

DataFormat parse_data_format(std::string_view name);
/// Infers the format from the file extension (.csv, .jsonl, .json).
DataFormat data_format_for(const std::filesystem::path& path);

struct Provenance {
    std::string path;
    DataFormat format = DataFormat::jsonl;
};

/// Ordered, id-unique collection of validated pairs. Immutable once built.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<ExplanationPair> pairs, Provenance provenance = {});

    const std::vector<ExplanationPair>& pairs() const noexcept { return pairs_; }
    std::size_t size() const noexcept { return pairs_.size(); }
    bool empty() const noexcept { return pairs_.empty(); }
    const Provenance& provenance() const noexcept { return provenance_; }

    /// nullptr when the id is unknown.
    const ExplanationPair* find(std::string_view id) const;

    auto begin() const { return pairs_.begin(); }
    auto end() const { return pairs_.end(); }

private:
    std::vector<ExplanationPair> pairs_;
    std::map<std::string, std::size_t, std::less<>> index_;
    Provenance provenance_;
};

Dataset read_jsonl(std::istream& in, const std::string& source = "<stream>");
Dataset read_csv(std::istream& in, const std::string& source = "<stream>");
void write_jsonl(const Dataset& dataset, std::ostream& out);
void write_csv(const Dataset& dataset, std::ostream& out);

Dataset load_dataset(const std::filesystem::path& path, DataFormat format);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path, DataFormat format);

enum class Normalization { mean_over_5, shifted_quarter };

Normalization parse_normalization(std::string_view name);
std::string_view to_string(Normalization mode);

/// mean_over_5: mean/5. shifted_quarter: (mean-1)/4.
SimilarityScore normalize_benchmark(std::span<const int> scores,
                                    Normalization mode = Normalization::mean_over_5);

/// Stored benchmark if present, otherwise the normalized annotator mean.
std::optional<SimilarityScore> effective_benchmark(const ExplanationPair& pair,
                                                   Normalization mode = Normalization::mean_over_5);

/// Mean annotator score rounded half-up to 1..5; nullopt when unlabeled.
std::optional<int> label_of(const ExplanationPair& pair);

enum class Labeling { round_mean, per_annotator };

struct LabelDistribution {
    std::map<int, std::size_t> counts;
    std::map<int, double> fractions;
    std::size_t total = 0;
};

LabelDistribution dataset_stats(const Dataset& dataset, Labeling labeling = Labeling::round_mean);

/// Per-stratum sample sizes. One draw per non-empty stratum when k covers
/// every stratum, the rest by largest remainder on proportional shares.
std::map<int, std::size_t> stratum_allocation(const std::map<int, std::size_t>& counts, std::size_t k);

struct Sample {
    std::vector<ExplanationPair> exemplars;  // in dataset order
    Dataset remainder;
};

Sample stratified_sample(const Dataset& dataset, std::size_t k, std::uint64_t seed);

}  // namespace sage
