#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sage/corpus.hpp"

namespace sage {

/// Sample Pearson correlation, two-pass in extended precision. Throws
/// ValidationError on length mismatch, fewer than two values, or a constant
/// input.
double pearson(std::span<const double> xs, std::span<const double> ys);

/// Ranks 1..n; tied values share the mean of their rank block.
std::vector<double> average_ranks(std::span<const double> xs);

/// Pearson over average ranks.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct Prediction {
    std::string pair_id;
    std::optional<SimilarityScore> predicted;  // empty when every attempt failed
    std::optional<SimilarityScore> benchmark;
    std::optional<int> label;
    bool partial = false;
};

/// Attach benchmark and label from the dataset. Throws LookupError naming
/// every id the dataset does not contain.
std::vector<Prediction> join_predictions(const Dataset& dataset, std::vector<Prediction> predictions,
                                         Normalization mode = Normalization::mean_over_5);

nlohmann::json to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);
void write_predictions(std::span<const Prediction> predictions, std::ostream& out);
std::vector<Prediction> read_predictions(std::istream& in, const std::string& source = "<stream>");

struct EvalReport {
    std::string scorer_name;
    std::string family;
    std::size_t n = 0;
    double pearson = 0.0;
    double spearman = 0.0;
    std::map<int, double> per_label_mae;
    std::size_t unscored = 0;  // predictions without a score or benchmark
};

nlohmann::json to_json(const EvalReport& r);

/// Correlations over predictions that carry both a score and a benchmark;
/// the rest are counted, never imputed.
EvalReport evaluate(std::span<const Prediction> predictions, std::string scorer_name = {}, std::string family = {});

/// "embedding" for the embedding scorers, "llm" for llm[-strategy] names.
std::string scorer_family(std::string_view scorer_name);

struct ErrorFlag {
    std::string pair_id;
    std::set<double> expert_numbers;
    std::set<double> student_numbers;
    double predicted = 0.0;
    std::optional<double> benchmark;
    std::string reason = "numeric-mismatch";
};

nlohmann::json to_json(const ErrorFlag& f);

/// Numeric literals in a text, as a set.
std::set<double> numeric_tokens(std::string_view text);

/// Pairs whose expert and student texts mention different numbers while the
/// prediction is at least `threshold`. Predictions for ids missing from the
/// dataset, or without a score, are skipped.
std::vector<ErrorFlag> numeric_mismatch_flags(const Dataset& dataset, std::span<const Prediction> predictions,
                                              double threshold = 0.7);

enum class TableFormat { text, csv };

TableFormat parse_table_format(std::string_view name);

/// One row per report grouped by family; three decimals; "*" marks the best
/// value in each column, ties compared after rounding.
std::string results_table(std::span<const EvalReport> reports, TableFormat format = TableFormat::text);

}  // namespace sage
