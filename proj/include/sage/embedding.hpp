#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "sage/corpus.hpp"
#include "sage/error.hpp"
#include "sage/providers.hpp"

namespace sage {

/// Per-token vectors for one text, one row per token.
template <typename Scalar>
struct TokenEmbeddingsT {
    std::vector<std::string> tokens;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vectors;

    Eigen::Index size() const noexcept { return vectors.rows(); }
    Eigen::Index dimension() const noexcept { return vectors.cols(); }
};

using TokenEmbeddings = TokenEmbeddingsT<double>;

template <typename Scalar>
struct ScoreTripleT {
    Scalar precision;
    Scalar recall;
    Scalar f1;
};

using ScoreTriple = ScoreTripleT<double>;

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine(const Eigen::MatrixBase<DerivedA>& u, const Eigen::MatrixBase<DerivedB>& v) {
    using Scalar = typename DerivedA::Scalar;
    if (u.size() != v.size()) {
        throw ValidationError(fmt::format("cosine: dimension mismatch ({} vs {})", u.size(), v.size()));
    }
    const Scalar nu = u.norm();
    const Scalar nv = v.norm();
    if (nu == Scalar(0) || nv == Scalar(0)) throw ValidationError("cosine: zero-norm vector has no direction");
    const Scalar c = u.dot(v) / (nu * nv);
    // rounding can push |c| a hair past 1
    return std::clamp(c, Scalar(-1), Scalar(1));
}

template <typename Scalar>
Scalar cosine(const EmbeddingVectorT<Scalar>& u, const EmbeddingVectorT<Scalar>& v) {
    return cosine(u.values, v.values);
}

/// Component-wise mean of the token vectors.
template <typename Scalar>
EmbeddingVectorT<Scalar> mean_pool(const TokenEmbeddingsT<Scalar>& tokens) {
    if (tokens.size() == 0) throw ValidationError("mean_pool: no tokens");
    return {tokens.vectors.colwise().mean().transpose(), "mean-pool"};
}

namespace detail {

template <typename Scalar>
auto unit_rows(const TokenEmbeddingsT<Scalar>& t, const char* side) {
    if (t.size() == 0) throw ValidationError(fmt::format("greedy_token_score: {} side has no tokens", side));
    const auto norms = t.vectors.rowwise().norm().eval();
    if ((norms.array() == Scalar(0)).any()) {
        throw ValidationError(fmt::format("greedy_token_score: zero-norm token vector on {} side", side));
    }
    return (norms.cwiseInverse().asDiagonal() * t.vectors).eval();
}

}  // namespace detail

/// Greedy token matching: recall averages, over expert tokens, the best
/// cosine against any student token; precision does the same from the
/// student side. f1 is their harmonic mean, 0 when both are 0.
template <typename Scalar>
ScoreTripleT<Scalar> greedy_token_score(const TokenEmbeddingsT<Scalar>& expert, const TokenEmbeddingsT<Scalar>& student) {
    const auto e = detail::unit_rows(expert, "expert");
    const auto s = detail::unit_rows(student, "student");
    if (e.cols() != s.cols()) {
        throw ValidationError(fmt::format("greedy_token_score: dimension mismatch ({} vs {})", e.cols(), s.cols()));
    }
    const auto sim = (e * s.transpose()).eval();  // expert x student
    const Scalar recall = sim.rowwise().maxCoeff().mean();
    const Scalar precision = sim.colwise().maxCoeff().mean();
    const Scalar sum = precision + recall;
    const Scalar f1 = sum == Scalar(0) ? Scalar(0) : Scalar(2) * precision * recall / sum;
    return {precision, recall, f1};
}

/// Cosine of the two sentence embeddings; negatives clamp to 0.
SimilarityScore sentence_score(std::string_view expert, std::string_view student, const EmbeddingProvider& provider);

/// Supplies tokens together with their vectors.
class TokenEmbeddingProvider {
public:
    virtual ~TokenEmbeddingProvider() = default;
    virtual const std::string& id() const = 0;
    virtual TokenEmbeddings embed_tokens(std::string_view text) const = 0;
};

/// Reads JSONL rows {"text_sha256": hex, "tokens": [...], "vectors": [[...], ...]}.
/// Texts missing from the file fall back to whitespace tokens looked up in an
/// optional word-vector provider.
class FileTokenEmbeddingProvider : public TokenEmbeddingProvider {
public:
    explicit FileTokenEmbeddingProvider(const std::filesystem::path& path,
                                        std::shared_ptr<const FileEmbeddingProvider> words = nullptr);
    FileTokenEmbeddingProvider(std::string id, std::map<std::string, TokenEmbeddings> by_text,
                               std::shared_ptr<const FileEmbeddingProvider> words = nullptr);

    const std::string& id() const override { return id_; }
    TokenEmbeddings embed_tokens(std::string_view text) const override;

private:
    void insert(const std::string& hash, TokenEmbeddings t);

    std::string id_;
    Eigen::Index dimension_ = 0;
    std::map<std::string, TokenEmbeddings> table_;
    std::shared_ptr<const FileEmbeddingProvider> words_;
};

std::vector<std::string> whitespace_tokens(std::string_view text);

/// Greedy-matching F1 as a unit score.
SimilarityScore token_score(std::string_view expert, std::string_view student, const TokenEmbeddingProvider& provider);

}  // namespace sage
