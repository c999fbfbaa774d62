#include "sage/embedding.hpp"

#include <fstream>

#include <json.hpp>

#include "sage/text.hpp"

namespace sage {

using nlohmann::json;

SimilarityScore sentence_score(std::string_view expert, std::string_view student, const EmbeddingProvider& provider) {
    const auto u = provider.embed(expert);
    const auto v = provider.embed(student);
    return SimilarityScore::clamp(cosine(u, v), ScoreOrigin::embedding_scorer);
}

SimilarityScore token_score(std::string_view expert, std::string_view student, const TokenEmbeddingProvider& provider) {
    const auto triple = greedy_token_score(provider.embed_tokens(expert), provider.embed_tokens(student));
    return SimilarityScore::clamp(triple.f1, ScoreOrigin::embedding_scorer);
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

FileTokenEmbeddingProvider::FileTokenEmbeddingProvider(const std::filesystem::path& path,
                                                       std::shared_ptr<const FileEmbeddingProvider> words)
    : id_("token-file:" + path.string()), words_(std::move(words)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open token embedding file " + path.string());
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        try {
            const auto obj = json::parse(line);
            TokenEmbeddings t;
            t.tokens = obj.at("tokens").get<std::vector<std::string>>();
            const auto rows = obj.at("vectors").get<std::vector<std::vector<double>>>();
            if (rows.size() != t.tokens.size() || rows.empty()) {
                throw IntegrityError(fmt::format("{} tokens but {} vectors", t.tokens.size(), rows.size()));
            }
            t.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (rows[r].size() != rows[0].size()) throw IntegrityError("ragged token vectors");
                for (std::size_t c = 0; c < rows[r].size(); ++c) {
                    t.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
                }
            }
            insert(obj.at("text_sha256").get<std::string>(), std::move(t));
        } catch (const json::exception& e) {
            throw ValidationError(fmt::format("{}: row {}: {}", path.string(), row, e.what()));
        } catch (const IntegrityError& e) {
            throw IntegrityError(fmt::format("{}: row {}: {}", path.string(), row, e.what()));
        }
    }
}

FileTokenEmbeddingProvider::FileTokenEmbeddingProvider(std::string id, std::map<std::string, TokenEmbeddings> by_text,
                                                       std::shared_ptr<const FileEmbeddingProvider> words)
    : id_(std::move(id)), words_(std::move(words)) {
    for (auto& [text, t] : by_text) insert(sha256_hex(text), std::move(t));
}

void FileTokenEmbeddingProvider::insert(const std::string& hash, TokenEmbeddings t) {
    if (t.size() == 0) throw IntegrityError("no tokens for " + hash);
    if (dimension_ == 0) dimension_ = t.dimension();
    if (t.dimension() != dimension_) {
        throw IntegrityError(fmt::format("token vectors for {} have dimension {}, provider has {}", hash,
                                         t.dimension(), dimension_));
    }
    table_[hash] = std::move(t);
}

TokenEmbeddings FileTokenEmbeddingProvider::embed_tokens(std::string_view text) const {
    if (trim(text).empty()) throw ValidationError("cannot embed empty text");
    const auto hash = sha256_hex(text);
    if (auto it = table_.find(hash); it != table_.end()) return it->second;
    if (!words_) throw LookupError(fmt::format("{}: no token embeddings for text_sha256 {}", id_, hash));

    TokenEmbeddings t;
    t.tokens = whitespace_tokens(text);
    t.vectors.resize(static_cast<Eigen::Index>(t.tokens.size()), words_->dimension());
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
        t.vectors.row(static_cast<Eigen::Index>(i)) = words_->embed(t.tokens[i]).values.transpose();
    }
    return t;
}

}  // namespace sage
