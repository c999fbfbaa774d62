#include "sage/embedding.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace sage;

namespace {

TokenEmbeddings tokens_of(const testing::Rows& rows) {
    TokenEmbeddings t;
    t.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        t.tokens.push_back("t" + std::to_string(i));
        for (std::size_t j = 0; j < rows[i].size(); ++j) t.vectors(i, j) = rows[i][j];
    }
    return t;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

}  // namespace

TEST_CASE("cosine") {
    CHECK(cosine(vec({3, -4, 12}), vec({3, -4, 12})) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine(vec({1, 0}), vec({0, 1})) == 0.0);
    CHECK(std::abs(cosine(vec({1, 0}), vec({1, 1})) - 1.0 / std::sqrt(2.0)) < 1e-8);
    CHECK_THROWS_AS(cosine(vec({0, 0}), vec({1, 1})), ValidationError);
    CHECK_THROWS_AS(cosine(vec({1, 0}), vec({1, 1, 1})), ValidationError);

    // float instantiation
    Eigen::Vector2f a(1.f, 0.f), b(1.f, 1.f);
    CHECK(cosine(a, b) == doctest::Approx(0.70710678f));
}

TEST_CASE("property: cosine symmetry and scale invariance") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> alpha(0.001, 1000.0);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t dim = 2 + trial % 15;
        auto rows = testing::random_rows(rng, 2, dim, false);
        Eigen::Map<Eigen::VectorXd> u(rows[0].data(), dim), v(rows[1].data(), dim);
        const double c = cosine(u, v);
        CHECK(c == doctest::Approx(cosine(v, u)).epsilon(1e-15));
        CHECK(std::abs(cosine((alpha(rng) * u).eval(), v) - c) < 1e-9);
        CHECK(std::abs(c - testing::plain_cosine(rows[0], rows[1])) < 1e-12);
    }
}

TEST_CASE("mean_pool") {
    auto single = tokens_of({{0.5, -2.0, 3.0}});
    CHECK(mean_pool(single).values == single.vectors.row(0).transpose());
    auto two = tokens_of({{0, 2}, {2, 0}});
    CHECK(mean_pool(two).values == vec({1, 1}));
    auto copies = tokens_of({{0.25, 0.5}, {0.25, 0.5}, {0.25, 0.5}, {0.25, 0.5}});
    CHECK(mean_pool(copies).values.isApprox(vec({0.25, 0.5})));
    CHECK_THROWS_AS(mean_pool(TokenEmbeddings{}), ValidationError);
}

TEST_CASE("greedy_token_score examples") {
    auto same = tokens_of({{1, 2}, {3, 1}, {0, 1}});
    auto t = greedy_token_score(same, same);
    CHECK(t.precision == doctest::Approx(1.0));
    CHECK(t.recall == doctest::Approx(1.0));
    CHECK(t.f1 == doctest::Approx(1.0));

    auto expert = tokens_of({{1, 0}});
    auto student = tokens_of({{1, 0}, {0, 1}});
    auto s = greedy_token_score(expert, student);
    CHECK(s.precision == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.recall == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    auto swapped = greedy_token_score(student, expert);
    CHECK(swapped.precision == s.recall);
    CHECK(swapped.recall == s.precision);
    CHECK(swapped.f1 == doctest::Approx(s.f1));

    auto orth_a = tokens_of({{1, 0}});
    auto orth_b = tokens_of({{0, 1}});
    CHECK(greedy_token_score(orth_a, orth_b).f1 == 0.0);

    CHECK_THROWS_AS(greedy_token_score(TokenEmbeddings{}, expert), ValidationError);
    CHECK_THROWS_AS(greedy_token_score(expert, tokens_of({{1, 0, 0}})), ValidationError);
    CHECK_THROWS_AS(greedy_token_score(expert, tokens_of({{0, 0}})), ValidationError);
}

TEST_CASE("property: greedy matching equals pairwise brute force") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> size(1, 12), dim(2, 16);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = dim(rng);
        auto a = testing::random_rows(rng, size(rng), d, true);
        auto b = testing::random_rows(rng, size(rng), d, true);
        const auto got = greedy_token_score(tokens_of(a), tokens_of(b));
        const auto want = testing::greedy_brute_force(a, b);
        CHECK(std::abs(got.precision - want.precision) < 1e-9);
        CHECK(std::abs(got.recall - want.recall) < 1e-9);
        CHECK(std::abs(got.f1 - want.f1) < 1e-9);
        CHECK(got.f1 >= 0.0);
        CHECK(got.f1 <= 1.0 + 1e-12);
    }
}

TEST_CASE("sentence_score") {
    FileEmbeddingProvider provider("t", {{"same", {0.3, 0.4}}, {"pos", {1, 0}}, {"neg", {-1, 0}}, {"diag", {1, 1}}});
    auto id = sentence_score("same", "same", provider);
    CHECK(id.value() == doctest::Approx(1.0));
    CHECK(id.origin() == ScoreOrigin::embedding_scorer);

    auto clamped = sentence_score("pos", "neg", provider);
    CHECK(clamped.value() == 0.0);
    CHECK(clamped.clamped());

    auto diag = sentence_score("pos", "diag", provider);
    CHECK(std::abs(diag.value() - 0.70710678) < 1e-8);
    CHECK_FALSE(diag.clamped());

    CHECK_THROWS_AS(sentence_score("pos", "missing", provider), LookupError);
}

TEST_CASE("property: sentence_score stays in [0,1]") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto rows = testing::random_rows(rng, 2, 3, false);
        FileEmbeddingProvider p("r", {{"a", rows[0]}, {"b", rows[1]}});
        const auto s = sentence_score("a", "b", p);
        CHECK(s.value() >= 0.0);
        CHECK(s.value() <= 1.0);
    }
}

TEST_CASE("token provider: stored tokens and whitespace fallback") {
    auto words = std::make_shared<FileEmbeddingProvider>(
        "words", std::map<std::string, std::vector<double>>{{"loop", {1, 0}}, {"start", {0, 1}}, {"begin", {0, 1}}});
    std::map<std::string, TokenEmbeddings> by_text;
    by_text["Loop start"] = tokens_of({{1, 0}, {0, 1}});
    FileTokenEmbeddingProvider provider("tok", by_text, words);

    CHECK(provider.embed_tokens("Loop start").tokens.size() == 2);
    auto fallback = provider.embed_tokens("loop  begin");
    CHECK(fallback.tokens == std::vector<std::string>{"loop", "begin"});
    CHECK(token_score("Loop start", "loop begin", provider).value() == doctest::Approx(1.0));

    FileTokenEmbeddingProvider strict("tok", by_text);
    CHECK_THROWS_AS(strict.embed_tokens("unknown text"), LookupError);
}
