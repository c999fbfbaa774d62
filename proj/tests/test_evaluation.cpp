#include "sage/evaluation.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sage/error.hpp"

using namespace sage;
using sage::testing::brute_force_spearman;
using sage::testing::textbook_pearson;

namespace {

Prediction pred(std::string id, double predicted, double benchmark, std::optional<int> label = {}) {
    return {std::move(id), SimilarityScore(predicted, ScoreOrigin::llm_scorer),
            SimilarityScore(benchmark, ScoreOrigin::human_benchmark), label};
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
    std::vector<double> v(n);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& x : v) x = u(rng);
    return v;
}

}  // namespace

TEST_CASE("pearson basics") {
    const std::vector<double> a = {1, 2, 3}, b = {3, 2, 1};
    CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pearson(a, b) == doctest::Approx(-1.0).epsilon(1e-12));
    const std::vector<double> c = {2, 2, 2};
    CHECK_THROWS_AS(pearson(a, c), ValidationError);
    const std::vector<double> d = {1, 2};
    CHECK_THROWS_AS(pearson(a, d), ValidationError);
    CHECK_THROWS_AS(spearman(a, d), ValidationError);
}

TEST_CASE("pearson matches the quad-precision oracle") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto x = random_vector(rng, 100), y = random_vector(rng, 100);
        CHECK(std::abs(pearson(x, y) - textbook_pearson(x, y)) < 1e-9);
    }
}

TEST_CASE("pearson is affine invariant") {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
        const auto x = random_vector(rng, 50);
        const double a = std::uniform_real_distribution<double>(0.01, 10)(rng);
        const double b = std::uniform_real_distribution<double>(-5, 5)(rng);
        std::vector<double> pos, neg;
        for (double v : x) {
            pos.push_back(a * v + b);
            neg.push_back(-a * v + b);
        }
        CHECK(std::abs(pearson(x, pos) - 1.0) < 1e-9);
        CHECK(std::abs(pearson(x, neg) + 1.0) < 1e-9);
    }
}

TEST_CASE("spearman ties take the mean block rank") {
    const std::vector<double> x = {1, 2, 2, 3}, y = {1, 2, 3, 4};
    CHECK(average_ranks(x) == std::vector<double>{1, 2.5, 2.5, 4});
    // ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): cov 4.5 over sqrt(4.5 * 5)
    CHECK(spearman(x, y) == doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)).epsilon(1e-12));
    CHECK(std::abs(spearman(x, y) - brute_force_spearman(x, y)) < 1e-12);
}

TEST_CASE("spearman is invariant under monotone maps") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const auto x = random_vector(rng, 40), y = random_vector(rng, 40);
        std::vector<double> cubed, exped;
        for (double v : x) cubed.push_back(v * v * v);
        for (double v : y) exped.push_back(std::exp(3 * v) - 7);
        CHECK(std::abs(spearman(cubed, exped) - spearman(x, y)) < 1e-12);
        CHECK(std::abs(spearman(x, cubed) - 1.0) < 1e-12);
        std::vector<double> reversed;
        for (double v : x) reversed.push_back(-v);
        CHECK(std::abs(spearman(x, reversed) + 1.0) < 1e-12);
    }
}

TEST_CASE("correlations stay in [-1, 1] on tie-heavy inputs") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> small(0, 3);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> x(30), y(30);
        for (auto& v : x) v = small(rng);
        for (auto& v : y) v = small(rng) * 0.1;
        try {
            const double p = pearson(x, y), s = spearman(x, y);
            CHECK(p >= -1.0);
            CHECK(p <= 1.0);
            CHECK(s >= -1.0);
            CHECK(s <= 1.0);
            CHECK(std::abs(s - brute_force_spearman(x, y)) < 1e-9);
        } catch (const ValidationError&) {
        }
    }
}

TEST_CASE("evaluate") {
    std::vector<Prediction> echo, affine;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
        const double b = std::uniform_real_distribution<double>(0, 1)(rng);
        echo.push_back(pred("p" + std::to_string(i), b, b, 1 + i % 5));
        affine.push_back(pred("p" + std::to_string(i), 0.5 * b + 0.2, b));
    }
    auto r = evaluate(echo, "llm-cot", "llm");
    CHECK(r.n == 20);
    CHECK(r.pearson == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.spearman == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.per_label_mae.size() == 5);
    CHECK(r.per_label_mae.at(3) == 0.0);
    CHECK(evaluate(affine).pearson == doctest::Approx(1.0).epsilon(1e-12));

    echo.push_back({"missing", std::nullopt, SimilarityScore(0.5, ScoreOrigin::human_benchmark), 3});
    r = evaluate(echo);
    CHECK(r.n == 20);
    CHECK(r.unscored == 1);

    std::vector<Prediction> one = {pred("a", 0.3, 0.4)};
    CHECK_THROWS_AS(evaluate(one), ValidationError);
}

TEST_CASE("independent random scores are uncorrelated") {
    std::mt19937_64 rng(6);
    std::vector<Prediction> ps;
    for (int i = 0; i < 10000; ++i) {
        const auto v = random_vector(rng, 2);
        ps.push_back(pred(std::to_string(i), v[0], v[1]));
    }
    const auto r = evaluate(ps);
    CHECK(std::abs(r.pearson) < 0.05);
    CHECK(std::abs(r.spearman) < 0.05);
}

TEST_CASE("numeric mismatch flags") {
    Dataset d({{"c2", "", "In this program, we initialize variable num to 15.",
                "creates variable integer entitled \"num\" with initial value 5", {3, 2, 2}, std::nullopt},
               {"sixty", "", "there are 60 seconds in a minute", "divide by 60", {4}, std::nullopt},
               {"model", "", "all-mpnet2 encodes", "mpnet2 is used", {4}, std::nullopt}});
    std::vector<Prediction> ps = {
        {"c2", SimilarityScore(0.8, ScoreOrigin::llm_scorer), std::nullopt, std::nullopt},
        {"sixty", SimilarityScore(0.9, ScoreOrigin::llm_scorer), std::nullopt, std::nullopt},
        {"model", SimilarityScore(0.9, ScoreOrigin::llm_scorer), std::nullopt, std::nullopt},
    };
    auto flags = numeric_mismatch_flags(d, ps);
    REQUIRE(flags.size() == 1);
    CHECK(flags[0].pair_id == "c2");
    CHECK(flags[0].expert_numbers == std::set<double>{15});
    CHECK(flags[0].student_numbers == std::set<double>{5});
    CHECK(flags[0].benchmark == doctest::Approx(7.0 / 15.0));
    CHECK(flags[0].reason == "numeric-mismatch");

    ps[0].predicted = SimilarityScore(0.4, ScoreOrigin::llm_scorer);
    CHECK(numeric_mismatch_flags(d, ps).empty());
    ps[0].predicted = SimilarityScore(0.3, ScoreOrigin::llm_scorer);
    CHECK(numeric_mismatch_flags(d, ps, 0.2).size() == 1);
    CHECK(numeric_mismatch_flags(d, {}).empty());
}

TEST_CASE("raising the flag threshold never adds flags") {
    std::mt19937_64 rng(7);
    std::vector<ExplanationPair> pairs;
    std::vector<Prediction> ps;
    std::uniform_int_distribution<int> num(0, 3);
    for (int i = 0; i < 200; ++i) {
        const auto id = "p" + std::to_string(i);
        pairs.push_back({id, "", "value " + std::to_string(num(rng)), "value " + std::to_string(num(rng)), {3}, {}});
        ps.push_back({id, SimilarityScore(random_vector(rng, 1)[0], ScoreOrigin::llm_scorer), {}, {}});
    }
    const Dataset d(std::move(pairs));
    std::size_t previous = numeric_mismatch_flags(d, ps, 0.0).size();
    for (double t = 0.05; t <= 1.0; t += 0.05) {
        const auto now = numeric_mismatch_flags(d, ps, t).size();
        CHECK(now <= previous);
        previous = now;
    }
    CHECK(numeric_mismatch_flags(d, ps, 0.5).size() == numeric_mismatch_flags(d, ps, 0.5).size());
}

TEST_CASE("results table") {
    EvalReport mpnet{"all-mpnet", "embedding", 100, 0.81, 0.811, {}, 0};
    std::vector<EvalReport> one = {mpnet};
    const auto t = results_table(one);
    CHECK(t.find("0.810") != std::string::npos);
    CHECK(t.find("0.811") != std::string::npos);

    EvalReport cot{"llm-cot", "llm", 100, 0.79, 0.82, {}, 2};
    EvalReport base{"embedding-cosine", "embedding", 100, 0.70, 0.65, {}, 0};
    std::vector<EvalReport> three = {mpnet, cot, base};
    const auto text = results_table(three);
    CHECK(text.find("0.810*") != std::string::npos);
    CHECK(text.find("0.820*") != std::string::npos);
    CHECK(text.find("0.790*") == std::string::npos);
    // embedding rows stay together ahead of the llm row
    CHECK(text.find("embedding-cosine") < text.find("llm-cot"));

    EvalReport tie{"other", "embedding", 100, 0.8104, 0.5, {}, 0};
    std::vector<EvalReport> tied = {mpnet, tie};
    const auto csv = results_table(tied, TableFormat::csv);
    CHECK(csv.find("embedding,all-mpnet,100,0.810,0.811,1,1,0") != std::string::npos);
    CHECK(csv.find("embedding,other,100,0.810,0.500,1,0,0") != std::string::npos);
    CHECK_THROWS_AS(parse_table_format("html"), ConfigError);
}

TEST_CASE("predictions round-trip through JSONL") {
    std::vector<Prediction> ps = {pred("a", 0.25, 0.5, 3), {"b", std::nullopt, std::nullopt, std::nullopt, true}};
    ps[0].predicted = ps[0].predicted->marked_clamped();
    std::stringstream ss;
    write_predictions(ps, ss);
    const auto back = read_predictions(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].predicted->value() == 0.25);
    CHECK(back[0].predicted->clamped());
    CHECK(back[0].label == 3);
    CHECK_FALSE(back[1].predicted);
    CHECK(back[1].partial);
    std::stringstream bad("{\"pair_id\": \"x\", \"predicted\": 3}\n");
    CHECK_THROWS_AS(read_predictions(bad), ValidationError);
}

TEST_CASE("join rejects unknown ids") {
    Dataset d({{"a", "", "e", "s", {5}, std::nullopt}});
    std::vector<Prediction> ps = {{"a", SimilarityScore(0.5, ScoreOrigin::llm_scorer), {}, {}},
                                  {"zz", SimilarityScore(0.5, ScoreOrigin::llm_scorer), {}, {}}};
    try {
        join_predictions(d, ps);
        FAIL("expected LookupError");
    } catch (const LookupError& e) {
        CHECK(std::string(e.what()).find("zz") != std::string::npos);
    }
    ps.pop_back();
    const auto joined = join_predictions(d, ps);
    CHECK(joined[0].benchmark->value() == 1.0);
    CHECK(joined[0].label == 5);
}
