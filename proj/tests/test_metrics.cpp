#include <doctest.h>

#include <cmath>

#include "qe/errors.hpp"
#include "qe/metrics.hpp"
#include "support/oracles.hpp"

TEST_SUITE_BEGIN("metrics");

TEST_CASE("pearson exact lines") {
    std::vector<double> x = {1, 2, 3, 4, 5};
    std::vector<double> y;
    for (double v : x) y.push_back(2 * v + 3);
    CHECK(std::abs(qe::pearson(x, y) - 1.0) <= 1e-12);

    std::vector<double> neg;
    for (double v : x) neg.push_back(-v);
    CHECK(std::abs(qe::pearson(x, neg) + 1.0) <= 1e-12);
}

TEST_CASE("pearson zero variance is an error, never zero") {
    std::vector<double> x = {1, 1, 1};
    std::vector<double> y = {1, 2, 3};
    CHECK_THROWS_AS(qe::pearson(x, y), qe::DegenerateInputError);
    CHECK_THROWS_AS(qe::pearson(y, x), qe::DegenerateInputError);
    CHECK_THROWS_AS(qe::pearson(std::vector<double>{1.0}, std::vector<double>{2.0}),
                    qe::ContractError);
}

TEST_CASE("pearson agrees with the covariance-formula oracle") {
    oracles::for_cases(500, 3, [](qe::Rng& rng, std::size_t) {
        const std::size_t n = 2 + rng.below(99);
        std::vector<double> x = oracles::random_vector(rng, n, 0.0, 1.0);
        std::vector<double> y = oracles::random_vector(rng, n, 0.0, 1.0);
        x[0] += 0.5;  // ensure spread
        y[0] -= 0.5;
        const double mine = qe::pearson(x, y);
        const double reference = oracles::pearson_covariance_formula(x, y);
        CHECK(std::abs(mine - reference) <= 1e-12);
    });
}

TEST_CASE("pearson affine invariance and symmetry") {
    oracles::for_cases(200, 7, [](qe::Rng& rng, std::size_t) {
        const std::size_t n = 3 + rng.below(60);
        std::vector<double> x = oracles::random_vector(rng, n, -1.0, 1.0);
        std::vector<double> y = oracles::random_vector(rng, n, -1.0, 1.0);
        x[0] += 1.0;
        y[0] += 1.0;
        const double r = qe::pearson(x, y);
        CHECK(std::abs(qe::pearson(y, x) - r) <= 1e-12);

        const double a = rng.uniform(0.1, 5.0);
        const double b = rng.uniform(-3.0, 3.0);
        std::vector<double> scaled;
        for (double v : x) scaled.push_back(a * v + b);
        CHECK(std::abs(qe::pearson(scaled, y) - r) <= 1e-10);
        std::vector<double> flipped;
        for (double v : x) flipped.push_back(-a * v + b);
        CHECK(std::abs(qe::pearson(flipped, y) + r) <= 1e-10);
    });
}

TEST_CASE("score_predictions fills every metric consistently") {
    oracles::for_cases(200, 11, [](qe::Rng& rng, std::size_t) {
        const std::size_t n = 3 + rng.below(40);
        std::vector<double> p = oracles::random_vector(rng, n, -1.0, 1.0);
        std::vector<double> l = oracles::random_vector(rng, n, -1.0, 1.0);
        p[0] += 1.0;
        l[0] += 1.0;
        const qe::EvalResult r = qe::score_predictions("xx-yy", p, l);
        CHECK(r.n == n);
        CHECK(r.pearson_r <= 1.0);
        CHECK(r.pearson_r >= -1.0);
        CHECK(r.mse >= 0.0);
        CHECK(r.mae >= 0.0);
        CHECK(std::abs(r.rmse - std::sqrt(r.mse)) <= 1e-12);
        CHECK(r.mae <= r.rmse + 1e-12);  // Jensen
    });
}

TEST_CASE("results tsv format") {
    qe::EvalResult r;
    r.lang_pair = "en-de";
    r.n = 42;
    r.pearson_r = 0.8123456789;
    r.mse = 0.015;
    r.mae = 0.1;
    r.rmse = std::sqrt(0.015);
    const std::string tsv = qe::results_tsv({r});
    CHECK(tsv ==
          "lang_pair\tn\tpearson\tmse\tmae\trmse\n"
          "en-de\t42\t0.812346\t0.015000\t0.100000\t0.122474\n");
    CHECK(qe::results_tsv({}) == "lang_pair\tn\tpearson\tmse\tmae\trmse\n");
}

TEST_CASE("results table marks the per-pair best") {
    qe::EvalResult a1{"en-de", 10, 0.81, 0, 0, 0};
    qe::EvalResult a2{"ro-en", 10, 0.62, 0, 0, 0};
    qe::EvalResult b1{"en-de", 10, 0.75, 0, 0, 0};
    qe::EvalResult b2{"ro-en", 10, 0.70, 0, 0, 0};
    std::vector<qe::EvalResult> mine = {a1, a2};
    std::vector<qe::EvalResult> base = {b1, b2};
    const qe::ResultsTable table =
        qe::results_table(mine, &base, "single", "multi");
    CHECK(table.tsv ==
          "lang_pair\tsingle\tmulti\n"
          "en-de\t0.810000*\t0.750000\n"
          "ro-en\t0.620000\t0.700000*\n");
    CHECK(table.text.find("single") != std::string::npos);
    CHECK(table.text.find("0.810000*") != std::string::npos);

    const qe::ResultsTable solo = qe::results_table({a1});
    CHECK(solo.tsv == "lang_pair\tmodel\nen-de\t0.810000\n");
    const qe::ResultsTable empty = qe::results_table({});
    CHECK(empty.tsv == "lang_pair\tmodel\n");
}

TEST_SUITE_END();
