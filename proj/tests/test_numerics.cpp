#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tta/numerics.hpp"
#include "tta/prng.hpp"

using namespace tta;

TEST_CASE("cosine_distance basic cases") {
    Tensor v = Tensor::from({0.3, -1.2, 2.0, 0.5});
    Tensor neg = v;
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];

    CHECK(cosine_distance(v, v) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_distance(v, neg) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(cosine_distance(Tensor::from({1, 0}), Tensor::from({0, 1})) == doctest::Approx(1.0));
}

TEST_CASE("cosine_distance rejects zero-norm input") {
    Tensor z = Tensor::from({0.0, 0.0});
    Tensor v = Tensor::from({1.0, 2.0});
    CHECK_THROWS_AS(cosine_distance(z, v), DegenerateInputError);
    CHECK_THROWS_AS(cosine_distance(v, z), DegenerateInputError);
    CHECK_THROWS_AS(cosine_distance(Tensor::from({1, 2}), Tensor::from({1, 2, 3})), ParameterError);
}

TEST_CASE("cosine_distance scale invariance") {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor a = Tensor::vector(6), b = Tensor::vector(6);
        for (std::size_t i = 0; i < 6; ++i) {
            a[i] = rng.next_symmetric(2.0);
            b[i] = rng.next_symmetric(2.0);
        }
        a[0] += 2.5; // keep away from the zero vector
        b[0] += 2.5;
        double lam = 0.01 + 10.0 * rng.next_unit();
        double mu = 0.01 + 10.0 * rng.next_unit();
        Tensor as = a, bs = b;
        for (std::size_t i = 0; i < 6; ++i) {
            as[i] *= lam;
            bs[i] *= mu;
        }
        CHECK(cosine_distance(a, b) == doctest::Approx(cosine_distance(as, bs)).epsilon(1e-10));
        CHECK(cosine_distance(a, b) == doctest::Approx(cosine_distance(b, a)).epsilon(1e-14));
        CHECK(cosine_distance(a, b) >= 0.0);
        CHECK(cosine_distance(a, b) <= 2.0);
    }
}

TEST_CASE("softmax_temperature trivial cases") {
    auto uniform = softmax_temperature(Tensor::from({4.2, 4.2, 4.2}), 0.7);
    for (std::size_t i = 0; i < 3; ++i) CHECK(uniform[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    auto single = softmax_temperature(Tensor::from({-3.0}), 5.0);
    CHECK(single[0] == doctest::Approx(1.0));

    CHECK_THROWS_AS(softmax_temperature(Tensor::from({1.0}), 0.0), ParameterError);
    CHECK_THROWS_AS(softmax_temperature(Tensor::from({1.0}), -2.0), ParameterError);
}

TEST_CASE("softmax_temperature matches direct-formula oracle") {
    std::vector<double> scores = {0.9, 0.7, 0.5};
    auto expected = oracle::softmax_direct(scores, 5.0);
    auto got = softmax_temperature(Tensor::from({0.9, 0.7, 0.5}), 5.0);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("softmax_temperature properties over random inputs") {
    SplitMix64 rng(22);
    const double taus[] = {1e-3, 0.1, 1.0, 5.0, 1e3};
    for (int trial = 0; trial < 40; ++trial) {
        std::size_t n = 1 + rng.next_below(8);
        for (double tau : taus) {
            // keep score gaps representable after /tau: exp(-700) is the
            // double underflow edge, so strict positivity is only meaningful
            // below it
            const double spread = std::min(3.0, 300.0 * tau);
            std::vector<double> scores(n);
            for (auto& s : scores) s = rng.next_symmetric(spread);
            auto w = softmax_temperature(std::span<const double>(scores), tau);
            double sum = 0.0;
            for (double x : w) {
                CHECK(x > 0.0);
                sum += x;
            }
            CHECK(std::fabs(sum - 1.0) < 1e-9);
            // monotone: larger score, larger weight
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (scores[i] > scores[j]) CHECK(w[i] > w[j]);
            // shift invariance
            std::vector<double> shifted(scores);
            for (auto& s : shifted) s += 123.456;
            auto w2 = softmax_temperature(std::span<const double>(shifted), tau);
            for (std::size_t i = 0; i < n; ++i)
                CHECK(w[i] == doctest::Approx(w2[i]).epsilon(1e-9));
        }
    }
    // the normalized sum stays at 1 even when far scores underflow to zero
    std::vector<double> extreme = {5.0, 0.0, -5.0};
    auto w = softmax_temperature(std::span<const double>(extreme), 1e-3);
    CHECK(std::fabs(w[0] + w[1] + w[2] - 1.0) < 1e-9);
}

TEST_CASE("mean_pool_rows basic and oracle") {
    Tensor single({1, 3}, {1.5, -2.0, 0.25});
    Tensor pooled = mean_pool_rows(single);
    for (std::size_t i = 0; i < 3; ++i) CHECK(pooled[i] == single[i]);

    Tensor cancel({2, 3}, {1.0, -2.0, 3.0, -1.0, 2.0, -3.0});
    Tensor zero = mean_pool_rows(cancel);
    for (std::size_t i = 0; i < 3; ++i) CHECK(zero[i] == doctest::Approx(0.0));

    SplitMix64 rng(5);
    Tensor m = Tensor::matrix(3, 2);
    std::vector<std::vector<double>> rows(3, std::vector<double>(2));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 2; ++c) {
            m.at(r, c) = rng.next_symmetric(4.0);
            rows[r][c] = m.at(r, c);
        }
    auto expected = oracle::column_means(rows);
    Tensor got = mean_pool_rows(m);
    for (std::size_t c = 0; c < 2; ++c)
        CHECK(got[c] == doctest::Approx(expected[c]).epsilon(1e-12));

    CHECK_THROWS_AS(mean_pool_rows(Tensor::vector(3)), ParameterError);
}

TEST_CASE("gradient_check on closed-form objectives") {
    Tensor x({4, 4, 3});
    SplitMix64 rng(33);
    for (double& v : x.values()) v = rng.next_unit();

    SUBCASE("sum of pixels has an all-ones gradient") {
        auto value = [](const Tensor& t) {
            double s = 0.0;
            for (double v : t.values()) s += v;
            return s;
        };
        auto grad = [](const Tensor& t) {
            Tensor g(t.dims());
            g.fill(1.0);
            return g;
        };
        // a linear objective has zero truncation error, so a larger step
        // suppresses the summation roundoff
        auto report = gradient_check(value, grad, x, 1e-3);
        CHECK(report.max_relative_error < 1e-10);
    }

    SUBCASE("half squared norm has gradient x") {
        auto value = [](const Tensor& t) {
            double s = 0.0;
            for (double v : t.values()) s += v * v;
            return 0.5 * s;
        };
        auto grad = [](const Tensor& t) { return t; };
        auto report = gradient_check(value, grad, x, 1e-5);
        CHECK(report.max_relative_error < 1e-8);
    }

    SUBCASE("a wrong gradient is flagged") {
        auto value = [](const Tensor& t) {
            double s = 0.0;
            for (double v : t.values()) s += v;
            return s;
        };
        auto bad_grad = [](const Tensor& t) {
            Tensor g(t.dims());
            g.fill(1.25);
            return g;
        };
        auto report = gradient_check(value, bad_grad, x, 1e-5);
        CHECK(report.max_relative_error > 0.1);
    }

    SUBCASE("step must be positive") {
        auto value = [](const Tensor&) { return 0.0; };
        auto grad = [](const Tensor& t) { return Tensor(t.dims()); };
        CHECK_THROWS_AS(gradient_check(value, grad, x, 0.0), ParameterError);
    }

    SUBCASE("a non-finite objective is an evaluation error") {
        auto value = [](const Tensor&) { return std::nan(""); };
        auto grad = [](const Tensor& t) { return Tensor(t.dims()); };
        CHECK_THROWS_AS(gradient_check(value, grad, x, 1e-5), EvaluationError);
    }
}

TEST_CASE("median conventions") {
    CHECK(median({3.0, 1.0, 2.0}) == doctest::Approx(2.0));
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == doctest::Approx(2.5));
    CHECK_THROWS_AS(median({}), ParameterError);
}
