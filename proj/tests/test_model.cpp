#include <doctest.h>

#include <cmath>
#include <vector>

#include "shadowfbp/errors.hpp"
#include "shadowfbp/geometry.hpp"
#include "shadowfbp/model.hpp"

using namespace shadowfbp;

namespace {

ModelParams market(double mu, double sigma, double p, double delta, double lam_down = 0.01, double lam_up = 0.01) {
    ModelParams m;
    m.mu = mu;
    m.sigma = sigma;
    m.p = p;
    m.delta = delta;
    m.lambda_down = lam_down;
    m.lambda_up = lam_up;
    return m;
}

double G_of(const ModelParams& m) { return std::sqrt(2 * m.delta * (1 - m.p) * m.sigma * m.sigma / m.p); }
double A_of(const ModelParams& m) { return m.delta / m.p + (1 - m.p) * m.sigma * m.sigma / 2; }

// Symmetric costs whose log-cost equals target.
ModelParams with_log_cost(ModelParams m, double target) {
    const double lam = std::tanh(target / 2);
    m.lambda_down = m.lambda_up = lam;
    return m;
}

}  // namespace

TEST_CASE("liquidation value") {
    CHECK(validate_solvency(0, 0, 1, 2) == 0.0);
    CHECK(validate_solvency(10, -2, 0.9, 1.1) == doctest::Approx(7.8).epsilon(1e-15));
    CHECK(validate_solvency(-5, 4, 0.9, 1.1) == doctest::Approx(-1.4).epsilon(1e-15));
}

TEST_CASE("parameter validation names the field") {
    auto msg = [](ModelParams m) {
        try {
            validate(m);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    const ModelParams ok = market(0.06, 0.4, 0.5, 0.1);
    CHECK(msg(ok).empty());
    ModelParams m = ok;
    m.sigma = 0;
    CHECK(msg(m).rfind("sigma", 0) == 0);
    m = ok;
    m.p = 1;
    CHECK(msg(m).rfind("p", 0) == 0);
    m = ok;
    m.lambda_down = 1;
    CHECK(msg(m).rfind("lambda_down", 0) == 0);
    m = ok;
    m.lambda_up = -0.1;
    CHECK(msg(m).rfind("lambda_up", 0) == 0);
    m = ok;
    m.delta = 0;
    CHECK(msg(m).rfind("delta", 0) == 0);

    m = ok;
    m.eta_B = -5;
    m.eta_S = 4;
    m.s0 = 1;
    CHECK_THROWS_AS(require_strict_solvency(m), ConfigError);
    m.eta_B = 1;
    m.eta_S = 0;
    CHECK_NOTHROW(require_strict_solvency(m));
}

TEST_CASE("derived constants, elliptic example") {
    const DerivedConstants d = derive_constants(market(0.06, 0.4, 0.5, 0.1));
    CHECK(d.q == doctest::Approx(1.0));
    CHECK(d.delta_hat == doctest::Approx(0.2));
    REQUIRE(d.G_const);
    REQUIRE(d.A_const);
    CHECK(*d.G_const == doctest::Approx(0.178885438199983).epsilon(1e-13));
    CHECK(*d.A_const == doctest::Approx(0.24).epsilon(1e-14));
    CHECK(d.merton_pi == doctest::Approx(0.75).epsilon(1e-14));
    REQUIRE(d.x_P);
    REQUIRE(d.x_N);
    REQUIRE(d.x_E);
    CHECK(*d.x_P == doctest::Approx(5.55555555555556).epsilon(1e-12));
    CHECK(*d.x_N == doctest::Approx(4.22535211267606).epsilon(1e-12));
    CHECK(*d.x_E == doctest::Approx(8.41145909154870).epsilon(1e-12));
    CHECK(*d.x_N > 0);
    CHECK(*d.x_N < *d.x_E);
    CHECK_FALSE(d.K_const);
    CHECK_FALSE(d.C_const);
    CHECK(d.y_low == doctest::Approx(std::log(0.99)));
    CHECK(d.y_high == doctest::Approx(std::log(1.01)));
}

TEST_CASE("derived constants, p = 0") {
    const DerivedConstants d = derive_constants(market(0.07, 0.3, 0.0, 0.1));
    CHECK(d.q == 0.0);
    CHECK_FALSE(d.G_const);
    CHECK_FALSE(d.A_const);
    REQUIRE(d.x_P);
    REQUIRE(d.z_P);
    CHECK(*d.x_P == 1.0);
    CHECK(*d.z_P == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("q identity and undefined tags") {
    for (double p : {-3.0, -1.0, -0.2, 0.1, 0.5, 0.9}) {
        const DerivedConstants d = derive_constants(market(0.05, 0.3, p, 0.1));
        CHECK(1 / p - 1 / d.q == doctest::Approx(1.0).epsilon(1e-13));
        if (p < 0) CHECK_FALSE(d.G_const);
        CHECK(d.A_const);
    }
    // mu >= A: singular point at infinity
    const ModelParams sup = market(0.3, 0.4, 0.5, 0.1);
    CHECK_FALSE(derive_constants(sup).x_P);
}

TEST_CASE("K closed form and discriminant root") {
    const ModelParams m = market(0.20, 0.4, 0.5, 0.1);
    const double K = compute_K(m);
    CHECK(K == doctest::Approx(0.208818210000029).epsilon(1e-12));
    CHECK(K < (1 - m.p) / m.p);
    const DiscPoly disc = discriminant_poly(m);
    CHECK(std::abs(disc(K)) < 1e-14);
    CHECK(disc(0.5 * K) > 0);
    // K is the smallest nonnegative root
    for (int i = 0; i < 100; ++i) CHECK(disc(K * i / 100.0) > 0);

    ModelParams at_G = m;
    at_G.mu = G_of(m);
    CHECK(compute_K(at_G) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(compute_C(at_G)) < 1e-12);
    const DerivedConstants d = derive_constants(at_G);
    REQUIRE(d.K_const);
    REQUIRE(d.C_const);
    CHECK(std::abs(*d.K_const) < 1e-12);

    CHECK_THROWS_AS(compute_K(market(0.06, 0.4, 0.5, 0.1)), RegimeError);
    CHECK_THROWS_AS(compute_C(market(0.3, 0.4, 0.5, 0.1)), RegimeError);
    CHECK_THROWS_AS(compute_K(market(0.1, 0.4, -1, 0.1)), RegimeError);
}

TEST_CASE("C quadrature") {
    const ModelParams m = market(0.20, 0.4, 0.5, 0.1);
    const CResult r = compute_C_detailed(m);
    CHECK(r.error_estimate <= 1e-8);
    // value agreed with the solver limit of G(alpha) at large alpha
    CHECK(r.value == doctest::Approx(0.14063792).epsilon(1e-6));

    // nonnegative and increasing across the band G..A
    const double G = G_of(m), A = A_of(m);
    double prev = 0;
    for (int i = 1; i < 10; ++i) {
        ModelParams mi = m;
        mi.mu = G + (A - G) * i / 10.0;
        const double C = compute_C(mi);
        CHECK(C > 0);
        CHECK(C > prev);
        prev = C;
    }
}

TEST_CASE("classification examples") {
    CHECK(classify(market(0.3, 0.2, -1, 0.05, 0.2, 0.3)).verdict == Verdict::WellPosed);
    CHECK(classify(market(0.3, 0.2, -1, 0.05)).regime == Regime::HighRiskAversion);
    CHECK(classify(market(0.3, 0.2, 0.0, 0.05)).regime == Regime::HighRiskAversion);

    const WellPosedness sup = classify(market(0.25, 0.4, 0.5, 0.1, 0.5, 5));
    CHECK(sup.verdict == Verdict::IllPosed);
    CHECK(sup.regime == Regime::SupercriticalIllPosed);
    ModelParams at_A = market(0.24, 0.4, 0.5, 0.1, 0.5, 5);
    at_A.mu = A_of(at_A);
    CHECK(classify(at_A).regime == Regime::SupercriticalIllPosed);

    const ModelParams hyp = market(0.2, 0.4, 0.5, 0.1);
    const double C = compute_C(hyp);
    CHECK(classify(with_log_cost(hyp, C / 2)).regime == Regime::CriticalIllPosed);
    CHECK(classify(with_log_cost(hyp, C / 2)).verdict == Verdict::IllPosed);
    CHECK(classify(with_log_cost(hyp, C - 1e-4)).verdict == Verdict::IllPosed);
    CHECK(classify(with_log_cost(hyp, C + 1e-4)).verdict == Verdict::WellPosed);
    CHECK(classify(with_log_cost(hyp, C + 1e-4)).regime == Regime::HyperbolicSubcase);

    // boundary equality: log-cost == C is ill-posed
    ModelParams eq = hyp;
    eq.lambda_up = std::exp(C) - 1;
    eq.lambda_down = 0;
    const WellPosedness w = classify(eq);
    CHECK(w.log_cost <= C);
    CHECK(w.verdict == Verdict::IllPosed);

    // mu == G: hyperbolic with C = 0
    ModelParams at_G = hyp;
    at_G.mu = G_of(hyp);
    CHECK(classify(at_G).verdict == Verdict::WellPosed);
    at_G.lambda_down = at_G.lambda_up = 0;
    CHECK(classify(at_G).verdict == Verdict::IllPosed);

    CHECK(classify(market(0.06, 0.4, 0.5, 0.1)).regime == Regime::EllipticSubcase);
}

TEST_CASE("classification ignores price and holdings scale") {
    for (double mu : {0.06, 0.19, 0.2, 0.3}) {
        ModelParams m = market(mu, 0.4, 0.5, 0.1, 0.02, 0.03);
        const WellPosedness w0 = classify(m);
        for (double scale : {1e-3, 7.0, 1e4}) {
            ModelParams s = m;
            s.s0 *= scale;
            s.eta_B *= scale;
            s.eta_S = 3 * scale;
            const WellPosedness w = classify(s);
            CHECK(w.verdict == w0.verdict);
            CHECK(w.regime == w0.regime);
        }
    }
}

TEST_CASE("explicit divergence witness") {
    ModelParams m = market(0.24, 0.4, 0.5, 0.1, 0.1, 0.1);
    m.mu = A_of(m);
    // mu == A: the integrand is c0/(t+1)
    const double c0 = std::pow(0.5, 0.5) * std::pow(0.9, 0.5) / std::pow(0.5, 1.5);
    for (double T : {10.0, 100.0, 1000.0})
        CHECK(divergence_partial_integral(m, T) == doctest::Approx(c0 * std::log1p(T)).epsilon(1e-13));

    m.mu = 0.26;
    const double kappa = m.p * (m.mu - A_of(m));
    // trapezoid oracle on [0, 10]
    const int n = 200000;
    double acc = 0;
    for (int i = 0; i <= n; ++i) {
        const double t = 10.0 * i / n;
        const double w = (i == 0 || i == n) ? 0.5 : 1.0;
        acc += w * std::exp(kappa * t) / (t + 1);
    }
    acc *= 10.0 / n;
    const double c1 = std::pow(0.5, 0.5) * std::pow(0.9, 0.5) / std::pow(0.5, 1.5);
    CHECK(divergence_partial_integral(m, 10) == doctest::Approx(c1 * acc).epsilon(1e-8));
    const double v1 = divergence_partial_integral(m, 10), v2 = divergence_partial_integral(m, 100),
                 v3 = divergence_partial_integral(m, 1000);
    CHECK(v1 < v2);
    CHECK(v2 < v3);
    CHECK_THROWS_AS(divergence_partial_integral(market(0.06, 0.4, 0.5, 0.1), 10), RegimeError);
}

TEST_CASE("regime names") {
    CHECK(to_string(Verdict::WellPosed) == "WellPosed");
    CHECK(to_string(Regime::CriticalIllPosed) == "CriticalIllPosed");
}
