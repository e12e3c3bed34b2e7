#include <doctest.h>

#include <cmath>
#include <vector>

#include "shadowfbp/errors.hpp"
#include "shadowfbp/fbp.hpp"
#include "shadowfbp/policy.hpp"

using namespace shadowfbp;

namespace {

ModelParams market(double mu, double sigma, double p, double delta, double lam) {
    ModelParams m;
    m.mu = mu;
    m.sigma = sigma;
    m.p = p;
    m.delta = delta;
    m.lambda_down = m.lambda_up = lam;
    return m;
}

const ModelParams kElliptic = market(0.06, 0.4, 0.5, 0.1, 0.01);  // pi < 1
const ModelParams kSingular = market(0.04, 0.2, 0.5, 0.1, 0.05);  // pi > 1
const ModelParams kHyper = market(0.2, 0.4, 0.5, 0.1, 0.08);      // near the frontier
const ModelParams kLog = market(0.06, 0.4, 0.0, 0.1, 0.01);
const ModelParams kNeg = market(0.06, 0.4, -1.0, 0.1, 0.01);
const ModelParams kUnit = market(0.08, 0.4, 0.5, 0.1, 0.01);      // pi = 1

void check_residuals(const FbpSolution& s) {
    const ResidualReport& r = s.residuals;
    CHECK(r.ode_residual <= 1e-8);
    if (r.low_boundary_waived)
        CHECK(r.low_singular_gap <= 1e-8);
    else
        CHECK(r.g_prime_low <= 1e-6);
    CHECK(r.g_prime_high <= 1e-6);
    CHECK(r.integral_residual <= 1e-8);
    CHECK(r.min_abs_h > 0);
    CHECK(r.envelope_residual <= 1e-6);
    CHECK(r.f_low_residual <= 1e-8);
    CHECK(r.f_high_residual <= 1e-8);
}

}  // namespace

TEST_CASE("elliptic solve against an independent shooting") {
    const FbpSolution s = shoot(kElliptic);
    CHECK(s.x_low == doctest::Approx(2.853370669549051).epsilon(1e-8));
    CHECK(s.x_high == doctest::Approx(4.360979873665957).epsilon(1e-8));
    CHECK_FALSE(s.singular_passage());
    check_residuals(s);
}

TEST_CASE("log utility and p < 0 solves against an independent shooting") {
    const FbpSolution a = shoot(kLog);
    CHECK(a.x_low == doctest::Approx(0.26033839157845234).epsilon(1e-8));
    CHECK(a.x_high == doctest::Approx(0.44277170672324273).epsilon(1e-8));
    check_residuals(a);
    const FbpSolution b = shoot(kNeg);
    CHECK(b.x_low == doctest::Approx(1.2213478724772566).epsilon(1e-8));
    CHECK(b.x_high == doctest::Approx(2.241676675484092).epsilon(1e-8));
    check_residuals(b);
}

TEST_CASE("solution invariants") {
    for (const ModelParams& m : {kElliptic, kSingular, kLog, kNeg}) {
        const FbpSolution s = shoot(m);
        const auto& grid = s.grid();
        REQUIRE(grid.size() == s.f_grid.size());
        CHECK(s.f_grid.front() == doctest::Approx(std::log1p(m.lambda_up)).epsilon(1e-10));
        CHECK(s.f_grid.back() == doctest::Approx(std::log1p(-m.lambda_down)).epsilon(1e-10));
        for (std::size_t i = 1; i < grid.size(); ++i) {
            CHECK(grid[i].x > grid[i - 1].x);
            CHECK(s.f_grid[i] <= s.f_grid[i - 1]);
        }
        CHECK(s.f_grid.front() > s.f_grid.back());
        CHECK(grid.front().I == doctest::Approx(0.0).scale(1));
        CHECK(grid.back().I == doctest::Approx(log_cost(m)).epsilon(1e-10));
        const double h0 = h_func(grid.front().x, grid.front().g, grid.front().dg, m);
        for (const GridPoint& gp : grid) CHECK(h_func(gp.x, gp.g, gp.dg, m) * h0 > 0);
    }
}

TEST_CASE("containment and field bound along solved trajectories") {
    for (const ModelParams& m : {kElliptic, kSingular, kHyper}) {
        const FbpSolution s = shoot(m);
        const Geometry& geo = *s.geometry;
        const double k0 = geo.find_k0();
        const double tol = 1e-9;
        std::size_t step = std::max<std::size_t>(1, s.grid().size() / 2000);
        for (std::size_t i = 0; i < s.grid().size(); i += step) {
            const GridPoint& gp = s.grid()[i];
            CHECK(gp.dg >= -tol);
            CHECK(gp.dg <= k0 + tol);
            const double top = geo.T_u(gp.x, 0);
            CHECK(gp.g <= top + tol * (1 + std::abs(top)));
            CHECK(gp.g >= geo.tau(gp.x) - tol * (1 + std::abs(top)));
        }
    }
}

TEST_CASE("inner solutions by regime") {
    {
        const Geometry geo(kElliptic);
        const double xE = *geo.constants().x_E;
        for (double a : {0.5, 2.0, 4.0}) {
            const InnerSolution in = integrate_from(geo, a);
            CHECK(in.beta > a);
            CHECK(in.beta <= xE * (1 + 1e-12));
            CHECK_FALSE(in.hit_singular);
            CHECK(std::abs(in.grid.back().dg) < 1e-6);
        }
        CHECK_THROWS_AS(integrate_from(geo, 5.0), DomainError);
    }
    {
        const Geometry geo(kSingular);
        const double xP = *geo.constants().x_P;
        const InnerSolution right = integrate_from(geo, 1.05 * xP);
        CHECK_FALSE(right.hit_singular);
        const InnerSolution a1 = integrate_from(geo, 0.5 * xP);
        const InnerSolution a2 = integrate_from(geo, 0.8 * xP);
        CHECK(a1.hit_singular);
        CHECK(a2.hit_singular);
        REQUIRE(a1.g2_at_xP);
        CHECK(*a1.g2_at_xP == doctest::Approx(geo.g2_closed_form()).epsilon(1e-12));
        CHECK(a1.beta == doctest::Approx(a2.beta).epsilon(1e-10));
    }
    {
        const Geometry geo(kUnit);
        const DerivedConstants& dc = geo.constants();
        CHECK(*dc.x_P == doctest::Approx(*dc.x_N).epsilon(1e-12));
        for (double a : {1.0, 3.0, 5.0}) {
            const InnerSolution in = integrate_from(geo, a);
            CHECK(in.ends_at_singular);
            CHECK(in.beta == doctest::Approx(*dc.x_P).epsilon(1e-12));
            CHECK(in.g(in.beta) == doctest::Approx(*dc.z_P).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(integrate_from(Geometry(market(0.3, 0.4, 0.5, 0.1, 0.01)), 1.0), RegimeError);
}

TEST_CASE("singular passage") {
    const Geometry geo(kSingular);
    const SingularJet j = geo.singular_jet();
    for (double a : {0.3 * j.x, 0.7 * j.x}) {
        const InnerSolution in = integrate_from(geo, a);
        REQUIRE(in.passage);
        const SingularPassage& sp = *in.passage;
        CHECK(sp.incoming_slope == doctest::Approx(j.g1).epsilon(1e-6));
        CHECK(sp.outgoing_slope == doctest::Approx(j.g1).epsilon(1e-6));
        CHECK(sp.epsilon >= 1e-6);
        CHECK(sp.epsilon_right >= sp.epsilon);
        const double h = 1e-3;
        const double d2 = (in.g(j.x + h) - 2 * in.g(j.x) + in.g(j.x - h)) / (h * h);
        CHECK(d2 == doctest::Approx(j.g2).epsilon(0.01));
        // g' decreases through the singular point
        CHECK(in.dg_dense(j.x - 0.01) > in.dg_dense(j.x));
        CHECK(in.dg_dense(j.x) > in.dg_dense(j.x + 0.01));
        CHECK(in.g(j.x) == doctest::Approx(j.z).epsilon(1e-14));
    }
    const PassageState right = singular_passage(geo, {j.x - 1e-3, geo.T_u(j.x - 1e-3, 0), 0.0}, 1e-3);
    CHECK(right.x == doctest::Approx(j.x + 1e-3));
    CHECK(right.g == doctest::Approx(j.z + j.g1 * 1e-3 + 0.5 * j.g2 * 1e-6).epsilon(1e-14));
}

TEST_CASE("memory erasure right of the singular point") {
    const Geometry geo(kSingular);
    const double xP = *geo.constants().x_P;
    const InnerSolution a = integrate_from(geo, 0.4 * xP);
    const InnerSolution b = integrate_from(geo, 0.9 * xP);
    const double beta = std::min(a.beta, b.beta);
    for (int i = 0; i <= 200; ++i) {
        const double x = xP + (beta - xP) * i / 200.0;
        CHECK(std::abs(a.g(x) - b.g(x)) <= 1e-8);
    }
}

TEST_CASE("shooting map limits") {
    {
        const Geometry geo(kElliptic);
        const double xN = *geo.constants().x_N;
        CHECK(G_of_alpha(geo, xN * (1 - 1e-6)) < 1e-6);
        // G grows like a multiple of log(1/alpha); the increment per decade stays bounded below
        double prev = G_of_alpha(geo, 1e-2);
        for (double a : {1e-4, 1e-6, 1e-8}) {
            const double G = G_of_alpha(geo, a);
            CHECK(G - prev > 0.8);
            prev = G;
        }
    }
    {
        const Geometry geo(kHyper);
        const double C = *geo.constants().C_const;
        CHECK(std::abs(G_of_alpha(geo, 1e3 * *geo.constants().x_P) - C) < 0.01);
    }
}

TEST_CASE("shooting map is strictly decreasing") {
    for (const ModelParams& m : {kElliptic, kSingular, kLog, kNeg}) {
        const Geometry geo(m);
        const double xN = *geo.constants().x_N;
        double prev = std::numeric_limits<double>::infinity();
        for (int i = 1; i <= 12; ++i) {
            const double a = xN * i / 13.0;
            if (geo.has_singular_point() && std::abs(a - *geo.constants().x_P) < 1e-3) continue;
            const double G = G_of_alpha(geo, a);
            CHECK(G < prev);
            prev = G;
        }
    }
}

TEST_CASE("boundary conditions and uniqueness") {
    const FbpSolution s = shoot(kElliptic);
    CHECK(std::abs(s.grid().front().dg) <= 1e-6);
    CHECK(std::abs(s.grid().back().dg) <= 1e-6);
    const FbpOptions opt;
    const FbpSolution t = shoot_with_bracket(kElliptic, 0.3 * s.alpha, 0.999 * *s.constants.x_N, opt);
    CHECK(std::abs(t.alpha - s.alpha) <= 10 * opt.shoot_tol * (1 + s.alpha));

    ModelParams free = kElliptic;
    free.lambda_down = free.lambda_up = 0;
    CHECK_THROWS_AS(shoot(free), ConfigError);
    ModelParams ill = kHyper;
    ill.lambda_down = ill.lambda_up = 0.01;
    CHECK_THROWS_AS(shoot(ill), IllPosedError);
}

TEST_CASE("hyperbolic solve") {
    const FbpSolution s = shoot(kHyper);
    check_residuals(s);
    CHECK(s.classification.regime == Regime::HyperbolicSubcase);
    // g' rises then falls: no interior local minimum
    const auto& grid = s.grid();
    std::size_t peak = 0;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid[i].dg > grid[peak].dg) peak = i;
    for (std::size_t i = 1; i <= peak; ++i) CHECK(grid[i].dg >= grid[i - 1].dg - 1e-12);
    for (std::size_t i = peak + 1; i < grid.size(); ++i) CHECK(grid[i].dg <= grid[i - 1].dg + 1e-12);
}

TEST_CASE("blow-up as costs approach the critical size") {
    const double C = compute_C(kHyper);
    double prev_alpha = 0, prev_value = -1;
    for (double extra : {0.2, 0.1, 0.05}) {
        ModelParams m = kHyper;
        m.lambda_down = m.lambda_up = std::tanh((C + extra) / 2);
        const FbpSolution s = shoot(m);
        const double v = std::pow(s.grid().front().g, 1 - m.p) / m.p;
        CHECK(s.alpha > prev_alpha);
        CHECK(v > prev_value);
        prev_alpha = s.alpha;
        prev_value = v;
    }
}
