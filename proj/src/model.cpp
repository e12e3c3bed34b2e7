#include "shadowfbp/model.hpp"

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/expint.hpp>

#include "shadowfbp/errors.hpp"
#include "shadowfbp/geometry.hpp"

namespace shadowfbp {

namespace {

void require(bool ok, const char* field, const char* rule) {
    if (!ok) throw ConfigError(std::string(field) + ": must satisfy " + rule);
}

}  // namespace

void validate(const ModelParams& m) {
    require(std::isfinite(m.mu) && m.mu > 0, "mu", "mu > 0");
    require(std::isfinite(m.sigma) && m.sigma > 0, "sigma", "sigma > 0");
    require(std::isfinite(m.p) && m.p < 1, "p", "p < 1");
    require(std::isfinite(m.delta) && m.delta > 0, "delta", "delta > 0");
    require(std::isfinite(m.lambda_down) && m.lambda_down >= 0 && m.lambda_down < 1,
            "lambda_down", "0 <= lambda_down < 1");
    require(std::isfinite(m.lambda_up) && m.lambda_up >= 0, "lambda_up", "lambda_up >= 0");
    require(std::isfinite(m.s0) && m.s0 > 0, "s0", "s0 > 0");
    require(std::isfinite(m.eta_B), "eta_B", "finite");
    require(std::isfinite(m.eta_S), "eta_S", "finite");
}

double validate_solvency(double phi0, double phi, double s_bid, double s_ask) {
    return phi0 + std::max(phi, 0.0) * s_bid - std::max(-phi, 0.0) * s_ask;
}

void require_strict_solvency(const ModelParams& m) {
    const double liq = validate_solvency(m.eta_B, m.eta_S, (1 - m.lambda_down) * m.s0,
                                         (1 + m.lambda_up) * m.s0);
    if (!(liq > 0))
        throw ConfigError("eta_B/eta_S: initial holdings are not strictly solvent (liquidation value " +
                          std::to_string(liq) + ")");
}

double log_cost(const ModelParams& m) {
    return std::log1p(m.lambda_up) - std::log1p(-m.lambda_down);
}

DerivedConstants derive_constants(const ModelParams& m) {
    DerivedConstants d;
    const double p = m.p, mu = m.mu, s2 = m.sigma * m.sigma, delta = m.delta;
    d.q = p / (1 - p);
    d.delta_hat = delta * (1 + d.q);
    d.sign_p = p < 0 ? -1.0 : 1.0;
    d.merton_pi = mu / ((1 - p) * s2);
    d.y_low = std::log1p(-m.lambda_down);
    d.y_high = std::log1p(m.lambda_up);

    if (p > 0) d.G_const = std::sqrt(2 * delta * (1 - p) * s2 / p);

    if (p == 0) {
        d.x_P = 1.0;
        d.z_P = (2 * mu - s2) / (2 * delta);
        d.x_N = mu / s2;
        d.z_N = mu * mu / (2 * delta * s2);
        return d;
    }

    const double A = delta / p + (1 - p) * s2 / 2;
    d.A_const = A;
    const double xp = d.sign_p / (A - mu);
    if (A != mu && xp > 0 && std::isfinite(xp)) {
        d.x_P = xp;
        d.z_P = xp / d.q;
    }

    // Frictionless (Merton) position of the north pole.
    const double merton_den = delta - p * mu * mu / (2 * (1 - p) * s2);
    if (merton_den > 0) {
        d.z_N = d.sign_p * (1 - p) / merton_den;
        d.x_N = d.merton_pi * d.q * *d.z_N;
    }
    if (p > 0 && mu < *d.G_const) d.x_E = 1 / (*d.G_const - mu);

    if (in_hyperbolic_band(m)) {
        d.K_const = compute_K(m);
        d.C_const = compute_C(m);
    }
    return d;
}

bool in_hyperbolic_band(const ModelParams& m) {
    if (!(m.p > 0 && m.p < 1)) return false;
    const double s2 = m.sigma * m.sigma;
    const double G = std::sqrt(2 * m.delta * (1 - m.p) * s2 / m.p);
    const double A = m.delta / m.p + (1 - m.p) * s2 / 2;
    return G <= m.mu && m.mu < A;
}

double compute_K(const ModelParams& m) {
    if (!in_hyperbolic_band(m)) throw RegimeError("K is defined only for 0<p<1 and G <= mu < A");
    const double p = m.p, s2 = m.sigma * m.sigma;
    const double G = std::sqrt(2 * m.delta * (1 - p) * s2 / p);
    const double A = m.delta / p + (1 - p) * s2 / 2;
    const double K = (1 - p) * (m.mu - G) / ((A - m.mu) + p * (m.mu - G));

    const DiscPoly disc = discriminant_poly(m);
    const double scale = std::abs(disc.d2) * K * K + std::abs(disc.d1) * K + std::abs(disc.d0) + 1e-300;
    if (std::abs(disc(K)) > 1e-9 * scale)
        throw DomainError("closed-form K is not a root of b^2 - 4ac");
    return K;
}

CResult compute_C_detailed(const ModelParams& m) {
    const double K = compute_K(m);
    if (K == 0) return {0.0, 0.0};

    const DiscPoly disc = discriminant_poly(m);
    // disc(k) = d2 (k - K)(k - K2): factoring keeps the square root accurate near k = K.
    const double K2 = disc.d0 / (disc.d2 * K);

    auto integrand = [&](double u) {
        const double k = K - u * u;
        const LevelCurveCoeffs lc = level_coeffs(m, k);
        const double dsc = -disc.d2 * u * u * (k - K2);
        const double sd = std::sqrt(std::max(dsc, 0.0));
        const double lu = (lc.b + sd) / (2 * lc.a);
        const double ld = 2 * lc.c / (lc.b + sd);
        const double dlu = (lc.db * lu - lc.da * lu * lu - lc.dc) / sd;
        const double dld = -(lc.db * ld - lc.da * ld * ld - lc.dc) / sd;
        const double F = k * (dlu / (k - lu) - dld / (k - ld));
        return 2 * u * F;
    };

    double err = 0.0;
    const double C = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
        integrand, 0.0, std::sqrt(K), 20, 1e-12, &err);
    if (!(err <= 1e-8) || !std::isfinite(C))
        throw QuadratureError("C quadrature did not converge", err);
    return {C, err};
}

double compute_C(const ModelParams& m) { return compute_C_detailed(m).value; }

WellPosedness classify(const ModelParams& m) {
    WellPosedness w;
    w.log_cost = log_cost(m);
    if (m.p <= 0) {
        w.regime = Regime::HighRiskAversion;
        return w;
    }
    const double s2 = m.sigma * m.sigma;
    const double G = std::sqrt(2 * m.delta * (1 - m.p) * s2 / m.p);
    const double A = m.delta / m.p + (1 - m.p) * s2 / 2;
    if (m.mu < G) {
        w.regime = Regime::EllipticSubcase;
        return w;
    }
    if (m.mu >= A) {
        w.verdict = Verdict::IllPosed;
        w.regime = Regime::SupercriticalIllPosed;
        return w;
    }
    w.C_const = compute_C(m);
    if (*w.C_const < w.log_cost) {
        w.regime = Regime::HyperbolicSubcase;
    } else {
        w.verdict = Verdict::IllPosed;
        w.regime = Regime::CriticalIllPosed;
    }
    return w;
}

std::string to_string(Verdict v) { return v == Verdict::WellPosed ? "WellPosed" : "IllPosed"; }

std::string to_string(Regime r) {
    switch (r) {
        case Regime::HighRiskAversion: return "HighRiskAversion";
        case Regime::EllipticSubcase: return "EllipticSubcase";
        case Regime::HyperbolicSubcase: return "HyperbolicSubcase";
        case Regime::CriticalIllPosed: return "CriticalIllPosed";
        case Regime::SupercriticalIllPosed: return "SupercriticalIllPosed";
    }
    return "Unknown";
}

double divergence_partial_integral(const ModelParams& m, double T) {
    if (!(m.p > 0 && m.p < 1)) throw RegimeError("divergence witness requires 0<p<1");
    const double s2 = m.sigma * m.sigma;
    const double A = m.delta / m.p + (1 - m.p) * s2 / 2;
    if (m.mu < A) throw RegimeError("divergence witness requires mu >= A");
    const double p = m.p;
    const double c0 = std::pow(1 - p, p) * std::pow(1 - m.lambda_down, p) / std::pow(p, 1 + p);
    const double kappa = p * (m.mu - A);
    if (kappa == 0) return c0 * std::log1p(T);
    // int_0^T e^{kappa t}/(t+1) dt = e^{-kappa} (Ei(kappa (T+1)) - Ei(kappa))
    const double hi = kappa * (T + 1);
    if (hi > 700) return std::numeric_limits<double>::infinity();
    return c0 * std::exp(-kappa) * (boost::math::expint(hi) - boost::math::expint(kappa));
}

}  // namespace shadowfbp
