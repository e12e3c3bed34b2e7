#include "shadowfbp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "shadowfbp/errors.hpp"

namespace shadowfbp {

LevelCurveCoeffs level_coeffs(const ModelParams& m, double k) {
    const double p = m.p, mu = m.mu, s2 = m.sigma * m.sigma, d = m.delta;
    LevelCurveCoeffs c;
    c.da = 2 * p * d;
    c.db = 2 * d + p * (1 - p) * (2 * mu - s2);
    c.dc = (1 - p) * (2 * mu + (p * p - 1) * s2);
    c.a = c.da * (1 + k);
    c.b = c.db * k + 2 * p * (1 - p) * mu;
    c.c = c.dc * k + (1 - p) * (1 - p) * (1 - p) * s2;
    return c;
}

DiscPoly discriminant_poly(const ModelParams& m) {
    const LevelCurveCoeffs c0 = level_coeffs(m, 0.0);
    const double a0 = c0.a, a1 = c0.da, b0 = c0.b, b1 = c0.db, cc0 = c0.c, c1 = c0.dc;
    return {b1 * b1 - 4 * a1 * c1, 2 * b0 * b1 - 4 * (a0 * c1 + a1 * cc0), b0 * b0 - 4 * a0 * cc0};
}

Quadric Quadric::shifted(double x0, double z0) const {
    Quadric s;
    s.xx = xx;
    s.xz = xz;
    s.zz = zz;
    s.x = dx(x0, z0);
    s.z = dz(x0, z0);
    s.c = (*this)(x0, z0);
    return s;
}

Quadric Quadric::operator-(const Quadric& o) const {
    return {xx - o.xx, xz - o.xz, zz - o.zz, x - o.x, z - o.z, c - o.c};
}

Quadric Quadric::operator*(double s) const { return {xx * s, xz * s, zz * s, x * s, z * s, c * s}; }

namespace {

double term_scale(const Quadric& f, double x, double z) {
    return std::abs(f.xx * x * x) + std::abs(f.xz * x * z) + std::abs(f.zz * z * z) +
           std::abs(f.x * x) + std::abs(f.z * z) + std::abs(f.c);
}

// Second-order directional derivative F_xx + 2 F_xz s + F_zz s^2.
double second_along(const Quadric& f, double s) { return 2 * f.xx + 2 * f.xz * s + 2 * f.zz * s * s; }

}  // namespace

Geometry::Geometry(const ModelParams& m) : m_(m), dc_(derive_constants(m)) {
    const double p = m.p, mu = m.mu, s2 = m.sigma * m.sigma, d = m.delta;
    if (p == 0) {
        P_ = {-s2, 0, 0, 2 * mu, -2 * d, 0};
        Q_ = {-(s2 - 2 * mu), -2 * d, 0, s2 - 2 * mu, 2 * d, 0};
    } else {
        const double q = dc_.q, s = dc_.sign_p;
        P_ = {-(1 - p) * (1 - p) * s2, 2 * p * mu, -2 * q * d, 0, 2 * p * s, 0};
        Quadric extra{2 * (mu - (1 - p) * s2), p * s2 - 2 * dc_.delta_hat, 0, 2 * s, 0, 0};
        Q_ = extra - P_;
    }
    if (dc_.x_P) {
        // Both polynomials vanish at P; re-expanding there removes cancellation nearby.
        P_shift_ = P_.shifted(*dc_.x_P, *dc_.z_P);
        Q_shift_ = Q_.shifted(*dc_.x_P, *dc_.z_P);
        P_shift_.c = 0;
        Q_shift_.c = 0;
        shifted_ok_ = true;
        shift_radius_ = 0.5 * *dc_.x_P;
    }
}

double Geometry::eval_P(double x, double z) const {
    if (shifted_ok_ && std::abs(x - *dc_.x_P) < shift_radius_)
        return P_shift_(x - *dc_.x_P, z - *dc_.z_P);
    return P_(x, z);
}

double Geometry::eval_Q(double x, double z) const {
    if (shifted_ok_ && std::abs(x - *dc_.x_P) < shift_radius_)
        return Q_shift_(x - *dc_.x_P, z - *dc_.z_P);
    return Q_(x, z);
}

double Geometry::eval_L(double x, double z) const {
    const double P = eval_P(x, z);
    const double Q = eval_Q(x, z);
    double qscale;
    if (shifted_ok_ && std::abs(x - *dc_.x_P) < shift_radius_)
        qscale = term_scale(Q_shift_, x - *dc_.x_P, z - *dc_.z_P);
    else
        qscale = term_scale(Q_, x, z);
    if (std::abs(Q) < 1e-12 * (1 + std::abs(P) + qscale))
        throw SingularEvaluation("L evaluated on the curve Q = 0 at x=" + std::to_string(x) +
                                 ", z=" + std::to_string(z));
    return P / Q;
}

std::pair<double, double> Geometry::grad_L(double x, double z) const {
    const double L = eval_L(x, z);
    const double Q = eval_Q(x, z);
    return {(P_.dx(x, z) - L * Q_.dx(x, z)) / Q, (P_.dz(x, z) - L * Q_.dz(x, z)) / Q};
}

Quadric Geometry::level_quadric(double k) const {
    if (std::isinf(k)) return Q_;
    return P_ - Q_ * k;
}

LevelRoots Geometry::level_roots(double x, double k) const {
    const Quadric F = level_quadric(k);
    const double A2 = F.zz;
    const double A1 = F.xz * x + F.z;
    const double A0 = (F.xx * x + F.x) * x + F.c;
    if (A2 == 0) {
        if (A1 == 0) throw DomainError("degenerate level curve");
        const double r = -A0 / A1;
        return {r, r};
    }
    double disc = A1 * A1 - 4 * A2 * A0;
    const double scale = A1 * A1 + std::abs(4 * A2 * A0);
    if (disc < 0) {
        if (disc < -1e-13 * scale)
            throw DomainError("x=" + std::to_string(x) + " lies outside the domain of the level curve k=" +
                              std::to_string(k));
        disc = 0;
    }
    const double sq = std::sqrt(disc);
    const double t = -0.5 * (A1 + std::copysign(sq, A1));
    double r1 = t / A2;
    double r2 = t != 0 ? A0 / t : r1;
    const double hi = std::max(r1, r2), lo = std::min(r1, r2);
    if (m_.p > 0) return {hi, lo};
    return {lo, hi};
}

double Geometry::level_slope(double x, double z, double k) const {
    const Quadric F = level_quadric(k);
    return -F.dx(x, z) / F.dz(x, z);
}

double Geometry::level_curvature(double x, double z, double k) const {
    const Quadric F = level_quadric(k);
    const double s = -F.dx(x, z) / F.dz(x, z);
    return -second_along(F, s) / F.dz(x, z);
}

double Geometry::closed_form_radicand(double x, double k) const {
    const double p = m_.p;
    const LevelCurveCoeffs c = level_coeffs(m_, k);
    return (c.b * c.b - 4 * c.a * c.c) * x * x +
           4 * p * (1 - p) * (k + 1) * (c.b - 4 * m_.delta * k) * x +
           4 * p * p * (1 - p) * (1 - p) * (1 + k) * (1 + k);
}

LevelRoots Geometry::level_roots_closed_form(double x, double k) const {
    if (!(m_.p > 0 && m_.p < 1)) throw RegimeError("closed-form level curves need 0<p<1");
    if (std::isinf(k)) throw DomainError("closed form not available at k = inf");
    const LevelCurveCoeffs c = level_coeffs(m_, k);
    const double R = closed_form_radicand(x, k);
    if (R < 0) throw DomainError("closed-form radicand negative");
    const double base = (1 - m_.p) / (2 * m_.delta);
    const double sq = std::sqrt(R);
    return {base + (c.b * x + sq) / (2 * c.a), base + (c.b * x - sq) / (2 * c.a)};
}

std::pair<std::optional<double>, std::optional<double>> Geometry::x_pm(double k) const {
    if (!(m_.p > 0 && m_.p < 1)) throw RegimeError("x_pm needs 0<p<1");
    const double G = *dc_.G_const, A = *dc_.A_const, mu = m_.mu, q = dc_.q, p = m_.p;
    double num, dp, dm;
    if (std::isinf(k)) {
        num = 1;
        dp = q * (A - G) + (A - mu);
        dm = q * (A + G) + (A - mu);
    } else {
        num = k + 1;
        const double common = -mu + (A / (1 - p) - mu) * k;
        dp = G * (1 - q * k) + common;
        dm = -G * (1 - q * k) + common;
    }
    std::optional<double> xp, xm;
    if (dp > 0) xp = num / dp;
    if (dm > 0) xm = num / dm;
    return {xp, xm};
}

LudRoots Geometry::l_ud(double k) const {
    if (!in_hyperbolic_band(m_)) throw RegimeError("l_u, l_d need 0<p<1 and G <= mu < A");
    const LevelCurveCoeffs c = level_coeffs(m_, k);
    const double disc = c.b * c.b - 4 * c.a * c.c;
    if (!(disc > 0)) throw DomainError("l_u/l_d: k=" + std::to_string(k) + " is not below K");
    const double sd = std::sqrt(disc);
    LudRoots r;
    r.l_u = (c.b + sd) / (2 * c.a);
    r.l_d = 2 * c.c / (c.b + sd);
    r.dl_u = (c.db * r.l_u - c.da * r.l_u * r.l_u - c.dc) / sd;
    r.dl_d = -(c.db * r.l_d - c.da * r.l_d * r.l_d - c.dc) / sd;
    return r;
}

SingularJet Geometry::singular_jet() const {
    if (!dc_.x_P) throw RegimeError("no singular point with x > 0");
    const double x = *dc_.x_P, z = *dc_.z_P;
    const double Pz = P_.dz(x, z), Qz = Q_.dz(x, z);
    const double g1 = -P_.dx(x, z) / Pz;
    const double DP = second_along(P_, g1), DQ = second_along(Q_, g1);
    SingularJet j;
    j.x = x;
    j.z = z;
    j.g1 = g1;
    j.g2 = (g1 * DQ - DP) / (Pz - g1 * Qz);
    j.curve_second = -DP / Pz;
    return j;
}

double Geometry::g2_closed_form() const {
    if (!(m_.p > 0 && m_.p < 1)) throw RegimeError("closed-form g'' needs 0<p<1");
    const double p = m_.p, mu = m_.mu, s2 = m_.sigma * m_.sigma, d = m_.delta;
    const double t1 = 2 * d - 2 * p * mu + p * (1 - p) * s2;
    const double t2 = 2 * d + 2 * (1 - p) * mu + (p - 2) * (1 - p) * s2;
    const double t3 = 2 * d - p * (1 - p) * s2;
    return -(1 - p) * (1 - p) * s2 * t1 * t1 * t2 / (p * t3 * t3 * t3);
}

bool Geometry::singular_on_rising_branch() const {
    if (!dc_.x_P) return false;
    const double x = *dc_.x_P, z = *dc_.z_P;
    double tu;
    try {
        tu = T_u(x, 0.0);
    } catch (const DomainError&) {
        return false;
    }
    if (std::abs(tu - z) > 1e-8 * (1 + std::abs(z))) return false;
    return singular_jet().g1 > 0;
}

double Geometry::find_k0() const {
    if (!(m_.p > 0 && m_.p < 1)) throw RegimeError("k0 needs 0<p<1");
    if (!(m_.mu < *dc_.A_const)) throw RegimeError("k0 needs mu < A");
    const double anchor = (1 - m_.p) / m_.p;
    const double xP = *dc_.x_P;
    constexpr double margin = 1e-8;

    auto passes = [&](double k) {
        const LevelCurveCoeffs c = level_coeffs(m_, k);
        const double disc = c.b * c.b - 4 * c.a * c.c;
        if (!(disc > margin * c.b * c.b)) return false;
        const double z0 = T_u(0.0, k);
        if (!(k - level_slope(0.0, z0, k) > margin)) return false;
        const auto [xp, xm] = x_pm(k);
        const double xcap = xp ? *xp : 10 * xP;
        if (xp && !(*xp >= xP * (1 + margin))) return false;
        for (int i = 1; i <= 400; ++i) {
            const double x = xcap * i / 400.0;
            if (closed_form_radicand(x, k) < -1e-12) return false;
            if (i < 400) {
                const double z = T_u(x, k);
                if (!(level_slope(x, z, k) < k)) return false;
            }
        }
        return true;
    };

    double k = 0.9 * anchor;
    for (int it = 0; it < 200; ++it) {
        if (passes(k)) return k;
        k = 0.5 * (k + anchor);
    }
    throw DomainError("find_k0: no k below (1-p)/p passed the containment conditions; last k=" +
                      std::to_string(k));
}

double Geometry::x_m(double k0) const {
    const auto [xp, xm_unused] = x_pm(k0);
    (void)xm_unused;
    const double xcap = xp ? *xp : std::numeric_limits<double>::infinity();
    auto slope = [&](double x) { return level_slope(x, T_u(x, k0), k0); };
    double hi = std::isfinite(xcap) ? xcap * (1 - 1e-12) : 1.0;
    if (!std::isfinite(xcap)) {
        while (slope(hi) > 0 && hi < 1e12) hi *= 2;
        if (slope(hi) > 0) return hi;
    } else if (slope(hi) >= 0) {
        return xcap;
    }
    double lo = 0.0;
    double x = 0.5 * (lo + hi);
    // Safeguarded Newton on the slope, which is decreasing by concavity.
    for (int it = 0; it < 200; ++it) {
        const double s = slope(x);
        if (s > 0)
            lo = x;
        else
            hi = x;
        const double curv = level_curvature(x, T_u(x, k0), k0);
        double xn = curv < 0 ? x - s / curv : 0.5 * (lo + hi);
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        if (std::abs(xn - x) <= 1e-15 * std::max(1.0, x) || hi - lo <= 1e-15 * hi) return xn;
        x = xn;
    }
    return x;
}

double Geometry::tau(double x, double k0, double xm) const { return T_u(std::min(x, xm), k0); }

double Geometry::tau(double x) const {
    const double k0 = find_k0();
    return tau(x, k0, x_m(k0));
}

double h_func(double x, double g, double g_prime, const ModelParams& m) {
    if (m.p == 0) return (1 - x) * g_prime + 1;
    const double q = m.p / (1 - m.p);
    return q * g * (g_prime + 1) - (q + 1) * x * g_prime;
}

}  // namespace shadowfbp
