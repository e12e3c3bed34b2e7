#include "shadowfbp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "shadowfbp/errors.hpp"

namespace shadowfbp {

namespace {
constexpr double kHFloor = 1e-12;

double q_of(const ModelParams& m) { return m.p / (1 - m.p); }
}  // namespace

Optimizers optimizers_at(double x, double g, double dg, const ModelParams& m) {
    const double h = h_func(x, g, dg, m);
    if (!(std::abs(h) > kHFloor * (1 + std::abs(g) + x)))
        throw DomainError("h vanishes at x=" + std::to_string(x));
    const double s = m.sigma;
    Optimizers o;
    if (m.p == 0) {
        o.theta = s * x / h;
        o.Sigma = -s * (1 - x) * dg / h;
        o.Gamma = s * x * (1 - x) / h;
    } else {
        const double q = q_of(m);
        o.theta = -s * (1 - m.p) * x * (q * dg - 1) / h;
        o.Sigma = -s * (q * g - x) * dg / h;
        o.Gamma = s * x * (q * g - x) / h;
    }
    return o;
}

Optimizers optimizers(double x, const FbpSolution& sol) {
    return optimizers_at(x, sol.g(x), sol.dg(x), sol.params);
}

PiKappa pi_kappa_at(double x, double g, const ModelParams& m) {
    if (m.p == 0) return {x, m.delta};
    if (g == 0) throw DomainError("g vanishes; Pi and K are undefined");
    return {x / (q_of(m) * g), 1 / std::abs(g)};
}

PiKappa pi_kappa(double x, const FbpSolution& sol) { return pi_kappa_at(x, sol.g(x), sol.params); }

double alpha_q(double Sigma, double theta, double q, const ModelParams& m) {
    return theta * m.sigma - m.mu - Sigma * (0.5 * Sigma + m.sigma - theta * (1 + q));
}

double beta_q(double theta, double q, const ModelParams& m) {
    return (1 + q) * (m.delta - 0.5 * q * theta * theta);
}

double envelope_residual_at(double x, double g, double dg, double d2g, const ModelParams& m) {
    const double q = q_of(m);
    const double h = h_func(x, g, dg, m);
    const Optimizers o = optimizers_at(x, g, dg, m);
    // Sigma/g' written without the division by g'.
    const double ratio = m.p == 0 ? -m.sigma * (1 - x) / h : -m.sigma * (q * g - x) / h;
    return 0.5 * ratio * ratio * (dg - x * d2g) - alpha_q(o.Sigma, o.theta, q, m) - dg * beta_q(o.theta, q, m);
}

double duality_portfolio(double x, double g, const Optimizers& o, const ModelParams& m) {
    const double vol = m.sigma + o.Sigma;
    double pi = o.theta / ((1 - m.p) * vol);
    if (m.p != 0) pi -= (x / g) * (o.Sigma / vol);
    return pi;
}

MonotoneCubic::MonotoneCubic(std::vector<double> x, std::vector<double> y, std::vector<double> dy)
    : x_(std::move(x)), y_(std::move(y)), m_(std::move(dy)) {
    for (std::size_t i = 0; i + 1 < x_.size(); ++i) {
        const double d = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
        if (d == 0) {
            m_[i] = m_[i + 1] = 0;
            continue;
        }
        double a = m_[i] / d, b = m_[i + 1] / d;
        if (a < 0) m_[i] = a = 0;
        if (b < 0) m_[i + 1] = b = 0;
        const double r = a * a + b * b;
        if (r > 9) {
            const double t = 3 / std::sqrt(r);
            m_[i] = t * a * d;
            m_[i + 1] = t * b * d;
        }
    }
}

std::size_t MonotoneCubic::locate(double x) const {
    auto it = std::upper_bound(x_.begin(), x_.end(), x);
    std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
    return std::min(i, x_.size() - 2);
}

double MonotoneCubic::operator()(double x) const {
    const std::size_t i = locate(x);
    const double h = x_[i + 1] - x_[i];
    const double t = std::clamp((x - x_[i]) / h, 0.0, 1.0);
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * m_[i] + (-2 * t3 + 3 * t2) * y_[i + 1] +
           (t3 - t2) * h * m_[i + 1];
}

double MonotoneCubic::derivative(double x) const {
    const std::size_t i = locate(x);
    const double h = x_[i + 1] - x_[i];
    const double t = std::clamp((x - x_[i]) / h, 0.0, 1.0);
    const double t2 = t * t;
    return ((6 * t2 - 6 * t) * y_[i] + (-6 * t2 + 6 * t) * y_[i + 1]) / h + (3 * t2 - 4 * t + 1) * m_[i] +
           (3 * t2 - 2 * t) * m_[i + 1];
}

PolicyTable::Coeffs PolicyTable::coeffs(double xv) const {
    const std::size_t n = x.size();
    const double dx = (x_high - x_low) / static_cast<double>(n - 1);
    double s = (xv - x_low) / dx;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    std::size_t i = std::min(static_cast<std::size_t>(s), n - 2);
    const double w = s - static_cast<double>(i);
    auto lerp = [&](const std::vector<double>& v) { return v[i] + w * (v[i + 1] - v[i]); };
    return {lerp(drift), lerp(Gamma), lerp(theta), lerp(Sigma), lerp(Pi), lerp(Kappa)};
}

double PolicyTable::f_at(double xv) const { return std::clamp(f_interp(xv), y_low, y_high); }

PolicyTable build_policy(const FbpSolution& sol, std::size_t n) {
    if (n < 3) throw ConfigError("grid_points: policy table needs at least 3 knots");
    const ModelParams& m = sol.params;
    const double q = q_of(m);
    PolicyTable t;
    t.x_low = sol.x_low;
    t.x_high = sol.x_high;
    t.y_low = sol.constants.y_low;
    t.y_high = sol.constants.y_high;
    t.theta_sup = 0;
    t.min_sigma_plus_Sigma = std::numeric_limits<double>::infinity();
    t.min_kappa = std::numeric_limits<double>::infinity();
    t.max_kappa = 0;
    t.min_abs_h = std::numeric_limits<double>::infinity();
    std::vector<double> df(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double xv = i + 1 == n ? sol.x_high
                                     : sol.x_low + (sol.x_high - sol.x_low) * static_cast<double>(i) /
                                                       static_cast<double>(n - 1);
        const double g = sol.g(xv);
        const double dg = std::max(sol.dg(xv), 0.0);
        const Optimizers o = optimizers_at(xv, g, dg, m);
        const PiKappa pk = pi_kappa_at(xv, g, m);
        const double b = beta_q(o.theta, q, m);
        t.x.push_back(xv);
        t.g.push_back(g);
        t.dg.push_back(dg);
        t.theta.push_back(o.theta);
        t.Sigma.push_back(o.Sigma);
        t.Gamma.push_back(o.Gamma);
        t.Pi.push_back(pk.Pi);
        t.Kappa.push_back(pk.Kappa);
        t.f.push_back(sol.f(xv));
        t.beta.push_back(b);
        t.drift.push_back(xv * b - q * o.theta * o.Gamma);
        df[i] = -dg / xv;
        t.theta_sup = std::max(t.theta_sup, std::abs(o.theta));
        t.min_sigma_plus_Sigma = std::min(t.min_sigma_plus_Sigma, m.sigma + o.Sigma);
        t.min_kappa = std::min(t.min_kappa, pk.Kappa);
        t.max_kappa = std::max(t.max_kappa, pk.Kappa);
        t.min_abs_h = std::min(t.min_abs_h, std::abs(h_func(xv, g, dg, m)));
    }
    t.f.front() = t.y_high;
    t.f.back() = t.y_low;
    t.g_interp = MonotoneCubic(t.x, t.g, t.dg);
    t.f_interp = MonotoneCubic(t.x, t.f, df);
    t.x_hat = initial_state(m.eta_B, m.eta_S, sol);
    t.u_hat = value(m.eta_B, m.eta_S, sol);
    const Wedge w = no_trade_wedge(sol);
    t.wedge_low = w.fraction_low;
    t.wedge_high = w.fraction_high;
    return t;
}

double initial_state(double eta_B, double eta_S, const FbpSolution& sol, std::vector<std::string>* diagnostics) {
    const ModelParams& m = sol.params;
    auto r = [&](double x) {
        const double Pi = pi_kappa(x, sol).Pi;
        return eta_S * m.s0 * std::exp(sol.f(x)) * (1 - Pi) - eta_B * Pi;
    };
    const auto& grid = sol.grid();
    std::vector<double> xs;
    xs.reserve(grid.size());
    for (const GridPoint& gp : grid) xs.push_back(gp.x);
    std::vector<double> rv(xs.size());
    bool all_pos = true, all_neg = true;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        rv[i] = r(xs[i]);
        all_pos = all_pos && rv[i] > 0;
        all_neg = all_neg && rv[i] < 0;
    }
    if (all_pos) return sol.x_high;
    if (all_neg) return sol.x_low;

    std::size_t first = xs.size();
    int changes = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (rv[i] == 0) {
            if (first == xs.size()) first = i;
            ++changes;
            continue;
        }
        if (i + 1 < xs.size() && ((rv[i] < 0) != (rv[i + 1] < 0)) && rv[i + 1] != 0) {
            if (first == xs.size()) first = i;
            ++changes;
        }
    }
    if (changes > 1 && diagnostics)
        diagnostics->push_back("r(x) changes sign " + std::to_string(changes) + " times; leftmost root taken");
    if (rv[first] == 0) return xs[first];
    double a = xs[first], b = xs[first + 1], fa = rv[first];
    const double scale = std::abs(eta_S * m.s0 * std::exp(sol.constants.y_high)) + std::abs(eta_B);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = r(mid);
        if (std::abs(fm) <= 1e-12 * scale || b - a <= 1e-15 * b) return mid;
        if ((fm < 0) == (fa < 0)) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    return 0.5 * (a + b);
}

double value(double eta_B, double eta_S, const FbpSolution& sol) {
    const ModelParams& m = sol.params;
    const double xh = initial_state(eta_B, eta_S, sol);
    const double xi = eta_B + m.s0 * std::exp(sol.f(xh)) * eta_S;
    if (xi < 0) throw DomainError("shadow wealth is negative; value undefined");
    const double g = sol.g(xh);
    if (m.p == 0) {
        if (xi == 0) return -std::numeric_limits<double>::infinity();
        return (-1 + std::log(m.delta * xi) + g) / m.delta;
    }
    if (xi == 0 && m.p < 0) return -std::numeric_limits<double>::infinity();
    return std::pow(xi, m.p) * std::pow(std::abs(g), 1 - m.p) / m.p;
}

Wedge no_trade_wedge(const FbpSolution& sol) {
    return {pi_kappa(sol.x_low, sol).Pi, pi_kappa(sol.x_high, sol).Pi};
}

MertonLimit merton_limit(const ModelParams& m) {
    validate(m);
    const DerivedConstants dc = derive_constants(m);
    if (!dc.x_N) throw RegimeError("the frictionless problem has infinite value (no north pole)");
    MertonLimit r;
    r.x_N = *dc.x_N;
    r.g_N = *dc.z_N;
    r.pi = dc.merton_pi;
    if (m.p == 0) {
        r.kappa = m.delta;
        r.value_unit_cash = (-1 + std::log(m.delta) + r.g_N) / m.delta;
    } else {
        r.kappa = 1 / std::abs(r.g_N);
        r.value_unit_cash = std::pow(std::abs(r.g_N), 1 - m.p) / m.p;
    }
    return r;
}

}  // namespace shadowfbp
