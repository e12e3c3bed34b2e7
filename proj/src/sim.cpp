#include "shadowfbp/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>

#include "shadowfbp/errors.hpp"

namespace shadowfbp {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> Philox4x32::block(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            k[0] += kW0;
            k[1] += kW1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kM0, c[0], hi0, lo0);
        mulhilo(kM1, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
    return c;
}

Philox4x32::Philox4x32(std::uint64_t key, std::uint64_t stream)
    : ctr_{0u, 0u, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)},
      key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

Philox4x32::result_type Philox4x32::operator()() {
    if (pos_ == 4) {
        buf_ = block(ctr_, key_);
        if (++ctr_[0] == 0) ++ctr_[1];
        pos_ = 0;
    }
    return buf_[pos_++];
}

double NormalStream::operator()() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Marsaglia polar method on 32-bit uniforms in [-1, 1).
    auto uniform = [&] { return (static_cast<double>(rng_()) + 0.5) * 0x1.0p-31 - 1.0; };
    double u, v, s;
    do {
        u = uniform();
        v = uniform();
        s = u * u + v * v;
    } while (s >= 1 || s == 0);
    const double f = std::sqrt(-2 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

void validate(const SimConfig& cfg) {
    if (cfg.n_paths < 1) throw ConfigError("n_paths: must satisfy n_paths >= 1");
    if (!(cfg.dt > 0) || !std::isfinite(cfg.dt)) throw ConfigError("dt: must satisfy dt > 0");
    if (cfg.horizon > 0 && cfg.horizon < cfg.dt) throw ConfigError("horizon: must satisfy horizon >= dt");
    if (!std::isfinite(cfg.horizon)) throw ConfigError("horizon: must be finite");
    if (cfg.record_stride < 1) throw ConfigError("record_stride: must satisfy record_stride >= 1");
    if (cfg.antithetic && cfg.n_paths % 2 != 0) throw ConfigError("n_paths: must be even with antithetic sampling");
    if (!(cfg.tail_fraction > 0)) throw ConfigError("tail_fraction: must satisfy tail_fraction > 0");
}

unsigned worker_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SHADOWFBP_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return n;
}

namespace {

// Runs body(i) for i in [0, n) on the worker pool; each index is handled exactly once.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const unsigned nw = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
    if (nw <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::atomic<bool> failed{false};
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                body(i);
            } catch (...) {
                if (!failed.exchange(true)) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

struct Stepper {
    const PolicyTable& tab;
    double dt, sqdt;

    // Euler step with projection onto [x_low, x_high]; returns the coefficients used.
    PolicyTable::Coeffs step(double& x, double xi, double& up, double& down) const {
        const PolicyTable::Coeffs c = tab.coeffs(x);
        const double xs = x + c.drift * dt + c.Gamma * sqdt * xi;
        up = down = 0;
        if (xs < tab.x_low) {
            up = tab.x_low - xs;
            x = tab.x_low;
        } else if (xs > tab.x_high) {
            down = xs - tab.x_high;
            x = tab.x_high;
        } else {
            x = xs;
        }
        return c;
    }
};

void check_policy(const PolicyTable& tab, const SimConfig& cfg) {
    if (tab.x.size() < 2) throw ConfigError("policy table is empty");
    if (!(tab.theta_sup <= cfg.theta_cap))
        throw DomainError("sup|theta| = " + std::to_string(tab.theta_sup) + " exceeds the sanity cap " +
                          std::to_string(cfg.theta_cap) + "; h is too close to zero for a reliable simulation");
}

std::size_t step_count(double T, double dt) {
    return static_cast<std::size_t>(std::max(1.0, std::ceil(T / dt - 1e-9)));
}

void check_budget(const SimConfig& cfg, std::size_t n_paths, std::size_t n_steps) {
    const double work = static_cast<double>(n_paths) * static_cast<double>(n_steps);
    if (work > cfg.step_budget)
        throw BudgetError("n_paths * T / dt = " + std::to_string(work) + " exceeds step_budget " +
                          std::to_string(cfg.step_budget));
}

struct PathStats {
    double mean = 0, se = 0;
    std::size_t n = 0;
};

// Reduces per-path values in index order; antithetic pairs are averaged first.
PathStats reduce(const std::vector<double>& v, bool antithetic) {
    std::vector<double> s;
    if (antithetic) {
        for (std::size_t i = 0; i + 1 < v.size(); i += 2) s.push_back(0.5 * (v[i] + v[i + 1]));
    } else {
        s = v;
    }
    PathStats r;
    r.n = s.size();
    double sum = 0;
    for (double x : s) sum += x;
    r.mean = sum / static_cast<double>(r.n);
    if (r.n > 1) {
        double ss = 0;
        for (double x : s) ss += (x - r.mean) * (x - r.mean);
        r.se = std::sqrt(ss / static_cast<double>(r.n - 1) / static_cast<double>(r.n));
    }
    return r;
}

// Normal stream for path i: antithetic pairs share a stream with mirrored sign.
struct PathNoise {
    NormalStream ns;
    double sign;
    PathNoise(const SimConfig& cfg, std::size_t i)
        : ns(cfg.seed, cfg.antithetic ? i / 2 : i), sign(cfg.antithetic && (i % 2 == 1) ? -1.0 : 1.0) {}
    double operator()() { return sign * ns(); }
};

double sgn(double p) { return p < 0 ? -1.0 : 1.0; }

// Smallest T on a doubling/bisection search with bound(T) <= target.
double horizon_for(const std::function<double(double)>& bound, double target, double dt) {
    double hi = std::max(dt, 1.0);
    for (int i = 0; i < 60 && bound(hi) > target; ++i) hi *= 2;
    if (bound(hi) > target) throw BudgetError("no finite horizon meets the tail bound");
    double lo = dt;
    if (bound(lo) <= target) return lo;
    for (int i = 0; i < 100 && hi - lo > dt; ++i) {
        const double mid = 0.5 * (lo + hi);
        (bound(mid) <= target ? hi : lo) = mid;
    }
    return hi;
}

// Table-based analogue of the initial-state rule: sign scan of r on the knots, leftmost root.
double table_initial_state(const PolicyTable& tab, const ModelParams& m, double eta_B, double eta_S) {
    auto r = [&](double x) {
        const double Pi = tab.coeffs(x).Pi;
        return eta_S * m.s0 * std::exp(tab.f_at(x)) * (1 - Pi) - eta_B * Pi;
    };
    const std::size_t n = tab.x.size();
    std::vector<double> rv(n);
    bool pos = true, neg = true;
    for (std::size_t i = 0; i < n; ++i) {
        rv[i] = r(tab.x[i]);
        pos = pos && rv[i] > 0;
        neg = neg && rv[i] < 0;
    }
    if (pos) return tab.x_high;
    if (neg) return tab.x_low;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (rv[i] == 0) return tab.x[i];
        if ((rv[i] < 0) != (rv[i + 1] < 0)) {
            double a = tab.x[i], b = tab.x[i + 1], fa = rv[i];
            for (int it = 0; it < 200 && b - a > 1e-15 * b; ++it) {
                const double mid = 0.5 * (a + b), fm = r(mid);
                if ((fm < 0) == (fa < 0)) {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            return 0.5 * (a + b);
        }
    }
    return tab.x.back();
}

}  // namespace

PathBundle simulate_state(double x0, const SimConfig& cfg, const PolicyTable& tab, const ModelParams& m) {
    validate(cfg);
    check_policy(tab, cfg);
    if (!(cfg.horizon > 0)) throw ConfigError("horizon: path bundles need an explicit horizon > 0");
    if (!(x0 >= tab.x_low && x0 <= tab.x_high))
        throw DomainError("x0=" + std::to_string(x0) + " lies outside [x_low, x_high]");
    const std::size_t n_steps = step_count(cfg.horizon, cfg.dt);
    check_budget(cfg, cfg.n_paths, n_steps);
    const std::size_t stride = cfg.record_stride;
    const std::size_t n_samples = n_steps / stride + 1;
    if (static_cast<double>(cfg.n_paths) * static_cast<double>(n_samples) > cfg.storage_budget)
        throw BudgetError("path bundle needs " + std::to_string(cfg.n_paths * n_samples) +
                          " samples per field, above storage_budget; raise record_stride or lower n_paths");

    const double dt = cfg.horizon / static_cast<double>(n_steps);
    PathBundle b;
    b.n_paths = cfg.n_paths;
    b.n_samples = n_samples;
    b.dt = dt * static_cast<double>(stride);
    b.x0 = x0;
    b.t.resize(n_samples);
    for (std::size_t k = 0; k < n_samples; ++k) b.t[k] = static_cast<double>(k) * b.dt;
    const std::size_t total = cfg.n_paths * n_samples;
    for (auto* v : {&b.B, &b.X, &b.Phi_up, &b.Phi_down, &b.W}) v->assign(total, 0.0);

    const double q = m.p / (1 - m.p);
    const Stepper st{tab, dt, std::sqrt(dt)};
    parallel_for(cfg.n_paths, [&](std::size_t i) {
        PathNoise noise(cfg, i);
        double x = x0, B = 0, up = 0, down = 0, logE = 0;
        auto record = [&](std::size_t k) {
            const std::size_t j = b.at(i, k);
            b.X[j] = x;
            b.B[j] = B;
            b.Phi_up[j] = up;
            b.Phi_down[j] = down;
            b.W[j] = m.p == 0 ? -m.delta * logE : sgn(m.p) * std::exp(-q * logE);
        };
        record(0);
        for (std::size_t s = 1; s <= n_steps; ++s) {
            const double xi = noise();
            double du, dd;
            const PolicyTable::Coeffs c = st.step(x, xi, du, dd);
            if (!std::isfinite(x)) throw DomainError("state coefficients are not finite");
            const double dB = st.sqdt * xi;
            B += dB;
            up += du;
            down += dd;
            logE += -c.theta * dB - 0.5 * c.theta * c.theta * dt;
            if (s % stride == 0) record(s / stride);
        }
    });
    return b;
}

PathBundle simulate_state(double x0, const SimConfig& cfg, const FbpSolution& sol) {
    return simulate_state(x0, cfg, build_policy(sol), sol.params);
}

void shadow_paths(PathBundle& b, const PolicyTable& tab, const ModelParams& m, double tol_f) {
    const std::size_t total = b.X.size();
    b.Y.assign(total, 0.0);
    b.S.assign(total, 0.0);
    b.S_hat.assign(total, 0.0);
    double exc = 0;
    for (std::size_t i = 0; i < b.n_paths; ++i) {
        for (std::size_t k = 0; k < b.n_samples; ++k) {
            const std::size_t j = b.at(i, k);
            const double raw = tab.f_interp(b.X[j]);
            exc = std::max({exc, tab.y_low - raw, raw - tab.y_high});
            const double y = std::clamp(raw, tab.y_low, tab.y_high);
            b.Y[j] = y;
            b.S[j] = m.s0 * std::exp((m.mu - 0.5 * m.sigma * m.sigma) * b.t[k] + m.sigma * b.B[j]);
            b.S_hat[j] = b.S[j] * std::exp(y);
        }
    }
    b.y_excursion = exc;
    if (exc > tol_f)
        throw DomainError("Y left [y_low, y_high] by " + std::to_string(exc) + ", above the interpolation tolerance");
    b.has_shadow = true;
}

void wealth_consumption(PathBundle& b, const PolicyTable& tab, const ModelParams& m, double eta_B, double eta_S) {
    if (!b.has_shadow) throw ConfigError("wealth_consumption needs shadow_paths first");
    const double xi0 = eta_B + m.s0 * std::exp(tab.f_at(b.x0)) * eta_S;
    if (!(xi0 > 0)) throw DomainError("initial shadow wealth must be positive");
    const std::size_t total = b.X.size();
    for (auto* v : {&b.V, &b.c, &b.phi, &b.phi0}) v->assign(total, 0.0);
    const double dt = b.dt;
    for (std::size_t i = 0; i < b.n_paths; ++i) {
        double logV = std::log(xi0);
        for (std::size_t k = 0; k < b.n_samples; ++k) {
            const std::size_t j = b.at(i, k);
            const PolicyTable::Coeffs c = tab.coeffs(b.X[j]);
            const double V = std::exp(logV);
            if (!(V > 0) || !std::isfinite(V)) throw DomainError("wealth lost positivity; dt is too coarse");
            b.V[j] = V;
            b.c[j] = V * c.Kappa;
            b.phi[j] = V * c.Pi / b.S_hat[j];
            b.phi0[j] = V * (1 - c.Pi);
            if (k + 1 < b.n_samples) {
                const double vol = c.Pi * (m.sigma + c.Sigma);
                const double dB = b.B[j + 1] - b.B[j];
                logV += vol * c.theta * dt - 0.5 * vol * vol * dt + vol * dB - c.Kappa * dt;
            }
        }
    }
    b.has_wealth = true;
}

TradingReport trading_report(const PathBundle& b, const PolicyTable& tab) {
    if (!b.has_wealth) throw ConfigError("trading_report needs wealth_consumption first");
    TradingReport r;
    r.max_y_excursion = std::max(0.0, b.y_excursion);
    r.min_buy_step = std::numeric_limits<double>::infinity();
    r.max_sell_step = -std::numeric_limits<double>::infinity();
    r.min_ratio = std::numeric_limits<double>::infinity();
    r.max_ratio = 0;
    for (std::size_t i = 0; i < b.n_paths; ++i) {
        for (std::size_t k = 0; k < b.n_samples; ++k) {
            const std::size_t j = b.at(i, k);
            r.max_y_excursion = std::max({r.max_y_excursion, tab.y_low - b.Y[j], b.Y[j] - tab.y_high});
            const double ratio = b.c[j] / b.V[j];
            r.min_ratio = std::min(r.min_ratio, ratio);
            r.max_ratio = std::max(r.max_ratio, ratio);
            r.max_budget_defect =
                std::max(r.max_budget_defect, std::abs(b.V[j] - b.phi0[j] - b.phi[j] * b.S_hat[j]) / b.V[j]);
            if (k + 1 == b.n_samples) continue;
            const double dl = std::log(b.phi[j + 1] / b.phi[j]);
            const double du = b.Phi_up[j + 1] - b.Phi_up[j];
            const double dd = b.Phi_down[j + 1] - b.Phi_down[j];
            r.max_phi_defect = std::max(r.max_phi_defect, std::abs(dl - du / tab.x_low + dd / tab.x_high) / b.dt);
            if (du > 0) {
                ++r.buy_steps;
                r.min_buy_step = std::min(r.min_buy_step, dl / b.dt);
            } else if (dd > 0) {
                ++r.sell_steps;
                r.max_sell_step = std::max(r.max_sell_step, dl / b.dt);
            } else {
                r.max_interior_step = std::max(r.max_interior_step, std::abs(dl) / b.dt);
                r.mean_interior_step += std::abs(dl) / b.dt;
                ++r.interior_steps;
            }
        }
    }
    if (r.interior_steps) r.mean_interior_step /= static_cast<double>(r.interior_steps);
    if (r.buy_steps == 0) r.min_buy_step = 0;
    if (r.sell_steps == 0) r.max_sell_step = 0;
    return r;
}

namespace {

// Per-path truncated integral of e^{-delta_hat t} W_t (or 1/2 theta^2 in reduced form).
std::vector<double> g_paths(double x, const SimConfig& cfg, std::size_t n_paths, double T, const PolicyTable& tab,
                            const ModelParams& m, GForm form) {
    const std::size_t n_steps = step_count(T, cfg.dt);
    check_budget(cfg, n_paths, n_steps);
    const double dt = T / static_cast<double>(n_steps);
    const double q = m.p / (1 - m.p);
    const double dh = m.delta * (1 + q);
    const double decay = std::exp(-dh * dt);
    const double w1 = -std::expm1(-dh * dt) / dh;
    const double sp = sgn(m.p);
    const Stepper st{tab, dt, std::sqrt(dt)};
    std::vector<double> out(n_paths);
    parallel_for(n_paths, [&](std::size_t i) {
        PathNoise noise(cfg, i);
        double xv = x, logE = 0, disc = 1, acc = 0;
        for (std::size_t s = 0; s < n_steps; ++s) {
            const double xi = noise();
            double du, dd;
            const PolicyTable::Coeffs c = st.step(xv, xi, du, dd);
            double W;
            if (m.p != 0)
                W = sp * std::exp(-q * logE);
            else if (form == GForm::Direct)
                W = -m.delta * logE;
            else
                W = 0.5 * c.theta * c.theta;
            acc += W * disc * w1;
            logE += -c.theta * st.sqdt * xi - 0.5 * c.theta * c.theta * dt;
            disc *= decay;
        }
        if (!std::isfinite(acc)) throw DomainError("non-finite path integral in the g estimator");
        out[i] = acc;
    });
    return out;
}

}  // namespace

McEstimate mc_estimate_g(double x, const SimConfig& cfg, const PolicyTable& tab, const ModelParams& m, GForm form) {
    validate(cfg);
    check_policy(tab, cfg);
    if (form == GForm::Reduced && m.p != 0) throw ConfigError("reduced form of the g estimator requires p = 0");
    if (!(x >= tab.x_low && x <= tab.x_high)) throw DomainError("x lies outside [x_low, x_high]");
    const double q = m.p / (1 - m.p);
    const double dh = m.delta * (1 + q);
    const double th = tab.theta_sup;

    // Bound on int_T^inf e^{-delta_hat t} |E W_t| dt.
    std::function<double(double)> tail;
    if (m.p > 0) {
        const double r = dh - 0.5 * q * (1 + q) * th * th;
        if (!(r > 0))
            throw DomainError("sup|theta| too large for a finite tail bound of the g estimator");
        tail = [r](double T) { return std::exp(-r * T) / r; };
    } else if (m.p < 0) {
        tail = [dh](double T) { return std::exp(-dh * T) / dh; };
    } else if (form == GForm::Direct) {
        const double d = m.delta;
        tail = [d, th](double T) {
            const double i0 = std::exp(-d * T) / d;
            const double i1 = std::exp(-d * T) * (T / d + 1 / (d * d));
            return d * (0.5 * th * (i0 + i1) + 0.5 * th * th * i1);
        };
    } else {
        const double d = m.delta;
        tail = [d, th](double T) { return 0.5 * th * th * std::exp(-d * T) / d; };
    }

    double T = cfg.horizon;
    if (!(T > 0)) {
        const double gx = std::abs(tab.g_at(x));
        const double T0 = horizon_for(tail, 1e-3 * (1 + gx), cfg.dt);
        const std::size_t np = std::min(cfg.n_paths, std::max<std::size_t>(cfg.pilot_paths, 2));
        SimConfig pc = cfg;
        pc.seed = cfg.seed ^ 0x9E3779B97F4A7C15ull;
        const PathStats pilot = reduce(g_paths(x, pc, np - np % 2, T0, tab, m, form), cfg.antithetic);
        const double n_eff = static_cast<double>(cfg.antithetic ? cfg.n_paths / 2 : cfg.n_paths);
        const double se = pilot.se * std::sqrt(static_cast<double>(pilot.n) / n_eff);
        T = horizon_for(tail, cfg.tail_fraction * std::max(se, 1e-300), cfg.dt);
    }
    const PathStats s = reduce(g_paths(x, cfg, cfg.n_paths, T, tab, m, form), cfg.antithetic);
    McEstimate e;
    e.estimate = s.mean;
    e.std_error = s.se;
    e.n_effective = s.n;
    e.tail_bound = tail(T);
    e.horizon = T;
    return e;
}

McEstimate mc_estimate_g(double x, const SimConfig& cfg, const FbpSolution& sol, GForm form) {
    return mc_estimate_g(x, cfg, build_policy(sol), sol.params, form);
}

namespace {

struct UtilityPaths {
    std::vector<double> values, tails;
    std::size_t clipped = 0, evaluated = 0;
};

UtilityPaths utility_paths(double x0, double xi0, const SimConfig& cfg, std::size_t n_paths, double T,
                           const PolicyTable& tab, const ModelParams& m) {
    const std::size_t n_steps = step_count(T, cfg.dt);
    check_budget(cfg, n_paths, n_steps);
    const double dt = T / static_cast<double>(n_steps);
    const double decay = std::exp(-m.delta * dt);
    const double w1 = -std::expm1(-m.delta * dt) / m.delta;
    double gmax = 0;
    for (double g : tab.g) gmax = std::max(gmax, std::abs(g));
    const Stepper st{tab, dt, std::sqrt(dt)};
    UtilityPaths out;
    out.values.resize(n_paths);
    out.tails.resize(n_paths);
    std::vector<std::size_t> clips(n_paths, 0);
    parallel_for(n_paths, [&](std::size_t i) {
        PathNoise noise(cfg, i);
        double xv = x0, logV = std::log(xi0), disc = 1, acc = 0;
        std::size_t clipped = 0;
        for (std::size_t s = 0; s < n_steps; ++s) {
            const double xi = noise();
            double du, dd;
            const PolicyTable::Coeffs c = st.step(xv, xi, du, dd);
            const double logc = logV + std::log(c.Kappa);
            double U = m.p == 0 ? logc : std::exp(m.p * logc) / m.p;
            if (m.p < 0 && U < cfg.utility_floor) {
                U = cfg.utility_floor;
                ++clipped;
            }
            acc += U * disc * w1;
            const double vol = c.Pi * (m.sigma + c.Sigma);
            logV += vol * c.theta * dt - 0.5 * vol * vol * dt + vol * st.sqdt * xi - c.Kappa * dt;
            disc *= decay;
        }
        // Bound on the discounted value of continuing past T.
        double cont;
        if (m.p == 0)
            cont = disc / m.delta * (std::abs(-1 + std::log(m.delta) + logV) + gmax);
        else
            cont = disc * std::exp(m.p * logV) * std::pow(gmax, 1 - m.p) / std::abs(m.p);
        if (!std::isfinite(acc) || !std::isfinite(cont)) throw DomainError("non-finite utility along a path");
        out.values[i] = acc;
        out.tails[i] = cont;
        clips[i] = clipped;
    });
    for (std::size_t c : clips) out.clipped += c;
    out.evaluated = n_paths * n_steps;
    return out;
}

}  // namespace

McEstimate mc_estimate_utility(const SimConfig& cfg, const PolicyTable& tab, const ModelParams& m, double eta_B,
                               double eta_S) {
    validate(cfg);
    check_policy(tab, cfg);
    const double x0 = table_initial_state(tab, m, eta_B, eta_S);
    const double xi0 = eta_B + m.s0 * std::exp(tab.f_at(x0)) * eta_S;
    if (!(xi0 > 0)) throw DomainError("initial shadow wealth must be positive for the utility estimator");

    // For p != 0 the discounted value u_t = e^{-delta t} V^p |g|^{1-p} / |p| loses mass at rate Kappa, so
    // E|u_T| <= |u_0| e^{-min_kappa T}. For p = 0 the pathwise bound is used instead.
    const double u0 = m.p == 0 ? 0.0 : std::pow(xi0, m.p) * std::pow(std::abs(tab.g_at(x0)), 1 - m.p) / std::abs(m.p);
    const double rate = m.p == 0 ? 0.5 * m.delta : tab.min_kappa;
    double T = cfg.horizon;
    if (!(T > 0)) {
        const double T0 = (m.p == 0 ? 10.0 : 2.0) / rate;
        const std::size_t np = std::min(cfg.n_paths, std::max<std::size_t>(cfg.pilot_paths, 2));
        SimConfig pc = cfg;
        pc.seed = cfg.seed ^ 0x9E3779B97F4A7C15ull;
        const UtilityPaths pilot = utility_paths(x0, xi0, pc, np - np % 2, T0, tab, m);
        const PathStats ps = reduce(pilot.values, cfg.antithetic);
        const double n_eff = static_cast<double>(cfg.antithetic ? cfg.n_paths / 2 : cfg.n_paths);
        const double se = ps.se * std::sqrt(static_cast<double>(ps.n) / n_eff);
        const double target = cfg.tail_fraction * std::max(se, 1e-300);
        if (m.p == 0) {
            const PathStats pt = reduce(pilot.tails, false);
            T = T0 + std::log(std::max(pt.mean, 1e-300) / target) / rate;
        } else {
            T = std::log(u0 / target) / rate;
        }
        T = std::max(10 * cfg.dt, T);
    }
    const UtilityPaths up = utility_paths(x0, xi0, cfg, cfg.n_paths, T, tab, m);
    const PathStats s = reduce(up.values, cfg.antithetic);
    McEstimate e;
    e.estimate = s.mean;
    e.std_error = s.se;
    e.n_effective = s.n;
    e.tail_bound = m.p == 0 ? reduce(up.tails, false).mean : u0 * std::exp(-rate * T);
    e.horizon = T;
    e.clip_fraction = up.evaluated ? static_cast<double>(up.clipped) / static_cast<double>(up.evaluated) : 0.0;
    return e;
}

McEstimate mc_estimate_utility(const SimConfig& cfg, const FbpSolution& sol, double eta_B, double eta_S) {
    return mc_estimate_utility(cfg, build_policy(sol), sol.params, eta_B, eta_S);
}

}  // namespace shadowfbp
