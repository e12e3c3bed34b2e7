#include "shadowfbp/fbp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "shadowfbp/errors.hpp"
#include "shadowfbp/policy.hpp"

namespace shadowfbp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Integral of (g1 + g2 t)/(xP + t) over [a, b].
double taylor_integral(double xP, double g1, double g2, double a, double b) {
    return g2 * (b - a) + (g1 - g2 * xP) * std::log1p((b - a) / (xP + a));
}

struct Rhs {
    const Geometry* geo;
    void operator()(double x, const std::array<double, 2>& y, std::array<double, 2>& d) const {
        double L;
        try {
            L = geo->eval_L(x, y[0]);
        } catch (const SingularEvaluation&) {
            L = std::numeric_limits<double>::quiet_NaN();
        }
        d[0] = L;
        d[1] = L / x;
    }
};

enum class Stop { Event, Reached };

struct RunResult {
    Stop why;
    double x, g, I;
};

struct Runner {
    const Geometry& geo;
    const FbpOptions& opt;
    InnerSolution& sol;
    double north;  // events before the north pole require prior arming
    double I_off = 0;

    void push_grid(double x, double g, double dg, double I) {
        if (!sol.grid.empty() && x <= sol.grid.back().x) return;
        sol.grid.push_back({x, g, dg, I + I_off});
    }

    void push_segment(const DenseSegment<2>& seg, double xb) {
        Piece pc;
        pc.xa = seg.x0;
        pc.xb = xb;
        pc.seg = seg;
        pc.I_offset = I_off;
        sol.pieces.push_back(pc);
        const int r = std::max(0, opt.refine);
        for (int j = 1; j <= r; ++j) {
            const double x = seg.x0 + seg.h * j / (r + 1);
            if (x >= xb) break;
            push_grid(x, seg.value(0, x), seg.derivative(0, x), seg.value(1, x));
        }
        push_grid(xb, seg.value(0, xb), seg.derivative(0, xb), seg.value(1, xb));
    }

    double p_scale(double x, double z) const {
        const Quadric& P = geo.P_poly();
        return 1 + std::abs(P.xx * x * x) + std::abs(P.xz * x * z) + std::abs(P.zz * z * z) +
               std::abs(P.z * z);
    }

    // Integrates from (x0, y0) until P returns to zero or x_stop is reached.
    // Events are ignored while x lies inside (quiet_lo, quiet_hi).
    RunResult run(double x0, std::array<double, 2> y0, double x_stop, double quiet_lo, double quiet_hi,
                  bool armed) {
        Dopri5Options o;
        o.rtol = opt.rtol;
        o.atol = opt.atol;
        o.h_min = 1e-15 * std::max(1.0, x0);
        Dopri5<2, Rhs> rk(Rhs{&geo}, o);
        rk.reset(x0, y0, 1e-4 * std::max(x0, 1e-3));
        if (!std::isfinite(rk.dydx()[0]))
            throw StepFailure("right-hand side undefined at the start x=" + std::to_string(x0));
        push_grid(x0, y0[0], rk.dydx()[0], y0[1]);

        for (;;) {
            if (++sol.steps > opt.max_steps)
                throw StepFailure("step budget exhausted at x=" + std::to_string(rk.x()));
            const double xprev = rk.x();
            if (!rk.step(x_stop))
                throw StepFailure("step size underflow at x=" + std::to_string(rk.x()));
            const DenseSegment<2>& seg = rk.segment();
            const double x1 = rk.x();
            const double g1 = rk.y()[0];
            const bool quiet = x1 > quiet_lo && x1 < quiet_hi;
            if (!quiet) {
                const double Pv = geo.eval_P(x1, g1);
                if (Pv > 0) {
                    armed = true;
                } else if (armed || x1 > north) {
                    const double xb = locate_event(seg, xprev, x1);
                    push_segment(seg, xb);
                    return {Stop::Event, xb, seg.value(0, xb), seg.value(1, xb) + I_off};
                }
            }
            push_segment(seg, x1);
            if (x1 >= x_stop) return {Stop::Reached, x1, g1, rk.y()[1] + I_off};
            if (x1 > opt.x_max)
                throw StepFailure("trajectory did not return to the level curve before x_max");
        }
    }

    double locate_event(const DenseSegment<2>& seg, double a, double b) const {
        auto Pd = [&](double x) { return geo.eval_P(x, seg.value(0, x)); };
        double fa = Pd(a);
        if (!(fa > 0)) return b;
        double best = b, best_abs = std::abs(Pd(b));
        for (int it = 0; it < 200; ++it) {
            const double m = 0.5 * (a + b);
            const double fm = Pd(m);
            if (std::abs(fm) < best_abs) {
                best = m;
                best_abs = std::abs(fm);
            }
            if (fm > 0)
                a = m;
            else
                b = m;
            if (best_abs <= opt.event_tol * p_scale(m, seg.value(0, m)) && b - a <= 1e-14 * b) break;
            if (b - a <= 4 * std::numeric_limits<double>::epsilon() * b) break;
        }
        return best;
    }
};

}  // namespace

double Piece::g(double x) const {
    if (!taylor) return seg.value(0, x);
    const double y = x - xP;
    return zP + g1 * y + 0.5 * g2 * y * y;
}

double Piece::dg(double x) const {
    if (!taylor) return seg.derivative(0, x);
    return g1 + g2 * (x - xP);
}

double Piece::I(double x) const {
    if (!taylor) return seg.value(1, x) + I_offset;
    return IP + taylor_integral(xP, g1, g2, 0.0, x - xP);
}

const Piece& InnerSolution::piece_at(double x) const {
    auto it = std::upper_bound(pieces.begin(), pieces.end(), x,
                               [](double v, const Piece& p) { return v < p.xa; });
    if (it == pieces.begin()) return pieces.front();
    return *(it - 1);
}

double InnerSolution::g(double x) const { return piece_at(x).g(x); }
double InnerSolution::dg_dense(double x) const { return piece_at(x).dg(x); }
double InnerSolution::I(double x) const { return piece_at(x).I(x); }

PassageState singular_passage(const Geometry& geo, const PassageState& left, double epsilon) {
    const SingularJet j = geo.singular_jet();
    const double a = left.x - j.x;
    const double IP = left.I + taylor_integral(j.x, j.g1, j.g2, a, 0.0);
    return {j.x + epsilon, j.z + j.g1 * epsilon + 0.5 * j.g2 * epsilon * epsilon,
            IP + taylor_integral(j.x, j.g1, j.g2, 0.0, epsilon)};
}

InnerSolution integrate_from(const Geometry& geo, double alpha, const FbpOptions& opt) {
    const ModelParams& m = geo.params();
    const DerivedConstants& dc = geo.constants();
    if (m.p > 0 && m.mu >= *dc.A_const)
        throw RegimeError("mu >= A: inner solutions never return to the level curve");
    if (!(alpha > 0) || !std::isfinite(alpha)) throw DomainError("alpha must be positive and finite");
    const bool bounded = m.p <= 0 || m.mu < *dc.G_const;
    if (bounded && !(alpha < *dc.x_N))
        throw DomainError("alpha=" + std::to_string(alpha) + " must lie below x_N=" + std::to_string(*dc.x_N));

    InnerSolution sol;
    sol.alpha = alpha;
    const double north = dc.x_N ? *dc.x_N : kInf;
    Runner runner{geo, opt, sol, north};
    const double z0 = geo.T_u(alpha, 0.0);

    enum class Role { Plain, Funnel, Terminal } role = Role::Plain;
    if (geo.has_singular_point() && alpha < *dc.x_P) {
        if (dc.x_N && std::abs(*dc.x_P - *dc.x_N) <= 1e-9 * *dc.x_N)
            role = Role::Terminal;
        else if (geo.singular_on_rising_branch())
            role = Role::Funnel;
    }

    if (role == Role::Plain) {
        const RunResult r = runner.run(alpha, {z0, 0.0}, kInf, -kInf, -kInf, false);
        sol.beta = r.x;
        sol.integral_G = r.I;
        return sol;
    }

    const SingularJet jet = geo.singular_jet();
    const double xP = jet.x;
    const double M = opt.third_derivative_cap > 0 ? opt.third_derivative_cap : 10 * std::abs(jet.g2);
    double eps = std::max(1e-6, std::cbrt(opt.handoff_tol / std::max(M, 1e-300)));
    eps = std::min(eps, 0.05 * xP);
    const double tol_abs = opt.rtol * std::abs(jet.z) + opt.atol;
    const double gap_curv = std::abs(jet.curve_second - jet.g2);
    // Within the pinch the gap between g and T_u is below pinch_factor * tolerance.
    double pinch = gap_curv > 0 ? std::sqrt(2 * opt.pinch_factor * tol_abs / gap_curv) : 0.05 * xP;
    const double eps_right = std::min(std::max(pinch, eps), 0.05 * xP);
    const double quiet = std::min(2 * eps_right, 0.1 * xP);

    SingularPassage sp;
    sp.x_P = xP;
    sp.z_P = jet.z;
    sp.g1 = jet.g1;
    sp.g2 = jet.g2;
    sp.epsilon = eps;
    sp.epsilon_right = eps_right;
    sp.suppress = quiet;

    // Left approach.
    double xh, gh, Ih;
    if (alpha < xP - eps) {
        const RunResult r = runner.run(alpha, {z0, 0.0}, xP - eps, xP - quiet, kInf, false);
        if (r.why == Stop::Event)
            throw StepFailure("trajectory returned to the level curve at x=" + std::to_string(r.x) +
                              " before reaching the singular point");
        xh = r.x;
        gh = r.g;
        Ih = r.I;
        sp.incoming_slope = (jet.z - gh) / (xP - xh) + 0.5 * jet.g2 * (xP - xh);
    } else {
        // Starting inside the hand-off zone: bridge to P by a chord.
        xh = alpha;
        gh = z0;
        Ih = 0.0;
        runner.push_grid(alpha, z0, 0.0, 0.0);
        sp.incoming_slope = jet.g1;
    }
    if (std::abs(sp.incoming_slope - jet.g1) > opt.handoff_slope_tol * (1 + std::abs(jet.g1)))
        throw StepFailure("incoming slope at the singular point " + std::to_string(sp.incoming_slope) +
                          " differs from the branch slope " + std::to_string(jet.g1));

    const double a = xh - xP;
    double IP;
    if (alpha < xP - eps)
        IP = Ih + taylor_integral(xP, jet.g1, jet.g2, a, 0.0);
    else
        IP = Ih + (jet.z - gh) / (0.5 * (xh + xP));

    sol.hit_singular = true;
    sol.g2_at_xP = jet.g2;

    Piece tp;
    tp.taylor = true;
    tp.xa = xh;
    tp.xP = xP;
    tp.zP = jet.z;
    tp.g1 = jet.g1;
    tp.g2 = jet.g2;
    tp.IP = IP;

    if (role == Role::Terminal) {
        tp.xb = xP;
        sol.pieces.push_back(tp);
        runner.push_grid(xP, jet.z, jet.g1, IP);
        sol.beta = xP;
        sol.ends_at_singular = true;
        sol.integral_G = IP;
        sp.outgoing_slope = jet.g1;
        sol.passage = sp;
        return sol;
    }

    tp.xb = xP + eps_right;
    sol.pieces.push_back(tp);
    runner.push_grid(xP, jet.z, jet.g1, IP);
    const PassageState right{xP + eps_right, tp.g(xP + eps_right), tp.I(xP + eps_right)};
    sp.outgoing_slope = tp.dg(xP + eps_right) - jet.g2 * eps_right;
    sol.passage = sp;

    // Integrating I from zero keeps the right-hand run identical for every alpha.
    runner.I_off = right.I;
    const RunResult r = runner.run(right.x, {right.g, 0.0}, kInf, -kInf, xP + quiet, true);
    sol.beta = r.x;
    sol.integral_G = r.I;
    return sol;
}

double G_of_alpha(const Geometry& geo, double alpha, const FbpOptions& opt) {
    return integrate_from(geo, alpha, opt).integral_G;
}

double FbpSolution::f(double x) const { return constants.y_low + (inner->integral_G - inner->I(x)); }

namespace {

struct Eval {
    double alpha, G;
    std::shared_ptr<const InnerSolution> inner;
};

FbpSolution assemble(const ModelParams& m, const WellPosedness& w, std::shared_ptr<const Geometry> geo,
                     const Eval& best, double target, int iters, const FbpOptions& opt) {
    FbpSolution s;
    s.params = m;
    s.constants = geo->constants();
    s.geometry = geo;
    s.classification = w;
    s.alpha = best.alpha;
    s.x_low = best.inner->alpha;
    s.x_high = best.inner->beta;
    s.target = target;
    s.shoot_iterations = iters;
    s.inner = best.inner;
    s.f_grid.reserve(best.inner->grid.size());
    for (const GridPoint& gp : best.inner->grid)
        s.f_grid.push_back(s.constants.y_low + (best.inner->integral_G - gp.I));
    s.residuals = verify_solution(s, opt);
    return s;
}

FbpSolution shoot_impl(const ModelParams& m, std::optional<double> lo_guess, std::optional<double> hi_guess,
                       const FbpOptions& opt) {
    validate(m);
    if (m.lambda_down + m.lambda_up == 0)
        throw ConfigError("lambda_down/lambda_up: zero costs have the frictionless solution x_low = x_high = x_N; "
                          "use the Merton limit instead");
    const WellPosedness w = classify(m);
    if (w.verdict == Verdict::IllPosed)
        throw IllPosedError("problem is ill-posed (" + to_string(w.regime) + ")");

    auto geo = std::make_shared<const Geometry>(m);
    const DerivedConstants& dc = geo->constants();
    const double target = log_cost(m);
    const bool bounded = m.p <= 0 || m.mu < *dc.G_const;

    auto evaluate = [&](double a) {
        auto in = std::make_shared<const InnerSolution>(integrate_from(*geo, a, opt));
        return Eval{a, in->integral_G, in};
    };

    Eval lo, hi;
    bool hi_is_limit = false;
    if (bounded) {
        const double xN = *dc.x_N;
        double a = lo_guess ? std::min(*lo_guess, 0.999 * xN) : 0.5 * xN;
        lo = evaluate(a);
        int n = 0;
        while (lo.G <= target) {
            if (++n > opt.max_doublings) throw BracketError("could not find alpha with G(alpha) above the target");
            hi = lo;
            lo = evaluate(lo.alpha * 0.5);
        }
        if (hi.inner == nullptr) {
            if (hi_guess && *hi_guess > lo.alpha && *hi_guess < xN) {
                hi = evaluate(*hi_guess);
                if (hi.G > target) {
                    lo = hi;
                    hi = Eval{xN, 0.0, nullptr};
                    hi_is_limit = true;
                }
            } else {
                hi = Eval{xN, 0.0, nullptr};
                hi_is_limit = true;
            }
        }
    } else {
        double a = hi_guess ? *hi_guess : 2 * *dc.x_P;
        hi = evaluate(a);
        int n = 0;
        while (hi.G >= target) {
            if (++n > opt.max_doublings)
                throw BracketError("G(alpha) stayed above the target after " + std::to_string(n - 1) + " doublings");
            lo = hi;
            hi = evaluate(hi.alpha * 2);
        }
        if (lo.inner == nullptr) {
            double b = lo_guess ? std::min(*lo_guess, 0.5 * hi.alpha) : 0.5 * hi.alpha;
            lo = evaluate(b);
            n = 0;
            while (lo.G <= target) {
                if (++n > opt.max_doublings) throw BracketError("could not find alpha with G(alpha) above the target");
                hi = lo;
                lo = evaluate(lo.alpha * 0.5);
            }
        }
    }
    if (!(lo.G > hi.G)) throw BracketError("G(alpha) is not decreasing across the initial bracket");

    Eval best = std::abs(lo.G - target) <= (hi.inner ? std::abs(hi.G - target) : kInf) ? lo : hi;
    int it = 0;
    for (; it < opt.max_bisections; ++it) {
        if (best.inner && std::abs(best.G - target) <= opt.shoot_tol) break;
        if (hi.alpha - lo.alpha <= 4 * std::numeric_limits<double>::epsilon() * hi.alpha) break;
        const double mid = hi.alpha > 4 * lo.alpha ? std::sqrt(lo.alpha * hi.alpha) : 0.5 * (lo.alpha + hi.alpha);
        Eval e = evaluate(mid);
        const double slack = 10 * opt.shoot_tol;
        if (e.G > lo.G + slack || (!hi_is_limit && e.G < hi.G - slack) || (hi_is_limit && e.G < -slack))
            throw BracketError("G(alpha) not monotone near alpha=" + std::to_string(mid));
        if (!best.inner || std::abs(e.G - target) < std::abs(best.G - target)) best = e;
        if (e.G > target)
            lo = e;
        else {
            hi = e;
            hi_is_limit = false;
        }
    }
    if (!(std::abs(best.G - target) <= std::max(opt.shoot_tol, 1e-9)))
        throw BracketError("shooting stalled with |G(alpha) - target| = " + std::to_string(std::abs(best.G - target)));
    return assemble(m, w, geo, best, target, it, opt);
}

}  // namespace

FbpSolution shoot(const ModelParams& m, const FbpOptions& opt) {
    return shoot_impl(m, std::nullopt, std::nullopt, opt);
}

FbpSolution shoot_with_bracket(const ModelParams& m, double lo_guess, double hi_guess, const FbpOptions& opt) {
    return shoot_impl(m, lo_guess, hi_guess, opt);
}

ResidualReport verify_solution(const FbpSolution& sol, const FbpOptions& opt) {
    (void)opt;
    ResidualReport r;
    const InnerSolution& in = *sol.inner;
    const Geometry& geo = *sol.geometry;
    const ModelParams& m = sol.params;
    const auto& grid = in.grid;
    r.knots = grid.size();

    double excl = 0, xP = 0;
    if (in.passage) {
        xP = in.passage->x_P;
        excl = std::max(20 * in.passage->suppress, 0.01 * xP);
        r.handoff_slope_mismatch = std::max(std::abs(in.passage->incoming_slope - in.passage->g1),
                                            std::abs(in.passage->outgoing_slope - in.passage->g1));
    }
    r.ode_exclusion_radius = excl;
    auto excluded = [&](double x) { return in.passage && std::abs(x - xP) <= excl; };

    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const double x = 0.5 * (grid[i].x + grid[i + 1].x);
        if (excluded(x)) continue;
        double L;
        try {
            L = geo.eval_L(x, in.g(x));
        } catch (const SingularEvaluation&) {
            continue;
        }
        r.ode_residual = std::max(r.ode_residual, std::abs(in.dg_dense(x) - L));
    }

    r.g_prime_low = std::abs(grid.front().dg);
    if (in.passage && std::abs(sol.x_low - xP) <= in.passage->suppress) {
        r.low_boundary_waived = true;
        r.low_singular_gap = std::abs(grid.front().g - in.passage->z_P);
    }
    r.g_prime_high = in.ends_at_singular ? 0.0 : std::abs(grid.back().dg);
    r.integral_residual = std::abs(in.integral_G - sol.target);
    r.f_low_residual = std::abs(sol.f(sol.x_low) - sol.constants.y_high);
    r.f_high_residual = std::abs(sol.f(sol.x_high) - sol.constants.y_low);

    r.min_abs_h = kInf;
    for (const GridPoint& gp : grid)
        r.min_abs_h = std::min(r.min_abs_h, std::abs(h_func(gp.x, gp.g, gp.dg, m)));

    for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
        const GridPoint& gp = grid[i];
        if (excluded(gp.x)) continue;
        double L, Lx, Lz;
        try {
            L = geo.eval_L(gp.x, gp.g);
            std::tie(Lx, Lz) = geo.grad_L(gp.x, gp.g);
        } catch (const SingularEvaluation&) {
            continue;
        }
        if (!(std::abs(L) > 1e-8)) continue;
        const double d2 = Lx + Lz * L;
        r.envelope_residual = std::max(r.envelope_residual, std::abs(envelope_residual_at(gp.x, gp.g, L, d2, m)));
    }
    return r;
}

}  // namespace shadowfbp
