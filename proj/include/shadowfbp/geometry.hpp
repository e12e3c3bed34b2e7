#pragma once

#include <optional>
#include <utility>

#include "shadowfbp/model.hpp"

namespace shadowfbp {

struct PlanePoint {
    double x;
    double z;
};

/// Coefficients of a(k)X^2 - b(k)X + c(k) = 0 and their k-derivatives (0<p<1).
struct LevelCurveCoeffs {
    double a, b, c;
    double da, db, dc;
};

LevelCurveCoeffs level_coeffs(const ModelParams& m, double k);

/// Discriminant b(k)^2 - 4a(k)c(k) written as d2 k^2 + d1 k + d0.
struct DiscPoly {
    double d2, d1, d0;
    double operator()(double k) const { return (d2 * k + d1) * k + d0; }
};
DiscPoly discriminant_poly(const ModelParams& m);

/// Bivariate quadratic xx x^2 + xz xz + zz z^2 + x x + z z + c.
struct Quadric {
    double xx = 0, xz = 0, zz = 0, x = 0, z = 0, c = 0;

    double operator()(double px, double pz) const {
        return (xx * px + xz * pz + x) * px + (zz * pz + z) * pz + c;
    }
    double dx(double px, double pz) const { return 2 * xx * px + xz * pz + x; }
    double dz(double px, double pz) const { return xz * px + 2 * zz * pz + z; }
    /// Same polynomial expressed in offsets (u, v) = (px - x0, pz - z0).
    Quadric shifted(double x0, double z0) const;
    Quadric operator-(const Quadric& o) const;
    Quadric operator*(double s) const;
};

struct LevelRoots {
    double upper;
    double lower;
};

struct LudRoots {
    double l_u, l_d;
    double dl_u, dl_d;
};

struct SingularJet {
    double x, z;
    double g1;           ///< common slope of the level curve and the trajectory
    double g2;           ///< second derivative forced on trajectories through P
    double curve_second; ///< second derivative of T_u(., 0) at x_P
};

/// Level-curve machinery for one parameter set. The "upper" branch is the one
/// carrying the north pole: the larger root of P - kQ for p > 0, the smaller
/// (negative) root for p < 0, and the only root for p = 0.
class Geometry {
public:
    explicit Geometry(const ModelParams& m);

    const ModelParams& params() const { return m_; }
    const DerivedConstants& constants() const { return dc_; }
    const Quadric& P_poly() const { return P_; }
    const Quadric& Q_poly() const { return Q_; }

    double eval_P(double x, double z) const;
    double eval_Q(double x, double z) const;
    /// Throws SingularEvaluation when |Q| falls under the floor.
    double eval_L(double x, double z) const;
    /// Partial derivatives of L, used for g'' along trajectories.
    std::pair<double, double> grad_L(double x, double z) const;

    /// Both roots of P = kQ in z (k = +inf gives Q = 0). Throws DomainError.
    LevelRoots level_roots(double x, double k) const;
    double T_u(double x, double k) const { return level_roots(x, k).upper; }
    double T_d(double x, double k) const { return level_roots(x, k).lower; }
    /// Slope and curvature of the level set of P - kQ through (x, z).
    double level_slope(double x, double z, double k) const;
    double level_curvature(double x, double z, double k) const;
    /// Explicit upper/lower branch for 0 < p < 1 used as a cross-check.
    LevelRoots level_roots_closed_form(double x, double k) const;
    /// Radicand of the closed form; nonnegative exactly on the domain L_k.
    double closed_form_radicand(double x, double k) const;

    /// Coalescence abscissae x_+(k), x_-(k); empty when the branch is unbounded.
    std::pair<std::optional<double>, std::optional<double>> x_pm(double k) const;
    LudRoots l_ud(double k) const;

    bool has_singular_point() const { return dc_.x_P.has_value(); }
    SingularJet singular_jet() const;
    /// Closed-form g''(x_P) for 0 < p < 1.
    double g2_closed_form() const;
    /// True when trajectories started left of x_P are funneled through P.
    bool singular_on_rising_branch() const;

    double find_k0() const;
    double x_m(double k0) const;
    double tau(double x, double k0, double xm) const;
    double tau(double x) const;

private:
    Quadric level_quadric(double k) const;

    ModelParams m_;
    DerivedConstants dc_;
    Quadric P_, Q_;
    bool shifted_ok_ = false;
    Quadric P_shift_, Q_shift_;
    double shift_radius_ = 0.0;
};

double h_func(double x, double g, double g_prime, const ModelParams& m);

}  // namespace shadowfbp
