#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "shadowfbp/dopri5.hpp"
#include "shadowfbp/geometry.hpp"
#include "shadowfbp/model.hpp"

namespace shadowfbp {

struct FbpOptions {
    double rtol = 1e-13;
    double atol = 1e-15;
    double event_tol = 1e-12;
    double shoot_tol = 1e-11;
    /// Local truncation budget for the Taylor hand-off at the singular point.
    double handoff_tol = 1e-10;
    /// Third-derivative cap M for the hand-off width; 0 means 10*|g''(x_P)|.
    double third_derivative_cap = 0.0;
    /// Incoming slope may differ from the branch slope by at most this (relative).
    double handoff_slope_tol = 1e-3;
    /// Safety factor on the tolerance-level pinch width near P.
    double pinch_factor = 100.0;
    long max_steps = 20'000'000;
    double x_max = 1e13;
    int max_doublings = 60;
    int max_bisections = 300;
    /// Interior dense-output points stored per accepted step.
    int refine = 3;
};

struct GridPoint {
    double x, g, dg, I;
};

/// One piece of the dense trajectory: a Runge-Kutta step or the Taylor patch at P.
struct Piece {
    double xa, xb;
    bool taylor = false;
    DenseSegment<2> seg;
    double xP = 0, zP = 0, g1 = 0, g2 = 0, IP = 0;
    double I_offset = 0;  ///< added to the integrated I of an RK segment

    double g(double x) const;
    double dg(double x) const;
    double I(double x) const;
};

struct SingularPassage {
    double x_P = 0, z_P = 0;
    double g1 = 0, g2 = 0;
    double epsilon = 0;         ///< left hand-off distance (Taylor truncation bound)
    double epsilon_right = 0;   ///< right restart distance (at least the pinch width)
    double suppress = 0;        ///< half-width of the event-suppression window
    double incoming_slope = 0;  ///< second-order corrected backward secant at x_P - epsilon
    double outgoing_slope = 0;
};

struct InnerSolution {
    double alpha = 0;
    double beta = 0;
    bool beta_finite = true;
    bool hit_singular = false;
    bool ends_at_singular = false;
    std::optional<double> g2_at_xP;
    std::optional<SingularPassage> passage;
    double integral_G = 0;
    long steps = 0;
    std::vector<GridPoint> grid;
    std::vector<Piece> pieces;

    double g(double x) const;
    /// Derivative of the dense trajectory representation.
    double dg_dense(double x) const;
    double I(double x) const;

private:
    const Piece& piece_at(double x) const;
};

InnerSolution integrate_from(const Geometry& geo, double alpha, const FbpOptions& opt = {});
double G_of_alpha(const Geometry& geo, double alpha, const FbpOptions& opt = {});

/// Maps a given grid-side singular state to the restart state to the right of P.
struct PassageState {
    double x, g, I;
};
PassageState singular_passage(const Geometry& geo, const PassageState& left, double epsilon);

struct ResidualReport {
    double ode_residual = 0;
    double ode_exclusion_radius = 0;
    double g_prime_low = 0;
    double g_prime_high = 0;
    bool low_boundary_waived = false;
    double low_singular_gap = 0;
    double integral_residual = 0;
    double min_abs_h = 0;
    double envelope_residual = 0;
    double f_low_residual = 0;
    double f_high_residual = 0;
    double handoff_slope_mismatch = 0;
    std::size_t knots = 0;
};

struct FbpSolution {
    ModelParams params;
    DerivedConstants constants;
    std::shared_ptr<const Geometry> geometry;
    WellPosedness classification;
    double alpha = 0;
    double x_low = 0, x_high = 0;
    double target = 0;
    int shoot_iterations = 0;
    std::shared_ptr<const InnerSolution> inner;
    std::vector<double> f_grid;  ///< f at inner->grid knots
    ResidualReport residuals;

    const std::vector<GridPoint>& grid() const { return inner->grid; }
    bool singular_passage() const { return inner->hit_singular; }
    double g(double x) const { return inner->g(x); }
    /// Derivative of the dense representation (equals L at step knots, Taylor jet near P).
    double dg(double x) const { return inner->dg_dense(x); }
    double f(double x) const;
};

FbpSolution shoot(const ModelParams& m, const FbpOptions& opt = {});
/// Shooting with a caller-supplied initial bracket guess for alpha (used to check uniqueness).
FbpSolution shoot_with_bracket(const ModelParams& m, double lo_guess, double hi_guess,
                               const FbpOptions& opt = {});

ResidualReport verify_solution(const FbpSolution& sol, const FbpOptions& opt = {});

}  // namespace shadowfbp
