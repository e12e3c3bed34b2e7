#pragma once

#include <string>
#include <vector>

#include "shadowfbp/fbp.hpp"
#include "shadowfbp/model.hpp"

namespace shadowfbp {

struct Optimizers {
    double theta;  ///< market price of risk in the shadow market
    double Sigma;  ///< excess volatility of the shadow price
    double Gamma;  ///< diffusion coefficient of the state X
};

/// Pointwise optimizers from (x, g, g'); throws DomainError when |h| is below the floor.
Optimizers optimizers_at(double x, double g, double dg, const ModelParams& m);
Optimizers optimizers(double x, const FbpSolution& sol);

struct PiKappa {
    double Pi;     ///< risky fraction of shadow wealth
    double Kappa;  ///< consumption-to-wealth ratio
};
PiKappa pi_kappa_at(double x, double g, const ModelParams& m);
PiKappa pi_kappa(double x, const FbpSolution& sol);

double alpha_q(double Sigma, double theta, double q, const ModelParams& m);
double beta_q(double theta, double q, const ModelParams& m);

/// 1/2 Sigma^2 d/dx(x/g') - alpha_q - g' beta at a point with g' != 0.
double envelope_residual_at(double x, double g, double dg, double d2g, const ModelParams& m);

/// Risky fraction read off the duality form of the optimal portfolio.
double duality_portfolio(double x, double g, const Optimizers& o, const ModelParams& m);

/// Piecewise cubic Hermite interpolant with the Fritsch-Carlson limiter.
class MonotoneCubic {
public:
    MonotoneCubic() = default;
    MonotoneCubic(std::vector<double> x, std::vector<double> y, std::vector<double> dy);
    double operator()(double x) const;
    double derivative(double x) const;
    bool empty() const { return x_.empty(); }

private:
    std::size_t locate(double x) const;
    std::vector<double> x_, y_, m_;
};

struct PolicyTable {
    std::vector<double> x, g, dg, theta, Sigma, Gamma, Pi, Kappa, f, beta, drift;
    double x_low = 0, x_high = 0;
    double y_low = 0, y_high = 0;
    double x_hat = 0, u_hat = 0;
    double wedge_low = 0, wedge_high = 0;
    double theta_sup = 0;
    double min_sigma_plus_Sigma = 0;
    double min_kappa = 0, max_kappa = 0;
    double min_abs_h = 0;
    MonotoneCubic g_interp, f_interp;

    struct Coeffs {
        double drift, Gamma, theta, Sigma, Pi, Kappa;
    };
    /// Linear interpolation of the state coefficients on the uniform knot grid.
    Coeffs coeffs(double x) const;
    double f_at(double x) const;
    double g_at(double x) const { return g_interp(x); }
};

PolicyTable build_policy(const FbpSolution& sol, std::size_t n_knots = 4001);

double initial_state(double eta_B, double eta_S, const FbpSolution& sol,
                     std::vector<std::string>* diagnostics = nullptr);
/// Value of the initial holdings; -inf when p <= 0 and the shadow wealth is zero.
double value(double eta_B, double eta_S, const FbpSolution& sol);

struct Wedge {
    double fraction_low;   ///< Pi at the lower boundary (buy side)
    double fraction_high;  ///< Pi at the upper boundary (sell side)
};
Wedge no_trade_wedge(const FbpSolution& sol);

struct MertonLimit {
    double x_N, g_N, pi, kappa;
    double value_unit_cash;  ///< value of one unit of cash
};
MertonLimit merton_limit(const ModelParams& m);

}  // namespace shadowfbp
