#pragma once

#include <optional>
#include <string>

namespace shadowfbp {

struct ModelParams {
    double mu = 0.0;
    double sigma = 0.0;
    double p = 0.0;
    double delta = 0.0;
    double lambda_down = 0.0;
    double lambda_up = 0.0;
    double s0 = 1.0;
    double eta_B = 1.0;
    double eta_S = 0.0;
};

/// Throws ConfigError naming the first offending field.
void validate(const ModelParams& m);

/// Liquidation value phi0 + phi^+ s_bid - phi^- s_ask.
double validate_solvency(double phi0, double phi, double s_bid, double s_ask);

/// Throws ConfigError unless the initial holdings liquidate to a positive amount.
void require_strict_solvency(const ModelParams& m);

/// Constants that are meaningless in the current regime are left empty.
/// An empty singular/north/east coordinate means the point lies at infinity.
struct DerivedConstants {
    double q = 0.0;
    double delta_hat = 0.0;
    double sign_p = 1.0;  // sgn(p), with sgn(0) = 1
    std::optional<double> G_const;
    std::optional<double> A_const;
    double merton_pi = 0.0;
    std::optional<double> x_P, z_P;
    std::optional<double> x_N, z_N;
    std::optional<double> x_E;
    double y_low = 0.0;
    double y_high = 0.0;
    std::optional<double> K_const;
    std::optional<double> C_const;
};

DerivedConstants derive_constants(const ModelParams& m);

/// log((1+lambda_up)/(1-lambda_down)), the integral target of the free-boundary problem.
double log_cost(const ModelParams& m);

enum class Verdict { WellPosed, IllPosed };

enum class Regime {
    HighRiskAversion,
    EllipticSubcase,
    HyperbolicSubcase,
    CriticalIllPosed,
    SupercriticalIllPosed,
};

struct WellPosedness {
    Verdict verdict = Verdict::WellPosed;
    Regime regime = Regime::HighRiskAversion;
    std::optional<double> C_const;
    double log_cost = 0.0;
};

std::string to_string(Verdict v);
std::string to_string(Regime r);

/// True when 0<p<1 and G <= mu < A.
bool in_hyperbolic_band(const ModelParams& m);

double compute_K(const ModelParams& m);

struct CResult {
    double value;
    double error_estimate;
};
CResult compute_C_detailed(const ModelParams& m);
double compute_C(const ModelParams& m);

WellPosedness classify(const ModelParams& m);

/// Expected utility over [0,T] of the explicit constant-proportion portfolio that
/// witnesses infinite value when mu >= A (0<p<1), integrated in closed form.
double divergence_partial_integral(const ModelParams& m, double T);

}  // namespace shadowfbp
