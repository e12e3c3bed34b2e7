#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "shadowfbp/fbp.hpp"
#include "shadowfbp/model.hpp"
#include "shadowfbp/policy.hpp"

namespace shadowfbp {

/// Philox4x32-10 counter-based generator; each (key, stream) pair is an independent substream.
class Philox4x32 {
public:
    using result_type = std::uint32_t;
    Philox4x32(std::uint64_t key, std::uint64_t stream);
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()();
    /// One block of the raw bijection, exposed for known-answer tests.
    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

private:
    std::array<std::uint32_t, 4> ctr_;
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 4;
};

/// Standard normal variates from a Philox substream (polar method, pairs cached).
class NormalStream {
public:
    NormalStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}
    double operator()();

private:
    Philox4x32 rng_;
    double spare_ = 0;
    bool has_spare_ = false;
};

struct SimConfig {
    std::size_t n_paths = 1000;
    double horizon = 10.0;  ///< <= 0 lets the estimators pick T from the tail rule
    double dt = 1e-3;
    std::uint64_t seed = 20240601;
    bool antithetic = false;
    double step_budget = 5e10;       ///< cap on n_paths * T / dt
    double storage_budget = 2e7;     ///< cap on stored samples per PathBundle field
    std::size_t record_stride = 1;   ///< store every k-th step in a PathBundle
    double theta_cap = 50.0;         ///< refuse policies with sup|theta| above this
    double tail_fraction = 0.1;      ///< auto horizon: tail bound <= tail_fraction * standard error
    double utility_floor = -1e12;    ///< lower clip of U(c) for p < 0
    std::size_t pilot_paths = 256;
};

void validate(const SimConfig& cfg);

/// Number of worker threads: hardware concurrency capped by SHADOWFBP_THREADS.
unsigned worker_count();

struct PathBundle {
    std::size_t n_paths = 0;
    std::size_t n_samples = 0;  ///< samples per path including t = 0
    double dt = 0;              ///< time between stored samples
    double x0 = 0;
    bool has_shadow = false;
    bool has_wealth = false;
    double y_excursion = 0;  ///< largest distance of f(X) outside [y_low, y_high] before clamping
    std::vector<double> t;  ///< shared time axis
    // Path-major arrays of n_paths * n_samples values.
    std::vector<double> B, X, Phi_up, Phi_down, W;
    std::vector<double> Y, S, S_hat;
    std::vector<double> V, c, phi, phi0;

    std::size_t at(std::size_t path, std::size_t k) const { return path * n_samples + k; }
};

PathBundle simulate_state(double x0, const SimConfig& cfg, const PolicyTable& tab, const ModelParams& m);
PathBundle simulate_state(double x0, const SimConfig& cfg, const FbpSolution& sol);

/// Adds Y = f(X), S and S_hat; throws DomainError when Y leaves [y_low, y_high] beyond tol_f.
void shadow_paths(PathBundle& b, const PolicyTable& tab, const ModelParams& m, double tol_f = 1e-9);

/// Adds V, c, phi, phi0 for the initial holdings (eta_B, eta_S).
void wealth_consumption(PathBundle& b, const PolicyTable& tab, const ModelParams& m, double eta_B, double eta_S);

struct TradingReport {
    double max_y_excursion = 0;    ///< largest distance of Y outside [y_low, y_high]
    double max_interior_step = 0;  ///< max |d log phi| / dt over steps without reflection
    double mean_interior_step = 0; ///< mean of the same quantity
    double min_buy_step = 0;       ///< min d log phi / dt over steps with an x_low contact
    double max_sell_step = 0;      ///< max d log phi / dt over steps with an x_high contact
    double max_phi_defect = 0;     ///< max |d log phi - dPhi_up/x_low + dPhi_down/x_high| / dt
    double max_budget_defect = 0;  ///< max |V - phi0 - phi S_hat| / V
    double min_ratio = 0, max_ratio = 0;  ///< range of c / V
    std::size_t buy_steps = 0, sell_steps = 0, interior_steps = 0;
};
/// Inspects a bundle with wealth; requires record_stride == 1.
TradingReport trading_report(const PathBundle& b, const PolicyTable& tab);

struct McEstimate {
    double estimate = 0;
    double std_error = 0;
    std::size_t n_effective = 0;
    double tail_bound = 0;
    double horizon = 0;
    double clip_fraction = 0;
};

enum class GForm { Direct, Reduced };

/// Monte Carlo estimate of g(x) from its stochastic representation.
/// GForm::Reduced (p = 0 only) integrates 1/2 theta^2 instead of -delta log E.
McEstimate mc_estimate_g(double x, const SimConfig& cfg, const PolicyTable& tab, const ModelParams& m,
                         GForm form = GForm::Direct);
McEstimate mc_estimate_g(double x, const SimConfig& cfg, const FbpSolution& sol, GForm form = GForm::Direct);

/// Expected discounted utility of the optimal consumption over [0, T] started from x_hat.
McEstimate mc_estimate_utility(const SimConfig& cfg, const PolicyTable& tab, const ModelParams& m, double eta_B,
                               double eta_S);
McEstimate mc_estimate_utility(const SimConfig& cfg, const FbpSolution& sol, double eta_B, double eta_S);

}  // namespace shadowfbp
