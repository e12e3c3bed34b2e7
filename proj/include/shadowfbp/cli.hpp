#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "shadowfbp/fbp.hpp"
#include "shadowfbp/model.hpp"
#include "shadowfbp/sim.hpp"

namespace shadowfbp {

inline constexpr const char* kToolVersion = "shadowfbp 1.0.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIllPosed = 3, kExitNumerical = 4 };

struct RunConfig {
    ModelParams model;
    FbpOptions solver;
    SimConfig sim;
    std::size_t grid_points = 4001;     ///< policy table knots
    std::size_t solution_rows = 2001;   ///< max rows of the written solution grid
    std::size_t sim_knots = 5;          ///< knots for the Monte Carlo g check
    std::string sweep_param = "cost";   ///< "cost" or "mu"
    double sweep_min = 1e-4, sweep_max = 0.1;
    std::size_t sweep_points = 9;
    std::string out_dir = ".";
    std::string format = "csv";
};

/// Parses a flat JSON object; rejects unknown keys and re-validates every module invariant.
/// Errors are ConfigError with the offending key and its line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// One-line JSON echo of every resolved key; parse_config(echo) reproduces the config exactly.
std::string config_echo(const RunConfig& rc);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// Entry point behind the shadowfbp executable; returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace shadowfbp
