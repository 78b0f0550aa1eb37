#pragma once

#include "qroar/diagnostics.hpp"
#include "qroar/plan.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qroar {

enum class SearchStrategy { coordinate, joint };

const char* to_string(SearchStrategy strategy);
SearchStrategy strategy_from_string(const std::string& name);

struct LengthWeight {
    int length = 0;
    double weight = 0.0;
};

struct EvalRecord {
    int pass = 0;
    int band = -1; // -1 for joint enumeration and the identity baseline
    double candidate = 1.0;
    Eigen::VectorXd scales;
    double objective = 0.0;
};

struct SearchConfig {
    int num_bands = 8;
    int grid_points = 7;
    SearchStrategy strategy = SearchStrategy::coordinate;
    double eta = 1e-3; // relative gain per pass below which the search stops
    double kappa = 1.2;
    double tau = 0.3;
    std::vector<LengthWeight> lengths;
    int max_passes = 3;
    Window global_clamp{0.25, 4.0};
    std::size_t joint_budget = 100000;
    std::function<void(const EvalRecord&)> on_eval;

    // {L0/2, L0, 2 L0, 4 L0, 8 L0} with w_L proportional to L, summing to 1.
    static std::vector<LengthWeight> default_lengths(int train_window);
    // B in {6, 8} and K in [5, 9] unless allow_nonstandard.
    void validate(int train_window, bool allow_nonstandard = false) const;
};

// 1 + tau / (1 + ln(omega_ratio)).
double gamma_bound(double omega_ratio, double tau);

// Center kappa / TIR^W clamped into [1/gamma, gamma], half-width gamma
// multiplicatively, then intersected with the global clamp.
Window band_window(double gamma, double tir_w, double kappa, Window global_clamp = {0.25, 4.0});

// K log-spaced points spanning the window; if 1 lies inside the window, the
// point nearest to it (in log distance) is replaced by exactly 1.
std::vector<double> build_grid(Window window, int grid_points);

using Grid = std::vector<double>;

// Evaluates the identity plan, then sweeps bands in `band_order` (default
// 0..B-1), keeping each band's argmin with the others fixed. Ties go to the
// candidate closest to 1, then the smaller one. The returned plan carries
// provenance with the objective and the number of evaluator calls.
ScalePlan coordinate_search(Evaluator& evaluator, const ScalePlan& base, const std::vector<Grid>& grids,
                            const SearchConfig& config, std::span<const int> band_order = {});

// Exhaustive argmin over the product grid; ties go to the plan with the
// smallest total |ln g|, then the lexicographically smaller one.
ScalePlan joint_search(Evaluator& evaluator, const ScalePlan& base, const std::vector<Grid>& grids,
                       const SearchConfig& config);

// Full calibration: windows and grids from the diagnostics, symmetric search
// first, shared mode as fallback when symmetric is non-finite or worse than
// identity. Never returns a plan worse than identity.
ScalePlan run_qroar(const RopeConfig& rope, const ScalingScheme& scheme, const DiagnosticsReport& report,
                    const SearchConfig& config, Evaluator& evaluator);

} // namespace qroar
