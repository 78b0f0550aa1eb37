#include "qroar/search.hpp"

#include "qroar/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace qroar {

const char* to_string(ScaleMode mode)
{
    return mode == ScaleMode::shared ? "shared" : "symmetric";
}

ScaleMode scale_mode_from_string(const std::string& name)
{
    if (name == "shared")
        return ScaleMode::shared;
    if (name == "symmetric")
        return ScaleMode::symmetric;
    throw ValidationError("unknown scale mode '" + name + "'");
}

const char* to_string(SearchStrategy strategy)
{
    return strategy == SearchStrategy::coordinate ? "coordinate" : "joint";
}

SearchStrategy strategy_from_string(const std::string& name)
{
    if (name == "coordinate")
        return SearchStrategy::coordinate;
    if (name == "joint")
        return SearchStrategy::joint;
    throw ValidationError("unknown search strategy '" + name + "'");
}

ScalePlan ScalePlan::identity(const BandPartition& partition, Pairing pairing, ScaleMode mode)
{
    ScalePlan plan;
    plan.mode = mode;
    plan.partition = partition;
    plan.pairing = pairing;
    plan.scales = Eigen::VectorXd::Ones(partition.num_bands());
    return plan;
}

ScalePlan ScalePlan::identity(const RopeConfig& rope, const ScalingScheme& scheme, int num_bands, ScaleMode mode)
{
    scheme.validate(rope.num_pairs());
    ScalePlan plan = identity(partition_log_freq(pair_frequencies(rope), num_bands), rope.pairing, mode);
    plan.rope = PlanRope{rope.base, rope.head_dim, rope.train_window, scheme.scales};
    return plan;
}

bool ScalePlan::is_identity() const
{
    return (scales.array() == 1.0).all();
}

void ScalePlan::validate() const
{
    partition.validate();
    if (scales.size() != partition.num_bands())
        throw ValidationError("plan has " + std::to_string(scales.size()) + " scales for " +
                              std::to_string(partition.num_bands()) + " bands");
    for (double g : scales)
        if (!(g > 0.0) || !std::isfinite(g))
            throw ValidationError("plan scales must be finite and positive");
    if (provenance && !provenance->windows.empty()) {
        if (provenance->windows.size() != static_cast<std::size_t>(scales.size()))
            throw ValidationError("plan provenance window count does not match band count");
        for (Eigen::Index b = 0; b < scales.size(); ++b)
            if (!provenance->windows[static_cast<std::size_t>(b)].contains(scales[b]) && scales[b] != 1.0)
                throw ValidationError("plan scale for band " + std::to_string(b) + " lies outside its window");
    }
}

ScalePlan ScalePlan::with_scales(Eigen::VectorXd new_scales) const
{
    ScalePlan plan = *this;
    plan.scales = std::move(new_scales);
    return plan;
}

Eigen::VectorXd row_scales(const ScalePlan& plan, Eigen::Index rows, bool key_projection)
{
    const int head_dim = plan.head_dim();
    if (head_dim == 0 || rows % head_dim != 0)
        throw ValidationError("projection with " + std::to_string(rows) + " rows does not fit head_dim " +
                              std::to_string(head_dim));
    if (plan.scales.size() != plan.partition.num_bands())
        throw ValidationError("plan scale count does not match its partition");
    const auto heads = static_cast<int>(rows / head_dim);
    Eigen::VectorXd out = Eigen::VectorXd::Ones(rows);
    for (int b = 0; b < plan.partition.num_bands(); ++b) {
        const double g = plan.scales[b];
        const double factor = key_projection && plan.mode == ScaleMode::symmetric ? 1.0 / g : g;
        for (Eigen::Index row : band_rows(plan.partition, b, plan.pairing, head_dim, heads))
            out[row] = factor;
    }
    return out;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> apply_scale_plan(const Eigen::Ref<const Eigen::MatrixXd>& w_query,
                                                             const Eigen::Ref<const Eigen::MatrixXd>& w_key,
                                                             const ScalePlan& plan)
{
    const Eigen::VectorXd q_scales = row_scales(plan, w_query.rows(), false);
    const Eigen::VectorXd k_scales = row_scales(plan, w_key.rows(), true);
    Eigen::MatrixXd q = q_scales.asDiagonal() * w_query;
    Eigen::MatrixXd k = k_scales.asDiagonal() * w_key;
    return {std::move(q), std::move(k)};
}

std::vector<LengthWeight> SearchConfig::default_lengths(int train_window)
{
    std::vector<LengthWeight> lengths;
    double total = 0.0;
    for (double factor : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        const int length = std::max(1, static_cast<int>(factor * train_window));
        lengths.push_back({length, static_cast<double>(length)});
        total += length;
    }
    for (LengthWeight& lw : lengths)
        lw.weight /= total;
    return lengths;
}

void SearchConfig::validate(int train_window, bool allow_nonstandard) const
{
    if (!(kappa >= 1.0 && kappa <= 1.3))
        throw ValidationError("kappa must be in [1.0, 1.3]");
    if (!(tau >= 0.2 && tau <= 0.5))
        throw ValidationError("tau must be in [0.2, 0.5]");
    if (num_bands < 1 || grid_points < 1)
        throw ValidationError("band count and grid size must be positive");
    if (!allow_nonstandard) {
        if (num_bands != 6 && num_bands != 8)
            throw ValidationError("band count must be 6 or 8 (use --allow-nonstandard to override)");
        if (grid_points < 5 || grid_points > 9)
            throw ValidationError("grid size must be in [5, 9] (use --allow-nonstandard to override)");
    }
    if (!(eta >= 0.0))
        throw ValidationError("eta must be non-negative");
    if (max_passes < 1)
        throw ValidationError("max_passes must be at least 1");
    if (!(global_clamp.lo > 0.0 && global_clamp.lo <= global_clamp.hi))
        throw ValidationError("global clamp must satisfy 0 < lo <= hi");
    if (!lengths.empty()) {
        bool beyond = false;
        for (const LengthWeight& lw : lengths) {
            if (!(lw.weight > 0.0) || lw.length <= 0)
                throw ValidationError("length weights must be positive");
            beyond = beyond || lw.length > train_window;
        }
        if (!beyond)
            throw ValidationError("at least one evaluation length must exceed the train window");
    }
}

double gamma_bound(double omega_ratio, double tau)
{
    if (!(omega_ratio >= 1.0))
        throw ValidationError("gamma_bound: frequency ratio must be >= 1");
    if (!(tau > 0.0))
        throw ValidationError("gamma_bound: tau must be positive");
    return 1.0 + tau / (1.0 + std::log(omega_ratio));
}

Window band_window(double gamma, double tir_w, double kappa, Window global_clamp)
{
    if (!(gamma > 1.0))
        throw ValidationError("band_window: gamma must exceed 1");
    if (!(tir_w > 0.0) || !std::isfinite(tir_w))
        throw ValidationError("band_window: TIR must be finite and positive");
    if (!(kappa > 0.0))
        throw ValidationError("band_window: kappa must be positive");
    // Clamped centers give windows with 1 as an exact endpoint; c/gamma * gamma
    // can round just below 1.
    const double target = kappa / tir_w;
    Window raw;
    if (target >= gamma)
        raw = {1.0, gamma * gamma};
    else if (target <= 1.0 / gamma)
        raw = {1.0 / (gamma * gamma), 1.0};
    else
        raw = {target / gamma, target * gamma};
    Window window{std::max(raw.lo, global_clamp.lo), std::min(raw.hi, global_clamp.hi)};
    if (window.lo > window.hi)
        throw ValidationError("band_window: window does not intersect the global clamp");
    return window;
}

std::vector<double> build_grid(Window window, int grid_points)
{
    if (!(window.lo > 0.0) || !(window.lo <= window.hi) || !std::isfinite(window.hi))
        throw ValidationError("build_grid: invalid window");
    if (grid_points < 1)
        throw ValidationError("build_grid: need at least one grid point");
    if (window.lo == window.hi)
        return {window.lo};
    if (grid_points == 1)
        throw ValidationError("build_grid: a single point needs a degenerate window");

    std::vector<double> grid(static_cast<std::size_t>(grid_points));
    const double log_lo = std::log(window.lo);
    const double log_span = std::log(window.hi) - log_lo;
    for (int k = 0; k < grid_points; ++k)
        grid[static_cast<std::size_t>(k)] = std::exp(log_lo + log_span * k / (grid_points - 1));
    grid.front() = window.lo;
    grid.back() = window.hi;

    if (window.contains(1.0) && std::find(grid.begin(), grid.end(), 1.0) == grid.end()) {
        const auto nearest = std::min_element(grid.begin(), grid.end(), [](double a, double b) {
            return std::abs(std::log(a)) < std::abs(std::log(b));
        });
        *nearest = 1.0;
    }
    return grid;
}

namespace {

// Strict preference between (objective, g) candidates within one band.
bool band_candidate_better(double obj_a, double g_a, double obj_b, double g_b)
{
    if (obj_a != obj_b)
        return obj_a < obj_b;
    const double da = std::abs(std::log(g_a));
    const double db = std::abs(std::log(g_b));
    if (da != db)
        return da < db;
    return g_a < g_b;
}

bool plan_candidate_better(double obj_a, const Eigen::VectorXd& a, double obj_b, const Eigen::VectorXd& b)
{
    if (obj_a != obj_b)
        return obj_a < obj_b;
    const double da = a.array().log().abs().sum();
    const double db = b.array().log().abs().sum();
    if (da != db)
        return da < db;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::string describe(int pass, int band, double candidate)
{
    std::ostringstream os;
    os.precision(17);
    os << "pass " << pass << ", band " << band << ", candidate " << candidate;
    return os.str();
}

// Memoizing front-end: every distinct scale vector reaches the evaluator once.
// Non-finite objectives compare as +inf.
class CountingEvaluator {
public:
    CountingEvaluator(Evaluator& evaluator, const ScalePlan& base, const SearchConfig& config)
        : evaluator_(evaluator), base_(base), config_(config)
    {
    }

    double operator()(const Eigen::VectorXd& scales, int pass, int band, double candidate)
    {
        std::vector<double> key(scales.begin(), scales.end());
        if (auto it = memo_.find(key); it != memo_.end())
            return it->second;

        double objective = 0.0;
        try {
            objective = evaluator_.evaluate(base_.with_scales(scales)).objective;
        } catch (const ProtocolError& e) {
            throw ProtocolError(describe(pass, band, candidate) + ": " + e.what(), e.raw_line());
        } catch (const BackendError& e) {
            throw BackendError(describe(pass, band, candidate) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(describe(pass, band, candidate) + ": " + e.what());
        }
        ++calls_;
        if (config_.on_eval)
            config_.on_eval({pass, band, candidate, scales, objective});
        if (!std::isfinite(objective))
            objective = std::numeric_limits<double>::infinity();
        memo_.emplace(std::move(key), objective);
        return objective;
    }

    long long calls() const { return calls_; }

private:
    Evaluator& evaluator_;
    const ScalePlan& base_;
    const SearchConfig& config_;
    std::map<std::vector<double>, double> memo_;
    long long calls_ = 0;
};

void check_grids(const ScalePlan& base, const std::vector<Grid>& grids)
{
    if (grids.size() != static_cast<std::size_t>(base.partition.num_bands()))
        throw ValidationError("need one grid per band (" + std::to_string(base.partition.num_bands()) + "), got " +
                              std::to_string(grids.size()));
    for (const Grid& grid : grids) {
        if (grid.empty())
            throw ValidationError("empty candidate grid");
        for (double g : grid)
            if (!(g > 0.0) || !std::isfinite(g))
                throw ValidationError("grid candidates must be finite and positive");
    }
}

SearchProvenance make_provenance(const SearchConfig& config, const std::string& evaluator_kind)
{
    SearchProvenance p;
    p.kappa = config.kappa;
    p.tau = config.tau;
    p.num_bands = config.num_bands;
    p.grid_points = config.grid_points;
    p.eta = config.eta;
    p.strategy = to_string(config.strategy);
    p.evaluator_kind = evaluator_kind;
    p.window_rule = "center=clamp(kappa/tir_w,1/gamma,gamma);window=[center/gamma,center*gamma]";
    return p;
}

} // namespace

ScalePlan coordinate_search(Evaluator& evaluator, const ScalePlan& base, const std::vector<Grid>& grids,
                            const SearchConfig& config, std::span<const int> band_order)
{
    check_grids(base, grids);
    const int bands = base.partition.num_bands();
    std::vector<int> order(band_order.begin(), band_order.end());
    if (order.empty()) {
        order.resize(static_cast<std::size_t>(bands));
        std::iota(order.begin(), order.end(), 0);
    }
    for (int b : order)
        if (b < 0 || b >= bands)
            throw ValidationError("band order entry " + std::to_string(b) + " out of range");

    CountingEvaluator evaluate(evaluator, base, config);
    Eigen::VectorXd current = Eigen::VectorXd::Ones(bands);
    const double identity = evaluate(current, 0, -1, 1.0);
    double best = identity;
    int passes = 0;

    for (int pass = 1; pass <= config.max_passes; ++pass) {
        const double pass_start = best;
        for (int b : order) {
            const Grid& grid = grids[static_cast<std::size_t>(b)];
            double chosen = grid.front();
            double chosen_obj = std::numeric_limits<double>::quiet_NaN();
            for (double g : grid) {
                Eigen::VectorXd trial = current;
                trial[b] = g;
                const double obj = evaluate(trial, pass, b, g);
                if (std::isnan(chosen_obj) || band_candidate_better(obj, g, chosen_obj, chosen)) {
                    chosen = g;
                    chosen_obj = obj;
                }
            }
            current[b] = chosen;
            best = chosen_obj;
        }
        passes = pass;
        const double gain = pass_start - best;
        if (!(gain > config.eta * std::abs(pass_start)))
            break;
    }

    ScalePlan plan = base.with_scales(current);
    SearchProvenance provenance = make_provenance(config, evaluator.kind());
    provenance.strategy = to_string(SearchStrategy::coordinate);
    provenance.objective_value = best;
    provenance.identity_objective = identity;
    provenance.evaluations = evaluate.calls();
    provenance.passes = passes;
    plan.provenance = provenance;
    return plan;
}

ScalePlan joint_search(Evaluator& evaluator, const ScalePlan& base, const std::vector<Grid>& grids,
                       const SearchConfig& config)
{
    check_grids(base, grids);
    const auto bands = static_cast<int>(grids.size());
    double cells = 1.0;
    for (const Grid& grid : grids)
        cells *= static_cast<double>(grid.size());
    if (cells > static_cast<double>(config.joint_budget))
        throw ValidationError("joint search needs " + std::to_string(static_cast<long long>(cells)) +
                              " evaluations, budget is " + std::to_string(config.joint_budget));

    CountingEvaluator evaluate(evaluator, base, config);
    std::vector<std::size_t> digits(static_cast<std::size_t>(bands), 0);
    Eigen::VectorXd trial(bands);
    Eigen::VectorXd best_scales;
    double best = std::numeric_limits<double>::quiet_NaN();
    while (true) {
        for (int b = 0; b < bands; ++b)
            trial[b] = grids[static_cast<std::size_t>(b)][digits[static_cast<std::size_t>(b)]];
        const double obj = evaluate(trial, 1, -1, 0.0);
        if (std::isnan(best) || plan_candidate_better(obj, trial, best, best_scales)) {
            best = obj;
            best_scales = trial;
        }
        int b = 0;
        for (; b < bands; ++b) {
            auto& digit = digits[static_cast<std::size_t>(b)];
            if (++digit < grids[static_cast<std::size_t>(b)].size())
                break;
            digit = 0;
        }
        if (b == bands)
            break;
    }

    ScalePlan plan = base.with_scales(best_scales);
    SearchProvenance provenance = make_provenance(config, evaluator.kind());
    provenance.strategy = to_string(SearchStrategy::joint);
    provenance.objective_value = best;
    // Free when every grid holds 1 (memo hit), one extra call otherwise.
    provenance.identity_objective = evaluate(Eigen::VectorXd::Ones(bands), 0, -1, 1.0);
    provenance.evaluations = evaluate.calls();
    provenance.passes = 1;
    plan.provenance = provenance;
    return plan;
}

namespace {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn())
{
    try {
        return fn();
    } catch (const ProtocolError& e) {
        throw ProtocolError(std::string(stage) + ": " + e.what(), e.raw_line());
    } catch (const BackendError& e) {
        throw BackendError(std::string(stage) + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(stage) + ": " + e.what());
    }
}

} // namespace

ScalePlan run_qroar(const RopeConfig& rope, const ScalingScheme& scheme, const DiagnosticsReport& report,
                    const SearchConfig& config, Evaluator& evaluator)
{
    const BandPartition partition = run_stage("partition", [&] {
        rope.validate();
        config.validate(rope.train_window, true);
        report.validate();
        BandPartition p = report.partition();
        if (p.num_pairs() != rope.num_pairs())
            throw ValidationError("report covers " + std::to_string(p.num_pairs()) + " pairs, rope config has " +
                                  std::to_string(rope.num_pairs()));
        if (p.num_bands() != config.num_bands)
            throw ValidationError("report has " + std::to_string(p.num_bands()) + " bands, search expects " +
                                  std::to_string(config.num_bands));
        return p;
    });

    std::vector<Window> windows;
    std::vector<Grid> grids;
    run_stage("windows", [&] {
        for (const BandDiagnostics& band : report.bands) {
            const double gamma = gamma_bound(band.omega_ratio, config.tau);
            windows.push_back(band_window(gamma, band.tir_w, config.kappa, config.global_clamp));
            grids.push_back(build_grid(windows.back(), config.grid_points));
        }
    });

    // High interpolation pressure first.
    std::vector<int> order(report.bands.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return report.bands[static_cast<std::size_t>(a)].ip > report.bands[static_cast<std::size_t>(b)].ip;
    });

    ScalePlan base = ScalePlan::identity(partition, rope.pairing, ScaleMode::symmetric);
    base.rope = PlanRope{rope.base, rope.head_dim, rope.train_window, scheme.scales};

    const auto search = [&](const ScalePlan& start) {
        return config.strategy == SearchStrategy::joint ? joint_search(evaluator, start, grids, config)
                                                        : coordinate_search(evaluator, start, grids, config, order);
    };

    ScalePlan result = run_stage("search (symmetric)", [&] { return search(base); });
    const double identity = result.provenance->identity_objective;
    long long evaluations = result.provenance->evaluations;
    bool fallback = false;

    const auto unstable = [&](const ScalePlan& plan) {
        const double obj = plan.provenance->objective_value;
        return !std::isfinite(obj) || obj > identity;
    };
    if (unstable(result)) {
        ScalePlan shared_base = base;
        shared_base.mode = ScaleMode::shared;
        ScalePlan shared = run_stage("search (shared)", [&] { return search(shared_base); });
        evaluations += shared.provenance->evaluations;
        if (!unstable(shared)) {
            result = shared;
            fallback = true;
        } else {
            SearchProvenance kept = *result.provenance;
            result = base;
            kept.objective_value = identity;
            result.provenance = kept;
        }
    }

    SearchProvenance provenance = *result.provenance;
    provenance.identity_objective = identity;
    provenance.evaluations = evaluations;
    provenance.fallback_to_shared = fallback;
    provenance.windows = windows;
    result.provenance = provenance;
    result.rope = base.rope;
    result.validate();
    return result;
}

} // namespace qroar
