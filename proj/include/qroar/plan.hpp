#pragma once

#include "qroar/bands.hpp"
#include "qroar/rope.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace qroar {

// shared: W_Q and W_K band rows both scaled by g_b.
// symmetric: W_Q rows by g_b, W_K rows by 1/g_b; full-precision logits unchanged.
enum class ScaleMode { shared, symmetric };

const char* to_string(ScaleMode mode);
ScaleMode scale_mode_from_string(const std::string& name);

struct Window {
    double lo = 1.0;
    double hi = 1.0;

    bool contains(double g) const { return g >= lo && g <= hi; }
};

struct SearchProvenance {
    double kappa = 1.2;
    double tau = 0.3;
    int num_bands = 0;
    int grid_points = 0;
    double eta = 0.0;
    std::string strategy;
    std::string evaluator_kind;
    std::string window_rule;
    double objective_value = 0.0;
    double identity_objective = 0.0;
    long long evaluations = 0;
    int passes = 0;
    bool fallback_to_shared = false;
    std::vector<Window> windows;
};

struct PlanRope {
    double base = 10000.0;
    int head_dim = 0;
    int train_window = 0;
    Eigen::VectorXd scheme_scales;
};

// Per-band rescale of the query/key projection rows.
struct ScalePlan {
    ScaleMode mode = ScaleMode::symmetric;
    Eigen::VectorXd scales;
    BandPartition partition;
    Pairing pairing = Pairing::half_split;
    std::optional<PlanRope> rope;
    std::optional<SearchProvenance> provenance;

    static ScalePlan identity(const BandPartition& partition, Pairing pairing,
                              ScaleMode mode = ScaleMode::symmetric);
    // Identity over a log-frequency partition of the rope's pairs, with the
    // rope block filled in.
    static ScalePlan identity(const RopeConfig& rope, const ScalingScheme& scheme, int num_bands,
                              ScaleMode mode = ScaleMode::symmetric);

    int head_dim() const { return 2 * partition.num_pairs(); }
    bool is_identity() const;
    void validate() const;
    // Same mode, partition and pairing; scales replaced.
    ScalePlan with_scales(Eigen::VectorXd new_scales) const;
};

// Per-row multipliers for a stacked (heads * head_dim) x d_model projection.
// Key rows in symmetric mode receive the reciprocal.
Eigen::VectorXd row_scales(const ScalePlan& plan, Eigen::Index rows, bool key_projection);

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> apply_scale_plan(const Eigen::Ref<const Eigen::MatrixXd>& w_query,
                                                             const Eigen::Ref<const Eigen::MatrixXd>& w_key,
                                                             const ScalePlan& plan);

struct Evaluation {
    std::vector<std::pair<int, double>> per_length; // (L, loss or ppl)
    double objective = 0.0;
};

// Objective backend for the search. Lower is better.
class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual Evaluation evaluate(const ScalePlan& plan) = 0;
    virtual std::string kind() const = 0;
};

} // namespace qroar
