#pragma once

#include "qroar/bands.hpp"
#include "qroar/rope.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace qroar {

using PairMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2>;

// Sampled pre-rotation pair values u_i, all pairs sharing one position list.
struct PairSamples {
    Eigen::VectorXd positions;
    std::vector<PairMatrix> pairs; // pairs[i] is positions.size() x 2

    Eigen::Index num_samples() const { return positions.size(); }
    int num_pairs() const { return static_cast<int>(pairs.size()); }
};

struct CacheMetadata {
    int short_length = 0;
    int long_length = 0;
    std::string scheme_id;
};

// Short-context vs interpolated long-context calibration statistics.
struct ActivationCache {
    Eigen::MatrixXd short_hidden; // samples x d_model
    Eigen::MatrixXd long_hidden;  // samples x d_model
    PairSamples short_pairs;
    PairSamples long_pairs;
    CacheMetadata metadata;

    void validate(Eigen::Index min_samples, int train_window) const;
};

// Type-7 quantile: linear interpolation between the closest ranks.
double quantile(std::span<const double> samples, double level);

// IP_i = omega_i f(D) / s_i^2.
Eigen::VectorXd interpolation_pressure(const RopeConfig& config, const ScalingScheme& scheme, double displacement);

// Per weight row: Q_long(|w.h|, 1-eps) / Q_short(|w.h|, 1-eps).
Eigen::VectorXd tir_weight(const Eigen::Ref<const Eigen::MatrixXd>& weight_rows, const ActivationCache& cache,
                           double eps);

// Per pair: quantile of the rotated pair's inf-norm under the scaled phase over
// the same under the unscaled phase, pooled over the long-side positions.
Eigen::VectorXd tir_activation(const ActivationCache& cache, const RopeConfig& config, const ScalingScheme& scheme,
                               double eps);

// Same ratio restricted to position buckets [k w, (k + 1) w); P x buckets.
// Buckets with no samples hold NaN.
Eigen::MatrixXd tir_activation_curve(const ActivationCache& cache, const RopeConfig& config,
                                     const ScalingScheme& scheme, double eps, double bucket_width);

// Collapses stacked multi-head row values onto pairs by taking the max over
// every row holding a component of the pair.
Eigen::VectorXd rows_to_pairs_max(const Eigen::Ref<const Eigen::VectorXd>& row_values, Pairing pairing,
                                  int head_dim);

struct BandDiagnostics {
    BandRange range;
    double omega_med = 1.0;
    double omega_ratio = 1.0;
    double ip = 0.0;
    double tir_w = 1.0;
    double tir_a = 1.0;
};

struct DiagnosticsReport {
    double eps = 0.01;
    double displacement = 0.0;
    Eigen::VectorXd freqs;
    Eigen::VectorXd ip_per_pair;
    Eigen::VectorXd tir_w_per_pair;
    Eigen::VectorXd tir_a_per_pair;
    std::vector<BandDiagnostics> bands;
    double curve_bucket_width = 0.0;
    Eigen::MatrixXd tir_a_curve; // inspection only

    BandPartition partition() const;
    void validate() const;
};

// Band aggregates are maxima over member pairs.
DiagnosticsReport aggregate_report(const BandPartition& partition, const Eigen::Ref<const Eigen::VectorXd>& ip,
                                   const Eigen::Ref<const Eigen::VectorXd>& tir_w_pairs,
                                   const Eigen::Ref<const Eigen::VectorXd>& tir_a, double eps, double displacement);

struct DiagnosticsOptions {
    double eps = 0.01;
    double displacement = 0.0; // <= 0 selects long_length - 1
    Eigen::Index min_samples = 1000;
    double curve_bucket_width = 0.0; // <= 0 selects the train window
};

// Steps 1-2 of the calibration: partition the pairs, then estimate IP, TIR^W
// over the rows of both projections, and TIR^A.
DiagnosticsReport diagnose(const Eigen::Ref<const Eigen::MatrixXd>& w_query,
                           const Eigen::Ref<const Eigen::MatrixXd>& w_key, const ActivationCache& cache,
                           const RopeConfig& config, const ScalingScheme& scheme, int num_bands,
                           const DiagnosticsOptions& options = {});

} // namespace qroar
