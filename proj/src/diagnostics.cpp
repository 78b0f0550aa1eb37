#include "qroar/diagnostics.hpp"

#include "qroar/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace qroar {

void ActivationCache::validate(Eigen::Index min_samples, int train_window) const
{
    if (short_hidden.rows() < min_samples || long_hidden.rows() < min_samples)
        throw ValidationError("activation cache needs at least " + std::to_string(min_samples) +
                              " hidden samples per side (short " + std::to_string(short_hidden.rows()) +
                              ", long " + std::to_string(long_hidden.rows()) + ")");
    if (short_hidden.cols() != long_hidden.cols())
        throw ValidationError("short and long hidden states have different widths");
    for (const PairSamples* side : {&short_pairs, &long_pairs}) {
        for (const PairMatrix& pair : side->pairs)
            if (pair.rows() != side->num_samples())
                throw ValidationError("pair sample count does not match position count");
    }
    if (short_pairs.num_samples() > 0 && short_pairs.positions.maxCoeff() > train_window)
        throw ValidationError("short-side positions exceed the train window");
}

double quantile(std::span<const double> samples, double level)
{
    if (samples.empty())
        throw ValidationError("quantile of an empty sample set");
    if (!(level >= 0.0 && level <= 1.0))
        throw ValidationError("quantile level must be in [0, 1]");
    std::vector<double> work(samples.begin(), samples.end());
    const double h = (static_cast<double>(work.size()) - 1.0) * level;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(lo), work.end());
    const double lower = work[lo];
    if (lo + 1 >= work.size())
        return lower;
    const double upper = *std::min_element(work.begin() + static_cast<std::ptrdiff_t>(lo) + 1, work.end());
    return lower + (h - static_cast<double>(lo)) * (upper - lower);
}

Eigen::VectorXd interpolation_pressure(const RopeConfig& config, const ScalingScheme& scheme, double displacement)
{
    if (!(displacement > 0.0))
        throw ValidationError("interpolation pressure needs a positive displacement");
    const Eigen::VectorXd freqs = pair_frequencies(config);
    scheme.validate(config.num_pairs());
    const double warped = scheme.warp_position(displacement);
    return (freqs.array() * warped / scheme.scales.array().square()).matrix();
}

namespace {

double tail_ratio(std::span<const double> numerator, std::span<const double> denominator, double eps,
                  const char* what, Eigen::Index index)
{
    const double den = quantile(denominator, 1.0 - eps);
    if (!(den > 0.0))
        throw ValidationError(std::string(what) + " " + std::to_string(index) +
                              ": short-side quantile is zero, calibration data is degenerate");
    return quantile(numerator, 1.0 - eps) / den;
}

void check_eps(double eps)
{
    if (!(eps > 0.0 && eps < 1.0))
        throw ValidationError("eps must be in (0, 1)");
}

double inf_norm_rotated(double x, double y, double phase)
{
    const double c = std::cos(phase);
    const double s = std::sin(phase);
    return std::max(std::abs(c * x - s * y), std::abs(s * x + c * y));
}

} // namespace

Eigen::VectorXd tir_weight(const Eigen::Ref<const Eigen::MatrixXd>& weight_rows, const ActivationCache& cache,
                           double eps)
{
    check_eps(eps);
    if (cache.short_hidden.rows() == 0 || cache.long_hidden.rows() == 0)
        throw ValidationError("tir_weight: empty hidden-state cache");
    if (weight_rows.cols() != cache.short_hidden.cols() || weight_rows.cols() != cache.long_hidden.cols())
        throw ValidationError("tir_weight: weight width " + std::to_string(weight_rows.cols()) +
                              " does not match hidden width " + std::to_string(cache.short_hidden.cols()));

    // Column i holds |w_i . h| over the samples.
    const Eigen::MatrixXd short_pre = (cache.short_hidden * weight_rows.transpose()).cwiseAbs();
    const Eigen::MatrixXd long_pre = (cache.long_hidden * weight_rows.transpose()).cwiseAbs();
    Eigen::VectorXd ratios(weight_rows.rows());
    for (Eigen::Index i = 0; i < weight_rows.rows(); ++i) {
        ratios[i] = tail_ratio({long_pre.col(i).data(), static_cast<std::size_t>(long_pre.rows())},
                               {short_pre.col(i).data(), static_cast<std::size_t>(short_pre.rows())}, eps,
                               "weight row", i);
    }
    return ratios;
}

Eigen::VectorXd tir_activation(const ActivationCache& cache, const RopeConfig& config, const ScalingScheme& scheme,
                               double eps)
{
    check_eps(eps);
    const PairSamples& samples = cache.long_pairs;
    if (samples.num_samples() == 0 || samples.num_pairs() == 0)
        throw ValidationError("tir_activation: empty pair cache");
    if (samples.num_pairs() != config.num_pairs())
        throw ValidationError("tir_activation: cache has " + std::to_string(samples.num_pairs()) +
                              " pairs, config has " + std::to_string(config.num_pairs()));
    scheme.validate(config.num_pairs());

    const Eigen::VectorXd freqs = pair_frequencies(config);
    const Eigen::Index n = samples.num_samples();
    Eigen::VectorXd ratios(config.num_pairs());
    std::vector<double> scaled(static_cast<std::size_t>(n));
    std::vector<double> plain(static_cast<std::size_t>(n));
    for (int i = 0; i < config.num_pairs(); ++i) {
        const PairMatrix& u = samples.pairs[static_cast<std::size_t>(i)];
        for (Eigen::Index k = 0; k < n; ++k) {
            const double m = samples.positions[k];
            scaled[k] = inf_norm_rotated(u(k, 0), u(k, 1), scaled_phase(config, scheme, m, i));
            plain[k] = inf_norm_rotated(u(k, 0), u(k, 1), freqs[i] * m);
        }
        ratios[i] = tail_ratio(scaled, plain, eps, "pair", i);
    }
    return ratios;
}

Eigen::MatrixXd tir_activation_curve(const ActivationCache& cache, const RopeConfig& config,
                                     const ScalingScheme& scheme, double eps, double bucket_width)
{
    check_eps(eps);
    if (!(bucket_width > 0.0))
        throw ValidationError("bucket width must be positive");
    const PairSamples& samples = cache.long_pairs;
    if (samples.num_samples() == 0)
        return Eigen::MatrixXd(config.num_pairs(), 0);

    const Eigen::VectorXd freqs = pair_frequencies(config);
    const auto buckets = static_cast<Eigen::Index>(std::floor(samples.positions.maxCoeff() / bucket_width)) + 1;
    Eigen::MatrixXd curve =
        Eigen::MatrixXd::Constant(config.num_pairs(), buckets, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(buckets));
    for (Eigen::Index k = 0; k < samples.num_samples(); ++k)
        members[static_cast<std::size_t>(samples.positions[k] / bucket_width)].push_back(k);

    for (int i = 0; i < config.num_pairs(); ++i) {
        const PairMatrix& u = samples.pairs[static_cast<std::size_t>(i)];
        for (Eigen::Index b = 0; b < buckets; ++b) {
            const auto& idx = members[static_cast<std::size_t>(b)];
            if (idx.empty())
                continue;
            std::vector<double> scaled, plain;
            scaled.reserve(idx.size());
            plain.reserve(idx.size());
            for (Eigen::Index k : idx) {
                const double m = samples.positions[k];
                scaled.push_back(inf_norm_rotated(u(k, 0), u(k, 1), scaled_phase(config, scheme, m, i)));
                plain.push_back(inf_norm_rotated(u(k, 0), u(k, 1), freqs[i] * m));
            }
            const double den = quantile(plain, 1.0 - eps);
            if (den > 0.0)
                curve(i, b) = quantile(scaled, 1.0 - eps) / den;
        }
    }
    return curve;
}

Eigen::VectorXd rows_to_pairs_max(const Eigen::Ref<const Eigen::VectorXd>& row_values, Pairing pairing,
                                  int head_dim)
{
    if (head_dim <= 0 || head_dim % 2 != 0 || row_values.size() % head_dim != 0)
        throw ValidationError("row count " + std::to_string(row_values.size()) +
                              " is not a multiple of head_dim " + std::to_string(head_dim));
    const int pairs = head_dim / 2;
    Eigen::VectorXd out = Eigen::VectorXd::Constant(pairs, -std::numeric_limits<double>::infinity());
    for (Eigen::Index head = 0; head < row_values.size(); head += head_dim) {
        for (int i = 0; i < pairs; ++i) {
            const auto [rx, ry] = pair_rows(pairing, head_dim, i);
            out[i] = std::max({out[i], row_values[head + rx], row_values[head + ry]});
        }
    }
    return out;
}

BandPartition DiagnosticsReport::partition() const
{
    BandPartition partition;
    partition.freqs = freqs;
    for (const BandDiagnostics& band : bands)
        partition.bands.push_back(band.range);
    partition.validate();
    return partition;
}

void DiagnosticsReport::validate() const
{
    const auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!(eps > 0.0 && eps < 1.0))
        throw ValidationError("report eps must be in (0, 1)");
    const Eigen::Index pairs = freqs.size();
    if (ip_per_pair.size() != pairs || tir_w_per_pair.size() != pairs || tir_a_per_pair.size() != pairs)
        throw ValidationError("report per-pair vectors have inconsistent lengths");
    for (const Eigen::VectorXd* v : {&freqs, &ip_per_pair, &tir_w_per_pair, &tir_a_per_pair})
        for (double x : *v)
            if (!positive(x))
                throw ValidationError("report entries must be finite and positive");
    for (const BandDiagnostics& band : bands)
        if (!positive(band.ip) || !positive(band.tir_w) || !positive(band.tir_a) || !positive(band.omega_med))
            throw ValidationError("report band entries must be finite and positive");
    partition();
}

DiagnosticsReport aggregate_report(const BandPartition& partition, const Eigen::Ref<const Eigen::VectorXd>& ip,
                                   const Eigen::Ref<const Eigen::VectorXd>& tir_w_pairs,
                                   const Eigen::Ref<const Eigen::VectorXd>& tir_a, double eps, double displacement)
{
    partition.validate();
    const int pairs = partition.num_pairs();
    if (ip.size() != pairs || tir_w_pairs.size() != pairs || tir_a.size() != pairs)
        throw ValidationError("aggregate_report: per-pair vectors must have " + std::to_string(pairs) + " entries");

    DiagnosticsReport report;
    report.eps = eps;
    report.displacement = displacement;
    report.freqs = partition.freqs;
    report.ip_per_pair = ip;
    report.tir_w_per_pair = tir_w_pairs;
    report.tir_a_per_pair = tir_a;
    for (int b = 0; b < partition.num_bands(); ++b) {
        const BandRange range = partition.bands[static_cast<std::size_t>(b)];
        const BandFreqStats stats = band_freq_stats(partition, b);
        BandDiagnostics band;
        band.range = range;
        band.omega_med = stats.omega_med;
        band.omega_ratio = stats.omega_ratio;
        band.ip = ip.segment(range.begin, range.size()).maxCoeff();
        band.tir_w = tir_w_pairs.segment(range.begin, range.size()).maxCoeff();
        band.tir_a = tir_a.segment(range.begin, range.size()).maxCoeff();
        report.bands.push_back(band);
    }
    return report;
}

DiagnosticsReport diagnose(const Eigen::Ref<const Eigen::MatrixXd>& w_query,
                           const Eigen::Ref<const Eigen::MatrixXd>& w_key, const ActivationCache& cache,
                           const RopeConfig& config, const ScalingScheme& scheme, int num_bands,
                           const DiagnosticsOptions& options)
{
    config.validate();
    scheme.validate(config.num_pairs());
    cache.validate(options.min_samples, config.train_window);

    double displacement = options.displacement;
    if (displacement <= 0.0) {
        if (cache.metadata.long_length < 2)
            throw ValidationError("cache metadata lacks a long-context length; pass an explicit displacement");
        displacement = cache.metadata.long_length - 1.0;
    }

    const BandPartition partition = partition_log_freq(pair_frequencies(config), num_bands);
    const Eigen::VectorXd ip = interpolation_pressure(config, scheme, displacement);
    const Eigen::VectorXd tir_w_q = rows_to_pairs_max(tir_weight(w_query, cache, options.eps), config.pairing,
                                                      config.head_dim);
    const Eigen::VectorXd tir_w_k = rows_to_pairs_max(tir_weight(w_key, cache, options.eps), config.pairing,
                                                      config.head_dim);
    const Eigen::VectorXd tir_a = tir_activation(cache, config, scheme, options.eps);

    DiagnosticsReport report =
        aggregate_report(partition, ip, tir_w_q.cwiseMax(tir_w_k), tir_a, options.eps, displacement);
    report.curve_bucket_width = options.curve_bucket_width > 0.0 ? options.curve_bucket_width : config.train_window;
    report.tir_a_curve = tir_activation_curve(cache, config, scheme, options.eps, report.curve_bucket_width);
    return report;
}

} // namespace qroar
