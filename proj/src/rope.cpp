#include "qroar/rope.hpp"

#include "qroar/error.hpp"

#include <algorithm>
#include <numbers>
#include <string>

namespace qroar {

const char* to_string(Pairing pairing)
{
    return pairing == Pairing::half_split ? "half_split" : "interleaved";
}

Pairing pairing_from_string(const std::string& name)
{
    if (name == "half_split")
        return Pairing::half_split;
    if (name == "interleaved")
        return Pairing::interleaved;
    throw ValidationError("unknown pairing convention '" + name + "'");
}

void RopeConfig::validate() const
{
    if (head_dim <= 0 || head_dim % 2 != 0)
        throw ValidationError("head_dim must be a positive even integer, got " + std::to_string(head_dim));
    if (!(base > 1.0) || !std::isfinite(base))
        throw ValidationError("rope base must be > 1");
    if (train_window <= 0)
        throw ValidationError("train_window must be positive");
}

ScalingScheme ScalingScheme::none(int num_pairs)
{
    return linear(num_pairs, 1.0);
}

ScalingScheme ScalingScheme::linear(int num_pairs, double factor)
{
    if (!(factor > 0.0))
        throw ValidationError("scaling factor must be positive");
    ScalingScheme scheme;
    scheme.scales = Eigen::VectorXd::Constant(num_pairs, factor);
    return scheme;
}

ScalingScheme ScalingScheme::yarn_ramp(const RopeConfig& config, double factor, double alpha, double beta)
{
    config.validate();
    if (!(factor > 0.0))
        throw ValidationError("scaling factor must be positive");
    if (!(beta > alpha))
        throw ValidationError("yarn ramp requires beta > alpha");
    const Eigen::VectorXd freqs = pair_frequencies(config);
    ScalingScheme scheme;
    scheme.scales.resize(freqs.size());
    for (Eigen::Index i = 0; i < freqs.size(); ++i) {
        const double wavelength = 2.0 * std::numbers::pi / freqs[i];
        const double ratio = config.train_window / wavelength;
        // 1 keeps the original frequency, 0 interpolates fully.
        const double keep = std::clamp((ratio - alpha) / (beta - alpha), 0.0, 1.0);
        scheme.scales[i] = 1.0 / ((1.0 - keep) / factor + keep);
    }
    return scheme;
}

void ScalingScheme::validate(int num_pairs) const
{
    if (scales.size() != num_pairs)
        throw ValidationError("scaling scheme has " + std::to_string(scales.size()) + " scales, expected " +
                              std::to_string(num_pairs));
    for (double s : scales)
        if (!(s > 0.0) || !std::isfinite(s))
            throw ValidationError("scaling scheme scales must be finite and positive");
}

Eigen::VectorXd pair_frequencies(const RopeConfig& config)
{
    config.validate();
    const int pairs = config.num_pairs();
    Eigen::VectorXd freqs(pairs);
    for (int i = 0; i < pairs; ++i)
        freqs[i] = std::pow(config.base, -2.0 * i / config.head_dim);
    return freqs;
}

namespace {

double pair_frequency(const RopeConfig& config, const ScalingScheme& scheme, int pair)
{
    if (scheme.scales.size() != config.num_pairs())
        throw ValidationError("scaling scheme has " + std::to_string(scheme.scales.size()) + " scales, expected " +
                              std::to_string(config.num_pairs()));
    if (pair < 0 || pair >= config.num_pairs())
        throw ValidationError("pair index " + std::to_string(pair) + " out of range");
    return std::pow(config.base, -2.0 * pair / config.head_dim);
}

} // namespace

double scaled_phase(const RopeConfig& config, const ScalingScheme& scheme, double position, int pair)
{
    const double omega = pair_frequency(config, scheme, pair);
    return omega * (scheme.warp_position(position) / scheme.scales[pair]);
}

double phase_deviation(const RopeConfig& config, const ScalingScheme& scheme, double displacement,
                       double reference, int pair)
{
    if (displacement < 0.0)
        throw ValidationError("displacement must be non-negative");
    const double omega = pair_frequency(config, scheme, pair);
    return omega * (scheme.warp_position(displacement) / scheme.scales[pair] - reference);
}

std::pair<Eigen::Index, Eigen::Index> pair_rows(Pairing pairing, int head_dim, int pair)
{
    const int pairs = head_dim / 2;
    if (pair < 0 || pair >= pairs)
        throw ValidationError("pair index " + std::to_string(pair) + " out of range");
    if (pairing == Pairing::half_split)
        return {pair, pair + pairs};
    return {2 * pair, 2 * pair + 1};
}

Eigen::VectorXd rotate_vector(const Eigen::Ref<const Eigen::VectorXd>& v, const RopeConfig& config,
                              const ScalingScheme& scheme, double position)
{
    if (v.size() != config.head_dim)
        throw ValidationError("rotate_vector: length " + std::to_string(v.size()) + " != head_dim " +
                              std::to_string(config.head_dim));
    return rotate_heads(v, config, scheme, position);
}

Eigen::VectorXd rotate_heads(const Eigen::Ref<const Eigen::VectorXd>& v, const RopeConfig& config,
                             const ScalingScheme& scheme, double position)
{
    const int d = config.head_dim;
    const int pairs = config.num_pairs();
    if (v.size() % d != 0)
        throw ValidationError("vector length is not a multiple of head_dim");
    scheme.validate(pairs);
    const Eigen::VectorXd freqs = pair_frequencies(config);
    Eigen::VectorXd out(v.size());
    for (int i = 0; i < pairs; ++i) {
        const double phase = freqs[i] * (scheme.warp_position(position) / scheme.scales[i]);
        const double c = std::cos(phase);
        const double s = std::sin(phase);
        const auto [rx, ry] = pair_rows(config.pairing, d, i);
        for (Eigen::Index head = 0; head < v.size(); head += d) {
            const double x = v[head + rx];
            const double y = v[head + ry];
            out[head + rx] = c * x - s * y;
            out[head + ry] = s * x + c * y;
        }
    }
    return out;
}

} // namespace qroar
