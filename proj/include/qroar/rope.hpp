#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>

namespace qroar {

enum class Pairing { half_split, interleaved };
enum class Warp { identity };

const char* to_string(Pairing pairing);
Pairing pairing_from_string(const std::string& name);

struct RopeConfig {
    int head_dim = 128;
    double base = 10000.0;
    Pairing pairing = Pairing::half_split;
    int train_window = 4096; // L_0: largest displacement seen in training

    int num_pairs() const { return head_dim / 2; }
    void validate() const;
};

// Per-pair frequency rescale s_i plus a position warp f. A scheme with all
// scales equal to 1 is plain RoPE.
struct ScalingScheme {
    Warp warp = Warp::identity;
    Eigen::VectorXd scales;

    static ScalingScheme none(int num_pairs);
    static ScalingScheme linear(int num_pairs, double factor);
    // Frequency-aware ramp: pairs whose wavelength is short relative to the
    // train window keep s_i = 1, long-wavelength pairs get the full factor,
    // and pairs in between are blended linearly in the ratio L_0 / wavelength.
    static ScalingScheme yarn_ramp(const RopeConfig& config, double factor, double alpha = 1.0,
                                   double beta = 32.0);

    double warp_position(double m) const { return m; }
    void validate(int num_pairs) const;
};

template <typename Scalar>
using PairVector = Eigen::Matrix<Scalar, 2, 1>;

// omega_i = base^(-2i/d), i = 0..P-1.
Eigen::VectorXd pair_frequencies(const RopeConfig& config);

// omega_i * f(m) / s_i
double scaled_phase(const RopeConfig& config, const ScalingScheme& scheme, double position, int pair);

// omega_i * (f(D) / s_i - D_0)
double phase_deviation(const RopeConfig& config, const ScalingScheme& scheme, double displacement,
                       double reference, int pair);

template <typename Scalar>
PairVector<Scalar> rotate_pair(const PairVector<Scalar>& u, Scalar phase)
{
    using std::cos;
    using std::sin;
    const Scalar c = cos(phase);
    const Scalar s = sin(phase);
    return PairVector<Scalar>(c * u.x() - s * u.y(), s * u.x() + c * u.y());
}

// Rows (within one head) holding the two components of pair i.
std::pair<Eigen::Index, Eigen::Index> pair_rows(Pairing pairing, int head_dim, int pair);

Eigen::VectorXd rotate_vector(const Eigen::Ref<const Eigen::VectorXd>& v, const RopeConfig& config,
                              const ScalingScheme& scheme, double position);

// Rotates each head_dim-sized segment of a stacked multi-head vector.
Eigen::VectorXd rotate_heads(const Eigen::Ref<const Eigen::VectorXd>& v, const RopeConfig& config,
                             const ScalingScheme& scheme, double position);

} // namespace qroar
