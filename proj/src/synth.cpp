#include "qroar/error.hpp"
#include "qroar/evaluator.hpp"
#include "qroar/random.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace qroar {

const char* to_string(SchemeKind kind)
{
    switch (kind) {
    case SchemeKind::none:
        return "none";
    case SchemeKind::linear:
        return "linear";
    case SchemeKind::yarn:
        return "yarn";
    }
    return "?";
}

SchemeKind scheme_kind_from_string(const std::string& name)
{
    if (name == "none")
        return SchemeKind::none;
    if (name == "linear")
        return SchemeKind::linear;
    if (name == "yarn")
        return SchemeKind::yarn;
    throw ValidationError("unknown scaling scheme '" + name + "'");
}

void SynthDims::validate() const
{
    RopeConfig{head_dim, base, pairing, train_window}.validate();
    if (d_model < 1 || num_heads < 1)
        throw ValidationError("d_model and heads must be positive");
    if (!(pi_factor > 0.0))
        throw ValidationError("PI factor must be positive");
    if (lengths.empty())
        throw ValidationError("need at least one evaluation length");
    for (int length : lengths)
        if (length < 2)
            throw ValidationError("evaluation lengths must be at least 2");
    if (calibration_samples < 1)
        throw ValidationError("calibration sample count must be positive");
    if (weight_quant)
        weight_quant->validate();
}

namespace {

// Every stored value is representable in f32 so the bundle survives the
// tensor container unchanged.
double as_f32(double x)
{
    return static_cast<double>(static_cast<float>(x));
}

class HiddenGenerator {
public:
    HiddenGenerator(int d_model, const OutlierSpec& outliers, int train_window)
        : d_model_(d_model), outliers_(outliers), train_window_(train_window)
    {
    }

    Eigen::MatrixXd draw(const std::vector<int>& positions, Rng& rng) const
    {
        Eigen::MatrixXd h(static_cast<Eigen::Index>(positions.size()), d_model_);
        for (std::size_t s = 0; s < positions.size(); ++s) {
            const auto row = static_cast<Eigen::Index>(s);
            for (int c = 0; c < d_model_; ++c)
                h(row, c) = rng.normal();
            if (outliers_.empty())
                continue;
            const double beyond = std::max(0, positions[s] - train_window_) / static_cast<double>(train_window_);
            const double magnitude = outliers_.amplitude * (1.0 + outliers_.growth * beyond);
            for (int c = 0; c < std::min(outliers_.channels, d_model_); ++c)
                h(row, c) = magnitude * rng.student_t(outliers_.tail_dof);
        }
        return h.unaryExpr(&as_f32);
    }

private:
    int d_model_;
    const OutlierSpec& outliers_;
    int train_window_;
};

PairSamples collect_pairs(const Eigen::MatrixXd& hidden, const std::vector<int>& positions,
                          const Eigen::MatrixXd& w_query, const RopeConfig& rope, int heads)
{
    const Eigen::MatrixXd q = hidden * w_query.transpose();
    const Eigen::Index n = hidden.rows();
    PairSamples out;
    out.positions.resize(n * heads);
    out.pairs.assign(static_cast<std::size_t>(rope.num_pairs()), PairMatrix(n * heads, 2));
    for (int head = 0; head < heads; ++head) {
        for (Eigen::Index s = 0; s < n; ++s) {
            const Eigen::Index row = head * n + s;
            out.positions[row] = positions[static_cast<std::size_t>(s)];
            for (int i = 0; i < rope.num_pairs(); ++i) {
                const auto [rx, ry] = pair_rows(rope.pairing, rope.head_dim, i);
                out.pairs[static_cast<std::size_t>(i)](row, 0) = as_f32(q(s, head * rope.head_dim + rx));
                out.pairs[static_cast<std::size_t>(i)](row, 1) = as_f32(q(s, head * rope.head_dim + ry));
            }
        }
    }
    return out;
}

} // namespace

ModelBundle synth_model(std::uint64_t seed, const SynthDims& dims, const OutlierSpec& outliers)
{
    dims.validate();
    Rng rng(seed);

    ModelBundle bundle;
    bundle.rope = RopeConfig{dims.head_dim, dims.base, dims.pairing, dims.train_window};
    bundle.num_heads = dims.num_heads;
    switch (dims.scheme) {
    case SchemeKind::none:
        bundle.scheme = ScalingScheme::none(bundle.rope.num_pairs());
        break;
    case SchemeKind::linear:
        bundle.scheme = ScalingScheme::linear(bundle.rope.num_pairs(), dims.pi_factor);
        break;
    case SchemeKind::yarn:
        bundle.scheme = ScalingScheme::yarn_ramp(bundle.rope, dims.pi_factor);
        break;
    }
    bundle.weight_quant = dims.weight_quant;
    bundle.activation_bits = dims.activation_bits;

    const Eigen::Index rows = static_cast<Eigen::Index>(dims.num_heads) * dims.head_dim;
    const double weight_std = 1.0 / std::sqrt(static_cast<double>(dims.d_model));
    for (Eigen::MatrixXd* w : {&bundle.w_query, &bundle.w_key}) {
        w->resize(rows, dims.d_model);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (int c = 0; c < dims.d_model; ++c)
                (*w)(r, c) = weight_std * rng.normal();
    }

    if (!outliers.empty()) {
        if (outliers.channels < 1 || outliers.channels > dims.d_model)
            throw ValidationError("outlier channel count must be in [1, d_model]");
        const BandPartition partition = partition_log_freq(pair_frequencies(bundle.rope), outliers.partition_bands);
        std::set<Eigen::Index> targets;
        for (int band : outliers.target_bands)
            for (Eigen::Index row : band_rows(partition, band, dims.pairing, dims.head_dim, dims.num_heads))
                targets.insert(row);
        const auto reshape = [&](Eigen::MatrixXd& w, bool targeted_matrix) {
            for (Eigen::Index r = 0; r < rows; ++r) {
                const double gain = targeted_matrix && targets.count(r) ? outliers.weight_gain : outliers.leak;
                w.leftCols(outliers.channels).row(r) *= gain;
            }
        };
        reshape(bundle.w_query, outliers.on_query);
        reshape(bundle.w_key, outliers.on_key);
    }
    bundle.w_query = bundle.w_query.unaryExpr(&as_f32);
    bundle.w_key = bundle.w_key.unaryExpr(&as_f32);

    const HiddenGenerator generator(dims.d_model, outliers, dims.train_window);
    for (int length : dims.lengths) {
        std::vector<int> positions(static_cast<std::size_t>(length));
        for (int m = 0; m < length; ++m)
            positions[static_cast<std::size_t>(m)] = m;
        bundle.sequences.push_back({length, generator.draw(positions, rng)});
    }

    const int long_length = *std::max_element(dims.lengths.begin(), dims.lengths.end());
    const auto draw_positions = [&](int limit) {
        std::vector<int> positions(static_cast<std::size_t>(dims.calibration_samples));
        for (int& m : positions)
            m = static_cast<int>(rng.uniform_int(0, limit - 1));
        return positions;
    };
    const std::vector<int> short_positions = draw_positions(dims.train_window);
    bundle.calibration.short_hidden = generator.draw(short_positions, rng);
    const std::vector<int> long_positions = draw_positions(long_length);
    bundle.calibration.long_hidden = generator.draw(long_positions, rng);
    bundle.calibration.short_pairs =
        collect_pairs(bundle.calibration.short_hidden, short_positions, bundle.w_query, bundle.rope, dims.num_heads);
    bundle.calibration.long_pairs =
        collect_pairs(bundle.calibration.long_hidden, long_positions, bundle.w_query, bundle.rope, dims.num_heads);
    bundle.calibration.metadata = {dims.train_window, long_length, to_string(dims.scheme)};
    return bundle;
}

} // namespace qroar
