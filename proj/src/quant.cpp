#include "qroar/quant.hpp"

#include "qroar/error.hpp"

#include <algorithm>
#include <cmath>

namespace qroar {

const char* to_string(Granularity granularity)
{
    switch (granularity) {
    case Granularity::per_tensor:
        return "per_tensor";
    case Granularity::per_output_channel:
        return "per_output_channel";
    case Granularity::per_group:
        return "per_group";
    }
    return "?";
}

Granularity granularity_from_string(const std::string& name)
{
    if (name == "per_tensor")
        return Granularity::per_tensor;
    if (name == "per_output_channel")
        return Granularity::per_output_channel;
    if (name == "per_group")
        return Granularity::per_group;
    throw ValidationError("unknown quantization granularity '" + name + "'");
}

void QuantSpec::validate() const
{
    if (bits < 2 || bits > 8)
        throw ValidationError("quantization bits must be in [2, 8], got " + std::to_string(bits));
    if (granularity == Granularity::per_group && group_size <= 0)
        throw ValidationError("per_group quantization needs a positive group_size");
}

Eigen::Index QuantizedTensor::group_rows() const
{
    return scales.rows();
}

Eigen::Index QuantizedTensor::group_cols() const
{
    return scales.cols();
}

std::pair<Eigen::Index, Eigen::Index> QuantizedTensor::group_of(Eigen::Index r, Eigen::Index c) const
{
    switch (spec.granularity) {
    case Granularity::per_tensor:
        return {0, 0};
    case Granularity::per_output_channel:
        return {r, 0};
    case Granularity::per_group:
        return {r, c / spec.group_size};
    }
    return {0, 0};
}

double QuantizedTensor::scale_at(Eigen::Index r, Eigen::Index c) const
{
    const auto [gr, gc] = group_of(r, c);
    return scales(gr, gc);
}

namespace {

struct GroupParams {
    double scale = 1.0;
    int zero_point = 0;
};

GroupParams fit_group(const Eigen::Ref<const Eigen::MatrixXd>& block, const QuantSpec& spec)
{
    GroupParams params;
    if (spec.symmetric) {
        const double max_abs = block.cwiseAbs().maxCoeff();
        if (max_abs > 0.0)
            params.scale = max_abs / spec.max_code();
        return params;
    }
    // Asymmetric: codes in [0, 2^bits - 1], zero included in the range.
    const double lo = std::min(block.minCoeff(), 0.0);
    const double hi = std::max(block.maxCoeff(), 0.0);
    const int levels = (1 << spec.bits) - 1;
    if (hi > lo) {
        params.scale = (hi - lo) / levels;
        params.zero_point = static_cast<int>(std::nearbyint(-lo / params.scale));
    }
    return params;
}

int encode(double x, const GroupParams& params, const QuantSpec& spec)
{
    // nearbyint honours the default round-half-to-even mode.
    const double q = std::nearbyint(x / params.scale);
    if (spec.symmetric) {
        const double limit = spec.max_code();
        return static_cast<int>(std::clamp(q, -limit, limit));
    }
    const double levels = (1 << spec.bits) - 1;
    return static_cast<int>(std::clamp(q + params.zero_point, 0.0, levels));
}

} // namespace

QuantizedTensor quantize_rtn(const Eigen::Ref<const Eigen::MatrixXd>& weights, const QuantSpec& spec)
{
    spec.validate();
    if (!weights.allFinite())
        throw ValidationError("quantize_rtn: non-finite input");

    const Eigen::Index rows = weights.rows();
    const Eigen::Index cols = weights.cols();
    QuantizedTensor q;
    q.spec = spec;
    q.codes.resize(rows, cols);

    Eigen::Index grows = 1, gcols = 1, row_span = rows, col_span = cols;
    switch (spec.granularity) {
    case Granularity::per_tensor:
        break;
    case Granularity::per_output_channel:
        grows = rows;
        row_span = 1;
        break;
    case Granularity::per_group:
        grows = rows;
        row_span = 1;
        col_span = spec.group_size;
        gcols = cols == 0 ? 1 : (cols + col_span - 1) / col_span;
        break;
    }
    q.scales = Eigen::MatrixXd::Ones(grows, gcols);
    q.zero_points = Eigen::MatrixXi::Zero(grows, gcols);
    if (rows == 0 || cols == 0)
        return q;

    for (Eigen::Index gr = 0; gr < grows; ++gr) {
        for (Eigen::Index gc = 0; gc < gcols; ++gc) {
            const Eigen::Index r0 = gr * row_span;
            const Eigen::Index c0 = gc * col_span;
            const Eigen::Index nr = std::min(row_span, rows - r0);
            const Eigen::Index nc = std::min(col_span, cols - c0);
            const auto block = weights.block(r0, c0, nr, nc);
            const GroupParams params = fit_group(block, spec);
            q.scales(gr, gc) = params.scale;
            q.zero_points(gr, gc) = params.zero_point;
            for (Eigen::Index c = 0; c < nc; ++c)
                for (Eigen::Index r = 0; r < nr; ++r)
                    q.codes(r0 + r, c0 + c) = encode(block(r, c), params, spec);
        }
    }
    return q;
}

Eigen::MatrixXd dequantize(const QuantizedTensor& q)
{
    Eigen::MatrixXd out(q.codes.rows(), q.codes.cols());
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            const auto [gr, gc] = q.group_of(r, c);
            out(r, c) = (q.codes(r, c) - q.zero_points(gr, gc)) * q.scales(gr, gc);
        }
    }
    return out;
}

Eigen::MatrixXd fake_quant_per_token(const Eigen::Ref<const Eigen::MatrixXd>& tokens, int bits)
{
    QuantSpec spec;
    spec.bits = bits;
    spec.granularity = Granularity::per_output_channel;
    return fake_quant(tokens, spec);
}

} // namespace qroar
