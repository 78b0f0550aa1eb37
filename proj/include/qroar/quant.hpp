#pragma once

#include <Eigen/Dense>

#include <string>

namespace qroar {

enum class Granularity { per_tensor, per_output_channel, per_group };

const char* to_string(Granularity granularity);
Granularity granularity_from_string(const std::string& name);

// Round-to-nearest uniform quantizer settings. Matrices are laid out with one
// output channel per row; per_group splits each row into runs of group_size
// columns, and a shorter tail group is allowed.
struct QuantSpec {
    int bits = 4;
    Granularity granularity = Granularity::per_tensor;
    int group_size = 128;
    bool symmetric = true;

    void validate() const;
    // Largest positive symmetric code, 2^(bits-1) - 1.
    int max_code() const { return (1 << (bits - 1)) - 1; }
};

struct QuantizedTensor {
    Eigen::MatrixXi codes;       // same shape as the source
    Eigen::MatrixXd scales;      // (groups along rows) x (groups along columns)
    Eigen::MatrixXi zero_points; // all zero in symmetric mode
    QuantSpec spec;

    Eigen::Index group_rows() const;
    Eigen::Index group_cols() const;
    // Group index of element (r, c).
    std::pair<Eigen::Index, Eigen::Index> group_of(Eigen::Index r, Eigen::Index c) const;
    double scale_at(Eigen::Index r, Eigen::Index c) const;
};

QuantizedTensor quantize_rtn(const Eigen::Ref<const Eigen::MatrixXd>& weights, const QuantSpec& spec);

Eigen::MatrixXd dequantize(const QuantizedTensor& q);

inline Eigen::MatrixXd fake_quant(const Eigen::Ref<const Eigen::MatrixXd>& x, const QuantSpec& spec)
{
    return dequantize(quantize_rtn(x, spec));
}

// Dynamic per-token activation fake-quant: every row of `tokens` is one token
// and gets its own symmetric per-tensor scale.
Eigen::MatrixXd fake_quant_per_token(const Eigen::Ref<const Eigen::MatrixXd>& tokens, int bits);

} // namespace qroar
