#include "qroar/error.hpp"
#include "qroar/quant.hpp"
#include "qroar/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qroar;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double spread = 1.0)
{
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r)
            m(r, c) = spread * rng.student_t(4);
    return m;
}

QuantSpec spec_of(int bits, Granularity g, int group = 128, bool symmetric = true)
{
    return QuantSpec{bits, g, group, symmetric};
}

Eigen::MatrixXd row(std::initializer_list<double> values)
{
    Eigen::MatrixXd m(1, static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values)
        m(0, i++) = v;
    return m;
}

const Granularity all_granularities[] = {Granularity::per_tensor, Granularity::per_output_channel,
                                         Granularity::per_group};

} // namespace

TEST(QuantizeRtn, WorkedExample)
{
    const QuantizedTensor q = quantize_rtn(row({0.7, -0.35, 0.1}), spec_of(4, Granularity::per_tensor));
    ASSERT_EQ(q.scales.size(), 1);
    EXPECT_DOUBLE_EQ(q.scales(0, 0), 0.1);
    EXPECT_EQ(q.codes(0, 0), 7);
    EXPECT_EQ(q.codes(0, 1), -4);
    EXPECT_EQ(q.codes(0, 2), 1);

    // oracle: every code minimizes |x - c*scale|, the half tie going to the even code
    const double scale = q.scales(0, 0);
    const double xs[] = {0.7, -0.35, 0.1};
    for (int i = 0; i < 3; ++i) {
        double best = INFINITY;
        int best_code = 0;
        for (int c = -7; c <= 7; ++c) {
            const double err = std::abs(xs[i] - c * scale);
            if (err < best - 1e-12 || (std::abs(err - best) <= 1e-12 && c % 2 == 0)) {
                best = err;
                best_code = c;
            }
        }
        EXPECT_EQ(q.codes(0, i), best_code) << "element " << i;
    }
}

TEST(QuantizeRtn, AllZeroGroup)
{
    const QuantizedTensor q = quantize_rtn(row({0.0, 0.0, 0.0}), spec_of(4, Granularity::per_tensor));
    EXPECT_EQ(q.scales(0, 0), 1.0);
    EXPECT_TRUE((q.codes.array() == 0).all());
    EXPECT_TRUE((dequantize(q).array() == 0.0).all());
}

TEST(QuantizeRtn, RepresentableMax)
{
    const QuantizedTensor q = quantize_rtn(row({1.4}), spec_of(4, Granularity::per_tensor));
    EXPECT_DOUBLE_EQ(q.scales(0, 0), 0.2);
    EXPECT_EQ(q.codes(0, 0), 7);
    EXPECT_EQ(dequantize(q)(0, 0), 1.4);
}

TEST(Dequantize, Examples)
{
    QuantizedTensor q;
    q.spec = spec_of(4, Granularity::per_tensor);
    q.codes = Eigen::MatrixXi(1, 3);
    q.codes << 7, -4, 1;
    q.scales = Eigen::MatrixXd::Constant(1, 1, 0.1);
    q.zero_points = Eigen::MatrixXi::Zero(1, 1);
    const Eigen::MatrixXd x = dequantize(q);
    EXPECT_DOUBLE_EQ(x(0, 0), 0.7);
    EXPECT_DOUBLE_EQ(x(0, 1), -0.4);
    EXPECT_DOUBLE_EQ(x(0, 2), 0.1);
}

TEST(FakeQuant, Examples)
{
    const Eigen::MatrixXd y = fake_quant(row({0.7, -0.35, 0.1}), spec_of(4, Granularity::per_tensor));
    EXPECT_DOUBLE_EQ(y(0, 0), 0.7);
    EXPECT_DOUBLE_EQ(y(0, 1), -0.4);
    EXPECT_DOUBLE_EQ(y(0, 2), 0.1);
}

TEST(QuantSpec, Validation)
{
    EXPECT_THROW(quantize_rtn(row({1.0}), spec_of(1, Granularity::per_tensor)), ValidationError);
    EXPECT_THROW(quantize_rtn(row({1.0}), spec_of(9, Granularity::per_tensor)), ValidationError);
    EXPECT_THROW(quantize_rtn(row({1.0}), spec_of(4, Granularity::per_group, 0)), ValidationError);
    EXPECT_THROW(quantize_rtn(row({NAN}), spec_of(4, Granularity::per_tensor)), ValidationError);
    EXPECT_THROW(granularity_from_string("per_block"), ValidationError);
    EXPECT_EQ(granularity_from_string("per_group"), Granularity::per_group);
}

TEST(QuantizeRtn, GroupLayout)
{
    Rng rng(1);
    const Eigen::MatrixXd w = random_matrix(rng, 5, 10);
    EXPECT_EQ(quantize_rtn(w, spec_of(4, Granularity::per_tensor)).scales.size(), 1);
    const QuantizedTensor rows = quantize_rtn(w, spec_of(4, Granularity::per_output_channel));
    EXPECT_EQ(rows.scales.rows(), 5);
    EXPECT_EQ(rows.scales.cols(), 1);
    for (Eigen::Index r = 0; r < 5; ++r)
        EXPECT_DOUBLE_EQ(rows.scales(r, 0), w.row(r).cwiseAbs().maxCoeff() / 7);

    // 10 columns in groups of 4: a tail group of 2
    const QuantizedTensor groups = quantize_rtn(w, spec_of(4, Granularity::per_group, 4));
    EXPECT_EQ(groups.scales.rows(), 5);
    EXPECT_EQ(groups.scales.cols(), 3);
    EXPECT_DOUBLE_EQ(groups.scales(2, 2), w.block(2, 8, 1, 2).cwiseAbs().maxCoeff() / 7);
    EXPECT_EQ(groups.group_of(2, 9), std::make_pair(Eigen::Index{2}, Eigen::Index{2}));
}

TEST(QuantizeRtn, CodesWithinRange)
{
    Rng rng(2);
    for (int bits = 2; bits <= 8; ++bits) {
        const QuantizedTensor q = quantize_rtn(random_matrix(rng, 16, 40), spec_of(bits, Granularity::per_group, 16));
        const int limit = (1 << (bits - 1)) - 1;
        EXPECT_LE(q.codes.maxCoeff(), limit);
        EXPECT_GE(q.codes.minCoeff(), -limit);
        EXPECT_TRUE((q.scales.array() > 0).all());
    }
}

TEST(QuantizeRtn, ErrorBound)
{
    Rng rng(3);
    for (int t = 0; t < 60; ++t) {
        const int bits = static_cast<int>(rng.uniform_int(2, 8));
        const Granularity g = all_granularities[t % 3];
        const Eigen::MatrixXd w = random_matrix(rng, 8, 24, std::exp(4 * rng.normal()));
        const QuantizedTensor q = quantize_rtn(w, spec_of(bits, g, 8));
        const Eigen::MatrixXd y = dequantize(q);
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                EXPECT_LE(std::abs(w(r, c) - y(r, c)), q.scale_at(r, c) / 2 + 1e-12);
    }
}

TEST(QuantizeRtn, Idempotent)
{
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        const int bits = static_cast<int>(rng.uniform_int(2, 8));
        const QuantSpec spec = spec_of(bits, all_granularities[t % 3], 8);
        const Eigen::MatrixXd once = fake_quant(random_matrix(rng, 6, 20, std::exp(3 * rng.normal())), spec);
        const Eigen::MatrixXd twice = fake_quant(once, spec);
        EXPECT_EQ(once, twice);
    }
}

TEST(QuantizeRtn, ErrorMonotoneInBits)
{
    // Grids for b and b-1 bits are not nested beyond b=3, so this holds for
    // realistic tensors rather than for every input.
    Rng rng(5);
    for (int t = 0; t < 30; ++t) {
        const Granularity g = all_granularities[t % 3];
        Eigen::MatrixXd w(16, 64);
        for (Eigen::Index j = 0; j < w.size(); ++j)
            w.data()[j] = rng.normal();
        double previous = INFINITY;
        for (int bits = 2; bits <= 8; ++bits) {
            const double err = (w - fake_quant(w, spec_of(bits, g, 32))).cwiseAbs().maxCoeff();
            EXPECT_LE(err, previous) << "bits " << bits;
            previous = err;
        }
    }
    // 2 -> 3 bits is nested, so it holds for any input
    for (int t = 0; t < 200; ++t) {
        const Eigen::MatrixXd w = random_matrix(rng, 3, 5);
        const QuantSpec two = spec_of(2, Granularity::per_tensor);
        const QuantSpec three = spec_of(3, Granularity::per_tensor);
        EXPECT_LE((w - fake_quant(w, three)).cwiseAbs().maxCoeff(), (w - fake_quant(w, two)).cwiseAbs().maxCoeff());
    }
}

TEST(QuantizeRtn, ScaleEquivariance)
{
    Rng rng(6);
    const QuantSpec spec = spec_of(4, Granularity::per_tensor);
    for (int t = 0; t < 200; ++t) {
        const Eigen::MatrixXd w = random_matrix(rng, 8, 16);
        const double c = std::exp(2 * rng.normal());
        const QuantizedTensor a = quantize_rtn(w, spec);
        const QuantizedTensor b = quantize_rtn(c * w, spec);
        EXPECT_EQ(a.codes, b.codes);
        EXPECT_NEAR(b.scales(0, 0), c * a.scales(0, 0), 1e-15 * c * a.scales(0, 0));
    }
    // power-of-two factors are exact even on the half-way tie
    const Eigen::MatrixXd tie = row({0.7, -0.35, 0.1});
    for (double c : {0.25, 2.0, 1024.0})
        EXPECT_EQ(quantize_rtn(c * tie, spec).codes, quantize_rtn(tie, spec).codes);
}

TEST(QuantizeRtn, Asymmetric)
{
    const QuantSpec spec = spec_of(4, Granularity::per_tensor, 128, false);
    const Eigen::MatrixXd w = row({0.0, 1.5, 3.0});
    const QuantizedTensor q = quantize_rtn(w, spec);
    EXPECT_DOUBLE_EQ(q.scales(0, 0), 0.2);
    EXPECT_EQ(q.zero_points(0, 0), 0);
    EXPECT_EQ(q.codes(0, 2), 15);
    Rng rng(7);
    const Eigen::MatrixXd r = random_matrix(rng, 4, 12);
    const QuantizedTensor qr = quantize_rtn(r, spec);
    EXPECT_GE(qr.codes.minCoeff(), 0);
    EXPECT_LE(qr.codes.maxCoeff(), 15);
    EXPECT_LE((r - dequantize(qr)).cwiseAbs().maxCoeff(), qr.scales(0, 0) / 2 + qr.scales(0, 0) * 1e-9);
}

TEST(FakeQuantPerToken, OneScalePerRow)
{
    Eigen::MatrixXd tokens(2, 3);
    tokens << 0.7, -0.35, 0.1, 14.0, 7.0, -3.5;
    const Eigen::MatrixXd y = fake_quant_per_token(tokens, 4);
    EXPECT_DOUBLE_EQ(y(0, 1), -0.4);
    EXPECT_DOUBLE_EQ(y(1, 0), 14.0);
    EXPECT_DOUBLE_EQ(y(1, 1), 8.0);
    EXPECT_DOUBLE_EQ(y(1, 2), -4.0);
}
