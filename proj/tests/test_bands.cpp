#include "qroar/bands.hpp"
#include "qroar/error.hpp"
#include "qroar/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace qroar;

namespace {

Eigen::VectorXd geometric(int pairs, double ratio = 0.5)
{
    Eigen::VectorXd w(pairs);
    for (int i = 0; i < pairs; ++i)
        w[i] = std::pow(ratio, i);
    return w;
}

std::vector<BandRange> ranges(std::initializer_list<std::pair<int, int>> list)
{
    std::vector<BandRange> out;
    for (auto [b, e] : list)
        out.push_back({b, e});
    return out;
}

} // namespace

TEST(PartitionLogFreq, Examples)
{
    EXPECT_EQ(partition_log_freq(geometric(8), 4).bands, ranges({{0, 2}, {2, 4}, {4, 6}, {6, 8}}));
    EXPECT_EQ(partition_log_freq(geometric(8), 3).bands, ranges({{0, 2}, {2, 5}, {5, 8}}));
    const BandPartition p = partition_log_freq(geometric(64, 0.9), 8);
    ASSERT_EQ(p.num_bands(), 8);
    for (int b = 0; b < 8; ++b)
        EXPECT_EQ(p.bands[b], (BandRange{8 * b, 8 * b + 8}));
}

TEST(PartitionLogFreq, Extremes)
{
    const Eigen::VectorXd w = geometric(10);
    const BandPartition one = partition_log_freq(w, 1);
    EXPECT_EQ(one.bands, ranges({{0, 10}}));
    const BandPartition singles = partition_log_freq(w, 10);
    for (int b = 0; b < 10; ++b)
        EXPECT_EQ(singles.bands[b], (BandRange{b, b + 1}));
}

TEST(PartitionLogFreq, Errors)
{
    EXPECT_THROW(partition_log_freq(geometric(4), 0), ValidationError);
    EXPECT_THROW(partition_log_freq(geometric(4), 5), ValidationError);
    EXPECT_THROW(partition_log_freq(Eigen::Vector3d(1.0, 1.0, 0.5), 1), ValidationError);
}

TEST(PartitionLogFreq, DisjointCoverProperty)
{
    for (int pairs = 1; pairs <= 80; ++pairs) {
        for (int bands = 1; bands <= pairs; ++bands) {
            const BandPartition p = partition_log_freq(geometric(pairs), bands);
            std::vector<int> hits(pairs, 0);
            for (const BandRange& r : p.bands)
                for (int i = r.begin; i < r.end; ++i)
                    ++hits[i];
            for (int i = 0; i < pairs; ++i)
                ASSERT_EQ(hits[i], 1) << "P=" << pairs << " B=" << bands;
            EXPECT_NO_THROW(p.validate());
            for (int i = 0; i < pairs; ++i) {
                const int b = p.band_of_pair(i);
                EXPECT_GE(i, p.bands[b].begin);
                EXPECT_LT(i, p.bands[b].end);
            }
        }
    }
}

TEST(BandPartition, ValidateRejectsGaps)
{
    BandPartition p;
    p.freqs = geometric(4);
    p.bands = ranges({{0, 1}, {2, 4}});
    EXPECT_THROW(p.validate(), ValidationError);
    p.bands = ranges({{0, 2}, {2, 3}});
    EXPECT_THROW(p.validate(), ValidationError);
    p.bands.clear();
    EXPECT_THROW(p.validate(), ValidationError);
}

TEST(BandFreqStats, Examples)
{
    const BandPartition single = partition_log_freq(Eigen::VectorXd::Constant(1, 1.0), 1);
    const BandFreqStats s = band_freq_stats(single, 0);
    EXPECT_EQ(s.omega_med, 1.0);
    EXPECT_EQ(s.omega_ratio, 1.0);

    const BandPartition two = partition_log_freq(Eigen::Vector2d(1.0, 0.01), 1);
    EXPECT_DOUBLE_EQ(band_freq_stats(two, 0).omega_med, 0.1);

    const BandPartition four = partition_log_freq(Eigen::Vector4d(1, 0.1, 0.01, 0.001), 2);
    const BandFreqStats f = band_freq_stats(four, 0);
    const double med = std::sqrt(1.0 * 0.1);
    EXPECT_NEAR(f.omega_med, med, 1e-15);
    EXPECT_NEAR(f.omega_ratio, med / 0.001, 1e-12);
    EXPECT_NEAR(f.omega_med, 0.3162, 1e-4);
    EXPECT_NEAR(f.omega_ratio, 316.2, 0.1);
    EXPECT_THROW(band_freq_stats(four, 2), ValidationError);
}

TEST(BandFreqStats, OddBandUsesMiddleValue)
{
    const BandPartition p = partition_log_freq(Eigen::Vector3d(1, 0.5, 0.01), 1);
    EXPECT_EQ(band_freq_stats(p, 0).omega_med, 0.5);
    EXPECT_EQ(band_freq_stats(p, 0).omega_ratio, 50.0);
}

TEST(BandRows, Examples)
{
    const BandPartition p = partition_log_freq(Eigen::Vector2d(1.0, 0.01), 2);
    EXPECT_EQ(band_rows(p, 0, Pairing::half_split, 4), (std::vector<Eigen::Index>{0, 2}));
    EXPECT_EQ(band_rows(p, 0, Pairing::interleaved, 4), (std::vector<Eigen::Index>{0, 1}));
    EXPECT_EQ(band_rows(p, 0, Pairing::half_split, 4, 2), (std::vector<Eigen::Index>{0, 2, 4, 6}));
    EXPECT_THROW(band_rows(p, 0, Pairing::half_split, 6), ValidationError);
    EXPECT_THROW(band_rows(p, 2, Pairing::half_split, 4), ValidationError);
}

TEST(BandRows, CoverEveryRowOnce)
{
    for (Pairing pairing : {Pairing::half_split, Pairing::interleaved}) {
        for (int pairs : {1, 3, 8, 13, 32}) {
            for (int heads : {1, 3}) {
                for (int bands = 1; bands <= pairs; bands += 2) {
                    const BandPartition p = partition_log_freq(geometric(pairs), bands);
                    std::vector<int> hits(2 * pairs * heads, 0);
                    for (int b = 0; b < bands; ++b)
                        for (Eigen::Index r : band_rows(p, b, pairing, 2 * pairs, heads))
                            ++hits.at(static_cast<std::size_t>(r));
                    for (int h : hits)
                        ASSERT_EQ(h, 1);
                }
            }
        }
    }
}
