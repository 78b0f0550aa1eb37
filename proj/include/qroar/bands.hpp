#pragma once

#include "qroar/rope.hpp"

#include <Eigen/Dense>

#include <vector>

namespace qroar {

// Half-open range of pair indices [begin, end).
struct BandRange {
    int begin = 0;
    int end = 0;

    int size() const { return end - begin; }
    bool operator==(const BandRange&) const = default;
};

// Contiguous, disjoint, ascending cover of [0, P). Band 0 holds the highest
// frequencies.
struct BandPartition {
    std::vector<BandRange> bands;
    Eigen::VectorXd freqs;

    int num_bands() const { return static_cast<int>(bands.size()); }
    int num_pairs() const { return static_cast<int>(freqs.size()); }
    int band_of_pair(int pair) const;
    void validate() const;
};

struct BandFreqStats {
    double omega_med = 1.0;
    double omega_min = 1.0;
    double omega_ratio = 1.0;
};

// Band b covers [floor(b P / B), floor((b + 1) P / B)). RoPE frequencies are
// geometric, so equal index counts are equal log-frequency widths; a
// non-geometric frequency law would need real log-edge binning.
BandPartition partition_log_freq(const Eigen::Ref<const Eigen::VectorXd>& freqs, int num_bands);

// Median uses the geometric mean of the two middle values for even-size bands.
BandFreqStats band_freq_stats(const BandPartition& partition, int band);

// Projection rows touched by band b for a stacked (num_heads * head_dim) x
// d_model matrix, in ascending order.
std::vector<Eigen::Index> band_rows(const BandPartition& partition, int band, Pairing pairing, int head_dim,
                                    int num_heads = 1);

} // namespace qroar
