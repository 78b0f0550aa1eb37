#include "qroar/bands.hpp"

#include "qroar/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace qroar {

int BandPartition::band_of_pair(int pair) const
{
    for (int b = 0; b < num_bands(); ++b)
        if (pair >= bands[b].begin && pair < bands[b].end)
            return b;
    throw ValidationError("pair " + std::to_string(pair) + " not covered by partition");
}

void BandPartition::validate() const
{
    if (bands.empty())
        throw ValidationError("band partition is empty");
    int next = 0;
    for (const BandRange& band : bands) {
        if (band.begin != next || band.end <= band.begin)
            throw ValidationError("band ranges must be contiguous, non-empty and ascending");
        next = band.end;
    }
    if (next != num_pairs())
        throw ValidationError("band ranges cover " + std::to_string(next) + " pairs, expected " +
                              std::to_string(num_pairs()));
}

BandPartition partition_log_freq(const Eigen::Ref<const Eigen::VectorXd>& freqs, int num_bands)
{
    const auto pairs = static_cast<int>(freqs.size());
    if (num_bands < 1 || num_bands > pairs)
        throw ValidationError("band count " + std::to_string(num_bands) + " must be in [1, " +
                              std::to_string(pairs) + "]");
    for (int i = 1; i < pairs; ++i)
        if (!(freqs[i] < freqs[i - 1]))
            throw ValidationError("frequencies must be strictly decreasing");

    BandPartition partition;
    partition.freqs = freqs;
    partition.bands.reserve(num_bands);
    for (int b = 0; b < num_bands; ++b) {
        const auto begin = static_cast<int>(static_cast<long long>(b) * pairs / num_bands);
        const auto end = static_cast<int>(static_cast<long long>(b + 1) * pairs / num_bands);
        partition.bands.push_back({begin, end});
    }
    return partition;
}

BandFreqStats band_freq_stats(const BandPartition& partition, int band)
{
    if (band < 0 || band >= partition.num_bands())
        throw ValidationError("band index " + std::to_string(band) + " out of range");
    const BandRange range = partition.bands[band];
    std::vector<double> values(partition.freqs.data() + range.begin, partition.freqs.data() + range.end);
    std::sort(values.begin(), values.end());

    BandFreqStats stats;
    const std::size_t n = values.size();
    stats.omega_med = n % 2 == 1 ? values[n / 2] : std::sqrt(values[n / 2 - 1] * values[n / 2]);
    stats.omega_min = partition.freqs.minCoeff();
    stats.omega_ratio = stats.omega_med / stats.omega_min;
    return stats;
}

std::vector<Eigen::Index> band_rows(const BandPartition& partition, int band, Pairing pairing, int head_dim,
                                    int num_heads)
{
    if (band < 0 || band >= partition.num_bands())
        throw ValidationError("band index " + std::to_string(band) + " out of range");
    if (head_dim != 2 * partition.num_pairs())
        throw ValidationError("head_dim " + std::to_string(head_dim) + " inconsistent with " +
                              std::to_string(partition.num_pairs()) + " pairs");
    if (num_heads < 1)
        throw ValidationError("num_heads must be positive");

    std::vector<Eigen::Index> rows;
    const BandRange range = partition.bands[band];
    rows.reserve(static_cast<std::size_t>(2 * range.size() * num_heads));
    for (int head = 0; head < num_heads; ++head) {
        const Eigen::Index offset = static_cast<Eigen::Index>(head) * head_dim;
        for (int i = range.begin; i < range.end; ++i) {
            const auto [rx, ry] = pair_rows(pairing, head_dim, i);
            rows.push_back(offset + rx);
            rows.push_back(offset + ry);
        }
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

} // namespace qroar
