#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace qroar {

// Platform-stable random stream. std::mt19937_64 output is fixed by the
// standard, the library distributions are not, so the transforms live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi)
    {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Student-t with an integer number of degrees of freedom.
    double student_t(int dof)
    {
        const double z = normal();
        double chi2 = 0.0;
        for (int k = 0; k < dof; ++k) {
            const double g = normal();
            chi2 += g * g;
        }
        return z / std::sqrt(chi2 / dof);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace qroar
