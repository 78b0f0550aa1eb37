#pragma once

// Brute-force oracles and random fixtures shared by the unit and acceptance tests.

#include "qroar/diagnostics.hpp"
#include "qroar/plan.hpp"
#include "qroar/random.hpp"
#include "qroar/rope.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

namespace qroar::testing {

// Full sort, then linear interpolation between neighbouring order statistics.
inline double sort_quantile(std::vector<double> x, double level)
{
    std::sort(x.begin(), x.end());
    const double h = (static_cast<double>(x.size()) - 1.0) * level;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline std::vector<double> oracle_tir_weight(const Eigen::MatrixXd& w, const ActivationCache& cache, double eps)
{
    auto abs_dots = [&](const Eigen::MatrixXd& h, Eigen::Index row) {
        std::vector<double> out;
        for (Eigen::Index k = 0; k < h.rows(); ++k) {
            double acc = 0.0;
            for (Eigen::Index j = 0; j < h.cols(); ++j)
                acc += w(row, j) * h(k, j);
            out.push_back(std::abs(acc));
        }
        return out;
    };
    std::vector<double> ratios;
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        ratios.push_back(sort_quantile(abs_dots(cache.long_hidden, r), 1 - eps) /
                         sort_quantile(abs_dots(cache.short_hidden, r), 1 - eps));
    return ratios;
}

inline double inf_norm(std::complex<double> z)
{
    return std::max(std::abs(z.real()), std::abs(z.imag()));
}

inline std::vector<double> oracle_tir_activation(const ActivationCache& cache, const RopeConfig& cfg,
                                                 const Eigen::VectorXd& scales, double eps)
{
    const PairSamples& s = cache.long_pairs;
    std::vector<double> ratios;
    for (int i = 0; i < cfg.num_pairs(); ++i) {
        const double omega = std::pow(cfg.base, -2.0 * i / cfg.head_dim);
        std::vector<double> num, den;
        for (Eigen::Index k = 0; k < s.num_samples(); ++k) {
            const std::complex<double> u(s.pairs[i](k, 0), s.pairs[i](k, 1));
            const double m = s.positions[k];
            const double scaled = omega * (m / scales[i]);
            const double plain = omega * m;
            num.push_back(inf_norm(u * std::complex<double>(std::cos(scaled), std::sin(scaled))));
            den.push_back(inf_norm(u * std::complex<double>(std::cos(plain), std::sin(plain))));
        }
        ratios.push_back(sort_quantile(num, 1 - eps) / sort_quantile(den, 1 - eps));
    }
    return ratios;
}

// Gaussian hidden states and pair samples; the long side gets heavier tails on
// a few channels so ratios are non-trivial.
inline ActivationCache random_cache(Rng& rng, int d_model, int pairs, Eigen::Index n_short, Eigen::Index n_long,
                                    int train_window)
{
    ActivationCache cache;
    cache.short_hidden.resize(n_short, d_model);
    cache.long_hidden.resize(n_long, d_model);
    for (Eigen::Index k = 0; k < n_short; ++k)
        for (int j = 0; j < d_model; ++j)
            cache.short_hidden(k, j) = rng.normal();
    for (Eigen::Index k = 0; k < n_long; ++k)
        for (int j = 0; j < d_model; ++j)
            cache.long_hidden(k, j) = j % 5 == 0 ? rng.student_t(3) : rng.normal();

    auto fill = [&](PairSamples& side, Eigen::Index n, int max_pos) {
        side.positions.resize(n);
        side.pairs.assign(static_cast<std::size_t>(pairs), PairMatrix(n, 2));
        for (Eigen::Index k = 0; k < n; ++k)
            side.positions[k] = static_cast<double>(rng.uniform_int(0, max_pos));
        for (int i = 0; i < pairs; ++i)
            for (Eigen::Index k = 0; k < n; ++k) {
                side.pairs[i](k, 0) = rng.normal();
                side.pairs[i](k, 1) = rng.normal();
            }
    };
    fill(cache.short_pairs, n_short, train_window - 1);
    fill(cache.long_pairs, n_long, 8 * train_window - 1);
    cache.metadata = {train_window, 8 * train_window, "test"};
    return cache;
}

// Same samples on both sides.
inline ActivationCache identical_cache(Rng& rng, int d_model, int pairs, Eigen::Index n, int train_window)
{
    ActivationCache cache = random_cache(rng, d_model, pairs, n, n, train_window);
    cache.long_hidden = cache.short_hidden;
    cache.long_pairs = cache.short_pairs;
    return cache;
}

// Objective given as a plain function of the plan.
class FunctionEvaluator : public Evaluator {
public:
    explicit FunctionEvaluator(std::function<double(const ScalePlan&)> fn) : fn_(std::move(fn)) {}

    Evaluation evaluate(const ScalePlan& plan) override
    {
        ++calls;
        Evaluation e;
        e.objective = fn_(plan);
        return e;
    }
    std::string kind() const override { return "function"; }

    long long calls = 0;

private:
    std::function<double(const ScalePlan&)> fn_;
};

// Attention logit between query position m and key position n, head h, with
// full-precision weights: <R(m) Wq x_m, R(n) Wk x_n>.
inline double attention_logit(const Eigen::MatrixXd& wq, const Eigen::MatrixXd& wk, const RopeConfig& cfg,
                              const ScalingScheme& scheme, const Eigen::VectorXd& xm, const Eigen::VectorXd& xn,
                              double m, double n, int head, int kv_head)
{
    const int d = cfg.head_dim;
    const Eigen::VectorXd q = rotate_vector(wq.middleRows(head * d, d) * xm, cfg, scheme, m);
    const Eigen::VectorXd k = rotate_vector(wk.middleRows(kv_head * d, d) * xn, cfg, scheme, n);
    return q.dot(k);
}

} // namespace qroar::testing
