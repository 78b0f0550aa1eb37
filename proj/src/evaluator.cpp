#include "qroar/evaluator.hpp"

#include "qroar/error.hpp"
#include "qroar/random.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace qroar {

const LengthCache& ModelBundle::sequence(int length) const
{
    for (const LengthCache& cache : sequences)
        if (cache.length == length)
            return cache;
    throw ValidationError("bundle has no cached sequence of length " + std::to_string(length));
}

std::vector<int> ModelBundle::lengths() const
{
    std::vector<int> out;
    for (const LengthCache& cache : sequences)
        out.push_back(cache.length);
    return out;
}

void ModelBundle::validate() const
{
    rope.validate();
    scheme.validate(rope.num_pairs());
    if (num_heads < 1 || w_query.rows() != static_cast<Eigen::Index>(num_heads) * rope.head_dim)
        throw ValidationError("W_Q has " + std::to_string(w_query.rows()) + " rows, expected heads * head_dim = " +
                              std::to_string(num_heads * rope.head_dim));
    if (w_key.rows() == 0 || w_key.rows() % rope.head_dim != 0 || num_heads % kv_heads() != 0)
        throw ValidationError("W_K rows must be a multiple of head_dim dividing the query heads");
    if (w_key.cols() != w_query.cols())
        throw ValidationError("W_Q and W_K have different input widths");
    if (weight_quant)
        weight_quant->validate();
    if (activation_bits && (*activation_bits < 2 || *activation_bits > 8))
        throw ValidationError("activation bits must be in [2, 8]");
    for (const LengthCache& cache : sequences)
        if (cache.hidden.rows() != cache.length || cache.hidden.cols() != w_query.cols())
            throw ValidationError("cached sequence of length " + std::to_string(cache.length) + " has shape " +
                                  std::to_string(cache.hidden.rows()) + "x" + std::to_string(cache.hidden.cols()));
}

const char* to_string(ObjectiveKind kind)
{
    return kind == ObjectiveKind::logit_mse ? "logit_mse" : "external_ppl";
}

ObjectiveSpec ObjectiveSpec::length_weighted(const std::vector<int>& lengths)
{
    ObjectiveSpec spec;
    for (int length : lengths)
        spec.lengths.push_back({length, static_cast<double>(length)});
    return spec.normalized();
}

ObjectiveSpec ObjectiveSpec::normalized() const
{
    validate();
    ObjectiveSpec out = *this;
    double total = 0.0;
    for (const LengthWeight& lw : lengths)
        total += lw.weight;
    for (LengthWeight& lw : out.lengths)
        lw.weight /= total;
    return out;
}

void ObjectiveSpec::validate() const
{
    if (lengths.empty())
        throw ValidationError("objective needs at least one length");
    for (const LengthWeight& lw : lengths)
        if (lw.length < 1 || !(lw.weight > 0.0) || !std::isfinite(lw.weight))
            throw ValidationError("objective lengths and weights must be positive");
    if (samples_per_length < 1)
        throw ValidationError("samples_per_length must be positive");
    if (window < 1)
        throw ValidationError("window must be positive");
}

namespace {

std::vector<LogitMseEvaluator::Sample> sample_positions(int length, int count, int heads, Rng& rng)
{
    // Displacement strata: {0}, [1, 10), [10, 100), ... clipped to length - 1.
    std::vector<std::pair<int, int>> strata{{0, 0}};
    for (long long lo = 1; lo <= length - 1; lo *= 10)
        strata.emplace_back(static_cast<int>(lo), static_cast<int>(std::min<long long>(lo * 10 - 1, length - 1)));

    std::vector<LogitMseEvaluator::Sample> samples;
    samples.reserve(static_cast<std::size_t>(count));
    const auto n_strata = static_cast<int>(strata.size());
    for (int s = 0; s < n_strata; ++s) {
        const int quota = count / n_strata + (s < count % n_strata ? 1 : 0);
        const auto [lo, hi] = strata[static_cast<std::size_t>(s)];
        for (int k = 0; k < quota; ++k) {
            const auto displacement = static_cast<int>(rng.uniform_int(lo, hi));
            const auto query_pos = static_cast<int>(rng.uniform_int(displacement, length - 1));
            const auto head = static_cast<int>(rng.uniform_int(0, heads - 1));
            samples.push_back({query_pos, query_pos - displacement, head});
        }
    }
    return samples;
}

} // namespace

LogitMseEvaluator::LogitMseEvaluator(const ModelBundle& bundle, ObjectiveSpec spec)
    : bundle_(bundle), spec_(spec.normalized())
{
    bundle_.validate();
    const Eigen::VectorXd freqs = pair_frequencies(bundle_.rope);
    const int pairs = bundle_.rope.num_pairs();
    Rng rng(spec_.seed);

    for (const LengthWeight& lw : spec_.lengths) {
        PerLength data;
        data.length = lw.length;
        data.weight = lw.weight;
        data.cache = &bundle_.sequence(lw.length);
        data.samples = sample_positions(lw.length, spec_.samples_per_length, bundle_.num_heads, rng);
        data.cos_table.resize(lw.length, pairs);
        data.sin_table.resize(lw.length, pairs);
        for (int m = 0; m < lw.length; ++m) {
            for (int i = 0; i < pairs; ++i) {
                const double phase = freqs[i] * (bundle_.scheme.warp_position(m) / bundle_.scheme.scales[i]);
                data.cos_table(m, i) = std::cos(phase);
                data.sin_table(m, i) = std::sin(phase);
            }
        }
        data.reference = logits(data, bundle_.w_query, bundle_.w_key, false);
        const double mean = data.reference.mean();
        data.reference_variance = (data.reference.array() - mean).square().mean();
        if (!(data.reference_variance > 0.0))
            throw ValidationError("reference logits at length " + std::to_string(lw.length) + " have zero variance");
        per_length_.push_back(std::move(data));
    }
}

Eigen::VectorXd LogitMseEvaluator::logits(const PerLength& data, const Eigen::MatrixXd& w_query,
                                          const Eigen::MatrixXd& w_key, bool quantize_activations) const
{
    const Eigen::MatrixXd& raw = data.cache->hidden;
    const Eigen::MatrixXd hidden = quantize_activations ? fake_quant_per_token(raw, *bundle_.activation_bits) : raw;
    const Eigen::MatrixXd q = hidden * w_query.transpose();
    const Eigen::MatrixXd k = hidden * w_key.transpose();

    const int d = bundle_.rope.head_dim;
    const int pairs = bundle_.rope.num_pairs();
    const int group = bundle_.num_heads / bundle_.kv_heads();
    Eigen::VectorXd out(static_cast<Eigen::Index>(data.samples.size()));
    for (std::size_t s = 0; s < data.samples.size(); ++s) {
        const Sample& sample = data.samples[s];
        const Eigen::Index q_off = static_cast<Eigen::Index>(sample.head) * d;
        const Eigen::Index k_off = static_cast<Eigen::Index>(sample.head / group) * d;
        double logit = 0.0;
        for (int i = 0; i < pairs; ++i) {
            const auto [rx, ry] = pair_rows(bundle_.rope.pairing, d, i);
            const double cq = data.cos_table(sample.query_pos, i), sq = data.sin_table(sample.query_pos, i);
            const double ck = data.cos_table(sample.key_pos, i), sk = data.sin_table(sample.key_pos, i);
            const double qx = q(sample.query_pos, q_off + rx), qy = q(sample.query_pos, q_off + ry);
            const double kx = k(sample.key_pos, k_off + rx), ky = k(sample.key_pos, k_off + ry);
            logit += (cq * qx - sq * qy) * (ck * kx - sk * ky) + (sq * qx + cq * qy) * (sk * kx + ck * ky);
        }
        out[static_cast<Eigen::Index>(s)] = logit;
    }
    return out;
}

Evaluation LogitMseEvaluator::evaluate(const ScalePlan& plan)
{
    return evaluate_const(plan);
}

Evaluation LogitMseEvaluator::evaluate_const(const ScalePlan& plan) const
{
    if (plan.head_dim() != bundle_.rope.head_dim)
        throw ValidationError("plan head_dim " + std::to_string(plan.head_dim()) + " does not match model head_dim " +
                              std::to_string(bundle_.rope.head_dim));
    auto [w_query, w_key] = apply_scale_plan(bundle_.w_query, bundle_.w_key, plan);
    if (bundle_.weight_quant) {
        w_query = fake_quant(w_query, *bundle_.weight_quant);
        w_key = fake_quant(w_key, *bundle_.weight_quant);
    }

    Evaluation result;
    for (const PerLength& data : per_length_) {
        const Eigen::VectorXd candidate = logits(data, w_query, w_key, bundle_.activation_bits.has_value());
        const double loss = (candidate - data.reference).squaredNorm() /
                            static_cast<double>(candidate.size()) / data.reference_variance;
        result.per_length.emplace_back(data.length, loss);
        result.objective += data.weight * loss;
    }
    return result;
}

double logit_mse(const ModelBundle& bundle, const ScalePlan& plan, const ObjectiveSpec& spec)
{
    return LogitMseEvaluator(bundle, spec).evaluate_const(plan).objective;
}

} // namespace qroar
