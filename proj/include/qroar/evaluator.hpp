#pragma once

#include "qroar/diagnostics.hpp"
#include "qroar/plan.hpp"
#include "qroar/quant.hpp"
#include "qroar/search.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qroar {

// Hidden states of one evaluation sequence; row m is position m.
struct LengthCache {
    int length = 0;
    Eigen::MatrixXd hidden;
};

// The query/key side of one attention layer plus everything needed to score a
// scale plan against it.
struct ModelBundle {
    Eigen::MatrixXd w_query; // (heads * head_dim) x d_model
    Eigen::MatrixXd w_key;   // (kv_heads * head_dim) x d_model
    int num_heads = 1;
    RopeConfig rope;
    ScalingScheme scheme;
    std::optional<QuantSpec> weight_quant; // nullopt: full precision
    std::optional<int> activation_bits;    // per-token fake quant of hidden states
    std::vector<LengthCache> sequences;
    ActivationCache calibration;

    int d_model() const { return static_cast<int>(w_query.cols()); }
    int kv_heads() const { return static_cast<int>(w_key.rows() / rope.head_dim); }
    const LengthCache& sequence(int length) const;
    std::vector<int> lengths() const;
    void validate() const;
};

enum class ObjectiveKind { logit_mse, external_ppl };

const char* to_string(ObjectiveKind kind);

struct ObjectiveSpec {
    std::vector<LengthWeight> lengths;
    ObjectiveKind kind = ObjectiveKind::logit_mse;
    int samples_per_length = 4096;
    int window = 256;
    std::uint64_t seed = 0;

    // Lengths with w_L proportional to L, normalized.
    static ObjectiveSpec length_weighted(const std::vector<int>& lengths);
    // Copy with weights rescaled to sum to 1.
    ObjectiveSpec normalized() const;
    void validate() const;
};

// Built-in surrogate objective: for each length, the mean squared error of
// attention logits between the full-precision model and the plan-scaled,
// quantized model over sampled (m, n) position pairs, divided by the variance
// of the reference logits, then combined with the length weights.
//
// Position pairs are drawn once at construction, stratified by displacement
// decade ({0}, [1, 10), [10, 100), ...), with the head chosen uniformly.
// Evaluation is const and safe to share across threads.
class LogitMseEvaluator : public Evaluator {
public:
    LogitMseEvaluator(const ModelBundle& bundle, ObjectiveSpec spec);

    Evaluation evaluate(const ScalePlan& plan) override;
    Evaluation evaluate_const(const ScalePlan& plan) const;
    std::string kind() const override { return "logit_mse"; }

    struct Sample {
        int query_pos = 0;
        int key_pos = 0;
        int head = 0;
    };

    const std::vector<Sample>& samples(std::size_t length_index) const { return per_length_[length_index].samples; }
    const Eigen::VectorXd& reference_logits(std::size_t length_index) const
    {
        return per_length_[length_index].reference;
    }

private:
    struct PerLength {
        int length = 0;
        double weight = 0.0;
        const LengthCache* cache = nullptr;
        std::vector<Sample> samples;
        Eigen::MatrixXd cos_table; // length x P
        Eigen::MatrixXd sin_table;
        Eigen::VectorXd reference;
        double reference_variance = 0.0;
    };

    Eigen::VectorXd logits(const PerLength& data, const Eigen::MatrixXd& w_query, const Eigen::MatrixXd& w_key,
                           bool quantize_activations) const;

    const ModelBundle& bundle_;
    ObjectiveSpec spec_;
    std::vector<PerLength> per_length_;
};

double logit_mse(const ModelBundle& bundle, const ScalePlan& plan, const ObjectiveSpec& spec);

enum class SchemeKind { none, linear, yarn };

const char* to_string(SchemeKind kind);
SchemeKind scheme_kind_from_string(const std::string& name);

struct SynthDims {
    int d_model = 64;
    int num_heads = 4;
    int head_dim = 16;
    double base = 10000.0;
    Pairing pairing = Pairing::half_split;
    int train_window = 256;
    double pi_factor = 8.0;
    SchemeKind scheme = SchemeKind::yarn;
    std::vector<int> lengths{128, 512, 2048};
    int calibration_samples = 16384;
    std::optional<QuantSpec> weight_quant = QuantSpec{4, Granularity::per_tensor, 128, true};
    std::optional<int> activation_bits;

    void validate() const;
};

// Heavy-tailed activation channels whose magnitude grows past the train
// window, with the targeted bands' projection rows reading them strongly.
// No target bands means no outliers at all.
struct OutlierSpec {
    std::vector<int> target_bands;
    int partition_bands = 8; // partition used to resolve target_bands
    int channels = 2;        // hidden channels carrying outliers
    double amplitude = 2.0;  // base scale of the heavy-tailed channel values
    int tail_dof = 3;        // Student-t degrees of freedom
    double growth = 0.5;     // extra magnitude per train window beyond L_0
    double weight_gain = 6.0;
    double leak = 0.1; // non-target rows' weight on outlier channels, relative
    bool on_query = true;
    bool on_key = false;

    bool empty() const { return target_bands.empty(); }
};

ModelBundle synth_model(std::uint64_t seed, const SynthDims& dims = {}, const OutlierSpec& outliers = {});

} // namespace qroar
