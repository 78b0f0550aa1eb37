#pragma once

#include "qroar/diagnostics.hpp"
#include "qroar/evaluator.hpp"
#include "qroar/plan.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace qroar {

// One tensor of the container. F32, F16 and BF16 payloads are held widened to
// f32 in `values`; any other dtype is carried through as opaque bytes.
struct Tensor {
    std::string dtype = "F32";
    std::vector<std::int64_t> shape;
    std::vector<float> values;
    std::vector<std::uint8_t> raw;

    bool numeric() const;
    std::int64_t element_count() const;

    // Row-major 2-D view; 1-D tensors become a single row.
    Eigen::MatrixXd matrix() const;
    static Tensor from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m, const std::string& dtype = "F32");
    static Tensor from_vector(const Eigen::Ref<const Eigen::VectorXd>& v, const std::string& dtype = "F32");
};

// 8-byte little-endian header length, UTF-8 JSON header mapping names to
// {dtype, shape, data_offsets}, optional "__metadata__" string map, then the
// raw little-endian payload.
struct TensorFile {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;
};

TensorFile read_tensors(const std::filesystem::path& path);
TensorFile parse_tensors(const std::vector<std::uint8_t>& bytes);
void write_tensors(const std::filesystem::path& path, const TensorFile& file);
std::vector<std::uint8_t> encode_tensors(const TensorFile& file);

inline constexpr int plan_schema_version = 1;

nlohmann::json plan_to_json(const ScalePlan& plan);
// Rejects unknown fields, unknown modes and version mismatches.
ScalePlan plan_from_json(const nlohmann::json& j);
void write_plan(const ScalePlan& plan, const std::filesystem::path& path);
ScalePlan read_plan(const std::filesystem::path& path);

nlohmann::json report_to_json(const DiagnosticsReport& report);
DiagnosticsReport report_from_json(const nlohmann::json& j);
void write_report(const DiagnosticsReport& report, const std::filesystem::path& path);
DiagnosticsReport read_report(const std::filesystem::path& path);

// Bundle directory layout: bundle.json (config), model.safetensors (projection
// weights under checkpoint-style names), caches.safetensors (activations).
inline constexpr const char* bundle_query_name = "layers.0.self_attn.q_proj.weight";
inline constexpr const char* bundle_key_name = "layers.0.self_attn.k_proj.weight";

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir, const nlohmann::json& extra = {});
ModelBundle load_bundle(const std::filesystem::path& dir);

struct PatchOptions {
    std::vector<std::string> query_patterns{"*q_proj.weight", "*attention.wq.weight", "*attn.wq.weight"};
    std::vector<std::string> key_patterns{"*k_proj.weight", "*attention.wk.weight", "*attn.wk.weight"};
    bool embed_plan = false; // store the plan JSON under __metadata__["qroar_scale_plan"]
};

struct PatchedTensor {
    std::string name;
    bool key_projection = false;
    std::vector<double> band_factors; // factor applied to each band's rows
};

// Rescales the matched query/key projections of `input` and writes the result
// to `output`; everything else is copied unchanged. `input` is never modified.
std::vector<PatchedTensor> patch_checkpoint(const std::filesystem::path& input, const std::filesystem::path& output,
                                            const ScalePlan& plan, const PatchOptions& options = {});
std::vector<PatchedTensor> patch_tensors(TensorFile& file, const ScalePlan& plan, const PatchOptions& options = {});

} // namespace qroar
