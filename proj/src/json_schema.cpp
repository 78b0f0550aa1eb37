#include "qroar/error.hpp"
#include "qroar/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace qroar {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> required, std::initializer_list<const char*> optional,
                const std::string& where)
{
    if (!j.is_object())
        throw ValidationError(where + ": expected a JSON object");
    std::set<std::string> allowed;
    for (const char* key : required) {
        if (!j.contains(key))
            throw ValidationError(where + ": missing field '" + key + "'");
        allowed.insert(key);
    }
    for (const char* key : optional)
        allowed.insert(key);
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ValidationError(where + ": unknown field '" + key + "'");
}

json vector_json(const Eigen::Ref<const Eigen::VectorXd>& v)
{
    return std::vector<double>(v.begin(), v.end());
}

Eigen::VectorXd vector_from(const json& j)
{
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json bands_json(const std::vector<BandRange>& bands)
{
    json out = json::array();
    for (const BandRange& band : bands)
        out.push_back({band.begin, band.end});
    return out;
}

std::vector<BandRange> bands_from(const json& j)
{
    std::vector<BandRange> bands;
    for (const json& band : j) {
        if (!band.is_array() || band.size() != 2)
            throw ValidationError("band ranges must be [lo, hi) pairs");
        bands.push_back({band[0].get<int>(), band[1].get<int>()});
    }
    return bands;
}

// NaN is written as null.
json nullable(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

double from_nullable(const json& j)
{
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace

json plan_to_json(const ScalePlan& plan)
{
    plan.validate();
    if (!plan.rope)
        throw ValidationError("plan lacks its rope block; build it with ScalePlan::identity(rope, ...)");
    json j = {{"version", plan_schema_version},
              {"mode", to_string(plan.mode)},
              {"scales", vector_json(plan.scales)},
              {"bands", bands_json(plan.partition.bands)},
              {"pairing", to_string(plan.pairing)}};
    j["rope"] = {{"base", plan.rope->base},
                 {"head_dim", plan.rope->head_dim},
                 {"train_window", plan.rope->train_window},
                 {"scheme", {{"warp", "identity"}, {"scales", vector_json(plan.rope->scheme_scales)}}}};
    if (plan.provenance) {
        const SearchProvenance& p = *plan.provenance;
        json windows = json::array();
        for (const Window& w : p.windows)
            windows.push_back({w.lo, w.hi});
        j["search"] = {{"kappa", p.kappa},
                       {"tau", p.tau},
                       {"B", p.num_bands},
                       {"K", p.grid_points},
                       {"eta", p.eta},
                       {"strategy", p.strategy},
                       {"evaluator", p.evaluator_kind},
                       {"window_rule", p.window_rule},
                       {"objective_value", nullable(p.objective_value)},
                       {"identity_objective", nullable(p.identity_objective)},
                       {"evaluations", p.evaluations},
                       {"passes", p.passes},
                       {"fallback_to_shared", p.fallback_to_shared},
                       {"windows", windows}};
    }
    return j;
}

ScalePlan plan_from_json(const json& j)
{
    check_keys(j, {"version", "mode", "scales", "bands", "pairing", "rope"}, {"search"}, "plan");
    const int version = j.at("version").get<int>();
    if (version != plan_schema_version)
        throw ValidationError("plan schema version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(plan_schema_version) + ")");

    const json& rope_j = j.at("rope");
    check_keys(rope_j, {"base", "head_dim", "train_window", "scheme"}, {}, "plan.rope");
    check_keys(rope_j.at("scheme"), {"warp", "scales"}, {}, "plan.rope.scheme");
    if (rope_j.at("scheme").at("warp").get<std::string>() != "identity")
        throw ValidationError("plan.rope.scheme: unsupported warp");

    RopeConfig rope;
    rope.base = rope_j.at("base").get<double>();
    rope.head_dim = rope_j.at("head_dim").get<int>();
    rope.train_window = rope_j.at("train_window").get<int>();
    rope.pairing = pairing_from_string(j.at("pairing").get<std::string>());
    rope.validate();

    ScalePlan plan;
    plan.mode = scale_mode_from_string(j.at("mode").get<std::string>());
    plan.scales = vector_from(j.at("scales"));
    plan.pairing = rope.pairing;
    plan.partition.freqs = pair_frequencies(rope);
    plan.partition.bands = bands_from(j.at("bands"));
    plan.rope = PlanRope{rope.base, rope.head_dim, rope.train_window, vector_from(rope_j.at("scheme").at("scales"))};

    if (j.contains("search")) {
        const json& s = j.at("search");
        check_keys(s,
                   {"kappa", "tau", "B", "K", "eta", "strategy", "evaluator", "window_rule", "objective_value",
                    "identity_objective", "evaluations", "passes", "fallback_to_shared", "windows"},
                   {}, "plan.search");
        SearchProvenance p;
        p.kappa = s.at("kappa").get<double>();
        p.tau = s.at("tau").get<double>();
        p.num_bands = s.at("B").get<int>();
        p.grid_points = s.at("K").get<int>();
        p.eta = s.at("eta").get<double>();
        p.strategy = s.at("strategy").get<std::string>();
        p.evaluator_kind = s.at("evaluator").get<std::string>();
        p.window_rule = s.at("window_rule").get<std::string>();
        p.objective_value = from_nullable(s.at("objective_value"));
        p.identity_objective = from_nullable(s.at("identity_objective"));
        p.evaluations = s.at("evaluations").get<long long>();
        p.passes = s.at("passes").get<int>();
        p.fallback_to_shared = s.at("fallback_to_shared").get<bool>();
        for (const json& w : s.at("windows")) {
            if (!w.is_array() || w.size() != 2)
                throw ValidationError("plan.search.windows entries must be [lo, hi]");
            p.windows.push_back({w[0].get<double>(), w[1].get<double>()});
        }
        plan.provenance = p;
    }
    plan.validate();
    ScalingScheme scheme;
    scheme.scales = plan.rope->scheme_scales;
    scheme.validate(rope.num_pairs());
    return plan;
}

json report_to_json(const DiagnosticsReport& report)
{
    json bands = json::array();
    for (const BandDiagnostics& band : report.bands)
        bands.push_back({{"range", {band.range.begin, band.range.end}},
                         {"omega_med", band.omega_med},
                         {"omega_ratio", band.omega_ratio},
                         {"ip", band.ip},
                         {"tir_w", band.tir_w},
                         {"tir_a", band.tir_a}});
    json curve = json::array();
    for (Eigen::Index i = 0; i < report.tir_a_curve.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index b = 0; b < report.tir_a_curve.cols(); ++b)
            row.push_back(nullable(report.tir_a_curve(i, b)));
        curve.push_back(row);
    }
    return {{"eps", report.eps},
            {"displacement", report.displacement},
            {"freqs", vector_json(report.freqs)},
            {"ip_per_pair", vector_json(report.ip_per_pair)},
            {"tir_w_per_pair", vector_json(report.tir_w_per_pair)},
            {"tir_a_per_pair", vector_json(report.tir_a_per_pair)},
            {"bands", bands},
            {"tir_a_curve", {{"bucket_width", report.curve_bucket_width}, {"values", curve}}}};
}

DiagnosticsReport report_from_json(const json& j)
{
    check_keys(j, {"eps", "displacement", "freqs", "ip_per_pair", "tir_w_per_pair", "tir_a_per_pair", "bands"},
               {"tir_a_curve"}, "report");
    DiagnosticsReport report;
    report.eps = j.at("eps").get<double>();
    report.displacement = j.at("displacement").get<double>();
    report.freqs = vector_from(j.at("freqs"));
    report.ip_per_pair = vector_from(j.at("ip_per_pair"));
    report.tir_w_per_pair = vector_from(j.at("tir_w_per_pair"));
    report.tir_a_per_pair = vector_from(j.at("tir_a_per_pair"));
    for (const json& b : j.at("bands")) {
        check_keys(b, {"range", "omega_med", "omega_ratio", "ip", "tir_w", "tir_a"}, {}, "report.bands");
        BandDiagnostics band;
        const auto range = b.at("range").get<std::vector<int>>();
        if (range.size() != 2)
            throw ValidationError("report band range must be [lo, hi)");
        band.range = {range[0], range[1]};
        band.omega_med = b.at("omega_med").get<double>();
        band.omega_ratio = b.at("omega_ratio").get<double>();
        band.ip = b.at("ip").get<double>();
        band.tir_w = b.at("tir_w").get<double>();
        band.tir_a = b.at("tir_a").get<double>();
        report.bands.push_back(band);
    }
    if (j.contains("tir_a_curve")) {
        const json& c = j.at("tir_a_curve");
        check_keys(c, {"bucket_width", "values"}, {}, "report.tir_a_curve");
        report.curve_bucket_width = c.at("bucket_width").get<double>();
        const json& rows = c.at("values");
        const Eigen::Index cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size());
        report.tir_a_curve.resize(static_cast<Eigen::Index>(rows.size()), cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (static_cast<Eigen::Index>(rows[i].size()) != cols)
                throw ValidationError("report.tir_a_curve rows have different lengths");
            for (Eigen::Index b = 0; b < cols; ++b)
                report.tir_a_curve(static_cast<Eigen::Index>(i), b) = from_nullable(rows[i][static_cast<std::size_t>(b)]);
        }
    }
    report.validate();
    return report;
}

namespace {

json quant_json(const std::optional<QuantSpec>& spec)
{
    if (!spec)
        return nullptr;
    return {{"bits", spec->bits},
            {"granularity", to_string(spec->granularity)},
            {"group_size", spec->group_size},
            {"symmetric", spec->symmetric}};
}

std::optional<QuantSpec> quant_from(const json& j)
{
    if (j.is_null())
        return std::nullopt;
    check_keys(j, {"bits", "granularity", "group_size", "symmetric"}, {}, "bundle.weight_quant");
    QuantSpec spec;
    spec.bits = j.at("bits").get<int>();
    spec.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    spec.group_size = j.at("group_size").get<int>();
    spec.symmetric = j.at("symmetric").get<bool>();
    spec.validate();
    return spec;
}

Tensor pairs_tensor(const PairSamples& samples)
{
    Tensor t;
    const auto n = static_cast<std::int64_t>(samples.num_samples());
    t.shape = {samples.num_pairs(), n, 2};
    t.values.reserve(static_cast<std::size_t>(t.element_count()));
    for (const PairMatrix& pair : samples.pairs)
        for (Eigen::Index k = 0; k < n; ++k) {
            t.values.push_back(static_cast<float>(pair(k, 0)));
            t.values.push_back(static_cast<float>(pair(k, 1)));
        }
    return t;
}

PairSamples pairs_from(const Tensor& pairs, const Tensor& positions)
{
    if (pairs.shape.size() != 3 || pairs.shape[2] != 2 || positions.element_count() != pairs.shape[1])
        throw ValidationError("pair cache tensors have inconsistent shapes");
    PairSamples samples;
    const Eigen::Index n = pairs.shape[1];
    samples.positions = positions.matrix().transpose().col(0);
    for (std::int64_t i = 0; i < pairs.shape[0]; ++i) {
        PairMatrix m(n, 2);
        for (Eigen::Index k = 0; k < n; ++k) {
            const std::size_t base = static_cast<std::size_t>((i * n + k) * 2);
            m(k, 0) = pairs.values[base];
            m(k, 1) = pairs.values[base + 1];
        }
        samples.pairs.push_back(std::move(m));
    }
    return samples;
}

const Tensor& require(const TensorFile& file, const std::string& name)
{
    const auto it = file.tensors.find(name);
    if (it == file.tensors.end())
        throw ValidationError("bundle is missing tensor '" + name + "'");
    return it->second;
}

} // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir, const json& extra)
{
    bundle.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw IoError(IoError::Kind::write_failed, "cannot create " + dir.string() + ": " + ec.message());

    std::vector<int> lengths = bundle.lengths();
    json config = {{"rope",
                    {{"head_dim", bundle.rope.head_dim},
                     {"base", bundle.rope.base},
                     {"pairing", to_string(bundle.rope.pairing)},
                     {"train_window", bundle.rope.train_window}}},
                   {"scheme", {{"warp", "identity"}, {"scales", vector_json(bundle.scheme.scales)}}},
                   {"num_heads", bundle.num_heads},
                   {"weight_quant", quant_json(bundle.weight_quant)},
                   {"activation_bits", bundle.activation_bits ? json(*bundle.activation_bits) : json(nullptr)},
                   {"lengths", lengths},
                   {"calibration",
                    {{"short_length", bundle.calibration.metadata.short_length},
                     {"long_length", bundle.calibration.metadata.long_length},
                     {"scheme_id", bundle.calibration.metadata.scheme_id}}},
                   {"synth", extra.is_null() ? json::object() : extra}};
    const std::string text = config.dump(2) + "\n";
    std::ofstream out(dir / "bundle.json", std::ios::trunc);
    out << text;
    if (!out)
        throw IoError(IoError::Kind::write_failed, "failed writing bundle.json");

    TensorFile model;
    model.tensors[bundle_query_name] = Tensor::from_matrix(bundle.w_query);
    model.tensors[bundle_key_name] = Tensor::from_matrix(bundle.w_key);
    write_tensors(dir / "model.safetensors", model);

    TensorFile caches;
    for (const LengthCache& cache : bundle.sequences)
        caches.tensors["seq." + std::to_string(cache.length) + ".hidden"] = Tensor::from_matrix(cache.hidden);
    const ActivationCache& c = bundle.calibration;
    caches.tensors["calib.short.hidden"] = Tensor::from_matrix(c.short_hidden);
    caches.tensors["calib.long.hidden"] = Tensor::from_matrix(c.long_hidden);
    caches.tensors["calib.short.positions"] = Tensor::from_vector(c.short_pairs.positions);
    caches.tensors["calib.long.positions"] = Tensor::from_vector(c.long_pairs.positions);
    caches.tensors["calib.short.pairs"] = pairs_tensor(c.short_pairs);
    caches.tensors["calib.long.pairs"] = pairs_tensor(c.long_pairs);
    write_tensors(dir / "caches.safetensors", caches);
}

ModelBundle load_bundle(const std::filesystem::path& dir)
{
    json config;
    {
        std::ifstream in(dir / "bundle.json");
        if (!in)
            throw IoError(IoError::Kind::open_failed, "cannot open " + (dir / "bundle.json").string());
        try {
            config = json::parse(in);
        } catch (const json::exception& e) {
            throw ValidationError("bundle.json: " + std::string(e.what()));
        }
    }
    ModelBundle bundle;
    try {
        check_keys(config,
                   {"rope", "scheme", "num_heads", "weight_quant", "activation_bits", "lengths", "calibration"},
                   {"synth"}, "bundle");
        const json& rope = config.at("rope");
        bundle.rope.head_dim = rope.at("head_dim").get<int>();
        bundle.rope.base = rope.at("base").get<double>();
        bundle.rope.pairing = pairing_from_string(rope.at("pairing").get<std::string>());
        bundle.rope.train_window = rope.at("train_window").get<int>();
        bundle.scheme.scales = vector_from(config.at("scheme").at("scales"));
        bundle.num_heads = config.at("num_heads").get<int>();
        bundle.weight_quant = quant_from(config.at("weight_quant"));
        if (!config.at("activation_bits").is_null())
            bundle.activation_bits = config.at("activation_bits").get<int>();
        const json& calib = config.at("calibration");
        bundle.calibration.metadata = {calib.at("short_length").get<int>(), calib.at("long_length").get<int>(),
                                       calib.at("scheme_id").get<std::string>()};

        const TensorFile model = read_tensors(dir / "model.safetensors");
        bundle.w_query = require(model, bundle_query_name).matrix();
        bundle.w_key = require(model, bundle_key_name).matrix();

        const TensorFile caches = read_tensors(dir / "caches.safetensors");
        for (int length : config.at("lengths").get<std::vector<int>>())
            bundle.sequences.push_back(
                {length, require(caches, "seq." + std::to_string(length) + ".hidden").matrix()});
        ActivationCache& c = bundle.calibration;
        c.short_hidden = require(caches, "calib.short.hidden").matrix();
        c.long_hidden = require(caches, "calib.long.hidden").matrix();
        c.short_pairs = pairs_from(require(caches, "calib.short.pairs"), require(caches, "calib.short.positions"));
        c.long_pairs = pairs_from(require(caches, "calib.long.pairs"), require(caches, "calib.long.positions"));
    } catch (const json::exception& e) {
        throw ValidationError("bundle.json schema violation: " + std::string(e.what()));
    }
    bundle.validate();
    return bundle;
}

} // namespace qroar
