#include "qroar/io.hpp"

#include "qroar/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fnmatch.h>

namespace qroar {

static_assert(std::endian::native == std::endian::little, "tensor payloads are read and written in host order");

using nlohmann::json;

namespace {

std::size_t dtype_width(const std::string& dtype)
{
    if (dtype == "F32")
        return 4;
    if (dtype == "F16" || dtype == "BF16")
        return 2;
    return 0;
}

IoError malformed(const std::string& what)
{
    return IoError(IoError::Kind::malformed_header, "malformed tensor header: " + what);
}

} // namespace

bool Tensor::numeric() const
{
    return dtype_width(dtype) != 0;
}

std::int64_t Tensor::element_count() const
{
    std::int64_t n = 1;
    for (std::int64_t d : shape)
        n *= d;
    return n;
}

Eigen::MatrixXd Tensor::matrix() const
{
    if (!numeric())
        throw ValidationError("tensor of dtype " + dtype + " has no numeric view");
    const Eigen::Index rows = shape.size() >= 2 ? shape[0] : 1;
    const Eigen::Index cols = rows == 0 ? 0 : element_count() / rows;
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(values.data(), rows, cols).cast<double>();
}

Tensor Tensor::from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m, const std::string& dtype)
{
    Tensor t;
    t.dtype = dtype;
    t.shape = {m.rows(), m.cols()};
    t.values.resize(static_cast<std::size_t>(m.size()));
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMajor>(t.values.data(), m.rows(), m.cols()) = m.cast<float>();
    return t;
}

Tensor Tensor::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v, const std::string& dtype)
{
    Tensor t;
    t.dtype = dtype;
    t.shape = {v.size()};
    t.values.resize(static_cast<std::size_t>(v.size()));
    Eigen::Map<Eigen::VectorXf>(t.values.data(), v.size()) = v.cast<float>();
    return t;
}

TensorFile parse_tensors(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 8)
        throw malformed("file shorter than the 8-byte length prefix");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8)
        throw malformed("header length " + std::to_string(header_len) + " exceeds file size");

    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception& e) {
        throw malformed(e.what());
    }
    if (!header.is_object())
        throw malformed("header is not a JSON object");

    const std::size_t payload_begin = 8 + header_len;
    const std::size_t payload_size = bytes.size() - payload_begin;
    TensorFile file;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            try {
                file.metadata = entry.get<std::map<std::string, std::string>>();
            } catch (const json::exception& e) {
                throw malformed(std::string("__metadata__: ") + e.what());
            }
            continue;
        }
        Tensor t;
        std::uint64_t begin = 0, end = 0;
        try {
            t.dtype = entry.at("dtype").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offsets.size() != 2)
                throw malformed(name + ": data_offsets must hold two values");
            begin = offsets[0];
            end = offsets[1];
        } catch (const json::exception& e) {
            throw malformed(name + ": " + e.what());
        }
        for (std::int64_t d : t.shape)
            if (d < 0)
                throw malformed(name + ": negative dimension");
        if (end < begin)
            throw malformed(name + ": data_offsets end before begin");
        const std::size_t width = dtype_width(t.dtype);
        if (width != 0 && end - begin != static_cast<std::uint64_t>(t.element_count()) * width)
            throw malformed(name + ": byte span does not match shape and dtype");
        if (end > payload_size)
            throw IoError(IoError::Kind::truncated_payload,
                          "truncated payload: tensor " + name + " ends at byte " + std::to_string(end) +
                              " of a " + std::to_string(payload_size) + "-byte payload");
        spans.emplace_back(begin, end);

        const std::uint8_t* src = bytes.data() + payload_begin + begin;
        const auto n = static_cast<std::size_t>(t.element_count());
        if (t.dtype == "F32") {
            t.values.resize(n);
            std::memcpy(t.values.data(), src, n * 4);
        } else if (t.dtype == "F16" || t.dtype == "BF16") {
            t.values.resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                std::uint16_t bits = 0;
                std::memcpy(&bits, src + 2 * k, 2);
                t.values[k] = t.dtype == "F16" ? static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(bits))
                                               : static_cast<float>(Eigen::numext::bit_cast<Eigen::bfloat16>(bits));
            }
        } else {
            t.raw.assign(src, src + (end - begin));
        }
        file.tensors.emplace(name, std::move(t));
    }

    std::sort(spans.begin(), spans.end());
    for (std::size_t k = 1; k < spans.size(); ++k)
        if (spans[k].first < spans[k - 1].second)
            throw IoError(IoError::Kind::overlapping_offsets, "tensor byte ranges overlap");
    return file;
}

TensorFile read_tensors(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(IoError::Kind::open_failed, "cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_tensors(bytes);
    } catch (const IoError& e) {
        throw IoError(e.kind(), path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_tensors(const TensorFile& file)
{
    json header = json::object();
    if (!file.metadata.empty())
        header["__metadata__"] = file.metadata;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        const std::size_t width = dtype_width(t.dtype);
        const std::uint64_t size =
            width != 0 ? static_cast<std::uint64_t>(t.element_count()) * width : t.raw.size();
        if (width != 0 && t.values.size() != static_cast<std::size_t>(t.element_count()))
            throw ValidationError("tensor " + name + " holds " + std::to_string(t.values.size()) +
                                  " values for its shape");
        header[name] = {{"dtype", t.dtype}, {"shape", t.shape}, {"data_offsets", {offset, offset + size}}};
        offset += size;
    }
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::vector<std::uint8_t> out(8 + text.size());
    const std::uint64_t header_len = text.size();
    std::memcpy(out.data(), &header_len, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : file.tensors) {
        if (t.dtype == "F32") {
            const auto* p = reinterpret_cast<const std::uint8_t*>(t.values.data());
            out.insert(out.end(), p, p + t.values.size() * 4);
        } else if (t.dtype == "F16" || t.dtype == "BF16") {
            for (float v : t.values) {
                const std::uint16_t bits =
                    t.dtype == "F16" ? Eigen::numext::bit_cast<std::uint16_t>(Eigen::half(v))
                                     : Eigen::numext::bit_cast<std::uint16_t>(Eigen::bfloat16(v));
                out.push_back(static_cast<std::uint8_t>(bits & 0xff));
                out.push_back(static_cast<std::uint8_t>(bits >> 8));
            }
        } else {
            out.insert(out.end(), t.raw.begin(), t.raw.end());
        }
    }
    return out;
}

namespace {

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(IoError::Kind::write_failed, "cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out)
        throw IoError(IoError::Kind::write_failed, "failed writing " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    write_bytes(path, text.data(), text.size());
}

json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError(IoError::Kind::open_failed, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": invalid JSON: " + e.what());
    }
}

} // namespace

void write_tensors(const std::filesystem::path& path, const TensorFile& file)
{
    const std::vector<std::uint8_t> bytes = encode_tensors(file);
    write_bytes(path, bytes.data(), bytes.size());
}

void write_plan(const ScalePlan& plan, const std::filesystem::path& path)
{
    write_text(path, plan_to_json(plan).dump(2) + "\n");
}

ScalePlan read_plan(const std::filesystem::path& path)
{
    const json j = read_json(path);
    try {
        return plan_from_json(j);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": plan schema violation: " + e.what());
    }
}

void write_report(const DiagnosticsReport& report, const std::filesystem::path& path)
{
    write_text(path, report_to_json(report).dump(2) + "\n");
}

DiagnosticsReport read_report(const std::filesystem::path& path)
{
    const json j = read_json(path);
    try {
        return report_from_json(j);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": report schema violation: " + e.what());
    }
}

namespace {

bool matches_any(const std::string& name, const std::vector<std::string>& patterns)
{
    return std::any_of(patterns.begin(), patterns.end(),
                       [&](const std::string& p) { return ::fnmatch(p.c_str(), name.c_str(), 0) == 0; });
}

} // namespace

std::vector<PatchedTensor> patch_tensors(TensorFile& file, const ScalePlan& plan, const PatchOptions& options)
{
    plan.validate();
    std::vector<PatchedTensor> patched;
    for (auto& [name, t] : file.tensors) {
        const bool is_query = matches_any(name, options.query_patterns);
        const bool is_key = !is_query && matches_any(name, options.key_patterns);
        if (!is_query && !is_key)
            continue;
        if (!t.numeric())
            throw ValidationError("tensor " + name + " has non-float dtype " + t.dtype);
        if (t.shape.size() != 2)
            throw ValidationError("tensor " + name + " is not a 2-D projection matrix");
        const std::int64_t rows = t.shape[0];
        const std::int64_t cols = t.shape[1];
        if (rows % plan.head_dim() != 0)
            throw ValidationError("tensor " + name + " has " + std::to_string(rows) +
                                  " rows, not a multiple of head_dim " + std::to_string(plan.head_dim()));
        const Eigen::VectorXd factors = row_scales(plan, rows, is_key);
        for (std::int64_t r = 0; r < rows; ++r) {
            const double f = factors[r];
            if (f == 1.0)
                continue;
            for (std::int64_t c = 0; c < cols; ++c) {
                float& v = t.values[static_cast<std::size_t>(r * cols + c)];
                v = static_cast<float>(static_cast<double>(v) * f);
            }
        }
        PatchedTensor summary{name, is_key, {}};
        for (Eigen::Index b = 0; b < plan.scales.size(); ++b)
            summary.band_factors.push_back(is_key && plan.mode == ScaleMode::symmetric ? 1.0 / plan.scales[b]
                                                                                       : plan.scales[b]);
        patched.push_back(std::move(summary));
    }
    if (patched.empty())
        throw ValidationError("no tensor matches the query/key projection patterns");
    if (options.embed_plan)
        file.metadata["qroar_scale_plan"] = plan_to_json(plan).dump();
    return patched;
}

std::vector<PatchedTensor> patch_checkpoint(const std::filesystem::path& input, const std::filesystem::path& output,
                                            const ScalePlan& plan, const PatchOptions& options)
{
    std::error_code ec;
    if (std::filesystem::exists(output) && std::filesystem::equivalent(input, output, ec))
        throw ValidationError("refusing to overwrite the input checkpoint");
    TensorFile file = read_tensors(input);
    std::vector<PatchedTensor> patched = patch_tensors(file, plan, options);
    write_tensors(output, file);
    return patched;
}

} // namespace qroar
