// qroar: synthesize desk-scale models, diagnose RoPE interpolation x RTN
// coupling, search band-wise Q/K rescales, and apply them to checkpoints.
//
// Exit codes: 0 success, 1 validation, 2 I/O, 3 backend/protocol.

#include "qroar/error.hpp"
#include "qroar/evaluator.hpp"
#include "qroar/external_eval.hpp"
#include "qroar/io.hpp"
#include "qroar/render.hpp"
#include "qroar/search.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>

namespace {

using namespace qroar;

enum ExitCode { exit_ok = 0, exit_validation = 1, exit_io = 2, exit_backend = 3 };

std::uint64_t default_seed()
{
    if (const char* env = std::getenv("QROAR_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ValidationError(std::string("QROAR_SEED is not an unsigned integer: ") + env);
        }
    }
    return 0;
}

void emit(const std::string& text, const std::string& path, bool to_stdout)
{
    if (to_stdout || path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out)
        throw IoError(IoError::Kind::write_failed, "failed writing " + path);
}

struct SynthArgs {
    std::string out;
    SynthDims dims;
    std::string pairing = "half_split";
    std::string scheme = "yarn";
    int bits = 4;
    std::string granularity = "per_tensor";
    int group_size = 128;
    int act_bits = 0;
    OutlierSpec outliers{{1}};
    bool no_outliers = false;
};

struct DiagnoseArgs {
    std::string bundle;
    std::string out;
    std::string format = "json";
    bool to_stdout = false;
    int bands = 8;
    double eps = 0.01;
    double displacement = 0.0;
    long long min_samples = 1000;
    bool allow_nonstandard = false;
};

struct SearchArgs {
    std::string bundle;
    std::string report;
    std::string out;
    bool to_stdout = false;
    SearchConfig config;
    std::string strategy = "coordinate";
    std::vector<int> lengths;
    std::string evaluator = "surrogate";
    std::string backend;
    int window = 256;
    int samples = 4096;
    double timeout_s = 600.0;
    bool allow_nonstandard = false;
    bool quiet = false;
};

struct ApplyArgs {
    std::string plan;
    std::string in;
    std::string out;
    std::vector<std::string> query_patterns;
    std::vector<std::string> key_patterns;
    bool embed_plan = false;
};

struct ReportArgs {
    std::string report;
    std::string plan;
    std::string bundle;
    std::string format = "text";
    std::string out;
    bool to_stdout = false;
    double kappa = 1.2;
    double tau = 0.3;
};

void check_bands(int bands, bool allow_nonstandard)
{
    if (!allow_nonstandard && bands != 6 && bands != 8)
        throw ValidationError("--bands must be 6 or 8 (use --allow-nonstandard to override)");
}

int run_synth(const SynthArgs& args, std::uint64_t seed)
{
    SynthDims dims = args.dims;
    dims.pairing = pairing_from_string(args.pairing);
    dims.scheme = scheme_kind_from_string(args.scheme);
    if (args.bits > 0)
        dims.weight_quant = QuantSpec{args.bits, granularity_from_string(args.granularity), args.group_size, true};
    else
        dims.weight_quant.reset();
    if (args.act_bits > 0)
        dims.activation_bits = args.act_bits;
    OutlierSpec outliers = args.outliers;
    if (args.no_outliers)
        outliers.target_bands.clear();

    const ModelBundle bundle = synth_model(seed, dims, outliers);
    nlohmann::json extra = {{"seed", seed},
                            {"d_model", dims.d_model},
                            {"pi_factor", dims.pi_factor},
                            {"scheme", to_string(dims.scheme)},
                            {"outlier_bands", outliers.target_bands},
                            {"outlier_partition", outliers.partition_bands},
                            {"outlier_channels", outliers.channels},
                            {"outlier_growth", outliers.growth},
                            {"outlier_gain", outliers.weight_gain}};
    save_bundle(bundle, args.out, extra);
    std::cerr << "wrote bundle to " << args.out << " (" << bundle.num_heads << " heads x " << bundle.rope.head_dim
              << ", lengths";
    for (int length : bundle.lengths())
        std::cerr << ' ' << length;
    std::cerr << ")\n";
    return exit_ok;
}

DiagnosticsReport diagnose_bundle(const ModelBundle& bundle, int bands, double eps, double displacement,
                                  long long min_samples)
{
    DiagnosticsOptions options;
    options.eps = eps;
    options.displacement = displacement;
    options.min_samples = min_samples;
    return diagnose(bundle.w_query, bundle.w_key, bundle.calibration, bundle.rope, bundle.scheme, bands, options);
}

int run_diagnose(const DiagnoseArgs& args)
{
    check_bands(args.bands, args.allow_nonstandard);
    if (!(args.eps > 0.0 && args.eps < 1.0))
        throw ValidationError("--eps must be in (0, 1)");
    const ModelBundle bundle = load_bundle(args.bundle);
    const DiagnosticsReport report = diagnose_bundle(bundle, args.bands, args.eps, args.displacement, args.min_samples);

    if (!args.out.empty() && !args.to_stdout && args.format == "json") {
        write_report(report, args.out);
        std::cerr << "wrote diagnostics to " << args.out << '\n';
        return exit_ok;
    }
    if (!args.out.empty())
        write_report(report, args.out);
    const ReportTable table = build_report_table(report, nullptr);
    if (args.format == "json")
        std::cout << report_to_json(report).dump(2) << '\n';
    else if (args.format == "csv")
        std::cout << render_csv(table);
    else
        std::cout << render_text(table);
    return exit_ok;
}

int run_search(SearchArgs args, std::uint64_t seed)
{
    SearchConfig config = args.config;
    config.strategy = strategy_from_string(args.strategy);
    const ModelBundle bundle = load_bundle(args.bundle);
    config.validate(bundle.rope.train_window, args.allow_nonstandard);

    DiagnosticsReport report;
    if (!args.report.empty()) {
        report = read_report(args.report);
        if (static_cast<int>(report.bands.size()) != config.num_bands)
            throw ValidationError("report has " + std::to_string(report.bands.size()) + " bands but --bands is " +
                                  std::to_string(config.num_bands));
    } else {
        report = diagnose_bundle(bundle, config.num_bands, 0.01, 0.0, 1000);
    }

    ObjectiveSpec spec;
    const std::vector<int> lengths = !args.lengths.empty() ? args.lengths
                                     : args.evaluator == "external"
                                         ? [&] {
                                               std::vector<int> out;
                                               for (const LengthWeight& lw :
                                                    SearchConfig::default_lengths(bundle.rope.train_window))
                                                   out.push_back(lw.length);
                                               return out;
                                           }()
                                         : bundle.lengths();
    spec = ObjectiveSpec::length_weighted(lengths);
    spec.samples_per_length = args.samples;
    spec.window = args.window;
    spec.seed = seed;
    config.lengths = spec.lengths;
    config.validate(bundle.rope.train_window, args.allow_nonstandard);

    std::unique_ptr<Evaluator> evaluator;
    if (args.evaluator == "surrogate") {
        spec.kind = ObjectiveKind::logit_mse;
        evaluator = std::make_unique<LogitMseEvaluator>(bundle, spec);
    } else if (args.evaluator == "external") {
        if (args.backend.empty())
            throw ValidationError("--evaluator external needs --backend");
        spec.kind = ObjectiveKind::external_ppl;
        evaluator = std::make_unique<ExternalEvaluator>(
            args.backend, spec, std::chrono::milliseconds(static_cast<long long>(args.timeout_s * 1000)));
    } else {
        throw ValidationError("unknown evaluator '" + args.evaluator + "'");
    }

    if (!args.quiet)
        config.on_eval = [](const EvalRecord& r) {
            std::cerr << std::setprecision(17) << "pass " << r.pass << " band " << r.band << " candidate "
                      << r.candidate << " objective " << r.objective << '\n';
        };

    const ScalePlan plan = run_qroar(bundle.rope, bundle.scheme, report, config, *evaluator);
    const std::string text = plan_to_json(plan).dump(2) + "\n";
    if (args.to_stdout || args.out.empty())
        std::cout << text;
    if (!args.out.empty())
        write_plan(plan, args.out);

    const SearchProvenance& p = *plan.provenance;
    std::cerr << std::setprecision(10) << "mode " << to_string(plan.mode) << ", objective " << p.objective_value
              << " (identity " << p.identity_objective << "), " << p.evaluations << " evaluations\n";
    return p.objective_value <= p.identity_objective ? exit_ok : exit_validation;
}

int run_apply(const ApplyArgs& args)
{
    const ScalePlan plan = read_plan(args.plan);
    PatchOptions options;
    if (!args.query_patterns.empty())
        options.query_patterns = args.query_patterns;
    if (!args.key_patterns.empty())
        options.key_patterns = args.key_patterns;
    options.embed_plan = args.embed_plan;
    const std::vector<PatchedTensor> patched = patch_checkpoint(args.in, args.out, plan, options);
    std::cout << std::setprecision(10);
    for (const PatchedTensor& t : patched)
        for (std::size_t b = 0; b < t.band_factors.size(); ++b)
            std::cout << t.name << '\t' << b << '\t' << t.band_factors[b] << '\n';
    std::cerr << "patched " << patched.size() << " tensors into " << args.out << '\n';
    return exit_ok;
}

int run_report(const ReportArgs& args, std::uint64_t seed)
{
    const DiagnosticsReport report = read_report(args.report);
    std::optional<ScalePlan> plan;
    if (!args.plan.empty())
        plan = read_plan(args.plan);
    SearchConfig settings;
    settings.kappa = args.kappa;
    settings.tau = args.tau;
    ReportTable table = build_report_table(report, plan ? &*plan : nullptr, settings);

    if (!args.bundle.empty()) {
        const ModelBundle bundle = load_bundle(args.bundle);
        ObjectiveSpec spec = ObjectiveSpec::length_weighted(bundle.lengths());
        spec.seed = seed;
        const LogitMseEvaluator evaluator(bundle, spec);
        const ScalePlan identity = ScalePlan::identity(report.partition(), bundle.rope.pairing);
        const Evaluation base = evaluator.evaluate_const(identity);
        const Evaluation with_plan = plan ? evaluator.evaluate_const(*plan) : base;
        for (std::size_t k = 0; k < base.per_length.size(); ++k)
            table.lengths.push_back({base.per_length[k].first, base.per_length[k].second,
                                     with_plan.per_length[k].second});
        table.identity_objective = base.objective;
        table.plan_objective = with_plan.objective;
    }

    std::string text;
    if (args.format == "csv")
        text = render_csv(table);
    else if (args.format == "json")
        text = render_json(table).dump(2) + "\n";
    else if (args.format == "text")
        text = render_text(table);
    else
        throw ValidationError("unknown report format '" + args.format + "'");
    emit(text, args.out, args.to_stdout);
    return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Band-wise RoPE-aware Q/K rescaling for quantized long-context models"};
    app.require_subcommand(1);
    app.fallthrough(); // global options also accepted after the subcommand
    std::optional<std::uint64_t> seed_flag;
    app.add_option("--seed", seed_flag, "random seed (overrides QROAR_SEED, default 0)");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic desk-scale model bundle");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--d-model", synth.dims.d_model);
    synth_cmd->add_option("--heads", synth.dims.num_heads);
    synth_cmd->add_option("--head-dim", synth.dims.head_dim);
    synth_cmd->add_option("--base", synth.dims.base);
    synth_cmd->add_option("--pairing", synth.pairing)->check(CLI::IsMember({"half_split", "interleaved"}));
    synth_cmd->add_option("--train-window", synth.dims.train_window);
    synth_cmd->add_option("--pi-factor", synth.dims.pi_factor);
    synth_cmd->add_option("--scheme", synth.scheme)->check(CLI::IsMember({"none", "linear", "yarn"}));
    synth_cmd->add_option("--lengths", synth.dims.lengths)->delimiter(',');
    synth_cmd->add_option("--calib-samples", synth.dims.calibration_samples);
    synth_cmd->add_option("--bits", synth.bits, "weight bits, 0 disables quantization");
    synth_cmd->add_option("--granularity", synth.granularity)
        ->check(CLI::IsMember({"per_tensor", "per_output_channel", "per_group"}));
    synth_cmd->add_option("--group-size", synth.group_size);
    synth_cmd->add_option("--act-bits", synth.act_bits, "per-token activation bits, 0 disables");
    synth_cmd->add_option("--outlier-bands", synth.outliers.target_bands)->delimiter(',');
    synth_cmd->add_option("--outlier-partition", synth.outliers.partition_bands);
    synth_cmd->add_option("--outlier-channels", synth.outliers.channels);
    synth_cmd->add_option("--outlier-growth", synth.outliers.growth);
    synth_cmd->add_option("--outlier-gain", synth.outliers.weight_gain);
    synth_cmd->add_flag("--no-outliers", synth.no_outliers);

    DiagnoseArgs diag;
    auto* diag_cmd = app.add_subcommand("diagnose", "compute interpolation pressure and tail-inflation ratios");
    diag_cmd->add_option("--bundle", diag.bundle)->required();
    diag_cmd->add_option("--out", diag.out, "report JSON path");
    diag_cmd->add_option("--format", diag.format)->check(CLI::IsMember({"json", "csv", "text"}));
    diag_cmd->add_flag("--stdout", diag.to_stdout);
    diag_cmd->add_option("--bands", diag.bands);
    diag_cmd->add_option("--eps", diag.eps, "tail level: quantile 1 - eps");
    diag_cmd->add_option("--displacement", diag.displacement, "0 selects the longest cached length - 1");
    diag_cmd->add_option("--min-samples", diag.min_samples);
    diag_cmd->add_flag("--allow-nonstandard", diag.allow_nonstandard);

    SearchArgs search;
    auto* search_cmd = app.add_subcommand("search", "search per-band scales");
    search_cmd->add_option("--bundle", search.bundle)->required();
    search_cmd->add_option("--report", search.report, "diagnostics JSON; recomputed when absent");
    search_cmd->add_option("--out", search.out, "plan JSON path");
    search_cmd->add_flag("--stdout", search.to_stdout);
    search_cmd->add_option("--bands", search.config.num_bands);
    search_cmd->add_option("--grid", search.config.grid_points);
    search_cmd->add_option("--strategy", search.strategy)->check(CLI::IsMember({"coordinate", "joint"}));
    search_cmd->add_option("--eta", search.config.eta, "relative per-pass gain below which the search stops");
    search_cmd->add_option("--kappa", search.config.kappa);
    search_cmd->add_option("--tau", search.config.tau);
    search_cmd->add_option("--max-passes", search.config.max_passes);
    search_cmd->add_option("--clamp-lo", search.config.global_clamp.lo);
    search_cmd->add_option("--clamp-hi", search.config.global_clamp.hi);
    search_cmd->add_option("--lengths", search.lengths)->delimiter(',');
    search_cmd->add_option("--evaluator", search.evaluator)->check(CLI::IsMember({"surrogate", "external"}));
    search_cmd->add_option("--backend", search.backend, "backend command for --evaluator external");
    search_cmd->add_option("--window", search.window);
    search_cmd->add_option("--samples", search.samples, "position pairs per length (surrogate)");
    search_cmd->add_option("--timeout", search.timeout_s, "backend reply timeout in seconds");
    search_cmd->add_flag("--allow-nonstandard", search.allow_nonstandard);
    search_cmd->add_flag("--quiet", search.quiet);

    ApplyArgs apply;
    auto* apply_cmd = app.add_subcommand("apply", "rescale query/key projections of a checkpoint");
    apply_cmd->add_option("--plan", apply.plan)->required();
    apply_cmd->add_option("--in", apply.in)->required();
    apply_cmd->add_option("--out", apply.out)->required();
    apply_cmd->add_option("--query-pattern", apply.query_patterns);
    apply_cmd->add_option("--key-pattern", apply.key_patterns);
    apply_cmd->add_flag("--embed-plan", apply.embed_plan);

    ReportArgs rep;
    auto* report_cmd = app.add_subcommand("report", "render diagnostics and plan tables");
    report_cmd->add_option("--report", rep.report)->required();
    report_cmd->add_option("--plan", rep.plan);
    report_cmd->add_option("--bundle", rep.bundle, "adds identity-vs-plan objectives per length");
    report_cmd->add_option("--format", rep.format)->check(CLI::IsMember({"json", "csv", "text"}));
    report_cmd->add_option("--out", rep.out);
    report_cmd->add_flag("--stdout", rep.to_stdout);
    report_cmd->add_option("--kappa", rep.kappa);
    report_cmd->add_option("--tau", rep.tau);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_validation;
    }

    try {
        const std::uint64_t seed = seed_flag ? *seed_flag : default_seed();
        if (*synth_cmd)
            return run_synth(synth, seed);
        if (*diag_cmd)
            return run_diagnose(diag);
        if (*search_cmd)
            return run_search(search, seed);
        if (*apply_cmd)
            return run_apply(apply);
        if (*report_cmd)
            return run_report(rep, seed);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_validation;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_io;
    } catch (const BackendError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_backend;
    }
    return exit_validation;
}
