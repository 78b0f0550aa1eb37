#include "qroar/render.hpp"

#include "qroar/error.hpp"

#include <iomanip>
#include <sstream>

namespace qroar {

ReportTable build_report_table(const DiagnosticsReport& report, const ScalePlan* plan, const SearchConfig& settings)
{
    report.validate();
    if (plan != nullptr && plan->scales.size() != static_cast<Eigen::Index>(report.bands.size()))
        throw ValidationError("plan has " + std::to_string(plan->scales.size()) + " bands, report has " +
                              std::to_string(report.bands.size()));
    const bool plan_windows = plan != nullptr && plan->provenance && !plan->provenance->windows.empty();

    ReportTable table;
    for (std::size_t b = 0; b < report.bands.size(); ++b) {
        const BandDiagnostics& band = report.bands[b];
        BandRow row;
        row.band = static_cast<int>(b);
        row.omega_med = band.omega_med;
        row.ip = band.ip;
        row.tir_w = band.tir_w;
        row.tir_a = band.tir_a;
        const Window window =
            plan_windows ? plan->provenance->windows[b]
                         : band_window(gamma_bound(band.omega_ratio, settings.tau), band.tir_w, settings.kappa,
                                       settings.global_clamp);
        row.g_min = window.lo;
        row.g_max = window.hi;
        row.g_star = plan != nullptr ? plan->scales[static_cast<Eigen::Index>(b)] : 1.0;
        table.bands.push_back(row);
    }
    if (plan != nullptr && plan->provenance) {
        table.identity_objective = plan->provenance->identity_objective;
        table.plan_objective = plan->provenance->objective_value;
    }
    return table;
}

namespace {

std::string number(double v)
{
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

} // namespace

std::string render_csv(const ReportTable& table)
{
    std::ostringstream os;
    os << "band,omega_med,ip,tir_w,tir_a,g_min,g_max,g_star\n";
    for (const BandRow& r : table.bands)
        os << r.band << ',' << number(r.omega_med) << ',' << number(r.ip) << ',' << number(r.tir_w) << ','
           << number(r.tir_a) << ',' << number(r.g_min) << ',' << number(r.g_max) << ',' << number(r.g_star)
           << '\n';
    return os.str();
}

std::string render_text(const ReportTable& table)
{
    std::ostringstream os;
    os << std::left << std::setw(6) << "band" << std::setw(14) << "omega_med" << std::setw(14) << "IP"
       << std::setw(10) << "TIR_W" << std::setw(10) << "TIR_A" << std::setw(10) << "g_min" << std::setw(10)
       << "g_max" << "g*" << '\n';
    os << std::setprecision(4);
    for (const BandRow& r : table.bands)
        os << std::setw(6) << r.band << std::setw(14) << r.omega_med << std::setw(14) << r.ip << std::setw(10)
           << r.tir_w << std::setw(10) << r.tir_a << std::setw(10) << r.g_min << std::setw(10) << r.g_max
           << r.g_star << '\n';
    if (!table.lengths.empty()) {
        os << '\n' << std::setw(10) << "length" << std::setw(16) << "identity" << std::setw(16) << "plan"
           << "delta" << '\n';
        os << std::setprecision(6);
        for (const LengthComparison& c : table.lengths)
            os << std::setw(10) << c.length << std::setw(16) << c.identity << std::setw(16) << c.plan
               << (c.plan - c.identity) << '\n';
    }
    if (table.identity_objective && table.plan_objective)
        os << "\nobjective: identity " << *table.identity_objective << ", plan " << *table.plan_objective << '\n';
    return os.str();
}

nlohmann::json render_json(const ReportTable& table)
{
    nlohmann::json bands = nlohmann::json::array();
    for (const BandRow& r : table.bands)
        bands.push_back({{"band", r.band},
                         {"omega_med", r.omega_med},
                         {"ip", r.ip},
                         {"tir_w", r.tir_w},
                         {"tir_a", r.tir_a},
                         {"g_min", r.g_min},
                         {"g_max", r.g_max},
                         {"g_star", r.g_star}});
    nlohmann::json lengths = nlohmann::json::array();
    for (const LengthComparison& c : table.lengths)
        lengths.push_back({{"length", c.length}, {"identity", c.identity}, {"plan", c.plan},
                           {"delta", c.plan - c.identity}});
    nlohmann::json out = {{"bands", bands}, {"lengths", lengths}};
    if (table.identity_objective)
        out["identity_objective"] = *table.identity_objective;
    if (table.plan_objective)
        out["plan_objective"] = *table.plan_objective;
    return out;
}

} // namespace qroar
