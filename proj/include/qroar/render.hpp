#pragma once

#include "qroar/diagnostics.hpp"
#include "qroar/plan.hpp"
#include "qroar/search.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace qroar {

struct BandRow {
    int band = 0;
    double omega_med = 1.0;
    double ip = 0.0;
    double tir_w = 1.0;
    double tir_a = 1.0;
    double g_min = 1.0;
    double g_max = 1.0;
    double g_star = 1.0;
};

struct LengthComparison {
    int length = 0;
    double identity = 0.0;
    double plan = 0.0;
};

struct ReportTable {
    std::vector<BandRow> bands;
    std::vector<LengthComparison> lengths;
    std::optional<double> identity_objective;
    std::optional<double> plan_objective;
};

// Windows come from the plan's provenance when present, otherwise they are
// derived from the report with the given search settings. Without a plan,
// g_star is 1 for every band.
ReportTable build_report_table(const DiagnosticsReport& report, const ScalePlan* plan,
                               const SearchConfig& settings = {});

inline constexpr int report_csv_columns = 8;

std::string render_csv(const ReportTable& table);
std::string render_text(const ReportTable& table);
nlohmann::json render_json(const ReportTable& table);

} // namespace qroar
