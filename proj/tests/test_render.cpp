#include "qroar/bands.hpp"
#include "qroar/error.hpp"
#include "qroar/render.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace qroar;

namespace {

DiagnosticsReport small_report()
{
    RopeConfig rope;
    rope.head_dim = 16;
    rope.train_window = 64;
    const BandPartition partition = partition_log_freq(pair_frequencies(rope), 3);
    Eigen::VectorXd ip(8), tir_w(8), tir_a(8);
    for (int i = 0; i < 8; ++i) {
        ip[i] = 100.0 / (i + 1);
        tir_w[i] = 1.0 + 0.1 * i;
        tir_a[i] = 1.0 + 0.01 * i;
    }
    return aggregate_report(partition, ip, tir_w, tir_a, 0.01, 511);
}

std::vector<std::vector<std::string>> csv_cells(const std::string& text)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

} // namespace

TEST(Render, CsvWithoutPlan)
{
    const DiagnosticsReport report = small_report();
    const ReportTable table = build_report_table(report, nullptr);
    const auto rows = csv_cells(render_csv(table));
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"band", "omega_med", "ip", "tir_w", "tir_a", "g_min", "g_max",
                                                 "g_star"}));
    for (const auto& r : rows)
        EXPECT_EQ(r.size(), static_cast<std::size_t>(report_csv_columns));
    for (std::size_t b = 0; b < 3; ++b) {
        EXPECT_EQ(rows[b + 1][0], std::to_string(b));
        EXPECT_EQ(std::stod(rows[b + 1][7]), 1.0);
        // windows derived with default settings
        const Window w = band_window(gamma_bound(report.bands[b].omega_ratio, 0.3), report.bands[b].tir_w, 1.2);
        EXPECT_NEAR(std::stod(rows[b + 1][5]), w.lo, 1e-9 * w.lo);
        EXPECT_NEAR(std::stod(rows[b + 1][6]), w.hi, 1e-9 * w.hi);
        EXPECT_NEAR(std::stod(rows[b + 1][3]), report.bands[b].tir_w, 1e-9);
    }
    EXPECT_FALSE(table.identity_objective.has_value());
}

TEST(Render, PlanWindowsAndObjectives)
{
    const DiagnosticsReport report = small_report();
    ScalePlan plan = ScalePlan::identity(report.partition(), Pairing::half_split);
    plan.scales << 1.1, 0.9, 1.0;
    SearchProvenance p;
    p.windows = {{1.0, 1.2}, {0.8, 1.0}, {0.9, 1.1}};
    p.identity_objective = 0.5;
    p.objective_value = 0.25;
    plan.provenance = p;
    ReportTable table = build_report_table(report, &plan);
    EXPECT_EQ(table.bands[1].g_min, 0.8);
    EXPECT_EQ(table.bands[0].g_star, 1.1);
    table.lengths = {{128, 0.5, 0.25}};

    const std::string text = render_text(table);
    EXPECT_NE(text.find("objective: identity 0.5, plan 0.25"), std::string::npos);
    EXPECT_NE(text.find("-0.25"), std::string::npos);

    const nlohmann::json j = render_json(table);
    EXPECT_EQ(j.at("bands").size(), 3u);
    EXPECT_EQ(j.at("bands")[1].at("g_star"), 0.9);
    EXPECT_EQ(j.at("lengths")[0].at("delta"), -0.25);
    EXPECT_EQ(j.at("plan_objective"), 0.25);
    EXPECT_EQ(j.at("bands")[0].size(), static_cast<std::size_t>(report_csv_columns));
}

TEST(Render, BandCountMismatch)
{
    const DiagnosticsReport report = small_report();
    BandPartition two;
    two.bands = {{0, 4}, {4, 8}};
    const ScalePlan plan = ScalePlan::identity(two, Pairing::half_split);
    EXPECT_THROW(build_report_table(report, &plan), ValidationError);
}
