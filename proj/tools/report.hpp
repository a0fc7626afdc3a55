#pragma once
// Aggregates eval outputs found under a run or grid directory.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace hsrgan::cli {

// Variant rows in summary tables, in order.
const std::vector<std::string>& report_variants();

double median(std::vector<double> values);

// Reads every <run>/eval/metrics.json below `root` (up to three levels deep)
// and writes summary.csv, als_summary.csv, ppl_histogram.svg, als_per_t.svg,
// attribute_vs_t.svg and report.json into `dir`. Returns the report document.
nlohmann::json write_report(const std::filesystem::path& root, const std::filesystem::path& dir);

}  // namespace hsrgan::cli
