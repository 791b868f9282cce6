#pragma once

#include "elab/eval.hpp"

#include <json.hpp>

namespace elab {

// kind: table | trajectory-plot | roc-plot | bar-chart. Writes out_base.txt
// and out_base.json for tables, out_base.svg for plots. roc-plot consumes the
// scores CSV ("run_id,label,score"), the others the results CSV.
void report_emit(const std::string& csv_text, const std::string& kind,
                 const std::string& out_base);

std::string render_table_text(const std::vector<CsvRow>& rows);
nlohmann::json render_table_json(const std::vector<CsvRow>& rows);
std::string render_trajectory_svg(const std::vector<CsvRow>& rows);
std::string render_bar_chart_svg(const std::vector<CsvRow>& rows);
std::string render_roc_svg(const std::vector<std::pair<double, int>>& scored);

std::string scores_csv_header();
std::vector<std::pair<double, int>> parse_scores_csv(const std::string& text);

} // namespace elab
