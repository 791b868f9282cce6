#include "elab/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace elab {

namespace {

std::string num(double v, int prec = 3) {
    if (std::isnan(v)) return "-";
    char buf[32];
    snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

std::string svg_num(double v) {
    char buf[32];
    snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("report: cannot open " + path);
    f << content;
}

struct Series {
    std::string label;
    std::string color;
    std::vector<std::pair<double, double>> pts;
};

std::string line_chart_svg(const std::vector<Series>& series, const std::string& x_label,
                           const std::string& y_label, double y_min, double y_max) {
    const int W = 640, H = 420, ML = 56, MR = 16, MT = 16, MB = 44;
    double x_min = 1e300, x_max = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.pts) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
        }
    if (!(x_max > x_min)) { x_min -= 0.5; x_max += 0.5; }
    auto px = [&](double x) { return ML + (x - x_min) / (x_max - x_min) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
       << H - MB << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double y = y_min + (y_max - y_min) * i / 4.0;
        os << "<text x=\"" << ML - 6 << "\" y=\"" << svg_num(py(y) + 4)
           << "\" font-size=\"11\" text-anchor=\"end\">" << svg_num(y) << "</text>\n";
        os << "<line x1=\"" << ML << "\" y1=\"" << svg_num(py(y)) << "\" x2=\"" << W - MR
           << "\" y2=\"" << svg_num(py(y)) << "\" stroke=\"#dddddd\"/>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        double x = x_min + (x_max - x_min) * i / 4.0;
        os << "<text x=\"" << svg_num(px(x)) << "\" y=\"" << H - MB + 16
           << "\" font-size=\"11\" text-anchor=\"middle\">" << svg_num(x) << "</text>\n";
    }
    os << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 8
       << "\" font-size=\"12\" text-anchor=\"middle\">" << x_label << "</text>\n";
    os << "<text x=\"14\" y=\"" << (MT + H - MB) / 2
       << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << (MT + H - MB) / 2 << ")\">" << y_label << "</text>\n";
    int li = 0;
    for (const auto& s : series) {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (auto [x, y] : s.pts) os << svg_num(px(x)) << "," << svg_num(py(y)) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << W - MR - 140 << "\" y=\"" << MT + 16 + 16 * li
           << "\" font-size=\"12\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
        ++li;
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace

std::string render_table_text(const std::vector<CsvRow>& rows) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"run_id", "phase", "attack", "erasure", "acc_r", "acc_o", "acc_e",
                     "acc_dagger", "frechet", "exp_e", "exp_dagger", "auc"});
    for (const auto& r : rows) {
        cells.push_back({r.run_id, r.phase, r.attack.empty() ? "-" : r.attack,
                         r.erasure.empty() ? "-" : r.erasure, num(r.rep.acc_r), num(r.rep.acc_o),
                         num(r.rep.acc_e), num(r.rep.acc_dagger), num(r.rep.frechet, 4),
                         r.rep.exposure_e < 0 ? "-" : std::to_string(r.rep.exposure_e),
                         r.rep.exposure_dagger < 0 ? "-" : std::to_string(r.rep.exposure_dagger),
                         num(r.rep.auc)});
    }
    std::vector<size_t> width(cells[0].size(), 0);
    for (const auto& row : cells)
        for (size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    std::ostringstream os;
    for (size_t ri = 0; ri < cells.size(); ++ri) {
        for (size_t i = 0; i < cells[ri].size(); ++i) {
            os << cells[ri][i] << std::string(width[i] - cells[ri][i].size() + 2, ' ');
        }
        os << "\n";
        if (ri == 0) {
            size_t total = 0;
            for (size_t wv : width) total += wv + 2;
            os << std::string(total, '-') << "\n";
        }
    }
    return os.str();
}

nlohmann::json render_table_json(const std::vector<CsvRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json o;
        o["run_id"] = r.run_id;
        o["phase"] = r.phase;
        o["attack"] = r.attack;
        o["erasure"] = r.erasure;
        o["trigger"] = r.trigger;
        o["target"] = r.target;
        o["iteration"] = r.iteration;
        o["acc_r"] = r.rep.acc_r;
        o["acc_o"] = r.rep.acc_o;
        o["acc_e"] = r.rep.acc_e;
        o["acc_dagger"] = r.rep.acc_dagger;
        o["frechet"] = r.rep.frechet;
        if (r.rep.exposure_e >= 0) o["exposure_e"] = r.rep.exposure_e;
        if (r.rep.exposure_dagger >= 0) o["exposure_dagger"] = r.rep.exposure_dagger;
        if (!std::isnan(r.rep.auc)) o["auc"] = r.rep.auc;
        o["seed"] = r.rep.seed;
        arr.push_back(o);
    }
    return arr;
}

std::string render_trajectory_svg(const std::vector<CsvRow>& rows) {
    std::map<std::string, Series> by_metric;
    by_metric["acc_e"] = {"acc_e (target)", "#c0392b", {}};
    by_metric["acc_dagger"] = {"acc_dagger (trigger)", "#8e44ad", {}};
    by_metric["acc_r"] = {"acc_r (retention)", "#7f8c8d", {}};
    by_metric["acc_o"] = {"acc_o (held-out)", "#2980b9", {}};
    std::vector<CsvRow> traj;
    for (const auto& r : rows)
        if (r.phase == "trajectory") traj.push_back(r);
    if (traj.empty())
        for (const auto& r : rows)
            if (r.iteration >= 0) traj.push_back(r);
    std::sort(traj.begin(), traj.end(),
              [](const CsvRow& a, const CsvRow& b) { return a.iteration < b.iteration; });
    for (const auto& r : traj) {
        by_metric["acc_e"].pts.push_back({double(r.iteration), r.rep.acc_e});
        by_metric["acc_dagger"].pts.push_back({double(r.iteration), r.rep.acc_dagger});
        by_metric["acc_r"].pts.push_back({double(r.iteration), r.rep.acc_r});
        by_metric["acc_o"].pts.push_back({double(r.iteration), r.rep.acc_o});
    }
    std::vector<Series> series = {by_metric["acc_e"], by_metric["acc_dagger"],
                                  by_metric["acc_r"], by_metric["acc_o"]};
    return line_chart_svg(series, "erasure iteration", "accuracy", 0.0, 1.0);
}

std::string render_bar_chart_svg(const std::vector<CsvRow>& rows) {
    // one bar per (attack, erasure): exposure_dagger / max(exposure_e, 1)
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& r : rows) {
        if (r.rep.exposure_e < 0 || r.rep.exposure_dagger < 0) continue;
        double ratio = double(r.rep.exposure_dagger) / std::max<double>(double(r.rep.exposure_e), 1.0);
        std::string label = (r.attack.empty() ? "none" : r.attack) + "/" +
                            (r.erasure.empty() ? "none" : r.erasure);
        bars.push_back({label, ratio});
    }
    std::sort(bars.begin(), bars.end());
    const int W = 640, H = 420, ML = 56, MR = 16, MT = 16, MB = 110;
    double y_max = 1.0;
    for (auto& [l, v] : bars) y_max = std::max(y_max, v);
    y_max *= 1.1;
    auto py = [&](double y) { return H - MB - y / y_max * (H - MT - MB); };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
       << H - MB << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double y = y_max * i / 4.0;
        os << "<text x=\"" << ML - 6 << "\" y=\"" << svg_num(py(y) + 4)
           << "\" font-size=\"11\" text-anchor=\"end\">" << svg_num(y) << "</text>\n";
    }
    // reference line at ratio 1
    os << "<line x1=\"" << ML << "\" y1=\"" << svg_num(py(1.0)) << "\" x2=\"" << W - MR
       << "\" y2=\"" << svg_num(py(1.0)) << "\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>\n";
    double bw = bars.empty() ? 1.0 : double(W - ML - MR) / double(bars.size());
    for (size_t i = 0; i < bars.size(); ++i) {
        double x = ML + bw * double(i) + bw * 0.15;
        double w = bw * 0.7;
        os << "<rect x=\"" << svg_num(x) << "\" y=\"" << svg_num(py(bars[i].second))
           << "\" width=\"" << svg_num(w) << "\" height=\""
           << svg_num(py(0.0) - py(bars[i].second)) << "\" fill=\"#2980b9\"/>\n";
        os << "<text x=\"" << svg_num(x + w / 2) << "\" y=\"" << H - MB + 12
           << "\" font-size=\"10\" text-anchor=\"end\" transform=\"rotate(-45 "
           << svg_num(x + w / 2) << " " << H - MB + 12 << ")\">" << bars[i].first << "</text>\n";
    }
    os << "<text x=\"14\" y=\"" << (MT + H - MB) / 2
       << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << (MT + H - MB) / 2 << ")\">exposure ratio (trigger / raw)</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string render_roc_svg(const std::vector<std::pair<double, int>>& scored) {
    // sweep thresholds from high to low
    std::vector<std::pair<double, int>> s = scored;
    std::sort(s.begin(), s.end(), [](auto& a, auto& b) { return a.first > b.first; });
    long n_pos = 0, n_neg = 0;
    for (auto& [v, y] : s) (y ? n_pos : n_neg)++;
    Series roc{"ROC", "#c0392b", {}};
    roc.pts.push_back({0.0, 0.0});
    long tp = 0, fp = 0;
    size_t i = 0;
    while (i < s.size()) {
        size_t j = i;
        while (j + 1 < s.size() && s[j + 1].first == s[i].first) ++j;
        for (size_t k = i; k <= j; ++k) (s[k].second ? tp : fp)++;
        roc.pts.push_back({double(fp) / std::max<long>(n_neg, 1),
                           double(tp) / std::max<long>(n_pos, 1)});
        i = j + 1;
    }
    Series diag{"chance", "#999999", {{0.0, 0.0}, {1.0, 1.0}}};
    return line_chart_svg({roc, diag}, "false positive rate", "true positive rate", 0.0, 1.0);
}

std::string scores_csv_header() { return "run_id,label,score"; }

std::vector<std::pair<double, int>> parse_scores_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != scores_csv_header())
        throw std::invalid_argument("scores csv: schema mismatch");
    std::vector<std::pair<double, int>> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto p1 = line.find(',');
        auto p2 = line.find(',', p1 + 1);
        out.push_back({std::stod(line.substr(p2 + 1)), std::stoi(line.substr(p1 + 1, p2 - p1 - 1))});
    }
    return out;
}

void report_emit(const std::string& csv_text, const std::string& kind,
                 const std::string& out_base) {
    if (kind == "roc-plot") {
        auto scored = parse_scores_csv(csv_text);
        write_file(out_base + ".svg", render_roc_svg(scored));
        return;
    }
    auto rows = csv_parse(csv_text);
    if (kind == "table") {
        write_file(out_base + ".txt", render_table_text(rows));
        write_file(out_base + ".json", render_table_json(rows).dump(2) + "\n");
    } else if (kind == "trajectory-plot") {
        write_file(out_base + ".svg", render_trajectory_svg(rows));
    } else if (kind == "bar-chart") {
        write_file(out_base + ".svg", render_bar_chart_svg(rows));
    } else {
        throw std::invalid_argument("report_emit: unknown kind " + kind);
    }
}

} // namespace elab
