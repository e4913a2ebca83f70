#include "modfl/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "modfl/error.hpp"

namespace ModFL {

const char* const kVersion = "0.1.0";

namespace {

std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::runtime, "cannot write '" + path + "'");
    out << content;
    if (!out) fail(ErrorKind::runtime, "write failed for '" + path + "'");
}

using SeriesKey = std::tuple<std::string, std::string, std::string>;  // framework, arch, cohort

std::map<SeriesKey, std::vector<std::pair<int, double>>> accuracy_series(
    const std::vector<std::vector<MetricRow>>& inputs) {
    std::map<SeriesKey, std::vector<std::pair<int, double>>> series;
    for (const auto& rows : inputs) {
        for (const MetricRow& r : rows) {
            if (r.metric != "accuracy") continue;
            series[{r.framework, r.arch, r.cohort}].emplace_back(r.round, r.value);
        }
    }
    for (auto& [key, points] : series) {
        std::sort(points.begin(), points.end());
    }
    return series;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    out << "round,framework,arch,cohort,metric,value\n";
    for (const MetricRow& r : rows) {
        out << r.round << "," << r.framework << "," << r.arch << "," << r.cohort << ","
            << r.metric << "," << format_value(r.value) << "\n";
    }
    write_file(path, out.str());
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::csv, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::csv, "'" + path + "': empty file");
    if (line != "round,framework,arch,cohort,metric,value") {
        fail(ErrorKind::csv, "'" + path + "' line 1: unexpected header '" + line + "'");
    }
    std::vector<MetricRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 6) {
            fail(ErrorKind::csv, "'" + path + "' line " + std::to_string(lineno) +
                                     ": expected 6 fields, got " +
                                     std::to_string(fields.size()));
        }
        MetricRow r;
        try {
            std::size_t pos = 0;
            r.round = std::stoi(fields[0], &pos);
            if (pos != fields[0].size()) throw std::invalid_argument("round");
            r.value = std::stod(fields[5], &pos);
            if (pos != fields[5].size()) throw std::invalid_argument("value");
        } catch (const std::exception&) {
            fail(ErrorKind::csv, "'" + path + "' line " + std::to_string(lineno) +
                                     ": non-numeric round or value");
        }
        r.framework = fields[1];
        r.arch = fields[2];
        r.cohort = fields[3];
        r.metric = fields[4];
        rows.push_back(std::move(r));
    }
    if (rows.empty()) fail(ErrorKind::csv, "'" + path + "': no data rows after header");
    return rows;
}

std::string render_summary(const std::vector<MetricRow>& rows) {
    int last = 0;
    for (const MetricRow& r : rows) last = std::max(last, r.round);
    std::ostringstream out;
    out << "final round " << last << "\n";
    auto series = accuracy_series({rows});
    for (const auto& [key, points] : series) {
        const auto& [framework, arch, cohort] = key;
        char acc[32];
        std::snprintf(acc, sizeof(acc), "%.4f", points.back().second);
        out << framework << " " << arch << " " << cohort << " accuracy=" << acc << "\n";
    }
    return out.str();
}

std::string render_plot_svg(const std::vector<std::vector<MetricRow>>& inputs) {
    auto series = accuracy_series(inputs);
    if (series.empty()) fail(ErrorKind::csv, "no accuracy series to plot");

    static const char* palette[10] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                      "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    int max_round = 1;
    for (const auto& [key, points] : series) {
        for (const auto& [round, acc] : points) max_round = std::max(max_round, round);
    }

    const double x0 = 70, x1 = 620, y0 = 460, y1 = 40;
    auto px = [&](double round) {
        return x0 + (round / static_cast<double>(max_round)) * (x1 - x0);
    };
    auto py = [&](double acc) { return y0 - acc * (y0 - y1); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"880\" height=\"520\" "
           "viewBox=\"0 0 880 520\">\n";
    svg << "<rect width=\"880\" height=\"520\" fill=\"white\"/>\n";
    svg << "<text x=\"345\" y=\"500\" font-family=\"sans-serif\" font-size=\"14\">"
           "communication round</text>\n";
    svg << "<text x=\"20\" y=\"250\" font-family=\"sans-serif\" font-size=\"14\" "
           "transform=\"rotate(-90 20 250)\">test accuracy</text>\n";

    for (int i = 0; i <= 10; ++i) {
        const double acc = i / 10.0;
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                      "stroke=\"#dddddd\"/>\n"
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                      "font-size=\"11\" text-anchor=\"end\">%.1f</text>\n",
                      x0, py(acc), x1, py(acc), x0 - 6, py(acc) + 4, acc);
        svg << buf;
    }
    const int x_ticks = std::min(10, max_round);
    for (int i = 0; i <= x_ticks; ++i) {
        const double round = max_round * (i / static_cast<double>(x_ticks));
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" "
                      "font-size=\"11\" text-anchor=\"middle\">%d</text>\n",
                      px(round), y0 + 18, static_cast<int>(round));
        svg << buf;
    }
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y1 << "\" x2=\"" << x0 << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n";

    std::size_t idx = 0;
    for (const auto& [key, points] : series) {
        const auto& [framework, arch, cohort] = key;
        const char* color = palette[idx % 10];
        std::ostringstream path;
        for (std::size_t i = 0; i < points.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "",
                          px(points[i].first), py(points[i].second));
            path << buf;
        }
        svg << "<polyline class=\"series\" points=\"" << path.str()
            << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
        const double ly = 60 + 22 * static_cast<double>(idx);
        svg << "<line x1=\"640\" y1=\"" << ly << "\" x2=\"668\" y2=\"" << ly << "\" stroke=\""
            << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"674\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << framework << " " << arch
            << " " << cohort << "</text>\n";
        ++idx;
    }
    svg << "</svg>\n";
    return svg.str();
}

CompareReport compare_metrics(const std::vector<MetricRow>& a,
                              const std::vector<MetricRow>& b) {
    using Key = std::tuple<int, std::string, std::string>;  // round, arch, cohort
    auto index = [](const std::vector<MetricRow>& rows) {
        std::map<Key, double> out;
        for (const MetricRow& r : rows) {
            if (r.metric == "accuracy") out[{r.round, r.arch, r.cohort}] = r.value;
        }
        return out;
    };
    std::map<Key, double> ia = index(a), ib = index(b);
    if (ia.empty() || ib.empty()) fail(ErrorKind::comparison, "no accuracy rows to compare");
    if (ia.size() != ib.size()) {
        fail(ErrorKind::comparison, "round grids differ: " + std::to_string(ia.size()) +
                                        " vs " + std::to_string(ib.size()) +
                                        " accuracy points");
    }
    for (const auto& [key, value] : ia) {
        if (!ib.count(key)) {
            const auto& [round, arch, cohort] = key;
            fail(ErrorKind::comparison, "round " + std::to_string(round) + " " + arch + " " +
                                            cohort + " present only in the first series");
        }
    }

    CompareReport report;
    int last = 0;
    for (const auto& [key, va] : ia) {
        const auto& [round, arch, cohort] = key;
        report.per_round.push_back({round, arch, cohort, va, ib[key], va - ib[key]});
        last = std::max(last, round);
    }
    std::ostringstream text;
    text << "round,arch,cohort,a,b,delta\n";
    for (const CompareDelta& d : report.per_round) {
        text << d.round << "," << d.arch << "," << d.cohort << "," << format_value(d.a) << ","
             << format_value(d.b) << "," << format_value(d.delta) << "\n";
        if (d.round == last) report.final_round.push_back(d);
    }
    text << "final round " << last << ":\n";
    for (const CompareDelta& d : report.final_round) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "  %s %s: a=%.4f b=%.4f delta=%+.4f\n",
                      d.arch.c_str(), d.cohort.c_str(), d.a, d.b, d.delta);
        text << buf;
    }
    report.text = text.str();
    return report;
}

namespace {

void write_manifest(const std::string& dir, const ExperimentConfig& cfg,
                    const std::string& status, const std::string& summary) {
    nlohmann::json j;
    j["config"] = serialize_config(cfg);
    j["seed"] = cfg.seed;
    j["status"] = status;
    j["version"] = kVersion;
    if (!summary.empty()) j["summary"] = summary;
    write_file(dir + "/manifest.json", j.dump(2) + "\n");
}

}  // namespace

void run_to_artifacts(const ExperimentConfig& cfg, std::size_t threads) {
    std::filesystem::create_directories(cfg.output_dir);
    write_manifest(cfg.output_dir, cfg, "incomplete", "");

    ExperimentResult result = run_experiment(cfg, threads);

    write_metrics_csv(cfg.output_dir + "/metrics.csv", result.rows);
    const std::string summary = render_summary(result.rows);
    write_file(cfg.output_dir + "/summary.txt", summary);
    write_manifest(cfg.output_dir, cfg, "complete", summary);
}

}  // namespace ModFL
