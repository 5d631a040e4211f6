#pragma once

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cosml/checkpoint.hpp"
#include "cosml/errors.hpp"

namespace cosml {

struct ResultsRow {
    std::string method;
    int holdout_id = 0;
    std::uint64_t seed = 0;
    int n_way = 0;
    int k_shot = 0;
    int eval_tasks = 0;
    double mean_accuracy = 0.0;
    double ci95_halfwidth = 0.0;
    double wall_time_seconds = 0.0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_num(const std::string& s, int line_no) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw ConfigError("results csv: bad number '" + s + "' at line " + std::to_string(line_no));
    }
    return v;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

} // namespace detail

inline std::vector<ResultsRow> parse_results_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("results csv: empty file (missing header at line 1)");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "method,holdout_id,seed,n_way,k_shot,eval_tasks,mean_accuracy,ci95_halfwidth,"
                "wall_time_seconds") {
        throw ConfigError("results csv: unexpected header at line 1");
    }
    std::vector<ResultsRow> rows;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f = detail::split_csv_line(line);
        if (f.size() != 9) {
            throw ConfigError("results csv: expected 9 fields, got " + std::to_string(f.size()) +
                              " at line " + std::to_string(line_no));
        }
        ResultsRow r;
        r.method = f[0];
        r.holdout_id = static_cast<int>(detail::parse_num(f[1], line_no));
        r.seed = static_cast<std::uint64_t>(detail::parse_num(f[2], line_no));
        r.n_way = static_cast<int>(detail::parse_num(f[3], line_no));
        r.k_shot = static_cast<int>(detail::parse_num(f[4], line_no));
        r.eval_tasks = static_cast<int>(detail::parse_num(f[5], line_no));
        r.mean_accuracy = detail::parse_num(f[6], line_no);
        r.ci95_halfwidth = detail::parse_num(f[7], line_no);
        r.wall_time_seconds = detail::parse_num(f[8], line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<ResultsRow> load_results_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open results csv: " + path);
    return parse_results_csv(is);
}

// Bar chart of mean accuracy with 95% CI whiskers, one bar per results row,
// grouped by holdout domain and colored by method. Each bar carries a
// <title> tooltip with its exact values.
inline void write_plot_svg(std::ostream& os, const std::vector<ResultsRow>& rows) {
    const double width = 960.0, height = 440.0;
    const double ml = 64.0, mr = 200.0, mt = 28.0, mb = 56.0;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;

    std::vector<int> holdouts;
    std::vector<std::string> methods;
    for (const ResultsRow& r : rows) {
        if (std::find(holdouts.begin(), holdouts.end(), r.holdout_id) == holdouts.end()) {
            holdouts.push_back(r.holdout_id);
        }
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
    }
    static const char* palette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"};
    auto method_color = [&](const std::string& m) {
        std::size_t i = std::find(methods.begin(), methods.end(), m) - methods.begin();
        return palette[i % 6];
    };
    auto y_of = [&](double acc) { return mt + plot_h * (1.0 - acc); };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
       << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << ml << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">"
          "Cross-domain few-shot accuracy by holdout domain</text>\n";

    for (int tick = 0; tick <= 5; ++tick) {
        double acc = tick / 5.0;
        double y = y_of(acc);
        os << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << ml + plot_w << "\" y2=\"" << y
           << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << acc
           << "</text>\n";
    }
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\""
       << mt + plot_h << "\" stroke=\"black\"/>\n";

    if (!rows.empty()) {
        std::map<int, std::vector<std::size_t>> by_holdout;
        for (std::size_t i = 0; i < rows.size(); ++i) by_holdout[rows[i].holdout_id].push_back(i);
        const double group_w = plot_w / static_cast<double>(holdouts.size());
        for (std::size_t g = 0; g < holdouts.size(); ++g) {
            const std::vector<std::size_t>& members = by_holdout[holdouts[g]];
            const double slot_w = group_w / static_cast<double>(members.size() + 1);
            const double bar_w = slot_w * 0.8;
            for (std::size_t s = 0; s < members.size(); ++s) {
                const ResultsRow& r = rows[members[s]];
                double x = ml + group_w * static_cast<double>(g) + slot_w * (static_cast<double>(s) + 0.6);
                double acc = std::isfinite(r.mean_accuracy) ? r.mean_accuracy : 0.0;
                double y = y_of(acc);
                os << "<rect class=\"bar\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w
                   << "\" height=\"" << (mt + plot_h - y) << "\" fill=\"" << method_color(r.method)
                   << "\">";
                os << "<title>method=" << detail::xml_escape(r.method) << " holdout=" << r.holdout_id
                   << " seed=" << r.seed << " mean=" << format_double(r.mean_accuracy)
                   << " ci95=" << format_double(r.ci95_halfwidth) << "</title>";
                os << "</rect>\n";
                if (std::isfinite(r.ci95_halfwidth) && r.ci95_halfwidth > 0.0) {
                    double cx = x + bar_w / 2.0;
                    double y_lo = y_of(std::max(0.0, acc - r.ci95_halfwidth));
                    double y_hi = y_of(std::min(1.0, acc + r.ci95_halfwidth));
                    os << "<line class=\"ci\" x1=\"" << cx << "\" y1=\"" << y_hi << "\" x2=\"" << cx
                       << "\" y2=\"" << y_lo << "\" stroke=\"black\"/>\n";
                    os << "<line x1=\"" << cx - 3 << "\" y1=\"" << y_hi << "\" x2=\"" << cx + 3
                       << "\" y2=\"" << y_hi << "\" stroke=\"black\"/>\n";
                    os << "<line x1=\"" << cx - 3 << "\" y1=\"" << y_lo << "\" x2=\"" << cx + 3
                       << "\" y2=\"" << y_lo << "\" stroke=\"black\"/>\n";
                }
            }
            double label_x = ml + group_w * (static_cast<double>(g) + 0.5);
            os << "<text x=\"" << label_x << "\" y=\"" << mt + plot_h + 20
               << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">holdout "
               << holdouts[g] << "</text>\n";
        }
    }

    for (std::size_t i = 0; i < methods.size(); ++i) {
        double y = mt + 10 + 20.0 * static_cast<double>(i);
        os << "<rect x=\"" << ml + plot_w + 16 << "\" y=\"" << y - 10
           << "\" width=\"12\" height=\"12\" fill=\"" << method_color(methods[i]) << "\"/>\n";
        os << "<text x=\"" << ml + plot_w + 34 << "\" y=\"" << y
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(methods[i])
           << "</text>\n";
    }
    os << "</svg>\n";
}

inline void plot_results(const std::string& csv_path, const std::string& out_path) {
    std::vector<ResultsRow> rows = load_results_csv(csv_path);
    std::ofstream os(out_path);
    if (!os) throw ConfigError("cannot open plot output: " + out_path);
    write_plot_svg(os, rows);
    if (!os) throw std::runtime_error("failed writing plot: " + out_path);
}

} // namespace cosml
