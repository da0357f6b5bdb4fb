#include "debiaslab/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "debiaslab/error.hpp"

namespace debiaslab {

namespace fs = std::filesystem;

const char* table_shape_name(TableShape shape) {
    switch (shape) {
        case TableShape::single: return "single";
        case TableShape::sequential: return "sequential";
        case TableShape::cross_type: return "cross_type";
    }
    return "single";
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot write CSV: " + path);
    }
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i > 0) out << ",";
            out << csv_escape(row[i]);
        }
        out << "\n";
    }
}

std::string format_metric(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", value);
    return buf;
}

std::string format_mean_std(double mean, double stdev) {
    return format_metric(mean) + " ± " + format_metric(stdev);
}

namespace {

std::string opt_cell(const std::optional<double>& v) {
    return v.has_value() ? format_metric(*v) : "-";
}

std::string number_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::vector<std::string> sorted_editors(const std::vector<const MetricRecord*>& records) {
    std::set<std::string> names;
    for (const MetricRecord* r : records) names.insert(r->editor_kind);
    return {names.begin(), names.end()};
}

std::vector<const MetricRecord*> select(const std::vector<MetricRecord>& records,
                                        Protocol protocol, const std::string& scope) {
    std::vector<const MetricRecord*> out;
    for (const MetricRecord& r : records) {
        if (r.protocol == protocol && r.scope == scope) out.push_back(&r);
    }
    return out;
}

} // namespace

std::vector<std::string> emit_tables(const std::vector<MetricRecord>& records, TableShape shape,
                                     const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<std::string> written;

    if (shape == TableShape::single) {
        auto rows_src = select(records, Protocol::single, "aggregate");
        if (rows_src.empty()) {
            throw Error(ErrorCode::report_error,
                        "no single-edit aggregate records; missing fields: protocol=single, "
                        "scope=aggregate");
        }
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"editor", "success_rate", "knowledge_acc", "gen_forward", "gen_backward",
                        "average"});
        for (const std::string& editor : sorted_editors(rows_src)) {
            for (const MetricRecord* r : rows_src) {
                if (r->editor_kind != editor) continue;
                rows.push_back({editor, opt_cell(r->success_rate), opt_cell(r->knowledge_acc),
                                opt_cell(r->gen_forward), opt_cell(r->gen_backward),
                                opt_cell(r->average)});
                break;
            }
        }
        std::string path = (fs::path(out_dir) / "single_edit.csv").string();
        write_csv(path, rows);
        written.push_back(path);
        return written;
    }

    if (shape == TableShape::sequential) {
        auto rows_src = select(records, Protocol::sequential, "aggregate");
        if (rows_src.empty()) {
            throw Error(ErrorCode::report_error,
                        "no sequential aggregate records; missing fields: protocol=sequential, "
                        "scope=aggregate");
        }
        std::set<int> checkpoint_set;
        for (const MetricRecord* r : rows_src) checkpoint_set.insert(r->checkpoint);
        std::vector<int> checkpoints(checkpoint_set.begin(), checkpoint_set.end());
        std::vector<std::string> editors = sorted_editors(rows_src);

        struct MetricField {
            const char* label;
            std::optional<double> MetricRecord::* mean;
            std::optional<double> MetricRecord::* stdev;
        };
        const MetricField fields[] = {
            {"Success Rate", &MetricRecord::success_rate, &MetricRecord::success_std},
            {"GEN_backward", &MetricRecord::gen_backward, &MetricRecord::gen_backward_std},
            {"GEN_forward", &MetricRecord::gen_forward, &MetricRecord::gen_forward_std},
            {"Knowledge", &MetricRecord::knowledge_acc, &MetricRecord::knowledge_std},
        };

        for (Population pop : {Population::edited, Population::unedited}) {
            std::vector<std::vector<std::string>> rows;
            std::vector<std::string> header = {"metric", "method"};
            for (int c : checkpoints) header.push_back(std::to_string(c));
            rows.push_back(header);
            for (const MetricField& field : fields) {
                for (const std::string& editor : editors) {
                    std::vector<std::string> row = {field.label, editor};
                    for (int c : checkpoints) {
                        std::string cell = "-";
                        for (const MetricRecord* r : rows_src) {
                            if (r->editor_kind != editor || r->checkpoint != c ||
                                r->population != pop) {
                                continue;
                            }
                            const auto& mean = r->*(field.mean);
                            const auto& stdev = r->*(field.stdev);
                            if (mean.has_value()) {
                                cell = stdev.has_value() ? format_mean_std(*mean, *stdev)
                                                         : format_metric(*mean);
                            }
                            break;
                        }
                        row.push_back(cell);
                    }
                    rows.push_back(row);
                }
            }
            std::string path =
                (fs::path(out_dir) /
                 (std::string("sequential_") + population_name(pop) + ".csv")).string();
            write_csv(path, rows);
            written.push_back(path);
        }
        return written;
    }

    // cross_type
    auto rows_src = select(records, Protocol::cross_type, "aggregate");
    std::vector<const MetricRecord*> cells;
    for (const MetricRecord* r : rows_src) {
        if (r->edit_bias_type && r->eval_bias_type) cells.push_back(r);
    }
    if (cells.empty()) {
        throw Error(ErrorCode::report_error,
                    "no cross-type records; missing fields: protocol=cross_type, "
                    "edit_bias_type, eval_bias_type");
    }
    const char* types[] = {"Race", "Gender", "Religion", "Profession"};
    for (const std::string& editor : sorted_editors(cells)) {
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"edit\\eval", "Race", "Gender", "Religion", "Profession"});
        for (const char* edit_type : types) {
            std::vector<std::string> row = {edit_type};
            for (const char* eval_type : types) {
                std::string cell = "-";
                for (const MetricRecord* r : cells) {
                    if (r->editor_kind == editor && *r->edit_bias_type == edit_type &&
                        *r->eval_bias_type == eval_type) {
                        cell = opt_cell(r->success_rate);
                        break;
                    }
                }
                row.push_back(cell);
            }
            rows.push_back(row);
        }
        std::string path = (fs::path(out_dir) / ("cross_type_" + editor + ".csv")).string();
        write_csv(path, rows);
        written.push_back(path);
    }
    return written;
}

// ---------------------------------------------------------------------------
// curves

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

struct CurvePoint {
    int checkpoint;
    double mean;
    double stdev;
    int n_runs;
};

std::string svg_plot(const std::string& title,
                     const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& series,
                     const std::vector<int>& ticks) {
    const double width = 640, height = 400;
    const double ml = 60, mr = 20, mt = 30, mb = 45;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;

    double x_min = std::log2(static_cast<double>(ticks.front()));
    double x_max = std::log2(static_cast<double>(ticks.back()));
    if (x_max <= x_min) x_max = x_min + 1.0;
    auto x_of = [&](int checkpoint) {
        double lx = std::log2(static_cast<double>(checkpoint));
        return ml + (lx - x_min) / (x_max - x_min) * plot_w;
    };
    auto y_of = [&](double value) {
        double clamped = std::min(100.0, std::max(0.0, value));
        return mt + (100.0 - clamped) / 100.0 * plot_h;
    };
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"13\">" << title << "</text>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w
        << "\" y2=\"" << mt + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"black\"/>\n";
    for (int tick : ticks) {
        double x = x_of(tick);
        svg << "<line x1=\"" << fmt(x) << "\" y1=\"" << mt + plot_h << "\" x2=\"" << fmt(x)
            << "\" y2=\"" << mt + plot_h + 4 << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << fmt(x) << "\" y=\"" << mt + plot_h + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << tick
            << "</text>\n";
    }
    for (int y = 0; y <= 100; y += 20) {
        double yy = y_of(y);
        svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << fmt(yy) << "\" x2=\"" << ml << "\" y2=\""
            << fmt(yy) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << fmt(yy + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << y
            << "</text>\n";
    }

    size_t color_index = 0;
    for (const auto& [editor, points] : series) {
        const char* color = kPalette[color_index % (sizeof(kPalette) / sizeof(kPalette[0]))];
        ++color_index;
        if (points.empty()) continue;
        // variance band
        std::ostringstream band;
        band << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
        for (const CurvePoint& p : points) {
            band << fmt(x_of(p.checkpoint)) << "," << fmt(y_of(p.mean + p.stdev)) << " ";
        }
        for (auto it = points.rbegin(); it != points.rend(); ++it) {
            band << fmt(x_of(it->checkpoint)) << "," << fmt(y_of(it->mean - it->stdev)) << " ";
        }
        band << "\"/>";
        svg << band.str() << "\n";
        // line
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const CurvePoint& p : points) {
            svg << fmt(x_of(p.checkpoint)) << "," << fmt(y_of(p.mean)) << " ";
        }
        svg << "\"/>\n";
        for (const CurvePoint& p : points) {
            svg << "<circle cx=\"" << fmt(x_of(p.checkpoint)) << "\" cy=\"" << fmt(y_of(p.mean))
                << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }
        // legend entry
        double ly = mt + 14.0 * static_cast<double>(color_index);
        svg << "<rect x=\"" << ml + plot_w - 120 << "\" y=\"" << fmt(ly - 8)
            << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
        svg << "<text x=\"" << ml + plot_w - 106 << "\" y=\"" << fmt(ly + 1)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << editor << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace

std::vector<std::string> emit_curves(const std::vector<MetricRecord>& records,
                                     const std::string& out_dir) {
    auto rows_src = select(records, Protocol::sequential, "aggregate");
    if (rows_src.empty()) {
        throw Error(ErrorCode::report_error, "no sequential aggregate records to plot");
    }
    fs::create_directories(out_dir);

    std::set<int> checkpoint_set;
    for (const MetricRecord* r : rows_src) checkpoint_set.insert(r->checkpoint);
    std::vector<int> checkpoints(checkpoint_set.begin(), checkpoint_set.end());
    std::vector<std::string> editors = sorted_editors(rows_src);

    struct MetricField {
        const char* key;
        std::optional<double> MetricRecord::* mean;
        std::optional<double> MetricRecord::* stdev;
    };
    const MetricField fields[] = {
        {"success_rate", &MetricRecord::success_rate, &MetricRecord::success_std},
        {"knowledge_acc", &MetricRecord::knowledge_acc, &MetricRecord::knowledge_std},
        {"gen_forward", &MetricRecord::gen_forward, &MetricRecord::gen_forward_std},
        {"gen_backward", &MetricRecord::gen_backward, &MetricRecord::gen_backward_std},
    };

    std::vector<std::string> written;
    for (const MetricField& field : fields) {
        for (Population pop : {Population::edited, Population::unedited}) {
            std::vector<std::vector<std::string>> csv_rows;
            csv_rows.push_back({"editor", "checkpoint", "mean", "std", "n_runs"});
            std::vector<std::pair<std::string, std::vector<CurvePoint>>> series;
            for (const std::string& editor : editors) {
                std::vector<CurvePoint> points;
                for (int c : checkpoints) {
                    const MetricRecord* found = nullptr;
                    for (const MetricRecord* r : rows_src) {
                        if (r->editor_kind == editor && r->checkpoint == c &&
                            r->population == pop) {
                            found = r;
                            break;
                        }
                    }
                    if (found == nullptr || !(found->*(field.mean)).has_value()) {
                        std::cerr << "emit_curves: missing " << field.key << "/"
                                  << population_name(pop) << " for " << editor << " at checkpoint "
                                  << c << "; plotted with a gap\n";
                        continue;
                    }
                    CurvePoint p;
                    p.checkpoint = c;
                    p.mean = *(found->*(field.mean));
                    p.stdev = (found->*(field.stdev)).value_or(0.0);
                    p.n_runs = found->n_runs.value_or(1);
                    points.push_back(p);
                    csv_rows.push_back({editor, std::to_string(c), number_full(p.mean),
                                        number_full(p.stdev), std::to_string(p.n_runs)});
                }
                series.emplace_back(editor, std::move(points));
            }
            std::string stem = std::string("curve_") + field.key + "_" + population_name(pop);
            std::string csv_path = (fs::path(out_dir) / (stem + ".csv")).string();
            write_csv(csv_path, csv_rows);
            written.push_back(csv_path);
            std::string title = std::string(field.key) + " (" + population_name(pop) + ")";
            std::string svg = svg_plot(title, series, checkpoints);
            std::string svg_path = (fs::path(out_dir) / (stem + ".svg")).string();
            std::ofstream out(svg_path);
            if (!out) {
                throw Error(ErrorCode::io_error, "cannot write plot: " + svg_path);
            }
            out << svg;
            written.push_back(svg_path);
        }
    }
    return written;
}

} // namespace debiaslab
