#pragma once

#include <string>
#include <vector>

#include "debiaslab/records.hpp"

namespace debiaslab {

enum class TableShape { single, sequential, cross_type };
const char* table_shape_name(TableShape shape);

std::string csv_escape(const std::string& field);
void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& rows);

// Fixed-format numeric cells ("74.91", "15.00 ± 5.00").
std::string format_metric(double value);
std::string format_mean_std(double mean, double stdev);

// Renders record-derived tables into `out_dir`; returns the written paths.
// single      -> editors x {success, knowledge, gen_fwd, gen_bwd, average}
// sequential  -> metric x method x checkpoint grid per population
// cross_type  -> 4x4 edit-type x eval-type matrix per editor
// Throws report-error when no record matches the requested shape.
std::vector<std::string> emit_tables(const std::vector<MetricRecord>& records, TableShape shape,
                                     const std::string& out_dir);

// One CSV and one SVG panel per metric x population over the sequential
// aggregates: a line per editor with a shaded mean +/- std band, x-axis
// log-scaled over checkpoints. Returns the written paths.
std::vector<std::string> emit_curves(const std::vector<MetricRecord>& records,
                                     const std::string& out_dir);

} // namespace debiaslab
