#pragma once

// Collects result files from a directory and writes them out as CSV tables,
// one JSON document, or long-format plot tables {chart_id, series, x, y}.
//
// Inputs are recognised by content, not by name:
//   score file      object with role, L, J, scores
//   edge list       array of {emit, rec, score}, or {edges: [...]} without nodes
//   circuit         object with nodes and edges
//   uncertain stats object with threshold, last_shots, roles
//   metrics         CSV whose header is config,dataset,metric,value,n,seed
// Files named *.manifest.json and anything unrecognised are skipped.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "circuitlab/cma.hpp"
#include "circuitlab/eval.hpp"

namespace circuitlab {

class IOError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ReportFormat { Csv, Json, PlotData };

std::string to_string(ReportFormat f);  // csv json plot-data
ReportFormat report_format_from_string(const std::string& s);

template <typename T>
struct Sourced {
    std::string source;  // file name relative to the input directory
    T value;
};

struct ReportInputs {
    std::vector<Sourced<AIEMatrix>> scores;             // by (role, model_id, source)
    std::vector<Sourced<std::vector<PathEdgeScore>>> edges;
    std::vector<Sourced<CircuitGraph>> circuits;
    std::vector<Sourced<std::vector<MetricRow>>> metrics;
    std::vector<Sourced<UncertainStats>> uncertain;
    std::vector<std::string> skipped;
};

// Reads every regular file below dir in sorted path order. Throws IOError when
// dir is missing and DataError when a recognised file is malformed.
ReportInputs load_report_inputs(const std::filesystem::path& dir);

struct PlotPoint {
    std::string chart_id;
    std::string series;
    std::string x;
    double y = 0.0;
};

std::vector<PlotPoint> plot_data(const ReportInputs& in, int top_heads = 5, double layer_pct = 0.15);

// Each returns the full file text.
std::string plot_data_csv(const std::vector<PlotPoint>& points);
std::string aie_csv(const ReportInputs& in);
std::string layer_scores_csv(const ReportInputs& in, double layer_pct = 0.15);
std::string top_heads_csv(const ReportInputs& in, int top_heads = 5);
std::string edges_csv(const ReportInputs& in);
std::string circuit_nodes_csv(const ReportInputs& in);
std::string report_metrics_csv(const ReportInputs& in);
std::string uncertain_csv(const ReportInputs& in);
json report_json(const ReportInputs& in, int top_heads = 5, double layer_pct = 0.15);

// Writes the chosen format into out_dir (created if needed) and returns the
// written paths. Output bytes depend only on the input files.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& in_dir, ReportFormat format,
                                               const std::filesystem::path& out_dir);

}  // namespace circuitlab
