#include "circuitlab/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "circuitlab/csv.hpp"

namespace circuitlab {

namespace fs = std::filesystem;

std::string to_string(ReportFormat f) {
    switch (f) {
        case ReportFormat::Csv: return "csv";
        case ReportFormat::Json: return "json";
        case ReportFormat::PlotData: return "plot-data";
    }
    return "?";
}

ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::Csv;
    if (s == "json") return ReportFormat::Json;
    if (s == "plot-data") return ReportFormat::PlotData;
    throw std::invalid_argument("unknown report format '" + s + "'");
}

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IOError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write " + p.string());
    out << text;
    if (!out) throw IOError("write failed for " + p.string());
}

bool ends_with(const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

bool is_edge(const json& e) { return e.is_object() && e.contains("emit") && e.contains("rec"); }

bool is_edge_list(const json& j) {
    return j.is_array() && std::all_of(j.begin(), j.end(), [](const json& e) { return is_edge(e); });
}

std::string label(const HeadId& h) { return "L" + std::to_string(h.layer) + "H" + std::to_string(h.head); }

std::string num(double v) { return format_number(v); }

std::string kind_name(const std::optional<CorruptionKind>& k) { return k ? to_string(*k) : "all"; }

int argmax(const std::vector<double>& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

std::string chart_key(const Sourced<AIEMatrix>& m) { return m.value.model_id + "/" + to_string(m.value.role); }

std::string roles_joined(const std::vector<HeadRole>& roles) {
    std::string out;
    for (HeadRole r : roles) out += (out.empty() ? "" : ";") + to_string(r);
    return out;
}

}  // namespace

ReportInputs load_report_inputs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IOError("input directory " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());

    ReportInputs in;
    for (const auto& path : files) {
        const std::string name = fs::relative(path, dir).generic_string();
        const std::string ext = path.extension().string();
        if (ends_with(name, ".manifest.json")) {
            in.skipped.push_back(name);
            continue;
        }
        if (ext == ".csv") {
            const std::string text = read_file(path);
            if (text.rfind("config,dataset,metric,value,n,seed", 0) == 0) {
                in.metrics.push_back({name, metrics_from_csv(text)});
            } else {
                in.skipped.push_back(name);
            }
            continue;
        }
        if (ext != ".json") {
            in.skipped.push_back(name);
            continue;
        }
        json j;
        try {
            j = json::parse(read_file(path));
        } catch (const json::parse_error& e) {
            throw DataError(name + ": " + e.what());
        }
        try {
            if (j.is_object() && j.contains("scores") && j.contains("role")) {
                in.scores.push_back({name, aie_from_json(j)});
            } else if (j.is_object() && j.contains("nodes") && j.contains("edges")) {
                in.circuits.push_back({name, circuit_from_json(j)});
            } else if (is_edge_list(j)) {
                in.edges.push_back({name, edges_from_json(j)});
            } else if (j.is_object() && j.contains("edges") && is_edge_list(j["edges"])) {
                in.edges.push_back({name, edges_from_json(j["edges"])});
            } else if (j.is_object() && j.contains("threshold") && j.contains("roles")) {
                in.uncertain.push_back({name, uncertain_stats_from_json(j)});
            } else {
                in.skipped.push_back(name);
            }
        } catch (const json::exception& e) {
            throw DataError(name + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw DataError(name + ": " + e.what());
        }
    }
    std::stable_sort(in.scores.begin(), in.scores.end(), [](const auto& a, const auto& b) {
        return std::tie(a.value.role, a.value.model_id, a.source) <
               std::tie(b.value.role, b.value.model_id, b.source);
    });
    return in;
}

std::vector<PlotPoint> plot_data(const ReportInputs& in, int top_heads, double layer_pct) {
    std::vector<PlotPoint> out;
    for (const auto& m : in.scores) {
        const auto& a = m.value;
        const std::string key = chart_key(m);
        for (int l = 0; l < a.n_layers; ++l) {
            for (int j = 0; j < a.n_heads; ++j) {
                out.push_back({"aie_heatmap/" + key, "L" + std::to_string(l), std::to_string(j), a.at(l, j)});
            }
        }
        for (const auto& h : select_top_heads(a, std::min(top_heads, a.n_layers * a.n_heads))) {
            out.push_back({"top_heads/" + key, "top" + std::to_string(top_heads), label(h), a.at(h)});
        }
        const auto ls = layer_role_score(a, layer_pct);
        for (std::size_t l = 0; l < ls.size(); ++l) {
            out.push_back({"layer_score/" + key, "layer_score", std::to_string(l), ls[l]});
        }
        if (!ls.empty()) {
            const int best = argmax(ls);
            out.push_back({"layer_score/" + key, "argmax_layer", std::to_string(best),
                           ls[static_cast<std::size_t>(best)]});
        }
    }
    for (const auto& c : in.circuits) {
        for (const auto& n : c.value.nodes) {
            for (HeadRole r : n.roles) {
                out.push_back({"circuit_nodes/" + c.source, to_string(r), label(n.head),
                               static_cast<double>(n.head.layer)});
            }
        }
        for (const auto& e : c.value.edges) {
            out.push_back({"circuit_edges/" + c.source, kind_name(e.kind), label(e.emit) + "->" + label(e.rec),
                           e.score});
        }
    }
    for (const auto& list : in.edges) {
        for (const auto& e : list.value) {
            out.push_back({"path_edges/" + list.source, kind_name(e.kind), label(e.emit) + "->" + label(e.rec),
                           e.score});
        }
    }
    for (const auto& f : in.metrics) {
        for (const auto& r : f.value) out.push_back({"ablation/" + r.metric, r.config, r.dataset, r.value});
    }
    for (const auto& u : in.uncertain) {
        for (const auto& [role, r] : u.value.roles) {
            const double share = r.total ? static_cast<double>(r.uncertain) / r.total : 0.0;
            out.push_back({"uncertain_share/" + u.source, "share", to_string(role), share});
        }
        for (const auto& [role, r] : u.value.roles) {
            for (int b = 0; b < kProbabilityBins; ++b) {
                out.push_back({"uncertain_histogram/" + u.source, to_string(role), num(b * 0.05),
                               static_cast<double>(r.histogram[b])});
            }
        }
    }
    return out;
}

std::string plot_data_csv(const std::vector<PlotPoint>& points) {
    std::string out = csv_row({"chart_id", "series", "x", "y"});
    for (const auto& p : points) out += csv_row({p.chart_id, p.series, p.x, num(p.y)});
    return out;
}

std::string aie_csv(const ReportInputs& in) {
    std::string out = csv_row({"source", "model_id", "role", "layer", "head", "score", "n_pairs", "skipped"});
    for (const auto& m : in.scores) {
        const auto& a = m.value;
        for (int l = 0; l < a.n_layers; ++l) {
            for (int j = 0; j < a.n_heads; ++j) {
                out += csv_row({m.source, a.model_id, to_string(a.role), std::to_string(l), std::to_string(j),
                                num(a.at(l, j)), std::to_string(a.n_pairs), std::to_string(a.skipped)});
            }
        }
    }
    return out;
}

std::string layer_scores_csv(const ReportInputs& in, double layer_pct) {
    std::string out = csv_row({"source", "model_id", "role", "layer", "score", "is_argmax"});
    for (const auto& m : in.scores) {
        const auto ls = layer_role_score(m.value, layer_pct);
        const int best = ls.empty() ? -1 : argmax(ls);
        for (std::size_t l = 0; l < ls.size(); ++l) {
            out += csv_row({m.source, m.value.model_id, to_string(m.value.role), std::to_string(l), num(ls[l]),
                            static_cast<int>(l) == best ? "1" : "0"});
        }
    }
    return out;
}

std::string top_heads_csv(const ReportInputs& in, int top_heads) {
    std::string out = csv_row({"source", "model_id", "role", "rank", "layer", "head", "score"});
    for (const auto& m : in.scores) {
        const auto& a = m.value;
        const auto top = select_top_heads(a, std::min(top_heads, a.n_layers * a.n_heads));
        for (std::size_t i = 0; i < top.size(); ++i) {
            out += csv_row({m.source, a.model_id, to_string(a.role), std::to_string(i + 1),
                            std::to_string(top[i].layer), std::to_string(top[i].head), num(a.at(top[i]))});
        }
    }
    return out;
}

std::string edges_csv(const ReportInputs& in) {
    std::string out = csv_row(
        {"source", "kind", "emit_layer", "emit_head", "rec_layer", "rec_head", "score", "n_pairs"});
    const auto add = [&](const std::string& source, const std::vector<PathEdgeScore>& edges) {
        for (const auto& e : edges) {
            out += csv_row({source, kind_name(e.kind), std::to_string(e.emit.layer), std::to_string(e.emit.head),
                            std::to_string(e.rec.layer), std::to_string(e.rec.head), num(e.score),
                            std::to_string(e.n_pairs)});
        }
    };
    for (const auto& c : in.circuits) add(c.source, c.value.edges);
    for (const auto& e : in.edges) add(e.source, e.value);
    return out;
}

std::string circuit_nodes_csv(const ReportInputs& in) {
    std::string out = csv_row({"source", "layer", "head", "roles"});
    for (const auto& c : in.circuits) {
        for (const auto& n : c.value.nodes) {
            out += csv_row({c.source, std::to_string(n.head.layer), std::to_string(n.head.head),
                            roles_joined(n.roles)});
        }
    }
    return out;
}

std::string report_metrics_csv(const ReportInputs& in) {
    std::vector<MetricRow> rows;
    for (const auto& f : in.metrics) rows.insert(rows.end(), f.value.begin(), f.value.end());
    return metrics_csv(rows);
}

std::string uncertain_csv(const ReportInputs& in) {
    std::string out = csv_row({"source", "role", "threshold", "last_shots", "uncertain", "total", "share"});
    for (const auto& u : in.uncertain) {
        for (const auto& [role, r] : u.value.roles) {
            const double share = r.total ? static_cast<double>(r.uncertain) / r.total : 0.0;
            out += csv_row({u.source, to_string(role), num(u.value.threshold), std::to_string(u.value.last_shots),
                            std::to_string(r.uncertain), std::to_string(r.total), num(share)});
        }
    }
    return out;
}

json report_json(const ReportInputs& in, int top_heads, double layer_pct) {
    json scores = json::array();
    for (const auto& m : in.scores) {
        json top = json::array();
        for (const auto& h : select_top_heads(m.value, std::min(top_heads, m.value.n_layers * m.value.n_heads))) {
            top.push_back({{"layer", h.layer}, {"head", h.head}, {"score", m.value.at(h)}});
        }
        const auto ls = layer_role_score(m.value, layer_pct);
        json entry = to_json(m.value);
        entry["source"] = m.source;
        entry["top_heads"] = top;
        entry["layer_scores"] = ls;
        entry["argmax_layer"] = ls.empty() ? -1 : argmax(ls);
        scores.push_back(std::move(entry));
    }
    json edges = json::array();
    for (const auto& e : in.edges) edges.push_back({{"source", e.source}, {"edges", edges_to_json(e.value)}});
    json circuits = json::array();
    for (const auto& c : in.circuits) {
        json g = to_json(c.value);
        g["source"] = c.source;
        circuits.push_back(std::move(g));
    }
    json metrics = json::array();
    for (const auto& f : in.metrics) {
        for (const auto& r : f.value) {
            metrics.push_back({{"source", f.source}, {"config", r.config}, {"dataset", r.dataset},
                               {"metric", r.metric}, {"value", r.value}, {"n", r.n}, {"seed", r.seed}});
        }
    }
    json uncertain = json::array();
    for (const auto& u : in.uncertain) {
        json s = to_json(u.value);
        s["source"] = u.source;
        uncertain.push_back(std::move(s));
    }
    return json{{"scores", scores}, {"edges", edges},       {"circuits", circuits},
                {"metrics", metrics}, {"uncertain", uncertain}, {"skipped", in.skipped}};
}

std::vector<fs::path> emit_report(const fs::path& in_dir, ReportFormat format, const fs::path& out_dir) {
    const auto in = load_report_inputs(in_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IOError("cannot create " + out_dir.string() + ": " + ec.message());

    std::vector<std::pair<std::string, std::string>> outputs;
    switch (format) {
        case ReportFormat::Csv:
            outputs = {{"aie.csv", aie_csv(in)},
                       {"layer_scores.csv", layer_scores_csv(in)},
                       {"top_heads.csv", top_heads_csv(in)},
                       {"edges.csv", edges_csv(in)},
                       {"circuit_nodes.csv", circuit_nodes_csv(in)},
                       {"metrics.csv", report_metrics_csv(in)},
                       {"uncertain.csv", uncertain_csv(in)}};
            break;
        case ReportFormat::Json: outputs = {{"report.json", report_json(in).dump(2) + "\n"}}; break;
        case ReportFormat::PlotData: outputs = {{"plot_data.csv", plot_data_csv(plot_data(in))}}; break;
    }
    std::vector<fs::path> written;
    for (const auto& [name, text] : outputs) {
        write_file(out_dir / name, text);
        written.push_back(out_dir / name);
    }
    return written;
}

}  // namespace circuitlab
