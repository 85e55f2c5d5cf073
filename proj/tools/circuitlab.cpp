// circuitlab command line: data synthesis, counterfactual pairs, patching
// experiments, ablations and reports.
//
// Exit codes: 0 ok, 1 verify found failures, 2 usage, 3 data, 4 backend.
// Errors go to stderr as one JSON object.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include "CLI11.hpp"

#include "circuitlab/cma.hpp"
#include "circuitlab/counterfactual.hpp"
#include "circuitlab/dataset.hpp"
#include "circuitlab/eval.hpp"
#include "circuitlab/http_backend.hpp"
#include "circuitlab/report.hpp"
#include "circuitlab/verify.hpp"

#ifndef CIRCUITLAB_VERSION
#define CIRCUITLAB_VERSION "0.0.0"
#endif

using namespace circuitlab;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kData = 3, kBackend = 4 };

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

void write_manifest(const fs::path& manifest, const std::string& command, const json& config,
                    const json& seeds, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, const json& extra = json::object()) {
    json m = {{"command", command},   {"config", config},   {"seeds", seeds},
              {"inputs", inputs},     {"outputs", outputs}, {"tool_version", CIRCUITLAB_VERSION},
              {"timestamps", nullptr}};
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_json(manifest, m);
}

fs::path manifest_for(const std::string& out) { return out + ".manifest.json"; }

void ensure_parent(const std::string& out) {
    const auto parent = fs::path(out).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

GeneratorConfig generator(int min_rules, int max_rules, const std::string& policy) {
    if (min_rules < 1 || max_rules < min_rules) {
        throw UsageError("need 1 <= --min-rules <= --max-rules");
    }
    GeneratorConfig cfg;
    cfg.min_total = min_rules;
    cfg.max_total = max_rules;
    cfg.policy.kind = traversal_from_string(policy);
    return cfg;
}

std::unique_ptr<HookableModel> connect(const std::string& endpoint) {
    return make_model(endpoint.empty() ? default_endpoint() : endpoint);
}

// Heads from a JSON list of {layer, head}, a circuit file or a score file.
std::vector<HeadId> read_heads(const std::string& path, int top_heads) {
    const json j = read_json(path);
    std::vector<HeadId> heads;
    try {
        if (j.is_array()) {
            for (const auto& h : j) heads.push_back(head_from_json(h));
        } else if (j.contains("nodes")) {
            for (const auto& n : circuit_from_json(j).nodes) heads.push_back(n.head);
        } else if (j.contains("scores")) {
            heads = select_top_heads(aie_from_json(j), top_heads);
        } else {
            throw DataError(path + ": expected a head list, circuit or score file");
        }
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    std::sort(heads.begin(), heads.end());
    heads.erase(std::unique(heads.begin(), heads.end()), heads.end());
    return heads;
}

std::map<HeadRole, std::vector<HeadId>> role_heads_from(const std::string& dir, int top_k) {
    std::map<HeadRole, std::vector<HeadId>> out;
    for (const auto& m : load_report_inputs(dir).scores) {
        if (out.count(m.value.role)) {
            throw DataError("two score files for role " + to_string(m.value.role) + " in " + dir);
        }
        out[m.value.role] = select_top_heads(m.value, top_k);
    }
    return out;
}

json heads_json(const std::vector<std::vector<HeadId>>& sets) {
    json out = json::array();
    for (const auto& s : sets) {
        json one = json::array();
        for (const auto& h : s) one.push_back(to_json(h));
        out.push_back(one);
    }
    return out;
}

void print_error(const std::string& type, const std::string& message, int code) {
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}, {"exit_code", code}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Circuit discovery toolkit for symbolic reasoning prompts"};
    app.set_version_flag("--version", std::string(CIRCUITLAB_VERSION));
    app.require_subcommand(1);
    app.fallthrough();
    int jobs = 1;
    app.add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1, 256));

    std::function<int()> run;

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a k-shot dataset (JSON lines)");
    struct {
        int k = 2, n = 500, min_rules = 8, max_rules = 18;
        std::uint64_t seed = 0;
        std::string policy = "bfs", out;
    } sy;
    synth->add_option("--k", sy.k, "Demonstrations per record")->required()->check(CLI::Range(0, 64));
    synth->add_option("--n", sy.n, "Records")->check(CLI::Range(1, 10000000));
    synth->add_option("--seed", sy.seed, "Seed");
    synth->add_option("--min-rules", sy.min_rules, "Minimum rules plus facts");
    synth->add_option("--max-rules", sy.max_rules, "Maximum rules plus facts");
    synth->add_option("--policy", sy.policy, "Traversal policy")->check(CLI::IsMember({"bfs", "dfs"}));
    synth->add_option("--out", sy.out, "Output file")->required();
    synth->callback([&] {
        run = [&] {
            const auto cfg = generator(sy.min_rules, sy.max_rules, sy.policy);
            const auto data = synth_dataset(sy.k, sy.n, sy.seed, cfg, jobs);
            ensure_parent(sy.out);
            write_dataset(sy.out, data);
            long attempts = 0;
            for (const auto& r : data) attempts += r.generation_attempts;
            write_manifest(manifest_for(sy.out), "synth",
                           {{"k", sy.k}, {"n", sy.n}, {"min_rules", sy.min_rules}, {"max_rules", sy.max_rules},
                            {"policy", sy.policy}},
                           {{"seed", sy.seed}}, {}, {sy.out}, {{"generation_attempts", attempts}});
            return kOk;
        };
    });

    // corrupt
    auto* corrupt_cmd = app.add_subcommand("corrupt", "Generate clean/corrupted prompt pairs");
    struct {
        std::string type, out, policy = "bfs";
        int n = 200, k = 1, min_rules = 8, max_rules = 18;
        std::uint64_t seed = 0;
    } co;
    corrupt_cmd->add_option("--type", co.type, "Corruption type")
        ->required()
        ->check(CLI::IsMember({"c1", "c2", "c3", "c4"}));
    corrupt_cmd->add_option("--n", co.n, "Pairs")->check(CLI::Range(1, 1000000));
    corrupt_cmd->add_option("--k", co.k, "Demonstrations per prompt")->check(CLI::Range(0, 64));
    corrupt_cmd->add_option("--seed", co.seed, "Seed");
    corrupt_cmd->add_option("--min-rules", co.min_rules, "Minimum rules plus facts");
    corrupt_cmd->add_option("--max-rules", co.max_rules, "Maximum rules plus facts");
    corrupt_cmd->add_option("--policy", co.policy, "Traversal policy")->check(CLI::IsMember({"bfs", "dfs"}));
    corrupt_cmd->add_option("--out", co.out, "Output file")->required();
    corrupt_cmd->callback([&] {
        run = [&] {
            const auto cfg = generator(co.min_rules, co.max_rules, co.policy);
            CorruptOptions opts;
            opts.policy = cfg.policy;
            const auto gen = generate_pairs(co.n, co.k, kind_from_string(co.type), co.seed, cfg, jobs, opts);
            ensure_parent(co.out);
            write_pairs(co.out, gen.pairs);
            write_manifest(manifest_for(co.out), "corrupt",
                           {{"type", co.type}, {"n", co.n}, {"k", co.k}, {"min_rules", co.min_rules},
                            {"max_rules", co.max_rules}, {"policy", co.policy}},
                           {{"seed", co.seed}}, {}, {co.out},
                           {{"attempts", gen.attempts}, {"yield", gen.yield()}});
            return kOk;
        };
    });

    // probe
    auto* probe = app.add_subcommand("probe", "Per-role uncertain-token statistics");
    struct {
        std::string endpoint, data, out;
        int last_shots = 5;
        double threshold = 0.8;
    } pr;
    probe->add_option("--endpoint", pr.endpoint, "toy://... or http://host:port");
    probe->add_option("--data", pr.data, "Dataset file")->required();
    probe->add_option("--last-shots", pr.last_shots, "Shots counted from the end")->check(CLI::Range(1, 1000));
    probe->add_option("--threshold", pr.threshold, "Probability threshold")->check(CLI::Range(0.0, 1.0));
    probe->add_option("--out", pr.out, "Output file")->required();
    probe->callback([&] {
        run = [&] {
            const auto data = read_dataset(pr.data);
            auto model = connect(pr.endpoint);
            std::vector<UncertainStats> per(data.size());
            parallel_for(static_cast<int>(data.size()), jobs, [&](int i) {
                const auto& rec = data[static_cast<std::size_t>(i)];
                per[static_cast<std::size_t>(i)] = uncertain_token_stats(
                    teacher_forced_trace(*model, rec.doc.text), rec.doc.spans, pr.last_shots, pr.threshold);
            });
            UncertainStats total;
            total.threshold = pr.threshold;
            total.last_shots = pr.last_shots;
            for (Role r : kAllRoles) total.roles[r];
            for (const auto& s : per) total.merge(s);
            ensure_parent(pr.out);
            write_json(pr.out, to_json(total));
            write_manifest(manifest_for(pr.out), "probe",
                           {{"endpoint", pr.endpoint.empty() ? default_endpoint() : pr.endpoint},
                            {"model_id", model->capabilities().model_id},
                            {"last_shots", pr.last_shots},
                            {"threshold", pr.threshold},
                            {"records", data.size()}},
                           json::object(), {pr.data}, {pr.out});
            return kOk;
        };
    });

    // aie
    auto* aie_cmd = app.add_subcommand("aie", "Per-head average indirect effect");
    struct {
        std::string endpoint, pairs, mode = "causal-span", out;
    } ai;
    aie_cmd->add_option("--endpoint", ai.endpoint, "toy://... or http://host:port");
    aie_cmd->add_option("--pairs", ai.pairs, "Pair file")->required();
    aie_cmd->add_option("--mode", ai.mode, "Patched positions")
        ->check(CLI::IsMember({"causal-span", "preceding-token"}));
    aie_cmd->add_option("--out", ai.out, "Output file")->required();
    aie_cmd->callback([&] {
        run = [&] {
            const auto pairs = read_pairs(ai.pairs);
            auto model = connect(ai.endpoint);
            const auto mode = position_mode_from_string(ai.mode);
            const auto prep = prepare_pairs(*model, pairs, mode);
            const auto m = aie(*model, pairs, mode, jobs);
            ensure_parent(ai.out);
            write_json(ai.out, to_json(m));
            write_manifest(manifest_for(ai.out), "aie",
                           {{"endpoint", ai.endpoint.empty() ? default_endpoint() : ai.endpoint},
                            {"model_id", m.model_id},
                            {"mode", ai.mode},
                            {"role", to_string(m.role)}},
                           json::object(), {ai.pairs}, {ai.out}, {{"skipped_reasons", prep.skipped}});
            return kOk;
        };
    });

    // path
    auto* path_cmd = app.add_subcommand("path", "Path-patching scores between heads");
    struct {
        std::string endpoint, pairs, heads, mode = "preceding-token", out;
        int top_heads = 5;
    } pa;
    path_cmd->add_option("--endpoint", pa.endpoint, "toy://... or http://host:port");
    path_cmd->add_option("--pairs", pa.pairs, "Pair file")->required();
    path_cmd->add_option("--heads", pa.heads, "Head list, circuit or score file")->required();
    path_cmd->add_option("--top-heads", pa.top_heads, "Heads taken from a score file")->check(CLI::Range(1, 100000));
    path_cmd->add_option("--mode", pa.mode, "Patched positions")
        ->check(CLI::IsMember({"causal-span", "preceding-token"}));
    path_cmd->add_option("--out", pa.out, "Output file")->required();
    path_cmd->callback([&] {
        run = [&] {
            const auto pairs = read_pairs(pa.pairs);
            const auto heads = read_heads(pa.heads, pa.top_heads);
            auto model = connect(pa.endpoint);
            const auto edges = path_edges(*model, pairs, heads, position_mode_from_string(pa.mode), jobs);
            ensure_parent(pa.out);
            write_json(pa.out, edges_to_json(edges));
            write_manifest(manifest_for(pa.out), "path",
                           {{"endpoint", pa.endpoint.empty() ? default_endpoint() : pa.endpoint},
                            {"model_id", model->capabilities().model_id},
                            {"mode", pa.mode},
                            {"heads", heads_json({heads})[0]}},
                           json::object(), {pa.pairs, pa.heads}, {pa.out});
            return kOk;
        };
    });

    // circuit
    auto* circuit_cmd = app.add_subcommand("circuit", "Assemble the circuit graph");
    struct {
        std::string scores, out, endpoint, mode = "preceding-token";
        std::vector<std::string> pairs;
        int top_heads = 5, top_edges = 10;
    } ci;
    circuit_cmd->add_option("--scores", ci.scores, "Directory of score and edge files")->required();
    circuit_cmd->add_option("--top-heads", ci.top_heads, "Heads per role")->check(CLI::Range(1, 100000));
    circuit_cmd->add_option("--top-edges", ci.top_edges, "Edges per corruption type")->check(CLI::Range(1, 100000));
    circuit_cmd->add_option("--pairs", ci.pairs, "Pair files; edges are then computed on --endpoint");
    circuit_cmd->add_option("--endpoint", ci.endpoint, "toy://... or http://host:port");
    circuit_cmd->add_option("--mode", ci.mode, "Patched positions for computed edges")
        ->check(CLI::IsMember({"causal-span", "preceding-token"}));
    circuit_cmd->add_option("--out", ci.out, "Output file")->required();
    circuit_cmd->callback([&] {
        run = [&] {
            const auto in = load_report_inputs(ci.scores);
            std::vector<AIEMatrix> matrices;
            std::vector<std::string> inputs;
            for (const auto& m : in.scores) {
                matrices.push_back(m.value);
                inputs.push_back((fs::path(ci.scores) / m.source).string());
            }
            if (matrices.empty()) throw DataError("no score files in " + ci.scores);
            CircuitGraph g;
            if (ci.pairs.empty()) {
                std::vector<PathEdgeScore> edges;
                for (const auto& e : in.edges) {
                    edges.insert(edges.end(), e.value.begin(), e.value.end());
                    inputs.push_back((fs::path(ci.scores) / e.source).string());
                }
                g = circuit_network(matrices, edges, ci.top_heads, ci.top_edges);
            } else {
                std::map<CorruptionKind, std::vector<PromptPair>> by_kind;
                for (const auto& f : ci.pairs) {
                    for (auto& p : read_pairs(f)) by_kind[p.kind].push_back(std::move(p));
                    inputs.push_back(f);
                }
                auto model = connect(ci.endpoint);
                g = circuit_network(*model, matrices, by_kind, ci.top_heads, ci.top_edges,
                                    position_mode_from_string(ci.mode), jobs);
            }
            ensure_parent(ci.out);
            write_json(ci.out, to_json(g));
            write_manifest(manifest_for(ci.out), "circuit",
                           {{"top_heads", ci.top_heads}, {"top_edges", ci.top_edges}, {"mode", ci.mode},
                            {"edges_computed", !ci.pairs.empty()}},
                           json::object(), inputs, {ci.out});
            return kOk;
        };
    });

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Evaluate generation with heads knocked out");
    struct {
        std::string endpoint, data, config = "baseline", scores, out, dataset_name;
        int topk = 5, rand_runs = 3;
        double rand_fraction = 0.03;
        std::uint64_t seed = 0;
    } ab;
    ablate_cmd->add_option("--endpoint", ab.endpoint, "toy://... or http://host:port");
    ablate_cmd->add_option("--data", ab.data, "Dataset file")->required();
    ablate_cmd->add_option("--config", ab.config, "Head set")
        ->check(CLI::IsMember({"baseline", "rand", "rs", "ps", "pst", "3roles"}));
    ablate_cmd->add_option("--topk", ab.topk, "Heads per role")->check(CLI::Range(1, 100000));
    ablate_cmd->add_option("--scores", ab.scores, "Directory of score files (role head sets)");
    ablate_cmd->add_option("--seed", ab.seed, "Seed for random head sets");
    ablate_cmd->add_option("--rand-runs", ab.rand_runs, "Random draws")->check(CLI::Range(1, 1000));
    ablate_cmd->add_option("--rand-fraction", ab.rand_fraction, "Share of heads drawn")->check(CLI::Range(0.0, 1.0));
    ablate_cmd->add_option("--dataset-name", ab.dataset_name, "Dataset label (default: file stem)");
    ablate_cmd->add_option("--out", ab.out, "Metrics CSV")->required();
    ablate_cmd->callback([&] {
        run = [&] {
            AblationConfig cfg;
            cfg.name = ablation_from_string(ab.config);
            cfg.top_k = ab.topk;
            cfg.seed = ab.seed;
            cfg.rand_runs = ab.rand_runs;
            cfg.rand_fraction = ab.rand_fraction;
            std::map<HeadRole, std::vector<HeadId>> roles;
            if (!roles_of(cfg.name).empty()) {
                if (ab.scores.empty()) throw UsageError("--config " + ab.config + " needs --scores");
                roles = role_heads_from(ab.scores, ab.topk);
            }
            const auto data = read_dataset(ab.data);
            auto model = connect(ab.endpoint);
            const std::string name = ab.dataset_name.empty() ? fs::path(ab.data).stem().string() : ab.dataset_name;
            const auto res = ablate_eval(*model, data, name, cfg, roles, jobs);
            ensure_parent(ab.out);
            std::ofstream(ab.out, std::ios::binary) << metrics_csv(res.rows);
            write_manifest(manifest_for(ab.out), "ablate",
                           {{"endpoint", ab.endpoint.empty() ? default_endpoint() : ab.endpoint},
                            {"model_id", model->capabilities().model_id},
                            {"config", ab.config},
                            {"topk", ab.topk},
                            {"rand_runs", ab.rand_runs},
                            {"rand_fraction", ab.rand_fraction},
                            {"dataset", name}},
                           {{"seed", ab.seed}}, {ab.data, ab.scores}, {ab.out},
                           {{"head_sets", heads_json(res.head_sets)}, {"failed_records", res.failed}});
            return kOk;
        };
    });

    // report
    auto* report_cmd = app.add_subcommand("report", "Tables, JSON or plot data from result files");
    struct {
        std::string in, format = "csv", out;
    } re;
    report_cmd->add_option("--in", re.in, "Result directory")->required();
    report_cmd->add_option("--format", re.format, "Output format")->check(CLI::IsMember({"csv", "json", "plot-data"}));
    report_cmd->add_option("--out", re.out, "Output directory")->required();
    report_cmd->callback([&] {
        run = [&] {
            const auto written = emit_report(re.in, report_format_from_string(re.format), re.out);
            std::vector<std::string> outs;
            for (const auto& p : written) outs.push_back(p.string());
            write_manifest(fs::path(re.out) / "report.manifest.json", "report", {{"format", re.format}},
                           json::object(), {re.in}, outs);
            return kOk;
        };
    });

    // toy
    auto* toy_cmd = app.add_subcommand("toy", "In-process toy model utilities");
    toy_cmd->require_subcommand(1);
    auto* verify_cmd = toy_cmd->add_subcommand("verify", "Run the property suite on the toy model");
    VerifyOptions vo;
    bool no_loopback = false;
    verify_cmd->add_option("--seed", vo.seed, "Seed for prompts and pairs");
    verify_cmd->add_option("--pairs", vo.pairs, "Pairs per corruption type")->check(CLI::Range(1, 1000));
    verify_cmd->add_flag("--no-loopback", no_loopback, "Skip the HTTP round trip");
    verify_cmd->callback([&] {
        run = [&] {
            vo.loopback = !no_loopback;
            int failed = 0;
            toy_verify(vo, [&](const VerifyCheck& c) {
                std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << "  ("
                          << static_cast<int>(c.seconds * 1000) << " ms)" << std::endl;
                failed += c.passed ? 0 : 1;
            });
            std::cout << (failed ? std::to_string(failed) + " check(s) failed" : std::string("all checks passed"))
                      << std::endl;
            return failed ? kFailed : kOk;
        };
    });
    auto* serve_cmd = toy_cmd->add_subcommand("serve", "Serve a toy model over HTTP");
    std::string serve_model = "toy://", host = "127.0.0.1";
    int port = 8080;
    serve_cmd->add_option("--model", serve_model, "toy:// endpoint with optional shape query");
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--port", port, "Port (0 picks one)")->check(CLI::Range(0, 65535));
    serve_cmd->callback([&] {
        run = [&] {
            if (serve_model.rfind("toy://", 0) != 0) throw UsageError("--model must be a toy:// endpoint");
            auto model = make_model(serve_model);
            ModelServer server(*model);
            const int bound = server.bind(host, port);
            std::cout << json{{"listening", "http://" + host + ":" + std::to_string(bound)},
                              {"model_id", model->capabilities().model_id}}
                             .dump()
                      << std::endl;
            server.listen();
            return kOk;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("UsageError", e.what(), kUsage);
        return kUsage;
    }

    try {
        return run();
    } catch (const UsageError& e) {
        print_error("UsageError", e.what(), kUsage);
        return kUsage;
    } catch (const ProtocolError& e) {
        print_error(e.type(), e.what(), kBackend);
        return kBackend;
    } catch (const InsufficientYield& e) {
        print_error("InsufficientYield",
                    std::string(e.what()) + " (" + std::to_string(e.produced()) + " pairs in " +
                        std::to_string(e.attempts()) + " attempts)",
                    kData);
        return kData;
    } catch (const DataError& e) {
        print_error("DataError", e.what(), kData);
        return kData;
    } catch (const IOError& e) {
        print_error("IOError", e.what(), kData);
        return kData;
    } catch (const GenerationExhausted& e) {
        print_error("GenerationExhausted", e.what(), kData);
        return kData;
    } catch (const json::exception& e) {
        print_error("DataError", e.what(), kData);
        return kData;
    } catch (const fs::filesystem_error& e) {
        print_error("IOError", e.what(), kData);
        return kData;
    } catch (const std::invalid_argument& e) {
        print_error("UsageError", e.what(), kUsage);
        return kUsage;
    } catch (const std::exception& e) {
        print_error("Error", e.what(), kData);
        return kData;
    }
}
