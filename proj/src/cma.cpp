#include "circuitlab/cma.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "circuitlab/csv.hpp"
#include "circuitlab/rng.hpp"

namespace circuitlab {

namespace {

struct RoleName {
    HeadRole role;
    const char* name;
};

constexpr RoleName kRoleNames[] = {
    {HeadRole::ReadFact, "ReadFact"},
    {HeadRole::SelectPremise, "SelectPremise"},
    {HeadRole::ReadRuleCondition, "ReadRuleCondition"},
    {HeadRole::MatchRuleCondition, "MatchRuleCondition"},
    {HeadRole::ReadRule, "ReadRule"},
    {HeadRole::SelectRule, "SelectRule"},
    {HeadRole::ReadTraversalAlg, "ReadTraversalAlg"},
    {HeadRole::ImplementTraversalAlg, "ImplementTraversalAlg"},
};

}  // namespace

std::string to_string(HeadRole role) {
    for (const auto& r : kRoleNames) {
        if (r.role == role) return r.name;
    }
    return "?";
}

HeadRole head_role_from_string(const std::string& s) {
    for (const auto& r : kRoleNames) {
        if (s == r.name) return r.role;
    }
    throw std::invalid_argument("unknown head role '" + s + "'");
}

std::string to_string(PositionMode mode) {
    return mode == PositionMode::CausalSpan ? "causal-span" : "preceding-token";
}

PositionMode position_mode_from_string(const std::string& s) {
    if (s == "causal-span" || s == "causal_span") return PositionMode::CausalSpan;
    if (s == "preceding-token" || s == "preceding_token") return PositionMode::PrecedingToken;
    throw std::invalid_argument("unknown position mode '" + s + "'");
}

HeadRole role_for(CorruptionKind kind, PositionMode mode) {
    const bool read = mode == PositionMode::CausalSpan;
    switch (kind) {
        case CorruptionKind::C1: return read ? HeadRole::ReadFact : HeadRole::SelectPremise;
        case CorruptionKind::C2:
            return read ? HeadRole::ReadRuleCondition : HeadRole::MatchRuleCondition;
        case CorruptionKind::C3: return read ? HeadRole::ReadRule : HeadRole::SelectRule;
        case CorruptionKind::C4:
            return read ? HeadRole::ReadTraversalAlg : HeadRole::ImplementTraversalAlg;
    }
    throw std::invalid_argument("bad corruption kind");
}

CorruptionKind kind_of(HeadRole role) {
    for (CorruptionKind k : kAllKinds) {
        if (role_for(k, PositionMode::CausalSpan) == role ||
            role_for(k, PositionMode::PrecedingToken) == role) {
            return k;
        }
    }
    throw std::invalid_argument("bad head role");
}

PositionMode mode_of(HeadRole role) {
    return role_for(kind_of(role), PositionMode::CausalSpan) == role ? PositionMode::CausalSpan
                                                                      : PositionMode::PrecedingToken;
}

// ---------------------------------------------------------------------------
// preparation

Preparation prepare_pairs(HookableModel& model, const std::vector<PromptPair>& pairs,
                          PositionMode mode) {
    Preparation out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& pair = pairs[i];
        const std::string tag = "pair " + std::to_string(i) + ": ";
        try {
            PreparedPair pp;
            pp.index = static_cast<int>(i);
            pp.clean_text = pair.clean.text;
            pp.corrupted_text = pair.corrupted.text;
            const auto ct = tokenize_with_offsets(model, pp.clean_text);
            const auto rt = tokenize_with_offsets(model, pp.corrupted_text);
            if (ct.tokens.size() != rt.tokens.size()) {
                throw AlignmentError("clean and corrupted prompts tokenize to " +
                                     std::to_string(ct.tokens.size()) + " and " +
                                     std::to_string(rt.tokens.size()) + " tokens");
            }
            const std::size_t n = ct.tokens.size();
            if (n == 0) throw AlignmentError("empty prompt");
            const auto full = tokenize_with_offsets(model, pp.clean_text + pair.clean_target);
            if (full.tokens.size() <= n ||
                !std::equal(ct.tokens.begin(), ct.tokens.end(), full.tokens.begin()) ||
                !std::equal(ct.offsets.begin(), ct.offsets.end(), full.offsets.begin())) {
                throw AlignmentError("target does not start a new token after the prompt");
            }
            pp.target_token = full.tokens[n];
            pp.readout = static_cast<int>(n) - 1;

            std::vector<TokenSpan> spans;
            if (mode == PositionMode::CausalSpan) {
                for (const auto& s : pair.causal_spans) spans.push_back({s.start, s.end});
            } else {
                spans.push_back({pair.preceding_char, pair.preceding_char + 1});
            }
            if (spans.empty()) throw AlignmentError("pair has no causal spans");
            const auto mc = map_spans(ct, spans);
            const auto mr = map_spans(rt, spans);
            std::set<int> positions;
            for (std::size_t s = 0; s < spans.size(); ++s) {
                if (!mc[s].error.empty()) throw AlignmentError(mc[s].error);
                if (!mr[s].error.empty()) throw AlignmentError(mr[s].error);
                if (mc[s].hazard || mr[s].hazard) {
                    throw AlignmentError("span [" + std::to_string(spans[s].start) + ", " +
                                         std::to_string(spans[s].end) +
                                         ") shares a token with its surroundings");
                }
                if (mc[s].tokens != mr[s].tokens) {
                    throw AlignmentError("span maps to different tokens in the two prompts");
                }
                positions.insert(mc[s].tokens.begin(), mc[s].tokens.end());
            }
            pp.positions.assign(positions.begin(), positions.end());
            out.usable.push_back(std::move(pp));
        } catch (const AlignmentError& e) {
            out.skipped.push_back(tag + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// activation patching

namespace {

double target_probability(HookableModel& model, ForwardRequest req, const PreparedPair& pair) {
    req.return_logprobs_at = {{pair.readout, {pair.target_token}}};
    const auto r = model.forward(req);
    if (r.logprobs.size() != 1 || r.logprobs[0].logprobs.size() != 1) {
        throw BackendError("backend did not answer the logprob query");
    }
    return std::exp(r.logprobs[0].logprobs[0]);
}

std::vector<Activation> capture_heads(HookableModel& model, const std::string& prompt,
                                      const std::vector<HeadId>& heads,
                                      const std::vector<int>& positions) {
    ForwardRequest req;
    req.prompt = prompt;
    for (const auto& h : heads) req.captures.push_back({h, positions});
    auto r = model.forward(req);
    if (r.captures.size() != heads.size()) throw BackendError("backend dropped captures");
    return std::move(r.captures);
}

std::vector<HeadId> all_heads(const Capabilities& caps) {
    std::vector<HeadId> out;
    for (int l = 0; l < caps.n_layers; ++l) {
        for (int j = 0; j < caps.n_heads; ++j) out.push_back({l, j});
    }
    return out;
}

CorruptionKind common_kind(const std::vector<PromptPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("no pairs given");
    for (const auto& p : pairs) {
        if (p.kind != pairs.front().kind) {
            throw std::invalid_argument("pairs mix corruption kinds");
        }
    }
    return pairs.front().kind;
}

}  // namespace

std::vector<double> aie_pair(HookableModel& model, const PreparedPair& pair) {
    const auto caps = model.capabilities();
    const auto heads = all_heads(caps);
    const auto clean = capture_heads(model, pair.clean_text, heads, pair.positions);

    ForwardRequest base;
    base.prompt = pair.corrupted_text;
    const double p_corrupted = target_probability(model, base, pair);

    std::vector<double> deltas(heads.size());
    for (std::size_t h = 0; h < heads.size(); ++h) {
        ForwardRequest req;
        req.prompt = pair.corrupted_text;
        req.patches = {{heads[h], pair.positions, clean[h].values}};
        deltas[h] = target_probability(model, req, pair) - p_corrupted;
    }
    return deltas;
}

std::vector<double> mean_of(const std::vector<std::vector<double>>& per_pair, std::size_t width) {
    std::vector<double> out(width, 0.0);
    if (per_pair.empty()) return out;
    std::vector<double> column(per_pair.size());
    for (std::size_t c = 0; c < width; ++c) {
        for (std::size_t i = 0; i < per_pair.size(); ++i) column[i] = per_pair[i].at(c);
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (double v : column) sum += v;
        out[c] = sum / static_cast<double>(per_pair.size());
    }
    return out;
}

AIEMatrix aie(HookableModel& model, const std::vector<PromptPair>& pairs, PositionMode mode,
              int jobs) {
    const auto kind = common_kind(pairs);
    const auto caps = model.capabilities();
    AIEMatrix m;
    m.role = role_for(kind, mode);
    m.model_id = caps.model_id;
    m.n_layers = caps.n_layers;
    m.n_heads = caps.n_heads;

    const auto prep = prepare_pairs(model, pairs, mode);
    std::vector<std::vector<double>> per_pair(prep.usable.size());
    parallel_for(static_cast<int>(prep.usable.size()), jobs,
                 [&](int i) { per_pair[i] = aie_pair(model, prep.usable[i]); });
    m.scores = mean_of(per_pair, static_cast<std::size_t>(caps.total_heads()));
    m.n_pairs = static_cast<int>(prep.usable.size());
    m.skipped = static_cast<int>(prep.skipped.size());
    return m;
}

std::vector<HeadId> select_top_heads(const AIEMatrix& matrix, int k) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    std::vector<HeadId> heads;
    for (int l = 0; l < matrix.n_layers; ++l) {
        for (int j = 0; j < matrix.n_heads; ++j) heads.push_back({l, j});
    }
    std::stable_sort(heads.begin(), heads.end(), [&](const HeadId& a, const HeadId& b) {
        return matrix.at(a) > matrix.at(b);
    });
    if (static_cast<std::size_t>(k) < heads.size()) heads.resize(static_cast<std::size_t>(k));
    return heads;
}

std::vector<double> layer_role_score(const AIEMatrix& matrix, double pct) {
    if (!(pct > 0.0 && pct <= 1.0)) throw std::invalid_argument("pct must be in (0, 1]");
    const int J = matrix.n_heads;
    const int count = std::clamp(static_cast<int>(std::ceil(pct * J - 1e-9)), 1, J);
    std::vector<double> out;
    for (int l = 0; l < matrix.n_layers; ++l) {
        std::vector<double> row(matrix.scores.begin() + l * J, matrix.scores.begin() + (l + 1) * J);
        std::sort(row.begin(), row.end(), std::greater<>());
        double sum = 0.0;
        for (int i = 0; i < count; ++i) sum += row[i];
        out.push_back(sum / count);
    }
    return out;
}

// ---------------------------------------------------------------------------
// path patching

namespace {

double path_pass(HookableModel& model, const PreparedPair& pair, const Activation& emit_corrupted,
                 const HeadId& rec, double p_clean) {
    ForwardRequest pass1;
    pass1.prompt = pair.clean_text;
    pass1.patches = {{emit_corrupted.head, pair.positions, emit_corrupted.values}};
    pass1.captures = {{rec, pair.positions}};
    const auto r1 = model.forward(pass1);
    if (r1.captures.size() != 1) throw BackendError("backend dropped a capture");

    ForwardRequest pass2;
    pass2.prompt = pair.clean_text;
    pass2.patches = {{rec, pair.positions, r1.captures[0].values}};
    return target_probability(model, pass2, pair) - p_clean;
}

void check_order(const HeadId& emit, const HeadId& rec) {
    if (emit.layer >= rec.layer) {
        throw LayerOrderError("emit " + to_string(emit) + " must sit in an earlier layer than rec " +
                              to_string(rec));
    }
}

}  // namespace

double path_patch_pair_unchecked(HookableModel& model, const PreparedPair& pair, const HeadId& emit,
                                 const HeadId& rec) {
    ForwardRequest base;
    base.prompt = pair.clean_text;
    const double p_clean = target_probability(model, base, pair);
    const auto corrupted = capture_heads(model, pair.corrupted_text, {emit}, pair.positions);
    return path_pass(model, pair, corrupted[0], rec, p_clean);
}

std::vector<PathEdgeScore> path_edges(HookableModel& model, const std::vector<PromptPair>& pairs,
                                      const std::vector<HeadId>& nodes, PositionMode mode,
                                      int jobs) {
    const auto kind = common_kind(pairs);
    std::vector<std::pair<HeadId, HeadId>> wanted;
    std::vector<HeadId> emitters;
    for (const auto& e : nodes) {
        for (const auto& r : nodes) {
            if (e.layer < r.layer) wanted.push_back({e, r});
        }
    }
    for (const auto& [e, r] : wanted) {
        if (std::find(emitters.begin(), emitters.end(), e) == emitters.end()) emitters.push_back(e);
    }

    const auto prep = prepare_pairs(model, pairs, mode);
    std::vector<std::vector<double>> per_pair(prep.usable.size());
    parallel_for(static_cast<int>(prep.usable.size()), jobs, [&](int i) {
        const auto& pair = prep.usable[i];
        ForwardRequest base;
        base.prompt = pair.clean_text;
        const double p_clean = target_probability(model, base, pair);
        std::vector<Activation> corrupted;
        if (!emitters.empty()) corrupted = capture_heads(model, pair.corrupted_text, emitters, pair.positions);
        std::vector<double> row;
        for (const auto& [e, r] : wanted) {
            const auto at = std::find(emitters.begin(), emitters.end(), e) - emitters.begin();
            row.push_back(path_pass(model, pair, corrupted[static_cast<std::size_t>(at)], r, p_clean));
        }
        per_pair[i] = std::move(row);
    });
    const auto means = mean_of(per_pair, wanted.size());

    std::vector<PathEdgeScore> out;
    for (std::size_t w = 0; w < wanted.size(); ++w) {
        out.push_back({wanted[w].first, wanted[w].second, means[w],
                       static_cast<int>(prep.usable.size()), kind});
    }
    std::stable_sort(out.begin(), out.end(), [](const PathEdgeScore& a, const PathEdgeScore& b) {
        if (std::abs(a.score) != std::abs(b.score)) return std::abs(a.score) > std::abs(b.score);
        if (a.emit != b.emit) return a.emit < b.emit;
        return a.rec < b.rec;
    });
    return out;
}

PathEdgeScore path_patch(HookableModel& model, const std::vector<PromptPair>& pairs,
                         const HeadId& emit, const HeadId& rec, PositionMode mode, int jobs) {
    check_order(emit, rec);
    const auto caps = model.capabilities();
    if (rec.layer >= caps.n_layers || rec.head < 0 || rec.head >= caps.n_heads || emit.layer < 0 ||
        emit.head < 0 || emit.head >= caps.n_heads) {
        throw ShapeError("edge " + to_string(emit) + " -> " + to_string(rec) + " outside the model");
    }
    auto edges = path_edges(model, pairs, {emit, rec}, mode, jobs);
    return edges.front();
}

// ---------------------------------------------------------------------------
// circuit network

std::vector<CircuitNode> circuit_nodes(const std::vector<AIEMatrix>& matrices, int top_heads) {
    std::map<HeadId, std::set<HeadRole>> roles;
    for (const auto& m : matrices) {
        for (const auto& h : select_top_heads(m, top_heads)) roles[h].insert(m.role);
    }
    std::vector<CircuitNode> out;
    for (const auto& [h, rs] : roles) {
        CircuitNode node{h, {}};
        for (HeadRole r : kAllHeadRoles) {
            if (rs.count(r)) node.roles.push_back(r);
        }
        out.push_back(std::move(node));
    }
    return out;
}

CircuitGraph circuit_network(const std::vector<AIEMatrix>& matrices,
                             const std::vector<PathEdgeScore>& candidate_edges, int top_heads,
                             int top_edges) {
    CircuitGraph g;
    g.nodes = circuit_nodes(matrices, top_heads);
    std::set<HeadId> node_set;
    for (const auto& n : g.nodes) node_set.insert(n.head);

    // nullopt (unknown kind) sorts first.
    std::map<std::optional<CorruptionKind>, std::vector<PathEdgeScore>> by_kind;
    for (const auto& e : candidate_edges) {
        if (e.emit.layer < e.rec.layer && node_set.count(e.emit) && node_set.count(e.rec)) {
            by_kind[e.kind].push_back(e);
        }
    }
    for (auto& [kind, edges] : by_kind) {
        std::stable_sort(edges.begin(), edges.end(), [](const PathEdgeScore& a, const PathEdgeScore& b) {
            if (std::abs(a.score) != std::abs(b.score)) return std::abs(a.score) > std::abs(b.score);
            if (a.emit != b.emit) return a.emit < b.emit;
            return a.rec < b.rec;
        });
        if (edges.size() > static_cast<std::size_t>(std::max(top_edges, 0))) {
            edges.resize(static_cast<std::size_t>(std::max(top_edges, 0)));
        }
        g.edges.insert(g.edges.end(), edges.begin(), edges.end());
    }
    return g;
}

CircuitGraph circuit_network(HookableModel& model, const std::vector<AIEMatrix>& matrices,
                             const std::map<CorruptionKind, std::vector<PromptPair>>& pairs,
                             int top_heads, int top_edges, PositionMode mode, int jobs) {
    std::vector<HeadId> nodes;
    for (const auto& n : circuit_nodes(matrices, top_heads)) nodes.push_back(n.head);
    std::vector<PathEdgeScore> candidates;
    for (const auto& [kind, list] : pairs) {
        if (list.empty()) continue;
        auto edges = path_edges(model, list, nodes, mode, jobs);
        candidates.insert(candidates.end(), edges.begin(), edges.end());
    }
    return circuit_network(matrices, candidates, top_heads, top_edges);
}

// ---------------------------------------------------------------------------
// ablation

std::string to_string(AblationName name) {
    switch (name) {
        case AblationName::Baseline: return "baseline";
        case AblationName::Rand: return "rand";
        case AblationName::RS: return "rs";
        case AblationName::PS: return "ps";
        case AblationName::PST: return "pst";
        case AblationName::ThreeRoles: return "3roles";
    }
    return "?";
}

AblationName ablation_from_string(const std::string& s) {
    if (s == "baseline") return AblationName::Baseline;
    if (s == "rand") return AblationName::Rand;
    if (s == "rs") return AblationName::RS;
    if (s == "ps") return AblationName::PS;
    if (s == "pst") return AblationName::PST;
    if (s == "3roles" || s == "three_roles") return AblationName::ThreeRoles;
    throw std::invalid_argument("unknown ablation config '" + s + "'");
}

std::vector<HeadRole> roles_of(AblationName name) {
    switch (name) {
        case AblationName::RS: return {HeadRole::ReadRule, HeadRole::SelectRule};
        case AblationName::PS: return {HeadRole::ReadFact, HeadRole::SelectPremise};
        case AblationName::PST: return {HeadRole::ReadRuleCondition, HeadRole::MatchRuleCondition};
        case AblationName::ThreeRoles:
            return {HeadRole::ReadRule,          HeadRole::SelectRule,
                    HeadRole::ReadFact,          HeadRole::SelectPremise,
                    HeadRole::ReadRuleCondition, HeadRole::MatchRuleCondition};
        default: return {};
    }
}

std::vector<HeadId> ablation_heads(const AblationConfig& config,
                                   const std::map<HeadRole, std::vector<HeadId>>& role_heads,
                                   const Capabilities& caps, int run) {
    std::set<HeadId> out;
    if (config.name == AblationName::Rand) {
        const int total = caps.total_heads();
        const int count = std::clamp(static_cast<int>(std::lround(config.rand_fraction * total)), 1, total);
        std::vector<int> idx(static_cast<std::size_t>(total));
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(run)));
        rng.shuffle(idx);
        for (int i = 0; i < count; ++i) out.insert({idx[i] / caps.n_heads, idx[i] % caps.n_heads});
    }
    for (HeadRole r : roles_of(config.name)) {
        auto it = role_heads.find(r);
        if (it == role_heads.end()) {
            throw std::invalid_argument("no heads for role " + to_string(r));
        }
        const auto& list = it->second;
        const std::size_t k = std::min(list.size(), static_cast<std::size_t>(std::max(config.top_k, 0)));
        out.insert(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return {out.begin(), out.end()};
}

AblationResult ablate_eval(HookableModel& model, const std::vector<DatasetRecord>& dataset,
                           const std::string& dataset_name, const AblationConfig& config,
                           const std::map<HeadRole, std::vector<HeadId>>& role_heads, int jobs) {
    const auto caps = model.capabilities();
    const int runs = config.name == AblationName::Rand ? std::max(config.rand_runs, 1) : 1;
    AblationResult result;

    double lenient = 0.0, strict = 0.0, answer = 0.0, heads = 0.0;
    int answer_runs = 0;
    int scored_min = static_cast<int>(dataset.size());
    for (int run = 0; run < runs; ++run) {
        auto set = ablation_heads(config, role_heads, caps, run);
        heads += static_cast<double>(set.size());

        const int n = static_cast<int>(dataset.size());
        std::vector<std::optional<StepAccuracy>> acc(dataset.size());
        std::vector<std::string> generated(dataset.size());
        parallel_for(n, jobs, [&](int i) {
            const auto& rec = dataset[i];
            GenerateRequest g;
            g.prompt = rec.query_prompt();
            g.max_tokens = static_cast<int>(rec.doc.text.size() - rec.query_prompt_len()) + 16;
            g.ablate = set;
            g.stop = {"\n-------", "= True.", "= False."};
            try {
                generated[i] = model.generate(g).text;
                acc[i] = inference_step_accuracy(generated[i], rec.problem(), rec.gold_chain());
            } catch (const ProtocolError&) {
                acc[i].reset();
            }
        });

        double run_lenient = 0.0, run_strict = 0.0;
        std::vector<AnswerRecord> answers;
        for (int i = 0; i < n; ++i) {
            if (!acc[i]) {
                ++result.failed;
                continue;
            }
            run_lenient += acc[i]->lenient;
            run_strict += acc[i]->strict;
            answers.push_back({generated[i], dataset[i].gold_chain().verdict ? "True" : "False"});
        }
        const int scored = static_cast<int>(answers.size());
        scored_min = std::min(scored_min, scored);
        if (scored > 0) {
            lenient += run_lenient / scored;
            strict += run_strict / scored;
        }
        if (auto fa = final_answer_accuracy(answers)) {
            answer += *fa;
            ++answer_runs;
        }
        result.head_sets.push_back(std::move(set));
    }

    const std::string name = to_string(config.name);
    const auto row = [&](const std::string& metric, double value) {
        result.rows.push_back({name, dataset_name, metric, value, scored_min, config.seed});
    };
    row("step_accuracy_lenient", lenient / runs);
    row("step_accuracy_strict", strict / runs);
    if (answer_runs > 0) row("final_answer_accuracy", answer / answer_runs);
    row("heads_ablated", heads / runs);
    row("failed_records", result.failed);
    return result;
}

// ---------------------------------------------------------------------------
// files

json to_json(const AIEMatrix& m) {
    json rows = json::array();
    for (int l = 0; l < m.n_layers; ++l) {
        json row = json::array();
        for (int j = 0; j < m.n_heads; ++j) row.push_back(m.at(l, j));
        rows.push_back(row);
    }
    return json{{"model_id", m.model_id}, {"role", to_string(m.role)}, {"L", m.n_layers},
                {"J", m.n_heads},         {"scores", rows},            {"n_pairs", m.n_pairs},
                {"skipped", m.skipped}};
}

AIEMatrix aie_from_json(const json& j) {
    try {
        AIEMatrix m;
        m.model_id = j.at("model_id").get<std::string>();
        m.role = head_role_from_string(j.at("role").get<std::string>());
        m.n_layers = j.at("L").get<int>();
        m.n_heads = j.at("J").get<int>();
        m.n_pairs = j.at("n_pairs").get<int>();
        m.skipped = j.value("skipped", 0);
        const auto& rows = j.at("scores");
        if (static_cast<int>(rows.size()) != m.n_layers) throw DataError("scores has wrong row count");
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != m.n_heads) throw DataError("scores row has wrong width");
            for (const auto& v : row) m.scores.push_back(v.get<double>());
        }
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad score file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("bad score file: ") + e.what());
    }
}

json to_json(const PathEdgeScore& e) {
    json j{{"emit", to_json(e.emit)}, {"rec", to_json(e.rec)}, {"score", e.score}, {"n_pairs", e.n_pairs}};
    if (e.kind) j["kind"] = to_string(*e.kind);
    return j;
}

PathEdgeScore edge_from_json(const json& j) {
    try {
        PathEdgeScore e;
        e.emit = head_from_json(j.at("emit"));
        e.rec = head_from_json(j.at("rec"));
        e.score = j.at("score").get<double>();
        e.n_pairs = j.value("n_pairs", 0);
        if (j.contains("kind")) e.kind = kind_from_string(j.at("kind").get<std::string>());
        return e;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad edge: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("bad edge: ") + e.what());
    }
}

json edges_to_json(const std::vector<PathEdgeScore>& edges) {
    json out = json::array();
    for (const auto& e : edges) out.push_back(to_json(e));
    return out;
}

std::vector<PathEdgeScore> edges_from_json(const json& j) {
    if (!j.is_array()) throw DataError("edge file must hold a JSON list");
    std::vector<PathEdgeScore> out;
    for (const auto& e : j) out.push_back(edge_from_json(e));
    return out;
}

json to_json(const CircuitGraph& g) {
    json nodes = json::array();
    for (const auto& n : g.nodes) {
        json roles = json::array();
        for (HeadRole r : n.roles) roles.push_back(to_string(r));
        nodes.push_back({{"layer", n.head.layer}, {"head", n.head.head}, {"roles", roles}});
    }
    return json{{"nodes", nodes}, {"edges", edges_to_json(g.edges)}};
}

CircuitGraph circuit_from_json(const json& j) {
    try {
        CircuitGraph g;
        for (const auto& n : j.at("nodes")) {
            CircuitNode node{head_from_json(n), {}};
            for (const auto& r : n.at("roles")) node.roles.push_back(head_role_from_string(r.get<std::string>()));
            g.nodes.push_back(std::move(node));
        }
        g.edges = edges_from_json(j.at("edges"));
        return g;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad circuit file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("bad circuit file: ") + e.what());
    }
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = csv_row({"config", "dataset", "metric", "value", "n", "seed"});
    for (const auto& r : rows) {
        out += csv_row({r.config, r.dataset, r.metric, format_number(r.value), std::to_string(r.n),
                        std::to_string(r.seed)});
    }
    return out;
}

std::vector<MetricRow> metrics_from_csv(const std::string& text) {
    std::vector<std::vector<std::string>> table;
    try {
        table = parse_csv(text);
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
    const std::vector<std::string> header = {"config", "dataset", "metric", "value", "n", "seed"};
    if (table.empty() || table[0] != header) throw DataError("metrics CSV lacks the expected header");
    std::vector<MetricRow> out;
    for (std::size_t i = 1; i < table.size(); ++i) {
        const auto& f = table[i];
        if (f.size() != header.size()) throw DataError("metrics CSV row " + std::to_string(i) + " has wrong width");
        try {
            out.push_back({f[0], f[1], f[2], std::stod(f[3]), std::stoi(f[4]), std::stoull(f[5])});
        } catch (const std::exception&) {
            throw DataError("metrics CSV row " + std::to_string(i) + " has a bad number");
        }
    }
    return out;
}

}  // namespace circuitlab
