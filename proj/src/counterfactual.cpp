#include "circuitlab/counterfactual.hpp"

#include <algorithm>
#include <mutex>

namespace circuitlab {

std::string to_string(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::C1: return "c1";
        case CorruptionKind::C2: return "c2";
        case CorruptionKind::C3: return "c3";
        case CorruptionKind::C4: return "c4";
    }
    return "c1";
}

std::string long_name(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::C1: return "C1_Fact_PremiseSelection";
        case CorruptionKind::C2: return "C2_Rule_Termination";
        case CorruptionKind::C3: return "C3_Rule_RuleSelection";
        case CorruptionKind::C4: return "C4_TraversalAlg_PremiseSelection";
    }
    return "C1_Fact_PremiseSelection";
}

CorruptionKind kind_from_string(const std::string& s) {
    for (CorruptionKind k : kAllKinds) {
        if (s == to_string(k) || s == long_name(k)) return k;
    }
    if (s.size() == 2 && (s[0] == 'C') && s[1] >= '1' && s[1] <= '4') {
        return kAllKinds[s[1] - '1'];
    }
    throw std::invalid_argument("unknown corruption type: " + s);
}

namespace {

Role component_role(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::C1: return Role::PremiseSelection;
        case CorruptionKind::C2: return Role::PremiseSelectionTermination;
        case CorruptionKind::C3: return Role::RuleSelection;
        case CorruptionKind::C4: return Role::PremiseSelection;
    }
    return Role::PremiseSelection;
}

Traversal other(Traversal t) { return t == Traversal::BFS ? Traversal::DFS : Traversal::BFS; }

struct SpanLookup {
    const std::vector<RoleSpan>& spans;

    const RoleSpan* at(std::size_t pos) const {
        auto it = std::upper_bound(spans.begin(), spans.end(), pos,
                                   [](std::size_t p, const RoleSpan& s) { return p < s.char_start; });
        if (it == spans.begin()) return nullptr;
        --it;
        return pos < it->char_end ? &*it : nullptr;
    }
    Role role(std::size_t pos) const {
        const RoleSpan* s = at(pos);
        return s ? s->role : Role::Syntax;
    }
    int step(std::size_t pos) const {
        const RoleSpan* s = at(pos);
        return s ? s->step_index : -1;
    }
};

// Line of rule `id` inside a rendered shot, newline excluded.
CharRange rule_line(const Problem& problem, int id) {
    std::size_t pos = kHeaderLine.size() + 1;
    for (const auto& r : problem.rules) {
        const std::size_t len = 10 + std::to_string(r.id).size() + render_rule(r).size();
        if (r.id == id) return {pos, pos + len};
        pos += len + 1;
    }
    throw std::out_of_range("no rule with id " + std::to_string(id));
}

std::vector<Demo> demos_of(const PromptDoc& doc) {
    std::vector<Demo> demos;
    for (std::size_t i = 0; i + 1 < doc.shots.size(); ++i) {
        demos.emplace_back(doc.shots[i].problem, doc.shots[i].chain);
    }
    return demos;
}

bool same_step(const InferenceStep& a, const InferenceStep& b) {
    return a.selected == b.selected && a.rule_id == b.rule_id && a.derived == b.derived;
}

bool letter_used(const ReasoningChain& chain, Premise p) {
    for (const auto& s : chain.steps) {
        if (std::find(s.selected.begin(), s.selected.end(), p) != s.selected.end()) return true;
    }
    return false;
}

std::vector<CharRange> merge_positions(const std::vector<std::size_t>& positions) {
    std::vector<CharRange> out;
    for (std::size_t p : positions) {
        if (!out.empty() && out.back().end == p) {
            out.back().end = p + 1;
        } else {
            out.push_back({p, p + 1});
        }
    }
    return out;
}

// Assembles the pair from a corrupted query; demonstrations are shared unless
// corrupted_demos is given. Positions are local to the query shot except
// demo_spans, which are document offsets.
PromptPair assemble(const PromptDoc& doc, CorruptionKind kind, const Demo& corrupted_query,
                    std::size_t comp_local, const std::string& clean_target,
                    const std::string& corrupted_target, const std::vector<CharRange>& causal_local,
                    const std::vector<Demo>* corrupted_demos = nullptr,
                    const std::vector<CharRange>& demo_spans = {}) {
    const auto demos = demos_of(doc);
    const Demo clean_query{doc.query().problem, doc.query().chain};
    PromptPair pair;
    pair.kind = kind;
    pair.clean = render_prompt(demos, clean_query, comp_local);
    pair.corrupted =
        render_prompt(corrupted_demos ? *corrupted_demos : demos, corrupted_query, comp_local);
    const std::size_t base = pair.clean.shot_offset(pair.clean.shots.size() - 1);
    pair.causal_spans = demo_spans;
    for (const auto& r : causal_local) pair.causal_spans.push_back({r.start + base, r.end + base});
    pair.component_span = {base + comp_local, base + comp_local + clean_target.size()};
    pair.preceding_char = base + comp_local - 1;
    pair.clean_target = clean_target;
    pair.corrupted_target = corrupted_target;
    return pair;
}

std::set<Premise> letters_of(const Problem& p) {
    std::set<Premise> out{p.question};
    for (const auto& r : p.rules) {
        out.insert(r.conclusion);
        out.insert(r.conditions.begin(), r.conditions.end());
    }
    return out;
}

}  // namespace

std::optional<int> last_single_premise_rule(const ReasoningChain& chain, const Problem& problem) {
    for (auto it = chain.steps.rbegin(); it != chain.steps.rend(); ++it) {
        const Rule* r = problem.find_rule(it->rule_id);
        if (r && r->conditions.size() == 1) return r->id;
    }
    return std::nullopt;
}

std::optional<PromptPair> corrupt_fact(const PromptDoc& doc, int fact_rule_id, Premise replacement,
                                       const CorruptOptions& options) {
    const Problem& problem = doc.query().problem;
    const ReasoningChain& chain = doc.query().chain;
    const Rule* fact = problem.find_rule(fact_rule_id);
    if (!fact || !fact->is_fact() || !is_premise(replacement)) return std::nullopt;
    const Premise old = fact->conclusion;
    if (!letter_used(chain, old) || replacement == old) return std::nullopt;
    if (closure(problem.rules).count(replacement) || replacement == problem.question) {
        return std::nullopt;
    }
    Problem corrupted = problem;
    corrupted.rules[static_cast<std::size_t>(fact_rule_id - 1)].conclusion = replacement;
    if (!check_problem(corrupted).empty()) return std::nullopt;
    ReasoningChain corrupted_chain = run_policy(corrupted, options.policy);

    const auto clean = render_shot_with_spans(problem, chain);
    const auto corr = render_shot_with_spans(corrupted, corrupted_chain);
    SpanLookup cs{clean.spans}, ks{corr.spans};
    const std::size_t fact_letter = rule_line(problem, fact_rule_id).start + 10 +
                                    std::to_string(fact_rule_id).size();
    std::vector<std::size_t> edits;
    const std::size_t n = std::min(clean.text.size(), corr.text.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (clean.text[i] == corr.text[i]) continue;
        const bool kb_edit = cs.role(i) == Role::PremiseInKB && ks.role(i) == Role::PremiseInKB &&
                             clean.text[i] == old && corr.text[i] == replacement;
        if (i == fact_letter || kb_edit) {
            edits.push_back(i);
            continue;
        }
        if (cs.role(i) != Role::PremiseSelection || ks.role(i) != Role::PremiseSelection) {
            return std::nullopt;
        }
        return assemble(doc, CorruptionKind::C1, {corrupted, corrupted_chain}, i,
                        std::string(1, clean.text[i]), std::string(1, corr.text[i]),
                        merge_positions(edits));
    }
    return std::nullopt;
}

std::optional<PromptPair> corrupt_termination(const PromptDoc& doc, int ry_rule_id,
                                              Premise second_condition, Premise new_conclusion,
                                              const CorruptOptions& options) {
    const Problem& problem = doc.query().problem;
    const ReasoningChain& chain = doc.query().chain;
    auto rx_id = last_single_premise_rule(chain, problem);
    if (!rx_id || *rx_id == ry_rule_id) return std::nullopt;
    const Rule* rx = problem.find_rule(*rx_id);
    const Rule* ry = problem.find_rule(ry_rule_id);
    if (!ry || ry->conditions.size() != 2) return std::nullopt;
    std::size_t t = 0;
    while (chain.steps[t].rule_id != *rx_id) ++t;
    for (const auto& s : chain.steps) {
        if (s.rule_id == ry_rule_id) return std::nullopt;  // Ry must be unused
    }
    const Premise v = rx->conditions[0];
    const Premise d = rx->conclusion;
    const KBState kb_before = t == 0 ? initial_kb(problem) : chain.steps[t - 1].kb_after;
    if (second_condition == v || !kb_before.contains(second_condition)) return std::nullopt;
    if (!is_premise(new_conclusion) || closure(problem.rules).count(new_conclusion) ||
        new_conclusion == problem.question) {
        return std::nullopt;
    }

    Problem corrupted = problem;
    corrupted.rules[static_cast<std::size_t>(*rx_id - 1)].conclusion = new_conclusion;
    Rule& new_ry = corrupted.rules[static_cast<std::size_t>(ry_rule_id - 1)];
    new_ry.conditions = {v, second_condition};
    new_ry.conclusion = d;
    if (!check_problem(corrupted).empty()) return std::nullopt;
    ReasoningChain corrupted_chain = run_policy(corrupted, options.policy);
    if (corrupted_chain.steps.size() <= t) return std::nullopt;
    for (std::size_t i = 0; i < t; ++i) {
        if (!same_step(chain.steps[i], corrupted_chain.steps[i])) return std::nullopt;
    }
    if (corrupted_chain.steps[t].rule_id != ry_rule_id) return std::nullopt;

    const auto clean = render_shot_with_spans(problem, chain);
    const auto corr = render_shot_with_spans(corrupted, corrupted_chain);
    SpanLookup cs{clean.spans}, ks{corr.spans};
    const std::vector<CharRange> lines{rule_line(problem, std::min(*rx_id, ry_rule_id)),
                                       rule_line(problem, std::max(*rx_id, ry_rule_id))};
    const std::size_t n = std::min(clean.text.size(), corr.text.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (clean.text[i] == corr.text[i]) continue;
        if (lines[0].contains(i) || lines[1].contains(i)) continue;
        if (cs.role(i) != Role::PremiseSelectionTermination ||
            ks.role(i) != Role::PremiseSelectionTermination || cs.step(i) != static_cast<int>(t) ||
            clean.text[i] != ']' || corr.text[i] != ',') {
            return std::nullopt;
        }
        return assemble(doc, CorruptionKind::C2, {corrupted, corrupted_chain}, i, "]", ",", lines);
    }
    return std::nullopt;
}

std::optional<PromptPair> corrupt_rule(const PromptDoc& doc, int rx_rule_id, int condition_index,
                                       Premise replacement, const CorruptOptions& options) {
    const Problem& problem = doc.query().problem;
    const ReasoningChain& chain = doc.query().chain;
    const Rule* rx = problem.find_rule(rx_rule_id);
    if (!rx || rx->is_fact() || condition_index < 0 ||
        condition_index >= static_cast<int>(rx->conditions.size())) {
        return std::nullopt;
    }
    bool fired = false;
    for (const auto& s : chain.steps) fired = fired || s.rule_id == rx_rule_id;
    if (!fired || !is_premise(replacement)) return std::nullopt;
    if (rx->conditions[static_cast<std::size_t>(condition_index)] == replacement) {
        return std::nullopt;
    }

    Problem corrupted = problem;
    corrupted.rules[static_cast<std::size_t>(rx_rule_id - 1)]
        .conditions[static_cast<std::size_t>(condition_index)] = replacement;
    if (!check_problem(corrupted).empty()) return std::nullopt;
    ReasoningChain corrupted_chain = run_policy(corrupted, options.policy);

    const auto clean = render_shot_with_spans(problem, chain);
    const auto corr = render_shot_with_spans(corrupted, corrupted_chain);
    SpanLookup cs{clean.spans}, ks{corr.spans};
    const CharRange line = rule_line(problem, rx_rule_id);
    std::vector<std::size_t> premise_edits;
    int diverging_step = -1;
    const std::size_t n = std::min(clean.text.size(), corr.text.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (clean.text[i] == corr.text[i] || line.contains(i)) continue;
        const Role cr = cs.role(i);
        if (cr != ks.role(i)) return std::nullopt;
        const int step = cs.step(i);
        if (diverging_step >= 0 && step != diverging_step) return std::nullopt;
        diverging_step = step;
        if (cr == Role::PremiseSelection) {
            premise_edits.push_back(i);
            continue;
        }
        if (cr != Role::RuleSelection) return std::nullopt;
        const auto& a = chain.steps[static_cast<std::size_t>(step)];
        const auto& b = corrupted_chain.steps[static_cast<std::size_t>(step)];
        const std::string da = std::to_string(a.rule_id);
        const std::string db = std::to_string(b.rule_id);
        if (da.size() != db.size() || a.selected.size() != b.selected.size()) return std::nullopt;
        std::size_t end = i;
        while (end < clean.text.size() && cs.role(end) == Role::RuleSelection) ++end;
        std::vector<CharRange> causal{line};
        for (const auto& r : merge_positions(premise_edits)) causal.push_back(r);
        return assemble(doc, CorruptionKind::C3, {corrupted, corrupted_chain}, i,
                        clean.text.substr(i, end - i), corr.text.substr(i, end - i), causal);
    }
    return std::nullopt;
}

std::optional<PromptPair> corrupt_traversal(const PromptDoc& doc, const CorruptOptions& options) {
    TraversalPolicy alt = options.policy;
    alt.kind = other(options.policy.kind);
    const auto demos = demos_of(doc);
    if (demos.empty()) return std::nullopt;

    std::vector<Demo> alt_demos;
    std::vector<CharRange> demo_spans;
    std::size_t offset = 0;
    for (const auto& [problem, chain] : demos) {
        ReasoningChain alt_chain = run_policy(problem, alt);
        if (alt_chain.steps.size() != chain.steps.size() || !alt_chain.verdict) return std::nullopt;
        const std::string a = render_shot(problem, chain);
        const std::string b = render_shot(problem, alt_chain);
        if (a.size() != b.size()) return std::nullopt;
        std::size_t first = a.size(), last = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] != b[i]) {
                first = std::min(first, i);
                last = i;
            }
        }
        if (first < a.size()) demo_spans.push_back({offset + first, offset + last + 1});
        alt_demos.emplace_back(problem, std::move(alt_chain));
        offset += a.size() + kShotSeparator.size() + 2;
    }
    if (demo_spans.empty()) return std::nullopt;

    const Problem& problem = doc.query().problem;
    const ReasoningChain& chain = doc.query().chain;
    ReasoningChain alt_chain = run_policy(problem, alt);
    const auto clean = render_shot_with_spans(problem, chain);
    const auto corr = render_shot_with_spans(problem, alt_chain);
    SpanLookup cs{clean.spans}, ks{corr.spans};
    const std::size_t n = std::min(clean.text.size(), corr.text.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (clean.text[i] == corr.text[i]) continue;
        if (cs.role(i) != Role::PremiseSelection || ks.role(i) != Role::PremiseSelection) {
            return std::nullopt;
        }
        return assemble(doc, CorruptionKind::C4, {problem, alt_chain}, i,
                        std::string(1, clean.text[i]), std::string(1, corr.text[i]), {},
                        &alt_demos, demo_spans);
    }
    return std::nullopt;
}

std::optional<PromptPair> corrupt(const PromptDoc& doc, CorruptionKind kind, Rng& rng,
                                  const CorruptOptions& options) {
    const Problem& problem = doc.query().problem;
    const ReasoningChain& chain = doc.query().chain;
    const auto proven = closure(problem.rules);
    const auto seen = letters_of(problem);
    std::vector<Premise> unproven, unseen;
    for (char c : options.alphabet) {
        if (!is_premise(c) || c == problem.question) continue;
        if (!proven.count(c)) unproven.push_back(c);
        if (!seen.count(c)) unseen.push_back(c);
    }

    switch (kind) {
        case CorruptionKind::C1: {
            std::vector<std::pair<int, Premise>> choices;
            for (const auto& r : problem.rules) {
                if (!r.is_fact() || !letter_used(chain, r.conclusion)) continue;
                for (Premise c : unproven) choices.emplace_back(r.id, c);
            }
            rng.shuffle(choices);
            for (const auto& [id, c] : choices) {
                if (auto p = corrupt_fact(doc, id, c, options)) return p;
            }
            return std::nullopt;
        }
        case CorruptionKind::C2: {
            auto rx = last_single_premise_rule(chain, problem);
            if (!rx) return std::nullopt;
            std::size_t t = 0;
            while (chain.steps[t].rule_id != *rx) ++t;
            const KBState kb = t == 0 ? initial_kb(problem) : chain.steps[t - 1].kb_after;
            std::set<int> used;
            for (const auto& s : chain.steps) used.insert(s.rule_id);
            std::vector<std::tuple<int, Premise, Premise>> choices;
            for (const auto& r : problem.rules) {
                if (r.conditions.size() != 2 || used.count(r.id)) continue;
                for (Premise b : kb.items()) {
                    for (Premise x : unproven) choices.emplace_back(r.id, b, x);
                }
            }
            rng.shuffle(choices);
            for (const auto& [ry, b, x] : choices) {
                if (auto p = corrupt_termination(doc, ry, b, x, options)) return p;
            }
            return std::nullopt;
        }
        case CorruptionKind::C3: {
            const auto& letters = unseen.empty() ? unproven : unseen;
            std::vector<std::tuple<int, int, Premise>> choices;
            std::set<int> used;
            for (const auto& s : chain.steps) {
                if (!used.insert(s.rule_id).second) continue;
                const Rule* r = problem.find_rule(s.rule_id);
                if (!r) continue;
                for (int ci = 0; ci < static_cast<int>(r->conditions.size()); ++ci) {
                    for (Premise c : letters) choices.emplace_back(r->id, ci, c);
                }
            }
            rng.shuffle(choices);
            for (const auto& [rx, ci, c] : choices) {
                if (auto p = corrupt_rule(doc, rx, ci, c, options)) return p;
            }
            return std::nullopt;
        }
        case CorruptionKind::C4:
            return corrupt_traversal(doc, options);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

bool validate_structure(const PromptPair& pair, std::string* why) {
    auto fail = [&](const std::string& reason) {
        if (why) *why = reason;
        return false;
    };
    const std::string& a = pair.clean.text;
    const std::string& b = pair.corrupted.text;
    if (a.size() != b.size()) return fail("clean and corrupted lengths differ");
    if (pair.clean.shots.empty() || pair.clean.shots.size() != pair.corrupted.shots.size()) {
        return fail("shot counts differ");
    }
    if (pair.clean_target.empty() || pair.clean_target.size() != pair.corrupted_target.size()) {
        return fail("target lengths differ");
    }
    if (pair.clean_target == pair.corrupted_target) return fail("targets do not diverge");
    if (pair.component_span.start != a.size() ||
        pair.component_span.size() != pair.clean_target.size()) {
        return fail("component span is not aligned with the truncation point");
    }
    if (a.empty() || pair.preceding_char + 1 != pair.component_span.start) {
        return fail("preceding char is not adjacent to the component");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;
        bool covered = std::any_of(pair.causal_spans.begin(), pair.causal_spans.end(),
                                   [i](const CharRange& r) { return r.contains(i); });
        if (!covered) return fail("difference outside causal spans at " + std::to_string(i));
    }
    for (const auto& r : pair.causal_spans) {
        if (r.end > a.size() || r.start >= r.end) return fail("causal span out of range");
    }

    const Role want = component_role(pair.kind);
    for (const PromptDoc* doc : {&pair.clean, &pair.corrupted}) {
        const bool is_clean = doc == &pair.clean;
        const std::string side = is_clean ? "clean" : "corrupted";
        if (doc_from_shots(doc->shots).text != doc->text) {
            return fail(side + " text does not match its shots");
        }
        const std::size_t k = doc->shots.size() - 1;
        for (std::size_t s = 0; s < k; ++s) {
            const auto& shot = doc->shots[s];
            auto v = validate_chain(shot.problem, shot.chain);
            if (!v.final || std::count(v.steps.begin(), v.steps.end(), false)) {
                return fail(side + " demonstration " + std::to_string(s) + " fails the oracle");
            }
        }
        const auto& q = doc->query();
        const auto full = render_shot_with_spans(q.problem, q.chain);
        const std::size_t local = pair.component_span.start - doc->shot_offset(k);
        const std::string& target = is_clean ? pair.clean_target : pair.corrupted_target;
        if (full.text.compare(local, target.size(), target) != 0) {
            return fail(side + " continuation does not match its target");
        }
        SpanLookup lookup{full.spans};
        if (lookup.role(local) != want) return fail(side + " component has the wrong role");
        const int step = lookup.step(local);
        ReasoningChain visible;
        visible.steps.assign(q.chain.steps.begin(),
                             q.chain.steps.begin() + std::max(0, step));
        auto v = validate_chain(q.problem, visible);
        if (std::count(v.steps.begin(), v.steps.end(), false)) {
            return fail(side + " visible chain fails the oracle");
        }
    }
    return true;
}

// ---------------------------------------------------------------------------

PairGeneration generate_pairs(int n, int k, CorruptionKind kind, std::uint64_t seed,
                              const GeneratorConfig& config, int jobs,
                              const CorruptOptions& options) {
    PairGeneration out;
    if (n <= 0) return out;
    const int budget = 10 * n;
    const int batch = std::max(1, jobs);
    while (out.attempts < budget && static_cast<int>(out.pairs.size()) < n) {
        const int start = out.attempts;
        const int count = std::min(batch, budget - start);
        std::vector<std::optional<PromptPair>> results(static_cast<std::size_t>(count));
        parallel_for(count, jobs, [&](int j) {
            const int attempt = start + j;
            const std::uint64_t attempt_seed = derive_seed(seed, static_cast<std::uint64_t>(attempt));
            GeneratorConfig cfg = config;
            cfg.policy = options.policy;
            // Traversal swaps need demonstrations whose two chains line up.
            GeneratorConfig demo_cfg = cfg;
            demo_cfg.policy_witness = true;
            std::optional<PromptPair> pair;
            try {
                DatasetRecord record =
                    make_record(attempt, k, attempt_seed, cfg,
                                kind == CorruptionKind::C4 ? &demo_cfg : nullptr);
                Rng rng(derive_seed(attempt_seed, 0xFFFFFFFFull));
                pair = corrupt(record.doc, kind, rng, options);
            } catch (const GenerationExhausted&) {
                pair.reset();
            }
            if (pair && validate_structure(*pair)) {
                pair->seed = attempt_seed;
                pair->attempt = attempt;
                results[static_cast<std::size_t>(j)] = std::move(pair);
            }
        });
        // Collate in attempt order so the result does not depend on jobs.
        for (int j = 0; j < count; ++j) {
            ++out.attempts;
            auto& r = results[static_cast<std::size_t>(j)];
            if (r) out.pairs.push_back(std::move(*r));
            if (static_cast<int>(out.pairs.size()) == n) break;
        }
    }
    if (static_cast<int>(out.pairs.size()) < n) {
        throw InsufficientYield("only " + std::to_string(out.pairs.size()) + " of " +
                                    std::to_string(n) + " " + to_string(kind) + " pairs after " +
                                    std::to_string(out.attempts) + " attempts",
                                static_cast<int>(out.pairs.size()), out.attempts);
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

json range_json(const CharRange& r) { return json::array({r.start, r.end}); }

CharRange range_from(const json& j) {
    if (!j.is_array() || j.size() != 2) throw DataError("char range must be [start, end]");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

json shots_json(const PromptDoc& doc) {
    json out = json::array();
    for (const auto& s : doc.shots) out.push_back(to_json(s));
    return out;
}

PromptDoc doc_from(const json& j) {
    std::vector<PromptShot> shots;
    for (const auto& s : j) shots.push_back(shot_from_json(s));
    return doc_from_shots(std::move(shots));
}

}  // namespace

json to_json(const PromptPair& pair, int id) {
    json spans = json::array();
    for (const auto& r : pair.causal_spans) spans.push_back(range_json(r));
    return json{{"id", id},
                {"kind", to_string(pair.kind)},
                {"clean_text", pair.clean.text},
                {"corrupted_text", pair.corrupted.text},
                {"causal_spans", spans},
                {"component_span", range_json(pair.component_span)},
                {"preceding_char", pair.preceding_char},
                {"clean_target", pair.clean_target},
                {"corrupted_target", pair.corrupted_target},
                {"seed", pair.seed},
                {"attempt", pair.attempt},
                {"k", pair.clean.k},
                {"clean_shots", shots_json(pair.clean)},
                {"corrupted_shots", shots_json(pair.corrupted)}};
}

PromptPair pair_from_json(const json& j) {
    try {
        PromptPair p;
        p.kind = kind_from_string(j.at("kind").get<std::string>());
        p.clean = doc_from(j.at("clean_shots"));
        p.corrupted = doc_from(j.at("corrupted_shots"));
        if (p.clean.text != j.at("clean_text").get<std::string>() ||
            p.corrupted.text != j.at("corrupted_text").get<std::string>()) {
            throw DataError("pair text does not match its shots");
        }
        for (const auto& r : j.at("causal_spans")) p.causal_spans.push_back(range_from(r));
        p.component_span = range_from(j.at("component_span"));
        p.preceding_char = j.at("preceding_char").get<std::size_t>();
        p.clean_target = j.at("clean_target").get<std::string>();
        p.corrupted_target = j.at("corrupted_target").get<std::string>();
        p.seed = j.value("seed", std::uint64_t{0});
        p.attempt = j.value("attempt", 0);
        return p;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad pair record: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("bad pair record: ") + e.what());
    }
}

void write_pairs(const std::filesystem::path& path, const std::vector<PromptPair>& pairs) {
    std::vector<json> rows;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        rows.push_back(to_json(pairs[i], static_cast<int>(i)));
    }
    write_jsonl(path, rows);
}

std::vector<PromptPair> read_pairs(const std::filesystem::path& path) {
    std::vector<PromptPair> out;
    for (const auto& row : read_jsonl(path)) out.push_back(pair_from_json(row));
    return out;
}

}  // namespace circuitlab
