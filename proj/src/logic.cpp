#include "circuitlab/logic.hpp"

#include <algorithm>

#include "circuitlab/rng.hpp"

namespace circuitlab {

const Rule* Problem::find_rule(int id) const {
    if (id >= 1 && id <= static_cast<int>(rules.size()) && rules[id - 1].id == id) {
        return &rules[id - 1];
    }
    for (const auto& r : rules) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

bool KBState::insert(Premise p) {
    if (!is_premise(p) || present_[index(p)]) return false;
    present_[index(p)] = true;
    order_.push_back(p);
    return true;
}

int KBState::position(Premise p) const {
    for (std::size_t i = 0; i < order_.size(); ++i) {
        if (order_[i] == p) return static_cast<int>(i);
    }
    return -1;
}

KBState initial_kb(const Problem& problem) {
    KBState kb;
    for (const auto& r : problem.rules) {
        if (r.is_fact()) kb.insert(r.conclusion);
    }
    return kb;
}

std::string to_string(Traversal t) { return t == Traversal::BFS ? "bfs" : "dfs"; }

Traversal traversal_from_string(const std::string& s) {
    if (s == "bfs" || s == "BFS") return Traversal::BFS;
    if (s == "dfs" || s == "DFS") return Traversal::DFS;
    throw std::invalid_argument("unknown traversal policy: " + s);
}

std::set<Premise> closure(const std::vector<Rule>& rules) {
    std::array<bool, 26> have{};
    std::set<Premise> out;
    auto add = [&](Premise p) {
        if (!is_premise(p) || have[p - 'A']) return false;
        have[p - 'A'] = true;
        out.insert(p);
        return true;
    };
    std::vector<bool> done(rules.size(), false);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < rules.size(); ++i) {
            if (done[i]) continue;
            const Rule& r = rules[i];
            bool ok = std::all_of(r.conditions.begin(), r.conditions.end(),
                                  [&](Premise c) { return is_premise(c) && have[c - 'A']; });
            if (!ok) continue;
            done[i] = true;
            if (add(r.conclusion)) changed = true;
        }
    }
    return out;
}

std::vector<Rule> applicable_rules(const KBState& kb, const std::vector<Rule>& rules,
                                   const std::set<int>& fired) {
    std::vector<Rule> out;
    for (const auto& r : rules) {
        if (fired.count(r.id) || kb.contains(r.conclusion)) continue;
        bool ok = std::all_of(r.conditions.begin(), r.conditions.end(),
                              [&](Premise c) { return kb.contains(c); });
        if (ok) out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const Rule& a, const Rule& b) { return a.id < b.id; });
    return out;
}

namespace {

// Frontier position of the most recently derived condition.
int latest_condition(const KBState& kb, const Rule& r) {
    int latest = -1;
    for (Premise c : r.conditions) latest = std::max(latest, kb.position(c));
    return latest;
}

const Rule& choose_rule(const std::vector<Rule>& candidates, const KBState& kb, int n_facts,
                        Traversal kind) {
    // candidates are in ascending id order, so strict comparisons keep the
    // lowest id on ties.
    const Rule* best = &candidates.front();
    if (kind == Traversal::BFS) {
        int best_key = latest_condition(kb, *best);
        for (const auto& r : candidates) {
            int key = latest_condition(kb, r);
            if (key < best_key) {
                best = &r;
                best_key = key;
            }
        }
        return *best;
    }
    // DFS: derived premises newest first; initial facts are roots visited in order.
    auto rank = [n_facts](int pos) { return pos >= n_facts ? pos : -pos - 1; };
    int best_key = rank(latest_condition(kb, *best));
    for (const auto& r : candidates) {
        int key = rank(latest_condition(kb, r));
        if (key > best_key) {
            best = &r;
            best_key = key;
        }
    }
    return *best;
}

}  // namespace

ReasoningChain run_policy(const Problem& problem, const TraversalPolicy& policy) {
    ReasoningChain chain;
    KBState kb = initial_kb(problem);
    const int n_facts = static_cast<int>(kb.size());
    std::vector<Rule> conditionals;
    for (const auto& r : problem.rules) {
        if (!r.is_fact()) conditionals.push_back(r);
    }
    std::set<int> fired;
    bool goal = kb.contains(problem.question);
    int extra_left = policy.extra_steps;
    while (true) {
        if (policy.stop_on_goal && goal && extra_left <= 0) break;
        auto candidates = applicable_rules(kb, conditionals, fired);
        if (candidates.empty()) break;
        const Rule& rule = choose_rule(candidates, kb, n_facts, policy.kind);
        InferenceStep step;
        step.selected = rule.conditions;
        step.rule_id = rule.id;
        step.derived = rule.conclusion;
        fired.insert(rule.id);
        kb.insert(rule.conclusion);
        step.kb_after = kb;
        chain.steps.push_back(std::move(step));
        if (policy.stop_on_goal && goal) --extra_left;
        if (rule.conclusion == problem.question) goal = true;
    }
    chain.verdict = kb.contains(problem.question);
    return chain;
}

ReasoningChain derive_chain(const Problem& problem, const TraversalPolicy& policy) {
    if (!closure(problem.rules).count(problem.question)) {
        throw NotDerivable(std::string("question ") + problem.question +
                           " is not derivable from the rules");
    }
    return run_policy(problem, policy);
}

ChainVerdicts validate_chain(const Problem& problem, const ReasoningChain& chain) {
    ChainVerdicts out;
    KBState kb = initial_kb(problem);
    for (const auto& step : chain.steps) {
        bool ok = !step.malformed;
        const Rule* rule = ok ? problem.find_rule(step.rule_id) : nullptr;
        if (!rule || rule->is_fact()) ok = false;
        if (ok) {
            std::vector<Premise> a = step.selected;
            std::vector<Premise> b = rule->conditions;
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            ok = a == b && std::adjacent_find(a.begin(), a.end()) == a.end();
        }
        if (ok) {
            ok = std::all_of(step.selected.begin(), step.selected.end(),
                             [&](Premise p) { return kb.contains(p); });
        }
        if (ok) ok = step.derived == rule->conclusion && !kb.contains(step.derived);
        KBState next = kb;
        if (!step.malformed) next.insert(step.derived);
        if (ok) ok = step.kb_after == next;
        out.steps.push_back(ok);
        kb = std::move(next);
    }
    out.final = kb.contains(problem.question);
    return out;
}

std::string check_problem(const Problem& problem) {
    if (!is_premise(problem.question)) return "question is not a premise letter";
    std::set<std::pair<std::vector<Premise>, Premise>> seen;
    for (std::size_t i = 0; i < problem.rules.size(); ++i) {
        const Rule& r = problem.rules[i];
        if (r.id != static_cast<int>(i) + 1) return "rule ids must be dense and 1-based";
        if (r.conditions.size() > 2) return "rule has more than two conditions";
        if (!is_premise(r.conclusion)) return "rule conclusion is not a premise letter";
        for (Premise c : r.conditions) {
            if (!is_premise(c)) return "rule condition is not a premise letter";
            if (c == r.conclusion) return "rule concludes one of its own conditions";
        }
        if (r.conditions.size() == 2 && r.conditions[0] == r.conditions[1]) {
            return "rule repeats a condition";
        }
        auto key = r.conditions;
        std::sort(key.begin(), key.end());
        if (!seen.insert({key, r.conclusion}).second) return "duplicate rule";
    }
    return {};
}

namespace {

std::optional<Problem> try_generate(Rng& rng, const GeneratorConfig& cfg) {
    std::vector<char> letters(cfg.alphabet.begin(), cfg.alphabet.end());
    rng.shuffle(letters);
    const int total = rng.between(cfg.min_total, cfg.max_total);
    const int max_facts = std::max(2, std::min(6, total / 3));
    const int n_facts = rng.between(2, max_facts);
    const int spine_room = total - n_facts;
    if (spine_room < 1 || static_cast<int>(letters.size()) < n_facts + 2) return std::nullopt;
    const int spine_lo = std::min(std::max(1, cfg.min_chain_len), spine_room);
    const int spine_hi = std::min({spine_room, 6, static_cast<int>(letters.size()) - n_facts});
    if (spine_hi < spine_lo) return std::nullopt;
    const int n_spine = rng.between(spine_lo, spine_hi);

    std::size_t next_letter = 0;
    std::vector<Premise> facts(letters.begin(), letters.begin() + n_facts);
    next_letter = static_cast<std::size_t>(n_facts);

    std::vector<Rule> conditionals;
    std::vector<Premise> proven = facts;
    for (int s = 0; s < n_spine; ++s) {
        Rule r;
        // Spine rules lean on the most recent derivation so the question sits
        // at the end of a real multi-hop chain.
        Premise anchor = (s == 0) ? rng.pick(proven) : proven.back();
        r.conditions.push_back(anchor);
        if (proven.size() >= 2 && rng.chance(0.4)) {
            Premise other = anchor;
            while (other == anchor) other = rng.pick(proven);
            if (rng.chance(0.5)) std::swap(anchor, other);
            r.conditions = {anchor, other};
        }
        r.conclusion = letters[next_letter++];
        proven.push_back(r.conclusion);
        conditionals.push_back(r);
    }
    const Premise question = proven.back();

    // Distractors draw from the used letters plus a few extra, leaving some of
    // the alphabet unseen.
    const std::size_t pool_size =
        std::min(letters.size(), next_letter + static_cast<std::size_t>(rng.between(2, 5)));
    std::vector<Premise> pool(letters.begin(), letters.begin() + static_cast<long>(pool_size));

    std::set<std::pair<std::vector<Premise>, Premise>> seen;
    auto key_of = [](const Rule& r) {
        auto k = r.conditions;
        std::sort(k.begin(), k.end());
        return std::make_pair(k, r.conclusion);
    };
    for (const auto& r : conditionals) seen.insert(key_of(r));
    for (Premise f : facts) seen.insert({{}, f});

    const int n_distract = total - n_facts - n_spine;
    int guard = 0;
    while (static_cast<int>(conditionals.size()) < n_spine + n_distract) {
        if (++guard > 1000) return std::nullopt;
        Rule r;
        r.conditions.push_back(rng.pick(pool));
        if (rng.chance(0.45)) {
            Premise other = rng.pick(pool);
            if (other == r.conditions[0]) continue;
            r.conditions.push_back(other);
        }
        r.conclusion = rng.pick(pool);
        if (std::find(r.conditions.begin(), r.conditions.end(), r.conclusion) !=
            r.conditions.end()) {
            continue;
        }
        if (!seen.insert(key_of(r)).second) continue;
        conditionals.push_back(r);
    }

    rng.shuffle(conditionals);
    std::vector<Rule> fact_rules;
    for (Premise f : facts) fact_rules.push_back(Rule{0, {}, f});
    Problem problem;
    problem.question = question;
    if (rng.chance(0.7)) {
        problem.rules = conditionals;
        problem.rules.insert(problem.rules.end(), fact_rules.begin(), fact_rules.end());
    } else {
        problem.rules = fact_rules;
        problem.rules.insert(problem.rules.end(), conditionals.begin(), conditionals.end());
    }
    for (std::size_t i = 0; i < problem.rules.size(); ++i) {
        problem.rules[i].id = static_cast<int>(i) + 1;
    }
    return problem;
}

TraversalPolicy swapped(TraversalPolicy p) {
    p.kind = p.kind == Traversal::BFS ? Traversal::DFS : Traversal::BFS;
    return p;
}

// Equal step count and equal rendered width of every step (rule ids with the
// same digit count, same number of selected premises).
bool same_shape(const ReasoningChain& a, const ReasoningChain& b) {
    if (a.steps.size() != b.steps.size() || a.verdict != b.verdict) return false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        if (a.steps[i].selected.size() != b.steps[i].selected.size()) return false;
        if (std::to_string(a.steps[i].rule_id).size() != std::to_string(b.steps[i].rule_id).size()) {
            return false;
        }
    }
    return true;
}

}  // namespace

Problem generate_problem(std::uint64_t seed, const GeneratorConfig& config, int* attempts) {
    if (config.min_total > config.max_total || config.min_total < 3) {
        throw std::invalid_argument("invalid rule-count bounds");
    }
    Rng rng(seed);
    for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
        auto candidate = try_generate(rng, config);
        if (!candidate) continue;
        const Problem& p = *candidate;
        const int n = static_cast<int>(p.rules.size());
        if (n < config.min_total || n > config.max_total) continue;
        if (!check_problem(p).empty()) continue;
        if (initial_kb(p).contains(p.question)) continue;
        // Ambiguity filter: the question must follow from the rules.
        if (!closure(p.rules).count(p.question)) continue;
        auto chain = run_policy(p, config.policy);
        if (!chain.verdict || static_cast<int>(chain.steps.size()) < config.min_chain_len) continue;
        if (config.policy_witness) {
            auto other = run_policy(p, swapped(config.policy));
            if (other == chain || !same_shape(chain, other)) continue;
        }
        if (attempts) *attempts += attempt;
        return p;
    }
    if (attempts) *attempts += config.max_attempts;
    throw GenerationExhausted("no valid problem after " + std::to_string(config.max_attempts) +
                                  " attempts",
                              config.max_attempts);
}

}  // namespace circuitlab
