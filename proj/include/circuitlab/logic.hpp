#pragma once

// Symbolic deductive world: propositional facts and Horn rules over single
// uppercase letters, forward chaining, gold-chain derivation under a traversal
// policy, and validation of (possibly model-produced) reasoning chains.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace circuitlab {

// A premise is one uppercase letter, 'A'..'Z'.
using Premise = char;

inline bool is_premise(char c) { return c >= 'A' && c <= 'Z'; }

struct Rule {
    int id = 0;                       // 1-based, dense within a Problem
    std::vector<Premise> conditions;  // 0..2 premises; empty means a fact
    Premise conclusion = 'A';

    bool is_fact() const { return conditions.empty(); }
    bool operator==(const Rule&) const = default;
};

struct Problem {
    std::vector<Rule> rules;
    Premise question = 'A';

    // nullptr when no rule carries this id.
    const Rule* find_rule(int id) const;
    bool operator==(const Problem&) const = default;
};

// Insertion-ordered premise set.
class KBState {
public:
    KBState() = default;

    bool contains(Premise p) const { return is_premise(p) && present_[index(p)]; }
    // Returns false (and leaves the state unchanged) when p is already present.
    bool insert(Premise p);
    const std::vector<Premise>& items() const { return order_; }
    std::size_t size() const { return order_.size(); }
    bool empty() const { return order_.empty(); }
    // Position of p in insertion order, or -1.
    int position(Premise p) const;

    bool operator==(const KBState& other) const { return order_ == other.order_; }

private:
    static std::size_t index(Premise p) { return static_cast<std::size_t>(p - 'A'); }
    std::vector<Premise> order_;
    std::array<bool, 26> present_{};
};

// Facts' conclusions in rule-id order.
KBState initial_kb(const Problem& problem);

struct InferenceStep {
    std::vector<Premise> selected;
    int rule_id = 0;
    Premise derived = 'A';
    KBState kb_after;
    // Set by the chain parser for lines it could not read; always scored false.
    bool malformed = false;

    bool operator==(const InferenceStep&) const = default;
};

struct ReasoningChain {
    std::vector<InferenceStep> steps;
    bool verdict = false;

    bool operator==(const ReasoningChain&) const = default;
};

enum class Traversal { BFS, DFS };

struct TraversalPolicy {
    Traversal kind = Traversal::BFS;
    bool stop_on_goal = true;
    int extra_steps = 0;
};

std::string to_string(Traversal t);
Traversal traversal_from_string(const std::string& s);

class NotDerivable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GenerationExhausted : public std::runtime_error {
public:
    GenerationExhausted(const std::string& what, int attempts)
        : std::runtime_error(what), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_;
};

// Least fixpoint of forward chaining (semi-naive).
std::set<Premise> closure(const std::vector<Rule>& rules);

// Rules whose conditions all hold in kb, whose conclusion is not yet in kb, and
// whose id is not in fired; ascending id.
std::vector<Rule> applicable_rules(const KBState& kb, const std::vector<Rule>& rules,
                                   const std::set<int>& fired);

// Runs the traversal policy from the initial KB. Unlike derive_chain this never
// throws: it stops when the goal condition is met or no rule applies. The
// verdict reflects whether the question ended up in the KB.
ReasoningChain run_policy(const Problem& problem, const TraversalPolicy& policy);

// Gold chain. Throws NotDerivable when the question is outside the closure.
ReasoningChain derive_chain(const Problem& problem, const TraversalPolicy& policy);

struct ChainVerdicts {
    std::vector<bool> steps;
    bool final = false;
};

// Scores every step locally against the KB evolved from the chain's own derived
// premises (an invalid step still contributes its derived premise).
ChainVerdicts validate_chain(const Problem& problem, const ReasoningChain& chain);

struct GeneratorConfig {
    int min_total = 8;
    int max_total = 18;
    std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    int min_chain_len = 1;
    int max_attempts = 1000;
    TraversalPolicy policy{};
    // Also require that the other traversal policy gives a different chain
    // with the same step count and rendered width (traversal-swap demos).
    bool policy_witness = false;
};

// Deterministic given seed. Throws GenerationExhausted after max_attempts.
// When attempts is given, the number of attempts spent is added to it.
Problem generate_problem(std::uint64_t seed, const GeneratorConfig& config,
                         int* attempts = nullptr);

// Structural checks (dense ids, condition counts, letters, no duplicates).
// Returns an empty string when well formed, otherwise a reason.
std::string check_problem(const Problem& problem);

}  // namespace circuitlab
