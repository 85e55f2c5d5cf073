#pragma once

// Hand-encoded reference problems with their exact published prompt text.

#include <string>
#include <string_view>
#include <vector>

#include "circuitlab/logic.hpp"
#include "circuitlab/prompt.hpp"

namespace golden {

using namespace circuitlab;

// "V" is a fact, "DJ>N" is "If D, J then N". Ids follow list order.
inline Problem problem_of(const std::vector<std::string>& rules, char question) {
    Problem p;
    p.question = question;
    int id = 1;
    for (const auto& spec : rules) {
        Rule r;
        r.id = id++;
        auto arrow = spec.find('>');
        if (arrow == std::string::npos) {
            r.conclusion = spec[0];
        } else {
            for (std::size_t i = 0; i < arrow; ++i) r.conditions.push_back(spec[i]);
            r.conclusion = spec[arrow + 1];
        }
        p.rules.push_back(r);
    }
    return p;
}

struct StepSpec {
    std::string premises;
    int rule;
    char derived;
};

inline ReasoningChain chain_of(const Problem& p, const std::vector<StepSpec>& steps,
                               bool verdict = true) {
    ReasoningChain c;
    KBState kb = initial_kb(p);
    for (const auto& s : steps) {
        InferenceStep st;
        st.selected.assign(s.premises.begin(), s.premises.end());
        st.rule_id = s.rule;
        st.derived = s.derived;
        kb.insert(s.derived);
        st.kb_after = kb;
        c.steps.push_back(st);
    }
    c.verdict = verdict;
    return c;
}

// Fact corruption example (premise selection).
inline Problem fact_problem() {
    return problem_of({"V", "S", "Q", "E", "L", "A", "DJ>N", "D>E", "JK>O", "Q>P", "PD>O",
                       "KC>J", "W>D", "K>U", "V>F", "Q>F", "K>R", "OH>M", "F>U", "MA>T",
                       "O>S"},
                      'P');
}
inline ReasoningChain fact_chain() {
    return chain_of(fact_problem(), {{"Q", 10, 'P'}, {"V", 15, 'F'}, {"F", 19, 'U'}});
}
inline const std::string kFactText = R"(### Given list of facts and rules:
# (Rule1): V is true
# (Rule2): S is true
# (Rule3): Q is true
# (Rule4): E is true
# (Rule5): L is true
# (Rule6): A is true
# (Rule7): If D, J then N
# (Rule8): If D then E
# (Rule9): If J, K then O
# (Rule10): If Q then P
# (Rule11): If P, D then O
# (Rule12): If K, C then J
# (Rule13): If W then D
# (Rule14): If K then U
# (Rule15): If V then F
# (Rule16): If Q then F
# (Rule17): If K then R
# (Rule18): If O, H then M
# (Rule19): If F then U
# (Rule20): If M, A then T
# (Rule21): If O then S
# (Question): truth value of P?
# (Answer): Start from the object mentioned in the question: P
KB = {V, S, Q, E, L, A}
=> F(KB['Q'], Rule10) => `P`
KB = {V, S, Q, E, L, A, P}
=> F(KB['V'], Rule15) => `F`
KB = {V, S, Q, E, L, A, P, F}
=> F(KB['F'], Rule19) => `U`
KB = {V, S, Q, E, L, A, P, F, U}
=> Validate(KB, Question=`P`) = True.)";

// Rule-content corruption example (premise selection termination).
inline Problem termination_problem() {
    return problem_of({"RJ>A", "QO>P", "J>U", "K>Q", "D>F", "U>C", "V>U", "V>N", "G>R",
                       "UC>V", "A>O", "F>I", "S>H", "NM>O", "NK>A", "VD>R", "L", "O", "H",
                       "T", "U", "B"},
                      'N');
}
inline ReasoningChain termination_chain() {
    return chain_of(termination_problem(), {{"U", 6, 'C'}, {"UC", 10, 'V'}, {"V", 8, 'N'}});
}
inline const std::string kTerminationText = R"(### Given list of facts and rules:
# (Rule1): If R, J then A
# (Rule2): If Q, O then P
# (Rule3): If J then U
# (Rule4): If K then Q
# (Rule5): If D then F
# (Rule6): If U then C
# (Rule7): If V then U
# (Rule8): If V then N
# (Rule9): If G then R
# (Rule10): If U, C then V
# (Rule11): If A then O
# (Rule12): If F then I
# (Rule13): If S then H
# (Rule14): If N, M then O
# (Rule15): If N, K then A
# (Rule16): If V, D then R
# (Rule17): L is true
# (Rule18): O is true
# (Rule19): H is true
# (Rule20): T is true
# (Rule21): U is true
# (Rule22): B is true
# (Question): truth value of N?
# (Answer): Start from the object mentioned in the question: N
KB = {L, O, H, T, U, B}
=> F(KB['U'], Rule6) => `C`
KB = {L, O, H, T, U, B, C}
=> F(KB['U', 'C'], Rule10) => `V`
KB = {L, O, H, T, U, B, C, V}
=> F(KB['V'], Rule8) => `N`
KB = {L, O, H, T, U, B, C, V, N}
=> Validate(KB, Question=`N`) = True.)";

// Rule-content corruption example (rule selection).
inline Problem rule_problem() {
    return problem_of({"JT>B", "O>U", "CQ>D", "S>W", "M>N", "OA>F", "SW>G", "CI>K", "W>D",
                       "D>W", "UL>C", "QT>F", "RM>B", "O", "M", "J", "F"},
                      'N');
}
inline ReasoningChain rule_chain() {
    return chain_of(rule_problem(), {{"O", 2, 'U'}, {"M", 5, 'N'}});
}
// Canonical KB spacing ("{O, ...}"), see README.
inline const std::string kRuleText = R"(### Given list of facts and rules:
# (Rule1): If J, T then B
# (Rule2): If O then U
# (Rule3): If C, Q then D
# (Rule4): If S then W
# (Rule5): If M then N
# (Rule6): If O, A then F
# (Rule7): If S, W then G
# (Rule8): If C, I then K
# (Rule9): If W then D
# (Rule10): If D then W
# (Rule11): If U, L then C
# (Rule12): If Q, T then F
# (Rule13): If R, M then B
# (Rule14): O is true
# (Rule15): M is true
# (Rule16): J is true
# (Rule17): F is true
# (Question): truth value of N?
# (Answer): Start from the object mentioned in the question: N
KB = {O, M, J, F}
=> F(KB['O'], Rule2) => `U`
KB = {O, M, J, F, U}
=> F(KB['M'], Rule5) => `N`
KB = {O, M, J, F, U, N}
=> Validate(KB, Question=`N`) = True.)";

// Traversal-algorithm example: two demonstrations and a query.
inline Problem traversal_demo1() {
    return problem_of({"L>J", "OS>F", "U>M", "N>L", "SH>R", "LI>F", "P>I", "JA>B", "S", "N", "P"},
                      'F');
}
inline Problem traversal_demo2() {
    return problem_of({"O>W", "L>B", "M>U", "B>L", "I>L", "B>V", "Q>V", "AK>F", "L", "Q", "I"},
                      'V');
}
inline Problem traversal_query() {
    return problem_of({"S>G", "R>O", "T>W", "AM>I", "K>E", "E>U", "H>C", "G>V", "OG>I", "I>C",
                       "O>V", "WK>N", "VL>W", "VF>S", "FW>A", "QP>H", "J", "M", "R", "I", "A",
                       "B"},
                      'V');
}
// Depth-first chains (the published prompt's demonstrations).
inline ReasoningChain traversal_demo1_dfs() {
    return chain_of(traversal_demo1(),
                    {{"N", 4, 'L'}, {"L", 1, 'J'}, {"P", 7, 'I'}, {"LI", 6, 'F'}});
}
inline ReasoningChain traversal_demo2_dfs() {
    return chain_of(traversal_demo2(), {{"L", 2, 'B'}, {"B", 6, 'V'}});
}
inline ReasoningChain traversal_query_dfs() {
    return chain_of(traversal_query(), {{"R", 2, 'O'}, {"O", 11, 'V'}});
}
// Breadth-first chains (the published corrupted demonstrations).
inline ReasoningChain traversal_demo1_bfs() {
    return chain_of(traversal_demo1(),
                    {{"N", 4, 'L'}, {"P", 7, 'I'}, {"L", 1, 'J'}, {"LI", 6, 'F'}});
}
inline ReasoningChain traversal_demo2_bfs() {
    return chain_of(traversal_demo2(), {{"L", 2, 'B'}, {"Q", 7, 'V'}});
}
inline ReasoningChain traversal_query_bfs() {
    return chain_of(traversal_query(), {{"R", 2, 'O'}, {"I", 10, 'C'}, {"O", 11, 'V'}});
}

inline const std::string kTraversalDemo1Text = R"(### Given list of facts and rules:
# (Rule1): If L then J
# (Rule2): If O, S then F
# (Rule3): If U then M
# (Rule4): If N then L
# (Rule5): If S, H then R
# (Rule6): If L, I then F
# (Rule7): If P then I
# (Rule8): If J, A then B
# (Rule9): S is true
# (Rule10): N is true
# (Rule11): P is true
# (Question): truth value of F?
# (Answer): Start from the object mentioned in the question: F
KB = {S, N, P}
=> F(KB['N'], Rule4) => `L`
KB = {S, N, P, L}
=> F(KB['L'], Rule1) => `J`
KB = {S, N, P, L, J}
=> F(KB['P'], Rule7) => `I`
KB = {S, N, P, L, J, I}
=> F(KB['L', 'I'], Rule6) => `F`
KB = {S, N, P, L, J, I, F}
=> Validate(KB, Question=`F`) = True.)";

inline const std::string kTraversalDemo1BfsText = R"(### Given list of facts and rules:
# (Rule1): If L then J
# (Rule2): If O, S then F
# (Rule3): If U then M
# (Rule4): If N then L
# (Rule5): If S, H then R
# (Rule6): If L, I then F
# (Rule7): If P then I
# (Rule8): If J, A then B
# (Rule9): S is true
# (Rule10): N is true
# (Rule11): P is true
# (Question): truth value of F?
# (Answer): Start from the object mentioned in the question: F
KB = {S, N, P}
=> F(KB['N'], Rule4) => `L`
KB = {S, N, P, L}
=> F(KB['P'], Rule7) => `I`
KB = {S, N, P, L, I}
=> F(KB['L'], Rule1) => `J`
KB = {S, N, P, L, I, J}
=> F(KB['L', 'I'], Rule6) => `F`
KB = {S, N, P, L, I, J, F}
=> Validate(KB, Question=`F`) = True.)";

inline const std::string kTraversalDemo2Text = R"(### Given list of facts and rules:
# (Rule1): If O then W
# (Rule2): If L then B
# (Rule3): If M then U
# (Rule4): If B then L
# (Rule5): If I then L
# (Rule6): If B then V
# (Rule7): If Q then V
# (Rule8): If A, K then F
# (Rule9): L is true
# (Rule10): Q is true
# (Rule11): I is true
# (Question): truth value of V?
# (Answer): Start from the object mentioned in the question: V
KB = {L, Q, I}
=> F(KB['L'], Rule2) => `B`
KB = {L, Q, I, B}
=> F(KB['B'], Rule6) => `V`
KB = {L, Q, I, B, V}
=> Validate(KB, Question=`V`) = True.)";

inline const std::string kTraversalDemo2BfsText = R"(### Given list of facts and rules:
# (Rule1): If O then W
# (Rule2): If L then B
# (Rule3): If M then U
# (Rule4): If B then L
# (Rule5): If I then L
# (Rule6): If B then V
# (Rule7): If Q then V
# (Rule8): If A, K then F
# (Rule9): L is true
# (Rule10): Q is true
# (Rule11): I is true
# (Question): truth value of V?
# (Answer): Start from the object mentioned in the question: V
KB = {L, Q, I}
=> F(KB['L'], Rule2) => `B`
KB = {L, Q, I, B}
=> F(KB['Q'], Rule7) => `V`
KB = {L, Q, I, B, V}
=> Validate(KB, Question=`V`) = True.)";

inline const std::string kTraversalQueryText = R"(### Given list of facts and rules:
# (Rule1): If S then G
# (Rule2): If R then O
# (Rule3): If T then W
# (Rule4): If A, M then I
# (Rule5): If K then E
# (Rule6): If E then U
# (Rule7): If H then C
# (Rule8): If G then V
# (Rule9): If O, G then I
# (Rule10): If I then C
# (Rule11): If O then V
# (Rule12): If W, K then N
# (Rule13): If V, L then W
# (Rule14): If V, F then S
# (Rule15): If F, W then A
# (Rule16): If Q, P then H
# (Rule17): J is true
# (Rule18): M is true
# (Rule19): R is true
# (Rule20): I is true
# (Rule21): A is true
# (Rule22): B is true
# (Question): truth value of V?
# (Answer): Start from the object mentioned in the question: V
KB = {J, M, R, I, A, B}
=> F(KB['R'], Rule2) => `O`
KB = {J, M, R, I, A, B, O}
=> F(KB['O'], Rule11) => `V`
KB = {J, M, R, I, A, B, O, V}
=> Validate(KB, Question=`V`) = True.)";

inline const std::string kSeparator = "\n-------\n";

}  // namespace golden
