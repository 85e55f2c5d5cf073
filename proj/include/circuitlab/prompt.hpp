#pragma once

// Symbolic-aided chain-of-thought text: rendering, k-shot assembly, tolerant
// chain parsing, and per-character reasoning-component tagging.
//
// Grammar (ASCII only, so byte offsets equal character offsets):
//
//   ### Given list of facts and rules:
//   # (Rule1): If D, J then N
//   # (Rule2): V is true
//   # (Question): truth value of P?
//   # (Answer): Start from the object mentioned in the question: P
//   KB = {V}
//   => F(KB['V'], Rule7) => `P`
//   KB = {V, P}
//   => Validate(KB, Question=`P`) = True.
//
// Shots are joined by a line holding exactly "-------". There is no trailing
// newline after the final line.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "circuitlab/logic.hpp"

namespace circuitlab {

enum class Role {
    Syntax,
    PremiseInKB,
    PremiseSelection,
    PremiseSelectionTermination,
    RuleSelection,
    FactDerivation,
};

inline constexpr Role kAllRoles[] = {Role::Syntax,
                                     Role::PremiseInKB,
                                     Role::PremiseSelection,
                                     Role::PremiseSelectionTermination,
                                     Role::RuleSelection,
                                     Role::FactDerivation};

std::string to_string(Role role);
Role role_from_string(const std::string& s);

// Half-open byte range [char_start, char_end) carrying one role.
// step_index is -1 outside the chain (header, rules, question, answer line,
// separators); inside the chain, the KB snapshot before step i and step i's
// line carry index i, and the Validate line carries the step count.
struct RoleSpan {
    Role role = Role::Syntax;
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    int shot_index = 0;
    int step_index = -1;

    bool operator==(const RoleSpan&) const = default;
};

inline constexpr std::string_view kShotSeparator = "-------";
inline constexpr std::string_view kHeaderLine = "### Given list of facts and rules:";

struct PromptShot {
    Problem problem;
    ReasoningChain chain;
    std::string text;
    // Byte cutoff applied to the rendered shot (query shots only).
    std::optional<std::size_t> cutoff;
};

struct PromptDoc {
    std::vector<PromptShot> shots;  // k demonstrations then the query
    std::string text;
    std::vector<RoleSpan> spans;
    int k = 0;

    const PromptShot& query() const { return shots.back(); }
    // Byte offset where shot i starts inside text.
    std::size_t shot_offset(std::size_t i) const;
};

struct RenderedShot {
    std::string text;
    std::vector<RoleSpan> spans;  // offsets local to text, shot_index 0
};

RenderedShot render_shot_with_spans(const Problem& problem, const ReasoningChain& chain,
                                    std::optional<std::size_t> cutoff = std::nullopt);

std::string render_shot(const Problem& problem, const ReasoningChain& chain,
                        std::optional<std::size_t> cutoff = std::nullopt);

std::string render_rule(const Rule& rule);  // "If D, J then N" / "V is true"

using Demo = std::pair<Problem, ReasoningChain>;

// query_cutoff is a byte offset into the rendered query shot.
PromptDoc render_prompt(const std::vector<Demo>& demos, const Demo& query,
                        std::optional<std::size_t> query_cutoff = std::nullopt);

struct ParseIssue {
    int line = 0;  // 1-based
    std::string reason;
};

struct ParsedChain {
    ReasoningChain chain;
    std::vector<ParseIssue> report;
};

// Best-effort, line-oriented. Lines starting with "=>" that do not parse become
// malformed steps; other unrecognised lines are only reported. Parsing stops at
// the Validate line or a shot separator.
ParsedChain parse_chain(std::string_view text, const Problem& problem);

// Independent re-scan of text; agrees with render-time spans on any prefix of
// a rendered document.
std::vector<RoleSpan> tag_roles(std::string_view text);

// Splits on separator lines.
std::vector<std::string> split_shots(std::string_view text);

// Byte offset where the chain of a rendered shot begins (start of the first
// KB line), i.e. the length of the shot's problem statement plus newline.
std::size_t chain_start_offset(const Problem& problem);

}  // namespace circuitlab
