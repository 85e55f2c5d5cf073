#pragma once

// Generation metrics and uncertain-token statistics.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "circuitlab/logic.hpp"
#include "circuitlab/prompt.hpp"
#include "circuitlab/protocol.hpp"

namespace circuitlab {

struct StepAccuracy {
    double lenient = 0.0;  // mean local validity of the parsed steps
    double strict = 0.0;   // gold prefix length / max(generated, gold)
    int generated_steps = 0;
    int gold_steps = 0;
};

// Steps are read line by line with parse_chain; unreadable "=>" lines count as
// invalid steps. Both scores are 0 when nothing parses.
StepAccuracy inference_step_accuracy(std::string_view generated, const Problem& problem,
                                     const ReasoningChain& gold);

// Answer word from the first Validate line ("... = True."), else the last
// standalone True/False/Uncertain in the text.
std::optional<std::string> extract_verdict(std::string_view text);

struct AnswerRecord {
    std::string generated;
    std::string gold;  // "True", "False", "Uncertain", ...
};

// Exact match of the extracted answer; absent for an empty set.
std::optional<double> final_answer_accuracy(const std::vector<AnswerRecord>& records);

struct TokenLogprob {
    std::string text;
    double logprob = 0.0;
    std::size_t start = 0;  // char range in the scored text
    std::size_t end = 0;
};
using LogprobTrace = std::vector<TokenLogprob>;

// Teacher-forced logprob of every token starting at or after from_char (the
// first token has no context and is never scored).
LogprobTrace teacher_forced_trace(HookableModel& model, const std::string& text,
                                  std::size_t from_char = 0);

inline constexpr int kProbabilityBins = 20;

struct RoleUncertainty {
    int uncertain = 0;
    int total = 0;
    std::array<int, kProbabilityBins> histogram{};  // [0, 0.05), ..., [0.95, 1]
};

struct UncertainStats {
    double threshold = 0.8;
    int last_shots = 5;
    std::map<Role, RoleUncertainty> roles;  // every role present, possibly empty

    void merge(const UncertainStats& other);
};

// Tokens are assigned the role of the span holding their first character and
// kept when that span is in one of the last `last_shots` shots. Throws
// AlignmentError when offsets go backwards or fall outside the spans.
UncertainStats uncertain_token_stats(const LogprobTrace& trace, const std::vector<RoleSpan>& spans,
                                     int last_shots = 5, double threshold = 0.8);

json to_json(const UncertainStats& s);
UncertainStats uncertain_stats_from_json(const json& j);

}  // namespace circuitlab
