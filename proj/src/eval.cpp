#include "circuitlab/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace circuitlab {

StepAccuracy inference_step_accuracy(std::string_view generated, const Problem& problem,
                                     const ReasoningChain& gold) {
    StepAccuracy acc;
    const auto parsed = parse_chain(generated, problem).chain;
    acc.generated_steps = static_cast<int>(parsed.steps.size());
    acc.gold_steps = static_cast<int>(gold.steps.size());
    if (parsed.steps.empty()) return acc;

    const auto verdicts = validate_chain(problem, parsed);
    int valid = 0;
    for (bool v : verdicts.steps) valid += v ? 1 : 0;
    acc.lenient = static_cast<double>(valid) / acc.generated_steps;

    // Matching gold prefix; every step in it is valid, so strict <= lenient.
    int prefix = 0;
    while (prefix < acc.generated_steps && prefix < acc.gold_steps) {
        const auto& g = parsed.steps[prefix];
        const auto& w = gold.steps[prefix];
        if (g.malformed || g.selected != w.selected || g.rule_id != w.rule_id ||
            g.derived != w.derived) {
            break;
        }
        ++prefix;
    }
    acc.strict = static_cast<double>(prefix) / std::max(acc.generated_steps, acc.gold_steps);
    return acc;
}

namespace {

bool word_at(std::string_view text, std::size_t pos, std::string_view word) {
    if (text.compare(pos, word.size(), word) != 0) return false;
    const auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    if (pos > 0 && is_word(text[pos - 1])) return false;
    const std::size_t end = pos + word.size();
    return end >= text.size() || !is_word(text[end]);
}

}  // namespace

std::optional<std::string> extract_verdict(std::string_view text) {
    const auto v = text.find("Validate(");
    if (v != std::string_view::npos) {
        const auto close = text.find(')', v);
        const auto eol = text.find('\n', v);
        if (close != std::string_view::npos && (eol == std::string_view::npos || close < eol)) {
            std::size_t i = close + 1;
            while (i < text.size() && text[i] == ' ') ++i;
            if (i < text.size() && text[i] == '=') {
                ++i;
                while (i < text.size() && text[i] == ' ') ++i;
                std::size_t j = i;
                while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
                if (j > i) return std::string(text.substr(i, j - i));
            }
        }
    }
    std::optional<std::string> last;
    std::size_t best = 0;
    for (std::string_view w : {"True", "False", "Uncertain"}) {
        for (std::size_t p = text.find(w); p != std::string_view::npos; p = text.find(w, p + 1)) {
            if (word_at(text, p, w) && (!last || p >= best)) {
                best = p;
                last = std::string(w);
            }
        }
    }
    return last;
}

std::optional<double> final_answer_accuracy(const std::vector<AnswerRecord>& records) {
    if (records.empty()) return std::nullopt;
    int correct = 0;
    for (const auto& r : records) {
        const auto got = extract_verdict(r.generated);
        if (got && *got == r.gold) ++correct;
    }
    return static_cast<double>(correct) / records.size();
}

LogprobTrace teacher_forced_trace(HookableModel& model, const std::string& text,
                                  std::size_t from_char) {
    const auto tok = tokenize_with_offsets(model, text);
    ForwardRequest req;
    req.prompt = text;
    std::vector<std::size_t> scored;
    for (std::size_t i = 1; i < tok.tokens.size(); ++i) {
        if (tok.offsets[i].start < from_char) continue;
        req.return_logprobs_at.push_back({static_cast<int>(i - 1), {tok.tokens[i]}});
        scored.push_back(i);
    }
    LogprobTrace trace;
    if (scored.empty()) return trace;
    const auto res = model.forward(req);
    if (res.logprobs.size() != scored.size()) {
        throw BackendError("backend returned " + std::to_string(res.logprobs.size()) +
                           " logprob answers for " + std::to_string(scored.size()) + " queries");
    }
    for (std::size_t q = 0; q < scored.size(); ++q) {
        const std::size_t i = scored[q];
        if (res.logprobs[q].logprobs.size() != 1) throw BackendError("missing logprob answer");
        trace.push_back({tok.tokens[i], res.logprobs[q].logprobs[0], tok.offsets[i].start,
                         tok.offsets[i].end});
    }
    return trace;
}

void UncertainStats::merge(const UncertainStats& other) {
    for (const auto& [role, o] : other.roles) {
        auto& mine = roles[role];
        mine.uncertain += o.uncertain;
        mine.total += o.total;
        for (int b = 0; b < kProbabilityBins; ++b) mine.histogram[b] += o.histogram[b];
    }
}

UncertainStats uncertain_token_stats(const LogprobTrace& trace, const std::vector<RoleSpan>& spans,
                                     int last_shots, double threshold) {
    UncertainStats stats;
    stats.threshold = threshold;
    stats.last_shots = last_shots;
    for (Role r : kAllRoles) stats.roles[r];

    int n_shots = 0;
    for (const auto& s : spans) n_shots = std::max(n_shots, s.shot_index + 1);
    const int first_shot = std::max(0, n_shots - last_shots);

    std::vector<RoleSpan> sorted = spans;
    std::sort(sorted.begin(), sorted.end(),
              [](const RoleSpan& a, const RoleSpan& b) { return a.char_start < b.char_start; });

    std::size_t prev_end = 0;
    for (const auto& tok : trace) {
        if (tok.end <= tok.start || tok.start < prev_end) {
            throw AlignmentError("token offsets [" + std::to_string(tok.start) + ", " +
                                 std::to_string(tok.end) + ") are not monotone");
        }
        prev_end = tok.end;
        auto it = std::upper_bound(sorted.begin(), sorted.end(), tok.start,
                                   [](std::size_t p, const RoleSpan& s) { return p < s.char_start; });
        if (it == sorted.begin() || (it - 1)->char_end <= tok.start) {
            throw AlignmentError("token at offset " + std::to_string(tok.start) +
                                 " is outside every role span");
        }
        const RoleSpan& span = *(it - 1);
        if (span.shot_index < first_shot) continue;
        const double p = std::min(1.0, std::exp(tok.logprob));
        auto& r = stats.roles[span.role];
        ++r.total;
        if (p < threshold) ++r.uncertain;
        const int bin = std::clamp(static_cast<int>(std::floor(p / 0.05)), 0, kProbabilityBins - 1);
        ++r.histogram[bin];
    }
    return stats;
}

json to_json(const UncertainStats& s) {
    json roles = json::object();
    for (const auto& [role, r] : s.roles) {
        roles[to_string(role)] = {{"uncertain", r.uncertain},
                                  {"total", r.total},
                                  {"histogram", r.histogram}};
    }
    return json{{"threshold", s.threshold}, {"last_shots", s.last_shots}, {"roles", roles}};
}

UncertainStats uncertain_stats_from_json(const json& j) {
    UncertainStats s;
    s.threshold = j.at("threshold").get<double>();
    s.last_shots = j.at("last_shots").get<int>();
    for (const auto& [name, r] : j.at("roles").items()) {
        RoleUncertainty u;
        u.uncertain = r.at("uncertain").get<int>();
        u.total = r.at("total").get<int>();
        u.histogram = r.at("histogram").get<std::array<int, kProbabilityBins>>();
        s.roles[role_from_string(name)] = u;
    }
    return s;
}

}  // namespace circuitlab
