#include "circuitlab/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace circuitlab {

std::string to_string(Role role) {
    switch (role) {
        case Role::Syntax: return "Syntax";
        case Role::PremiseInKB: return "PremiseInKB";
        case Role::PremiseSelection: return "PremiseSelection";
        case Role::PremiseSelectionTermination: return "PremiseSelectionTermination";
        case Role::RuleSelection: return "RuleSelection";
        case Role::FactDerivation: return "FactDerivation";
    }
    return "Syntax";
}

Role role_from_string(const std::string& s) {
    for (Role r : kAllRoles) {
        if (to_string(r) == s) return r;
    }
    throw std::invalid_argument("unknown role: " + s);
}

namespace {

// Appends text while recording spans; adjacent pieces with the same
// (role, shot, step) merge into one span.
class SpanWriter {
public:
    explicit SpanWriter(int shot = 0) : shot_(shot) {}

    void put(std::string_view s, Role role, int step) {
        if (s.empty()) return;
        const std::size_t start = text_.size();
        text_.append(s);
        if (!spans_.empty()) {
            RoleSpan& last = spans_.back();
            if (last.role == role && last.step_index == step && last.shot_index == shot_ &&
                last.char_end == start) {
                last.char_end = text_.size();
                return;
            }
        }
        spans_.push_back(RoleSpan{role, start, text_.size(), shot_, step});
    }
    void put(char c, Role role, int step) { put(std::string_view(&c, 1), role, step); }

    std::string& text() { return text_; }
    std::vector<RoleSpan>& spans() { return spans_; }

private:
    int shot_;
    std::string text_;
    std::vector<RoleSpan> spans_;
};

void put_kb_line(SpanWriter& w, const KBState& kb, int step) {
    w.put("KB = {", Role::Syntax, step);
    const auto& items = kb.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) w.put(", ", Role::Syntax, step);
        w.put(items[i], Role::PremiseInKB, step);
    }
    w.put("}", Role::Syntax, step);
}

void put_step_line(SpanWriter& w, const InferenceStep& s, int step) {
    w.put("=> F(KB[", Role::Syntax, step);
    for (std::size_t i = 0; i < s.selected.size(); ++i) {
        w.put("'", Role::Syntax, step);
        w.put(s.selected[i], Role::PremiseSelection, step);
        w.put("'", Role::Syntax, step);
        const bool last = i + 1 == s.selected.size();
        w.put(last ? ']' : ',', Role::PremiseSelectionTermination, step);
        if (!last) w.put(" ", Role::Syntax, step);
    }
    if (s.selected.empty()) w.put("]", Role::Syntax, step);
    w.put(", Rule", Role::Syntax, step);
    w.put(std::to_string(s.rule_id), Role::RuleSelection, step);
    w.put(") => `", Role::Syntax, step);
    w.put(s.derived, Role::FactDerivation, step);
    w.put("`", Role::Syntax, step);
}

std::string problem_statement(const Problem& problem) {
    std::string out(kHeaderLine);
    out += '\n';
    for (const auto& r : problem.rules) {
        out += "# (Rule" + std::to_string(r.id) + "): " + render_rule(r) + "\n";
    }
    out += std::string("# (Question): truth value of ") + problem.question + "?\n";
    out += std::string("# (Answer): Start from the object mentioned in the question: ") +
           problem.question + "\n";
    return out;
}

void clip(RenderedShot& shot, std::size_t cutoff) {
    if (cutoff >= shot.text.size()) return;
    shot.text.resize(cutoff);
    std::vector<RoleSpan> kept;
    for (auto s : shot.spans) {
        if (s.char_start >= cutoff) break;
        s.char_end = std::min(s.char_end, cutoff);
        kept.push_back(s);
    }
    shot.spans = std::move(kept);
}

}  // namespace

std::string render_rule(const Rule& rule) {
    if (rule.is_fact()) return std::string(1, rule.conclusion) + " is true";
    std::string out = "If ";
    for (std::size_t i = 0; i < rule.conditions.size(); ++i) {
        if (i) out += ", ";
        out += rule.conditions[i];
    }
    out += " then ";
    out += rule.conclusion;
    return out;
}

std::size_t chain_start_offset(const Problem& problem) {
    return problem_statement(problem).size();
}

RenderedShot render_shot_with_spans(const Problem& problem, const ReasoningChain& chain,
                                    std::optional<std::size_t> cutoff) {
    SpanWriter w;
    w.put(problem_statement(problem), Role::Syntax, -1);
    put_kb_line(w, initial_kb(problem), 0);
    w.put("\n", Role::Syntax, 0);
    for (std::size_t i = 0; i < chain.steps.size(); ++i) {
        const int step = static_cast<int>(i);
        put_step_line(w, chain.steps[i], step);
        w.put("\n", Role::Syntax, step);
        put_kb_line(w, chain.steps[i].kb_after, step + 1);
        w.put("\n", Role::Syntax, step + 1);
    }
    const int n = static_cast<int>(chain.steps.size());
    w.put(std::string("=> Validate(KB, Question=`") + problem.question + "`) = " +
              (chain.verdict ? "True." : "False."),
          Role::Syntax, n);
    RenderedShot out{std::move(w.text()), std::move(w.spans())};
    if (cutoff) clip(out, *cutoff);
    return out;
}

std::string render_shot(const Problem& problem, const ReasoningChain& chain,
                        std::optional<std::size_t> cutoff) {
    return render_shot_with_spans(problem, chain, cutoff).text;
}

std::size_t PromptDoc::shot_offset(std::size_t i) const {
    std::size_t off = 0;
    for (std::size_t s = 0; s < i && s < shots.size(); ++s) {
        off += shots[s].text.size() + kShotSeparator.size() + 2;
    }
    return off;
}

PromptDoc render_prompt(const std::vector<Demo>& demos, const Demo& query,
                        std::optional<std::size_t> query_cutoff) {
    PromptDoc doc;
    doc.k = static_cast<int>(demos.size());
    auto append = [&](const Problem& p, const ReasoningChain& c, std::optional<std::size_t> cut) {
        const int shot_index = static_cast<int>(doc.shots.size());
        if (shot_index > 0) {
            // separator belongs to the preceding shot
            const std::size_t start = doc.text.size();
            doc.text += '\n';
            doc.text += kShotSeparator;
            doc.text += '\n';
            doc.spans.push_back(RoleSpan{Role::Syntax, start, doc.text.size(), shot_index - 1, -1});
        }
        RenderedShot r = render_shot_with_spans(p, c, cut);
        const std::size_t base = doc.text.size();
        for (auto s : r.spans) {
            s.char_start += base;
            s.char_end += base;
            s.shot_index = shot_index;
            doc.spans.push_back(s);
        }
        doc.text += r.text;
        doc.shots.push_back(PromptShot{p, c, std::move(r.text), cut});
    };
    for (const auto& d : demos) append(d.first, d.second, std::nullopt);
    append(query.first, query.second, query_cutoff);
    return doc;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

class Cursor {
public:
    explicit Cursor(std::string_view s) : s_(s) {}

    bool done() const { return i_ >= s_.size(); }
    std::size_t pos() const { return i_; }
    char peek() const { return done() ? '\0' : s_[i_]; }
    void skip_spaces() {
        while (!done() && s_[i_] == ' ') ++i_;
    }
    bool eat(std::string_view lit) {
        if (s_.substr(i_, lit.size()) == lit) {
            i_ += lit.size();
            return true;
        }
        return false;
    }
    bool eat(char c) {
        if (peek() == c && !done()) {
            ++i_;
            return true;
        }
        return false;
    }
    std::optional<char> letter() {
        if (!done() && is_premise(s_[i_])) return s_[i_++];
        return std::nullopt;
    }
    std::string digits() {
        std::size_t start = i_;
        while (!done() && std::isdigit(static_cast<unsigned char>(s_[i_]))) ++i_;
        return std::string(s_.substr(start, i_ - start));
    }

private:
    std::string_view s_;
    std::size_t i_ = 0;
};

std::optional<InferenceStep> parse_step_line(std::string_view line, std::string& why) {
    Cursor c(line);
    if (!c.eat("=>")) return why = "missing '=>'", std::nullopt;
    c.skip_spaces();
    if (!c.eat("F(KB[")) return why = "expected \"F(KB[\"", std::nullopt;
    InferenceStep step;
    while (true) {
        c.skip_spaces();
        if (c.eat(']')) break;
        if (!c.eat('\'')) return why = "expected quoted premise", std::nullopt;
        auto p = c.letter();
        if (!p) return why = "premise is not an uppercase letter", std::nullopt;
        if (!c.eat('\'')) return why = "unterminated premise quote", std::nullopt;
        step.selected.push_back(*p);
        c.skip_spaces();
        if (c.eat(']')) break;
        if (!c.eat(',')) return why = "expected ',' or ']' after premise", std::nullopt;
    }
    c.skip_spaces();
    c.eat(',');
    c.skip_spaces();
    if (!c.eat("Rule")) return why = "expected rule reference", std::nullopt;
    std::string digits = c.digits();
    if (digits.empty() || digits.size() > 6) return why = "bad rule number", std::nullopt;
    step.rule_id = std::stoi(digits);
    c.skip_spaces();
    if (!c.eat(')')) return why = "expected ')'", std::nullopt;
    c.skip_spaces();
    if (!c.eat("=>")) return why = "expected '=>' before derived fact", std::nullopt;
    c.skip_spaces();
    if (!c.eat('`')) return why = "expected '`'", std::nullopt;
    auto d = c.letter();
    if (!d) return why = "derived fact is not an uppercase letter", std::nullopt;
    if (!c.eat('`')) return why = "unterminated derived fact", std::nullopt;
    c.skip_spaces();
    if (!c.done()) return why = "trailing characters", std::nullopt;
    step.derived = *d;
    return step;
}

std::string_view trim_right(std::string_view s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

std::string_view trim_left(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

}  // namespace

ParsedChain parse_chain(std::string_view text, const Problem& problem) {
    ParsedChain out;
    KBState kb = initial_kb(problem);
    const auto lines = split_lines(text);
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const int line_no = static_cast<int>(li) + 1;
        std::string_view line = trim_left(trim_right(lines[li]));
        if (line.empty()) continue;
        if (line == kShotSeparator) break;
        if (line.starts_with("=> Validate(") || line.starts_with("=>Validate(")) {
            Cursor c(line);
            c.eat("=>");
            c.skip_spaces();
            bool ok = c.eat("Validate(KB, Question=`");
            auto q = ok ? c.letter() : std::nullopt;
            ok = ok && q && c.eat("`)");
            c.skip_spaces();
            ok = ok && c.eat('=');
            c.skip_spaces();
            if (ok && c.eat("True")) {
                out.chain.verdict = (*q == problem.question);
                if (*q != problem.question) {
                    out.report.push_back({line_no, "validated question differs from problem"});
                }
            } else if (ok && c.eat("False")) {
                out.chain.verdict = false;
            } else {
                out.report.push_back({line_no, "unreadable Validate line"});
            }
            break;
        }
        if (line.starts_with("=>")) {
            std::string why;
            auto step = parse_step_line(line, why);
            if (!step) {
                InferenceStep bad;
                bad.malformed = true;
                bad.rule_id = 0;
                bad.derived = '?';
                bad.kb_after = kb;
                out.chain.steps.push_back(std::move(bad));
                out.report.push_back({line_no, why});
                continue;
            }
            kb.insert(step->derived);
            step->kb_after = kb;
            out.chain.steps.push_back(std::move(*step));
            continue;
        }
        if (line.starts_with("KB = {") || line.starts_with("KB={")) continue;
        if (line.starts_with("###") || line.starts_with("# (")) continue;
        out.report.push_back({line_no, "unrecognised line"});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tagging

std::vector<RoleSpan> tag_roles(std::string_view text) {
    const std::size_t n = text.size();
    std::vector<Role> role(n, Role::Syntax);
    std::vector<int> step(n, -1);
    std::vector<int> shot(n, 0);

    int shot_index = 0;
    int steps_seen = 0;
    bool in_chain = false;
    std::size_t pos = 0;
    while (pos < n) {
        std::size_t nl = text.find('\n', pos);
        const std::size_t end = nl == std::string_view::npos ? n : nl;
        std::string_view line = text.substr(pos, end - pos);

        int line_step = -1;
        if (line == kShotSeparator) {
            for (std::size_t i = pos; i < end; ++i) shot[i] = shot_index;
            if (end < n) shot[end] = shot_index;
            ++shot_index;
            steps_seen = 0;
            in_chain = false;
            pos = end + 1;
            continue;
        }
        // Every line after the answer line is a chain line; a truncated line
        // still carries the index of the step being written.
        if (in_chain) line_step = steps_seen;
        if (line.starts_with("# (Answer)")) in_chain = true;
        if (in_chain && line.starts_with("KB = {")) {
            for (std::size_t i = 6; i < line.size() && line[i] != '}'; ++i) {
                if (is_premise(line[i])) role[pos + i] = Role::PremiseInKB;
            }
        } else if (in_chain && line.starts_with("=> F(")) {
            ++steps_seen;
            std::size_t i = 5;
            if (line.substr(i, 3) == "KB[") {
                i += 3;
                // 'X' followed by ',' or ']'
                while (i < line.size() && line[i] == '\'') {
                    if (i + 1 < line.size() && is_premise(line[i + 1])) {
                        role[pos + i + 1] = Role::PremiseSelection;
                    }
                    if (i + 2 >= line.size() || line[i + 2] != '\'') break;
                    if (i + 3 >= line.size()) break;
                    const char t = line[i + 3];
                    if (t != ',' && t != ']') break;
                    role[pos + i + 3] = Role::PremiseSelectionTermination;
                    if (t == ']') break;
                    i += 4;
                    while (i < line.size() && line[i] == ' ') ++i;
                }
            }
            std::size_t r = line.find("Rule");
            if (r != std::string_view::npos) {
                std::size_t d = r + 4;
                while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) {
                    role[pos + d] = Role::RuleSelection;
                    ++d;
                }
                std::size_t arrow = line.find("=> `", d);
                if (arrow != std::string_view::npos && arrow + 4 < line.size() &&
                    is_premise(line[arrow + 4])) {
                    role[pos + arrow + 4] = Role::FactDerivation;
                }
            }
        }
        for (std::size_t i = pos; i < end; ++i) {
            step[i] = line_step;
            shot[i] = shot_index;
        }
        if (end < n) {
            // The newline ending a shot's last line belongs to the separator.
            std::size_t next = end + 1;
            std::size_t next_end = text.find('\n', next);
            std::string_view next_line =
                text.substr(next, (next_end == std::string_view::npos ? n : next_end) - next);
            const bool before_separator = next_line == kShotSeparator;
            step[end] = before_separator ? -1 : line_step;
            shot[end] = shot_index;
        }
        pos = end + 1;
    }

    std::vector<RoleSpan> spans;
    for (std::size_t i = 0; i < n; ++i) {
        if (!spans.empty()) {
            RoleSpan& last = spans.back();
            if (last.role == role[i] && last.step_index == step[i] && last.shot_index == shot[i]) {
                last.char_end = i + 1;
                continue;
            }
        }
        spans.push_back(RoleSpan{role[i], i, i + 1, shot[i], step[i]});
    }
    return spans;
}

std::vector<std::string> split_shots(std::string_view text) {
    std::vector<std::string> shots;
    std::string current;
    bool first_line = true;
    for (auto line : split_lines(text)) {
        if (line == kShotSeparator) {
            shots.push_back(std::move(current));
            current.clear();
            first_line = true;
            continue;
        }
        if (!first_line) current += '\n';
        current.append(line);
        first_line = false;
    }
    shots.push_back(std::move(current));
    return shots;
}

}  // namespace circuitlab
