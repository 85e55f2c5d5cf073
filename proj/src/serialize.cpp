#include "circuitlab/serialize.hpp"

#include <fstream>

namespace circuitlab {

namespace {

std::string letter(Premise p) { return std::string(1, p); }

Premise letter_from(const json& j) {
    const auto s = j.get<std::string>();
    if (s.size() != 1 || !is_premise(s[0])) throw DataError("bad premise letter: " + s);
    return s[0];
}

// Malformed input surfaces as DataError rather than a json exception.
template <typename F>
auto guarded(F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw DataError(e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
    }
}

}  // namespace

json to_json(const Rule& r) {
    json conds = json::array();
    for (Premise c : r.conditions) conds.push_back(letter(c));
    return json{{"id", r.id}, {"if", conds}, {"then", letter(r.conclusion)}};
}

namespace {
Rule rule_from_json_unchecked(const json& j) {
    Rule r;
    r.id = j.at("id").get<int>();
    for (const auto& c : j.at("if")) r.conditions.push_back(letter_from(c));
    r.conclusion = letter_from(j.at("then"));
    return r;
}
}  // namespace

Rule rule_from_json(const json& j) { return guarded([&] { return rule_from_json_unchecked(j); }); }

json to_json(const Problem& p) {
    json rules = json::array();
    for (const auto& r : p.rules) rules.push_back(to_json(r));
    return json{{"rules", rules}, {"question", letter(p.question)}};
}

namespace {
Problem problem_from_json_unchecked(const json& j) {
    Problem p;
    for (const auto& r : j.at("rules")) p.rules.push_back(rule_from_json(r));
    p.question = letter_from(j.at("question"));
    return p;
}
}  // namespace

Problem problem_from_json(const json& j) { return guarded([&] { return problem_from_json_unchecked(j); }); }

json to_json(const InferenceStep& s) {
    json sel = json::array();
    for (Premise c : s.selected) sel.push_back(letter(c));
    json kb = json::array();
    for (Premise c : s.kb_after.items()) kb.push_back(letter(c));
    json out{{"premises", sel}, {"rule", s.rule_id}, {"derived", letter(s.derived)}, {"kb", kb}};
    if (s.malformed) out["malformed"] = true;
    return out;
}

namespace {
InferenceStep step_from_json_unchecked(const json& j) {
    InferenceStep s;
    s.malformed = j.value("malformed", false);
    for (const auto& c : j.at("premises")) s.selected.push_back(letter_from(c));
    s.rule_id = j.at("rule").get<int>();
    if (!s.malformed) s.derived = letter_from(j.at("derived"));
    for (const auto& c : j.at("kb")) s.kb_after.insert(letter_from(c));
    return s;
}
}  // namespace

InferenceStep step_from_json(const json& j) { return guarded([&] { return step_from_json_unchecked(j); }); }

json to_json(const ReasoningChain& c) {
    json steps = json::array();
    for (const auto& s : c.steps) steps.push_back(to_json(s));
    return json{{"steps", steps}, {"verdict", c.verdict}};
}

namespace {
ReasoningChain chain_from_json_unchecked(const json& j) {
    ReasoningChain c;
    for (const auto& s : j.at("steps")) c.steps.push_back(step_from_json(s));
    c.verdict = j.at("verdict").get<bool>();
    return c;
}
}  // namespace

ReasoningChain chain_from_json(const json& j) { return guarded([&] { return chain_from_json_unchecked(j); }); }

json to_json(const RoleSpan& s) {
    return json{{"role", to_string(s.role)},
                {"start", s.char_start},
                {"end", s.char_end},
                {"shot", s.shot_index},
                {"step", s.step_index}};
}

namespace {
RoleSpan span_from_json_unchecked(const json& j) {
    RoleSpan s;
    s.role = role_from_string(j.at("role").get<std::string>());
    s.char_start = j.at("start").get<std::size_t>();
    s.char_end = j.at("end").get<std::size_t>();
    s.shot_index = j.at("shot").get<int>();
    s.step_index = j.at("step").get<int>();
    return s;
}
}  // namespace

RoleSpan span_from_json(const json& j) { return guarded([&] { return span_from_json_unchecked(j); }); }

json spans_to_json(const std::vector<RoleSpan>& spans) {
    json out = json::array();
    for (const auto& s : spans) {
        if (s.role != Role::Syntax) out.push_back(to_json(s));
    }
    return out;
}

json to_json(const PromptShot& s) {
    json out{{"problem", to_json(s.problem)}, {"chain", to_json(s.chain)}};
    if (s.cutoff) out["cutoff"] = *s.cutoff;
    return out;
}

namespace {
PromptShot shot_from_json_unchecked(const json& j) {
    PromptShot s;
    s.problem = problem_from_json(j.at("problem"));
    s.chain = chain_from_json(j.at("chain"));
    if (j.contains("cutoff") && !j.at("cutoff").is_null()) {
        s.cutoff = j.at("cutoff").get<std::size_t>();
    }
    s.text = render_shot(s.problem, s.chain, s.cutoff);
    return s;
}
}  // namespace

PromptShot shot_from_json(const json& j) { return guarded([&] { return shot_from_json_unchecked(j); }); }

PromptDoc doc_from_shots(std::vector<PromptShot> shots) {
    if (shots.empty()) throw DataError("document has no shots");
    std::vector<Demo> demos;
    for (std::size_t i = 0; i + 1 < shots.size(); ++i) {
        demos.emplace_back(shots[i].problem, shots[i].chain);
    }
    const auto& q = shots.back();
    return render_prompt(demos, {q.problem, q.chain}, q.cutoff);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<json> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : rows) out << r.dump() << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& value) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << value.dump(2) << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace circuitlab
