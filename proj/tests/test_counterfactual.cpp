#include "doctest.h"

#include <filesystem>

#include "circuitlab/counterfactual.hpp"
#include "golden_prompts.hpp"

using namespace circuitlab;

namespace {

PromptDoc single(const Problem& p, const ReasoningChain& c) { return render_prompt({}, {p, c}); }

std::string upto(const std::string& text, const std::string& marker, std::size_t extra) {
    auto pos = text.find(marker);
    REQUIRE(pos != std::string::npos);
    return text.substr(0, pos + extra);
}

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
    auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    return s.replace(pos, from.size(), to);
}

// Writing the clean bytes back over the causal spans restores the clean text.
void check_revert(const PromptPair& p) {
    std::string text = p.corrupted.text;
    for (const auto& r : p.causal_spans) {
        for (std::size_t i = r.start; i < r.end; ++i) text[i] = p.clean.text[i];
    }
    CHECK(text == p.clean.text);
}

}  // namespace

TEST_CASE("fact corruption on the reference problem") {
    auto doc = single(golden::fact_problem(), golden::fact_chain());
    auto pair = corrupt_fact(doc, 3, 'K');
    REQUIRE(pair);
    const std::string clean = upto(golden::kFactText, "=> F(KB['Q'", 9);
    CHECK(pair->clean.text == clean);
    std::string corrupted = replace_once(clean, "# (Rule3): Q is true", "# (Rule3): K is true");
    corrupted = replace_once(corrupted, "KB = {V, S, Q, E, L, A}", "KB = {V, S, K, E, L, A}");
    CHECK(pair->corrupted.text == corrupted);
    CHECK(pair->clean_target == "Q");
    CHECK(pair->corrupted_target == "V");  // first fact with an applicable rule
    CHECK(pair->component_span == CharRange{clean.size(), clean.size() + 1});
    CHECK(pair->preceding_char == clean.size() - 1);
    CHECK(pair->clean.text[pair->preceding_char] == '\'');
    CHECK(pair->causal_spans.size() == 2);
    std::string why;
    CHECK_MESSAGE(validate_structure(*pair, &why), why);
    check_revert(*pair);

    // A letter that is provable is not a valid replacement.
    CHECK_FALSE(corrupt_fact(doc, 3, 'F'));
    // Rule 7 is not a fact.
    CHECK_FALSE(corrupt_fact(doc, 7, 'K'));
}

TEST_CASE("termination corruption on the reference problem") {
    auto doc = single(golden::termination_problem(), golden::termination_chain());
    CHECK(last_single_premise_rule(golden::termination_chain(), golden::termination_problem()) ==
          8);
    auto pair = corrupt_termination(doc, 1, 'B', 'K');
    REQUIRE(pair);
    const std::string clean = upto(golden::kTerminationText, "=> F(KB['V'", 11);
    CHECK(pair->clean.text == clean);
    std::string corrupted =
        replace_once(clean, "# (Rule1): If R, J then A", "# (Rule1): If V, B then N");
    corrupted = replace_once(corrupted, "# (Rule8): If V then N", "# (Rule8): If V then K");
    CHECK(pair->corrupted.text == corrupted);
    CHECK(pair->clean_target == "]");
    CHECK(pair->corrupted_target == ",");
    REQUIRE(pair->causal_spans.size() == 2);
    CHECK(clean.substr(pair->causal_spans[0].start, pair->causal_spans[0].size()) ==
          "# (Rule1): If R, J then A");
    CHECK(clean.substr(pair->causal_spans[1].start, pair->causal_spans[1].size()) ==
          "# (Rule8): If V then N");
    std::string why;
    CHECK_MESSAGE(validate_structure(*pair, &why), why);
    check_revert(*pair);

    // Rule 10 fired in the chain, so it cannot be rewritten.
    CHECK_FALSE(corrupt_termination(doc, 10, 'B', 'K'));
}

TEST_CASE("rule corruption on the reference problem") {
    auto doc = single(golden::rule_problem(), golden::rule_chain());
    auto pair = corrupt_rule(doc, 2, 0, 'P');
    REQUIRE(pair);
    const std::string clean = upto(golden::kRuleText, "=> F(KB['O'], Rule", 18);
    CHECK(pair->clean.text == clean);
    std::string corrupted = replace_once(clean, "# (Rule2): If O then U", "# (Rule2): If P then U");
    corrupted = replace_once(corrupted, "=> F(KB['O'], Rule", "=> F(KB['M'], Rule");
    CHECK(pair->corrupted.text == corrupted);
    CHECK(pair->clean_target == "2");
    CHECK(pair->corrupted_target == "5");
    // The corrupted document carries its own consistent step.
    CHECK(pair->corrupted.query().chain.steps[0].selected == std::vector<Premise>{'M'});
    std::string why;
    CHECK_MESSAGE(validate_structure(*pair, &why), why);
    check_revert(*pair);
}

TEST_CASE("traversal corruption on the reference prompt") {
    auto doc = render_prompt({{golden::traversal_demo1(), golden::traversal_demo1_bfs()},
                              {golden::traversal_demo2(), golden::traversal_demo2_bfs()}},
                             {golden::traversal_query(), golden::traversal_query_bfs()});
    auto pair = corrupt_traversal(doc);
    REQUIRE(pair);
    const std::string query_prefix =
        upto(golden::kTraversalQueryText, "KB = {J, M, R, I, A, B, O}\n=> F(KB['", 36);
    CHECK(pair->clean.text == golden::kTraversalDemo1BfsText + golden::kSeparator +
                                  golden::kTraversalDemo2BfsText + golden::kSeparator +
                                  query_prefix);
    CHECK(pair->corrupted.text == golden::kTraversalDemo1Text + golden::kSeparator +
                                      golden::kTraversalDemo2Text + golden::kSeparator +
                                      query_prefix);
    CHECK(pair->clean_target == "I");
    CHECK(pair->corrupted_target == "O");
    CHECK(pair->causal_spans.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
        CHECK(pair->clean.shots[s].chain.steps.size() == pair->corrupted.shots[s].chain.steps.size());
    }
    std::string why;
    CHECK_MESSAGE(validate_structure(*pair, &why), why);
    check_revert(*pair);

    // Without demonstrations there is nothing to corrupt.
    CHECK_FALSE(corrupt_traversal(single(golden::traversal_query(), golden::traversal_query_bfs())));
}

TEST_CASE("validate_structure rejects broken pairs") {
    auto doc = single(golden::termination_problem(), golden::termination_chain());
    auto pair = *corrupt_termination(doc, 1, 'B', 'K');

    auto longer = pair;
    longer.corrupted.text += "x";
    CHECK_FALSE(validate_structure(longer));

    auto same = pair;
    same.corrupted_target = same.clean_target;
    CHECK_FALSE(validate_structure(same));

    auto uncovered = pair;
    uncovered.causal_spans.pop_back();
    CHECK_FALSE(validate_structure(uncovered));

    // Corrupted demonstration chain that fails the oracle while the text still
    // differs only inside the causal spans.
    auto tdoc = render_prompt({{golden::traversal_demo1(), golden::traversal_demo1_bfs()},
                               {golden::traversal_demo2(), golden::traversal_demo2_bfs()}},
                              {golden::traversal_query(), golden::traversal_query_bfs()});
    auto tp = *corrupt_traversal(tdoc);
    auto bad = tp;
    bad.corrupted.shots[0].chain.steps[1].rule_id = 4;  // Rule1 -> Rule4, same width
    bad.corrupted = doc_from_shots(bad.corrupted.shots);
    CHECK(bad.corrupted.text.size() == tp.corrupted.text.size());
    std::string why;
    CHECK_FALSE(validate_structure(bad, &why));
    CHECK(why.find("oracle") != std::string::npos);
}

TEST_CASE("pair generation yields valid pairs for every kind") {
    GeneratorConfig cfg;
    for (CorruptionKind kind : kAllKinds) {
        CAPTURE(to_string(kind));
        auto gen = generate_pairs(25, 2, kind, 17, cfg);
        CHECK(gen.pairs.size() == 25);
        CHECK(gen.attempts <= 250);
        for (const auto& p : gen.pairs) {
            std::string why;
            CHECK_MESSAGE(validate_structure(p, &why), why);
            CHECK(p.clean_target != p.corrupted_target);
            CHECK(p.clean.text.size() == p.corrupted.text.size());
            check_revert(p);
        }
        MESSAGE(to_string(kind) << " yield " << gen.yield());
    }
}

TEST_CASE("pair generation is independent of the worker count") {
    GeneratorConfig cfg;
    auto a = generate_pairs(10, 2, CorruptionKind::C3, 5, cfg, 1);
    auto b = generate_pairs(10, 2, CorruptionKind::C3, 5, cfg, 4);
    REQUIRE(a.pairs.size() == b.pairs.size());
    CHECK(a.attempts == b.attempts);
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(a.pairs[i].corrupted.text == b.pairs[i].corrupted.text);
        CHECK(a.pairs[i].attempt == b.pairs[i].attempt);
    }
    CHECK(generate_pairs(0, 2, CorruptionKind::C1, 5, cfg).pairs.empty());
}

TEST_CASE("pair generation reports shortfall") {
    GeneratorConfig cfg;
    cfg.min_total = 3;
    cfg.max_total = 3;
    CHECK_THROWS_AS(generate_pairs(3, 2, CorruptionKind::C2, 1, cfg), InsufficientYield);
}

TEST_CASE("pairs round trip through jsonl") {
    GeneratorConfig cfg;
    auto gen = generate_pairs(5, 2, CorruptionKind::C1, 3, cfg);
    auto dir = std::filesystem::temp_directory_path() / "circuitlab_test_cf";
    std::filesystem::create_directories(dir);
    write_pairs(dir / "pairs.jsonl", gen.pairs);
    auto back = read_pairs(dir / "pairs.jsonl");
    REQUIRE(back.size() == gen.pairs.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].clean.text == gen.pairs[i].clean.text);
        CHECK(back[i].corrupted.text == gen.pairs[i].corrupted.text);
        CHECK(back[i].causal_spans == gen.pairs[i].causal_spans);
        CHECK(back[i].component_span == gen.pairs[i].component_span);
        CHECK(back[i].seed == gen.pairs[i].seed);
        CHECK(validate_structure(back[i]));
    }
    CHECK(kind_from_string("C2_Rule_Termination") == CorruptionKind::C2);
    CHECK(kind_from_string("c4") == CorruptionKind::C4);
}
