#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"

#include "circuitlab/cma.hpp"
#include "circuitlab/rng.hpp"
#include "circuitlab/toy_model.hpp"

using namespace circuitlab;

namespace {

std::vector<PromptPair> pairs_of(CorruptionKind kind, int n, std::uint64_t seed = 5) {
    GeneratorConfig cfg;
    return generate_pairs(n, 1, kind, seed, cfg).pairs;
}

PromptPair degenerate(PromptPair p) {
    p.corrupted = p.clean;
    return p;
}

// Token positions for the toy tokenizer (one per char), computed directly.
std::vector<int> char_positions(const PromptPair& p, PositionMode mode) {
    std::set<int> out;
    if (mode == PositionMode::PrecedingToken) return {static_cast<int>(p.preceding_char)};
    for (const auto& s : p.causal_spans) {
        for (std::size_t c = s.start; c < s.end; ++c) out.insert(static_cast<int>(c));
    }
    return {out.begin(), out.end()};
}

double prob(HookableModel& m, const std::string& prompt, const PromptPair& p,
            std::vector<PatchSpec> patches = {}) {
    ForwardRequest r;
    r.prompt = prompt;
    r.patches = std::move(patches);
    r.return_logprobs_at = {{static_cast<int>(prompt.size()) - 1, {p.clean_target.substr(0, 1)}}};
    return std::exp(m.forward(r).logprobs[0].logprobs[0]);
}

std::vector<float> capture(HookableModel& m, const std::string& prompt, HeadId h,
                           const std::vector<int>& pos, std::vector<PatchSpec> patches = {}) {
    ForwardRequest r;
    r.prompt = prompt;
    r.captures = {{h, pos}};
    r.patches = std::move(patches);
    return m.forward(r).captures[0].values;
}

AIEMatrix matrix(int L, int J, std::vector<double> scores, HeadRole role = HeadRole::ReadFact) {
    AIEMatrix m;
    m.role = role;
    m.n_layers = L;
    m.n_heads = J;
    m.scores = std::move(scores);
    return m;
}

// Splits text into two-character tokens.
class PairTokens : public HookableModel {
public:
    Capabilities capabilities() override { return ToyModel().capabilities(); }
    Tokenization tokenize(const std::string& text) override {
        Tokenization t;
        for (std::size_t i = 0; i < text.size(); i += 2) {
            const std::size_t e = std::min(text.size(), i + 2);
            t.tokens.push_back(text.substr(i, e - i));
            t.offsets.push_back({i, e});
        }
        return t;
    }
    ForwardResult forward(const ForwardRequest&) override { throw BackendError("unused"); }
    GenerateResult generate(const GenerateRequest&) override { throw BackendError("unused"); }
};

}  // namespace

TEST_CASE("role names and mode mapping") {
    for (HeadRole r : kAllHeadRoles) {
        CHECK(head_role_from_string(to_string(r)) == r);
        CHECK(role_for(kind_of(r), mode_of(r)) == r);
    }
    CHECK(role_for(CorruptionKind::C3, PositionMode::PrecedingToken) == HeadRole::SelectRule);
    CHECK(role_for(CorruptionKind::C2, PositionMode::CausalSpan) == HeadRole::ReadRuleCondition);
    CHECK(position_mode_from_string("preceding-token") == PositionMode::PrecedingToken);
    CHECK_THROWS(position_mode_from_string("middle"));
}

TEST_CASE("identical pairs give an all-zero AIE") {
    ToyModel toy;
    std::vector<PromptPair> same;
    for (const auto& p : pairs_of(CorruptionKind::C1, 2)) same.push_back(degenerate(p));
    for (PositionMode mode : {PositionMode::CausalSpan, PositionMode::PrecedingToken}) {
        const auto m = aie(toy, same, mode);
        CHECK(m.n_pairs == 2);
        double total = 0.0;
        for (double s : m.scores) total += std::abs(s);
        CHECK(total / m.scores.size() < 1e-9);
    }
}

TEST_CASE("single-pair AIE equals the manual two-pass delta") {
    ToyModel toy;
    for (CorruptionKind kind : kAllKinds) {
        const auto pair = pairs_of(kind, 1, 9).front();
        for (PositionMode mode : {PositionMode::CausalSpan, PositionMode::PrecedingToken}) {
            const auto m = aie(toy, {pair}, mode);
            REQUIRE(m.n_pairs == 1);
            CHECK(m.role == role_for(kind, mode));
            const auto pos = char_positions(pair, mode);
            const double base = prob(toy, pair.corrupted.text, pair);
            for (HeadId h : {HeadId{0, 1}, HeadId{1, 3}}) {
                const auto clean = capture(toy, pair.clean.text, h, pos);
                const double patched = prob(toy, pair.corrupted.text, pair, {{h, pos, clean}});
                CHECK(m.at(h) == patched - base);
            }
        }
    }
}

TEST_CASE("AIE aggregation is exact and order independent") {
    ToyModel toy;
    auto pairs = pairs_of(CorruptionKind::C3, 4, 21);
    const auto forward = aie(toy, pairs, PositionMode::CausalSpan);
    std::reverse(pairs.begin(), pairs.end());
    std::swap(pairs[0], pairs[2]);
    const auto shuffled = aie(toy, pairs, PositionMode::CausalSpan, 3);
    CHECK(forward.scores == shuffled.scores);

    const auto prep = prepare_pairs(toy, pairs, PositionMode::CausalSpan);
    std::vector<std::vector<double>> per;
    for (const auto& p : prep.usable) per.push_back(aie_pair(toy, p));
    CHECK(mean_of(per, 8) == forward.scores);
    for (double s : forward.scores) {
        CHECK(std::isfinite(s));
        CHECK(std::abs(s) <= 1.0);
    }
}

TEST_CASE("pairs that do not align are skipped and counted") {
    PairTokens model;
    const auto pairs = pairs_of(CorruptionKind::C1, 4);
    const auto prep = prepare_pairs(model, pairs, PositionMode::PrecedingToken);
    CHECK(prep.usable.size() + prep.skipped.size() == pairs.size());
    // A single preceding char shares its two-char token unless it starts one
    // and the target starts a fresh token; both cannot hold.
    CHECK(prep.usable.empty());

    ToyModel toy;
    const auto ok = prepare_pairs(toy, pairs, PositionMode::CausalSpan);
    CHECK(ok.skipped.empty());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(ok.usable[i].positions == char_positions(pairs[i], PositionMode::CausalSpan));
        CHECK(ok.usable[i].readout == static_cast<int>(pairs[i].clean.text.size()) - 1);
        CHECK(ok.usable[i].target_token == pairs[i].clean_target.substr(0, 1));
    }
}

TEST_CASE("top heads follow score order with ties by position") {
    const auto flat = matrix(2, 4, std::vector<double>(8, 0.25));
    CHECK(select_top_heads(flat, 3) == std::vector<HeadId>{{0, 0}, {0, 1}, {0, 2}});
    CHECK(select_top_heads(flat, 8).size() == 8);
    CHECK(select_top_heads(flat, 20).size() == 8);
    CHECK_THROWS_AS(select_top_heads(flat, 0), std::invalid_argument);

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(6 * 5);
        // Coarse values so ties happen.
        for (auto& v : s) v = static_cast<double>(rng.below(7)) / 10.0;
        const auto m = matrix(6, 5, s);
        std::vector<std::tuple<double, int, int>> oracle;
        for (int l = 0; l < 6; ++l) {
            for (int j = 0; j < 5; ++j) oracle.emplace_back(-m.at(l, j), l, j);
        }
        std::sort(oracle.begin(), oracle.end());
        const int k = 1 + static_cast<int>(rng.below(30));
        const auto got = select_top_heads(m, k);
        for (int i = 0; i < k; ++i) {
            CHECK(got[i] == HeadId{std::get<1>(oracle[i]), std::get<2>(oracle[i])});
        }
    }
}

TEST_CASE("layer score averages the top share of each layer") {
    std::vector<double> s(2 * 32);
    for (int j = 0; j < 32; ++j) {
        s[j] = j;        // layer 0: top five are 27..31
        s[32 + j] = 0.5;  // layer 1: constant
    }
    const auto ls = layer_role_score(matrix(2, 32, s), 0.15);
    CHECK(ls[0] == doctest::Approx((27 + 28 + 29 + 30 + 31) / 5.0));
    CHECK(ls[1] == 0.5);
    CHECK_THROWS_AS(layer_role_score(matrix(2, 32, s), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(layer_role_score(matrix(2, 32, s), 1.5), std::invalid_argument);

    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const int L = 1 + static_cast<int>(rng.below(5));
        const int J = 1 + static_cast<int>(rng.below(12));
        std::vector<double> v(static_cast<std::size_t>(L * J));
        for (auto& x : v) x = rng.unit() - 0.5;
        const double pct = 0.05 + 0.95 * rng.unit();
        const auto got = layer_role_score(matrix(L, J, v), pct);
        const int count = std::max(1, static_cast<int>(std::ceil(pct * J - 1e-9)));
        for (int l = 0; l < L; ++l) {
            std::vector<double> row(v.begin() + l * J, v.begin() + (l + 1) * J);
            std::sort(row.rbegin(), row.rend());
            double sum = 0.0;
            for (int i = 0; i < count; ++i) sum += row[i];
            CHECK(got[l] == doctest::Approx(sum / count).epsilon(1e-12));
        }
    }
}

TEST_CASE("path patching matches the scripted passes") {
    ToyModel toy;
    const auto pair = pairs_of(CorruptionKind::C2, 1, 13).front();
    const HeadId emit{0, 2}, rec{1, 1};
    for (PositionMode mode : {PositionMode::CausalSpan, PositionMode::PrecedingToken}) {
        const auto edge = path_patch(toy, {pair}, emit, rec, mode);
        const auto pos = char_positions(pair, mode);
        const auto corrupted = capture(toy, pair.corrupted.text, emit, pos);
        const auto harvested = capture(toy, pair.clean.text, rec, pos, {{emit, pos, corrupted}});
        const double want = prob(toy, pair.clean.text, pair, {{rec, pos, harvested}}) -
                            prob(toy, pair.clean.text, pair);
        CHECK(edge.score == want);
        CHECK(edge.n_pairs == 1);
        CHECK(edge.kind == CorruptionKind::C2);
    }
    CHECK_THROWS_AS(path_patch(toy, {pair}, rec, emit, PositionMode::CausalSpan), LayerOrderError);
    CHECK_THROWS_AS(path_patch(toy, {pair}, {1, 0}, {1, 2}, PositionMode::CausalSpan), LayerOrderError);
}

TEST_CASE("path patching degenerate cases") {
    ToyModel toy;
    const auto pairs = pairs_of(CorruptionKind::C1, 2, 17);
    std::vector<PromptPair> same;
    for (const auto& p : pairs) same.push_back(degenerate(p));
    CHECK(path_patch(toy, same, {0, 0}, {1, 3}, PositionMode::CausalSpan).score == 0.0);

    // emit == rec collapses to patching the corrupted activation into the clean run.
    const auto prep = prepare_pairs(toy, pairs, PositionMode::CausalSpan);
    for (const auto& p : prep.usable) {
        for (HeadId h : {HeadId{0, 3}, HeadId{1, 0}}) {
            const double collapsed = path_patch_pair_unchecked(toy, p, h, h);
            const auto corrupted = capture(toy, p.corrupted_text, h, p.positions);
            const auto& pair = pairs[static_cast<std::size_t>(p.index)];
            const double direct = prob(toy, p.clean_text, pair, {{h, p.positions, corrupted}}) -
                                  prob(toy, p.clean_text, pair);
            CHECK(std::abs(collapsed - direct) < 1e-6);
        }
    }
}

TEST_CASE("circuit nodes carry role sets") {
    const auto zero = matrix(2, 4, std::vector<double>(8, 0.0), HeadRole::SelectRule);
    const auto nodes = circuit_nodes({zero}, 5);
    REQUIRE(nodes.size() == 5);
    CHECK(nodes[4].head == HeadId{1, 0});
    CHECK(nodes[0].roles == std::vector<HeadRole>{HeadRole::SelectRule});

    std::vector<double> a(8, 0.0), b(8, 0.0);
    a[5] = 1.0;  // L1H1 tops both roles
    b[5] = 2.0;
    b[0] = 1.0;
    const auto g = circuit_network({matrix(2, 4, a, HeadRole::ReadRule), matrix(2, 4, b, HeadRole::SelectRule)},
                                   {}, 1, 10);
    REQUIRE(g.nodes.size() == 1);
    CHECK(g.nodes[0].head == HeadId{1, 1});
    CHECK(g.nodes[0].roles == std::vector<HeadRole>{HeadRole::ReadRule, HeadRole::SelectRule});
}

TEST_CASE("circuit edges equal exhaustive path patching truncated to the top ten") {
    ToyModel toy(ToyConfig{.n_layers = 3, .n_heads = 3, .d_head = 8});
    const auto pairs = pairs_of(CorruptionKind::C3, 2, 23);
    std::vector<double> s(9);
    for (int i = 0; i < 9; ++i) s[i] = (i * 7 % 9) / 10.0;
    const auto m = matrix(3, 3, s, HeadRole::SelectRule);
    const auto g = circuit_network(toy, {m}, {{CorruptionKind::C3, pairs}}, 6, 10,
                                   PositionMode::PrecedingToken);
    CHECK(g.nodes.size() == 6);

    std::vector<PathEdgeScore> all;
    for (const auto& e : g.nodes) {
        for (const auto& r : g.nodes) {
            if (e.head.layer < r.head.layer) {
                all.push_back(path_patch(toy, pairs, e.head, r.head, PositionMode::PrecedingToken));
            }
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const PathEdgeScore& a, const PathEdgeScore& b) {
        if (std::abs(a.score) != std::abs(b.score)) return std::abs(a.score) > std::abs(b.score);
        return std::tie(a.emit, a.rec) < std::tie(b.emit, b.rec);
    });
    REQUIRE(all.size() > 10);
    all.resize(10);
    REQUIRE(g.edges.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(g.edges[i].emit == all[i].emit);
        CHECK(g.edges[i].rec == all[i].rec);
        CHECK(g.edges[i].score == all[i].score);
        CHECK(g.edges[i].emit.layer < g.edges[i].rec.layer);
    }
}

TEST_CASE("ablation head sets follow their definitions") {
    Capabilities big;
    big.n_layers = 32;
    big.n_heads = 32;
    std::map<HeadRole, std::vector<HeadId>> roles;
    int next = 0;
    for (HeadRole r : kAllHeadRoles) {
        for (int i = 0; i < 8; ++i, ++next) roles[r].push_back({next / 32, next % 32});
    }
    AblationConfig cfg;
    CHECK(ablation_heads(cfg, roles, big).empty());
    cfg.name = AblationName::RS;
    CHECK(ablation_heads(cfg, roles, big).size() == 10);
    cfg.name = AblationName::ThreeRoles;
    const auto three = ablation_heads(cfg, roles, big);
    CHECK(three.size() == 30);
    CHECK(static_cast<double>(three.size()) / big.total_heads() == doctest::Approx(0.0293).epsilon(0.01));
    cfg.top_k = 8;
    CHECK(ablation_heads(cfg, roles, big).size() == 48);

    // Overlap collapses.
    auto shared = roles;
    shared[HeadRole::SelectRule] = shared[HeadRole::ReadRule];
    cfg.top_k = 5;
    cfg.name = AblationName::RS;
    CHECK(ablation_heads(cfg, shared, big).size() == 5);

    cfg.name = AblationName::Rand;
    const auto r0 = ablation_heads(cfg, roles, big, 0);
    CHECK(r0.size() == 31);  // round(0.03 * 1024)
    CHECK(ablation_heads(cfg, roles, big, 0) == r0);
    CHECK(ablation_heads(cfg, roles, big, 1) != r0);
    Capabilities toy{.n_layers = 2, .n_heads = 4};
    CHECK(ablation_heads(cfg, roles, toy).size() == 1);

    cfg.name = AblationName::PS;
    CHECK_THROWS_AS(ablation_heads(cfg, {}, big), std::invalid_argument);
    for (const char* n : {"baseline", "rand", "rs", "ps", "pst", "3roles"}) {
        CHECK(to_string(ablation_from_string(n)) == n);
    }
    CHECK(ablation_from_string("three_roles") == AblationName::ThreeRoles);
}

TEST_CASE("baseline ablation equals plain evaluation and runs are deterministic") {
    ToyModel toy;
    GeneratorConfig gc;
    auto data = synth_dataset(1, 3, 31, gc);
    AblationConfig cfg;
    const auto base = ablate_eval(toy, data, "synth-k1", cfg, {});
    REQUIRE(base.head_sets.size() == 1);
    CHECK(base.head_sets[0].empty());

    double lenient = 0.0;
    std::vector<AnswerRecord> answers;
    for (const auto& rec : data) {
        GenerateRequest g;
        g.prompt = rec.query_prompt();
        g.max_tokens = static_cast<int>(rec.doc.text.size() - rec.query_prompt_len()) + 16;
        g.stop = {"\n-------", "= True.", "= False."};
        const auto text = toy.generate(g).text;
        lenient += inference_step_accuracy(text, rec.problem(), rec.gold_chain()).lenient;
        answers.push_back({text, rec.gold_chain().verdict ? "True" : "False"});
    }
    CHECK(base.rows[0].metric == "step_accuracy_lenient");
    CHECK(base.rows[0].value == lenient / 3);
    CHECK(base.rows[2].metric == "final_answer_accuracy");
    CHECK(base.rows[2].value == *final_answer_accuracy(answers));

    cfg.name = AblationName::Rand;
    cfg.seed = 4;
    const auto a = ablate_eval(toy, data, "synth-k1", cfg, {}, 2);
    const auto b = ablate_eval(toy, data, "synth-k1", cfg, {});
    CHECK(a.head_sets.size() == 3);
    CHECK(metrics_csv(a.rows) == metrics_csv(b.rows));
}

TEST_CASE("score, edge, circuit and metric files round trip") {
    auto m = matrix(2, 3, {0.1, -0.2, 0.3, 0.0, 1e-9, -1.0}, HeadRole::MatchRuleCondition);
    m.model_id = "toy";
    m.n_pairs = 7;
    m.skipped = 1;
    const auto back = aie_from_json(json::parse(to_json(m).dump()));
    CHECK(back.scores == m.scores);
    CHECK(back.role == m.role);
    CHECK(back.n_pairs == 7);
    CHECK(to_json(m)["scores"].size() == 2);
    auto broken = to_json(m);
    broken["scores"][1].erase(0);
    CHECK_THROWS_AS(aie_from_json(broken), DataError);

    CircuitGraph g;
    g.nodes = {{{0, 1}, {HeadRole::ReadFact, HeadRole::SelectRule}}};
    g.edges = {{{0, 1}, {1, 2}, -0.25, 3, CorruptionKind::C4}, {{0, 0}, {1, 0}, 0.5, 3, std::nullopt}};
    const auto gb = circuit_from_json(json::parse(to_json(g).dump()));
    CHECK(gb.nodes[0].roles == g.nodes[0].roles);
    CHECK(gb.edges[0].kind == CorruptionKind::C4);
    CHECK_FALSE(gb.edges[1].kind.has_value());
    CHECK(to_json(gb) == to_json(g));

    const std::vector<MetricRow> rows = {{"rs", "synth,k=2", "step_accuracy_lenient", 0.125, 10, 3},
                                         {"3roles", "say \"hi\"", "heads_ablated", 30, 10, 3}};
    const auto csv = metrics_csv(rows);
    CHECK(csv.substr(0, 36) == "config,dataset,metric,value,n,seed\r\n");
    CHECK(csv.find("\"synth,k=2\"") != std::string::npos);
    CHECK(csv.find("\"say \"\"hi\"\"\"") != std::string::npos);
    const auto rb = metrics_from_csv(csv);
    REQUIRE(rb.size() == 2);
    CHECK(rb[0].dataset == "synth,k=2");
    CHECK(rb[1].dataset == "say \"hi\"");
    CHECK(rb[0].value == 0.125);
    CHECK_THROWS_AS(metrics_from_csv("a,b\r\n"), DataError);
}
