#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"

#include "circuitlab/protocol.hpp"
#include "circuitlab/rng.hpp"
#include "circuitlab/toy_model.hpp"

using namespace circuitlab;

namespace {

std::string fixture(const std::string& name) {
    std::ifstream in(std::string(CIRCUITLAB_FIXTURES) + "/protocol/" + name, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

Capabilities small_caps() {
    Capabilities c;
    c.model_id = "m";
    c.n_layers = 2;
    c.n_heads = 3;
    c.d_model = 4;
    c.d_head = 2;
    c.max_seq_len = 100;
    return c;
}

ForwardRequest fixture_forward_request() {
    ForwardRequest r;
    r.id = "req-1";
    r.prompt = "KB = {A}";
    r.captures = {{{0, 1}, {6, 7}}};
    r.patches = {{{1, 2}, {7}, {1.0f, -2.5f, 0.0f}}};
    r.ablate = {{0, 3}};
    r.return_logprobs_at = {{7, {"}", "A"}}};
    return r;
}

// Model whose tokenizer lies about offsets.
class BadOffsets : public HookableModel {
public:
    Capabilities capabilities() override { return small_caps(); }
    Tokenization tokenize(const std::string& text) override {
        Tokenization t;
        for (std::size_t i = 0; i < text.size(); ++i) {
            t.tokens.emplace_back(1, text[i]);
            t.offsets.push_back({i, i + 2});
        }
        return t;
    }
    ForwardResult forward(const ForwardRequest&) override { return {}; }
    GenerateResult generate(const GenerateRequest&) override { return {}; }
};

}  // namespace

TEST_CASE("float base64 matches reference encodings") {
    CHECK(encode_floats({1.0f}) == "AACAPw==");
    CHECK(encode_floats({1.0f, -2.5f, 0.0f}) == "AACAPwAAIMAAAAAA");
    CHECK(encode_floats({0.5f, -0.0f}) == "AAAAPwAAAIA=");
    CHECK(encode_floats({}).empty());
    CHECK(decode_floats("AACAPwAAIMAAAAAA") == std::vector<float>{1.0f, -2.5f, 0.0f});
    const auto z = decode_floats("AAAAPwAAAIA=");
    REQUIRE(z.size() == 2);
    CHECK(std::signbit(z[1]));
}

TEST_CASE("float base64 round trips bit patterns") {
    Rng rng(5);
    for (int n = 0; n < 40; ++n) {
        std::vector<float> v;
        for (int i = 0; i < n; ++i) {
            std::uint32_t bits = static_cast<std::uint32_t>(rng.next());
            float f;
            std::memcpy(&f, &bits, 4);
            v.push_back(f);
        }
        v.push_back(std::numeric_limits<float>::infinity());
        v.push_back(std::numeric_limits<float>::denorm_min());
        const auto back = decode_floats(encode_floats(v));
        REQUIRE(back.size() == v.size());
        CHECK(std::memcmp(back.data(), v.data(), v.size() * 4) == 0);
    }
}

TEST_CASE("float base64 rejects damaged input") {
    CHECK_THROWS_AS(decode_floats("AACAPw="), ProtocolError);
    CHECK_THROWS_AS(decode_floats("AAC*Pw=="), ProtocolError);
    CHECK_THROWS_AS(decode_floats("A=CAPw=="), ProtocolError);
    CHECK_THROWS_AS(decode_floats("AACA"), ShapeError);  // 3 bytes
}

TEST_CASE("validate_request shape and disjointness rules") {
    const auto caps = small_caps();
    ForwardRequest ok;
    ok.captures = {{{1, 2}, {0, 3, 9}}};
    ok.patches = {{{0, 0}, {1, 2}, std::vector<float>(8, 0.5f)}};
    ok.ablate = {{1, 1}};
    ok.return_logprobs_at = {{9, {"a"}}};
    CHECK_NOTHROW(validate_request(caps, 10, ok));

    auto bad = ok;
    bad.captures[0].positions = {0, 10};
    CHECK_THROWS_AS(validate_request(caps, 10, bad), ShapeError);
    bad = ok;
    bad.captures[0].positions = {3, 3};
    CHECK_THROWS_AS(validate_request(caps, 10, bad), ShapeError);
    bad = ok;
    bad.patches[0].values.pop_back();
    CHECK_THROWS_AS(validate_request(caps, 10, bad), ShapeError);
    bad = ok;
    bad.patches[0].head = {2, 0};
    CHECK_THROWS_AS(validate_request(caps, 10, bad), ShapeError);
    bad = ok;
    bad.ablate = {{0, 3}};
    CHECK_THROWS_AS(validate_request(caps, 10, bad), ShapeError);
    bad = ok;
    bad.patches.push_back(bad.patches[0]);
    CHECK_THROWS_AS(validate_request(caps, 10, bad), ShapeError);
    bad = ok;
    bad.return_logprobs_at[0].position = -1;
    CHECK_THROWS_AS(validate_request(caps, 10, bad), ShapeError);
    bad = ok;
    bad.ablate.push_back({0, 0});
    CHECK_THROWS_AS(validate_request(caps, 10, bad), DisjointnessError);
    CHECK_THROWS_AS(validate_request(caps, 101, ForwardRequest{}), ShapeError);
}

TEST_CASE("typed errors survive the wire name") {
    CHECK_THROWS_AS(throw_protocol_error("ShapeError", "x"), ShapeError);
    CHECK_THROWS_AS(throw_protocol_error("DisjointnessError", "x"), DisjointnessError);
    CHECK_THROWS_AS(throw_protocol_error("AlignmentError", "x"), AlignmentError);
    CHECK_THROWS_AS(throw_protocol_error("UnknownChar", "x"), UnknownChar);
    CHECK_THROWS_AS(throw_protocol_error("SomethingElse", "x"), BackendError);
    try {
        throw_protocol_error("ShapeError", "x");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.type()) == "ShapeError");
    }
    CHECK(to_string(HeadId{3, 7}) == "L3H7");
}

TEST_CASE("map_spans covers minimal token sets and flags hazards") {
    // "Rule10" with the digits as the span of interest.
    const std::vector<TokenSpan> digits = {{4, 6}};
    Tokenization merged{{"Rule", "10"}, {{0, 4}, {4, 6}}};
    Tokenization split{{"Rule", "1", "0"}, {{0, 4}, {4, 5}, {5, 6}}};
    Tokenization across{{"Rule1", "0"}, {{0, 5}, {5, 6}}};

    auto m = map_spans(merged, digits);
    CHECK(m[0].tokens == std::vector<int>{1});
    CHECK_FALSE(m[0].hazard);
    m = map_spans(split, digits);
    CHECK(m[0].tokens == std::vector<int>{1, 2});
    CHECK_FALSE(m[0].hazard);
    m = map_spans(across, digits);
    CHECK(m[0].tokens == std::vector<int>{0, 1});
    CHECK(m[0].hazard);

    m = map_spans(merged, {{2, 2}, {5, 9}, {0, 1}});
    CHECK_FALSE(m[0].error.empty());
    CHECK_FALSE(m[1].error.empty());
    CHECK(m[2].error.empty());
    CHECK(m[2].tokens == std::vector<int>{0});
    CHECK(m[2].hazard);
}

TEST_CASE("toy tokenization maps char spans to the same indices") {
    ToyModel toy;
    const std::string text = "# (Rule12): If A, B then C";
    const auto t = tokenize_with_offsets(toy, text);
    CHECK(offsets_partition(t, text.size()));
    const auto m = map_spans(t, {{3, 9}, {8, 9}});
    CHECK(m[0].tokens == std::vector<int>{3, 4, 5, 6, 7, 8});
    CHECK(m[1].tokens == std::vector<int>{8});
    CHECK_FALSE(m[0].hazard);
    CHECK(tokenize_with_offsets(toy, "").tokens.empty());

    BadOffsets bad;
    CHECK_THROWS_AS(tokenize_with_offsets(bad, "abc"), AlignmentError);
    CHECK_FALSE(offsets_partition(Tokenization{{"a"}, {{0, 1}}}, 2));
}

TEST_CASE("request encodings match the byte-exact fixtures") {
    CHECK(pretty(to_json(fixture_forward_request())) == fixture("forward_request.json"));
    CHECK(pretty(tokenize_request_json("req-0", "KB = {A}")) == fixture("tokenize_request.json"));

    GenerateRequest g;
    g.id = "req-2";
    g.prompt = "KB = {A";
    g.max_tokens = 4;
    g.ablate = {{1, 0}};
    g.stop = {"}"};
    CHECK(pretty(to_json(g)) == fixture("generate_request.json"));

    CHECK(pretty(error_json("req-3", "DisjointnessError", "head L0H3 is both patched and ablated")) ==
          fixture("error_response.json"));

    ToyModel toy;
    CHECK(pretty(to_json(toy.capabilities())) == fixture("capabilities.json"));
    CHECK(pretty(to_json(toy.tokenize("KB = {A}"), "req-0")) == fixture("tokenize_response.json"));
}

TEST_CASE("fixtures decode to the documented values") {
    const auto r = forward_request_from_json(json::parse(fixture("forward_request.json")));
    const auto want = fixture_forward_request();
    CHECK(r.id == want.id);
    CHECK(r.prompt == want.prompt);
    REQUIRE(r.patches.size() == 1);
    CHECK(r.patches[0].values == want.patches[0].values);
    CHECK(r.patches[0].head == HeadId{1, 2});
    CHECK(r.captures[0].positions == want.captures[0].positions);
    CHECK(r.ablate == want.ablate);
    CHECK(r.return_logprobs_at[0].candidates == want.return_logprobs_at[0].candidates);

    const auto caps = capabilities_from_json(json::parse(fixture("capabilities.json")));
    CHECK(caps.total_heads() == 8);
    CHECK(caps.float_tolerance == 1e-6);

    const auto g = generate_request_from_json(json::parse(fixture("generate_request.json")));
    CHECK(g.max_tokens == 4);
    CHECK(g.stop == std::vector<std::string>{"}"});

    const auto t = tokenization_from_json(json::parse(fixture("tokenize_response.json")));
    CHECK(t.tokens.size() == 8);
    CHECK(offsets_partition(t, 8));
}

TEST_CASE("results round trip through JSON exactly") {
    ForwardResult r;
    r.id = "x";
    r.n_tokens = 5;
    r.captures = {{{1, 0}, {2, 4}, {0.1f, -3e-7f, 1e30f, 7.0f}}};
    r.logprobs = {{4, {"a", "b"}, {-0.1234567890123456789, -12.5}}};
    const auto back = forward_result_from_json(json::parse(to_json(r).dump()));
    CHECK(back.captures[0].values == r.captures[0].values);
    CHECK(back.logprobs[0].logprobs == r.logprobs[0].logprobs);
    CHECK(back.n_tokens == 5);

    GenerateResult gr{"y", "ab", {"a", "b"}, {-0.5, -1.0 / 3.0}, {{0, 1}, {1, 2}}};
    const auto gb = generate_result_from_json(json::parse(to_json(gr).dump()));
    CHECK(gb.text == "ab");
    CHECK(gb.logprobs == gr.logprobs);
    CHECK(gb.offsets == gr.offsets);
}

TEST_CASE("readers reject other versions and malformed bodies") {
    auto j = to_json(fixture_forward_request());
    j["protocol_version"] = 2;
    CHECK_THROWS_AS(forward_request_from_json(j), ProtocolError);
    j.erase("protocol_version");
    CHECK_THROWS_AS(forward_request_from_json(j), ProtocolError);
    auto k = to_json(fixture_forward_request());
    k["captures"][0]["positions"] = "nope";
    CHECK_THROWS_AS(forward_request_from_json(k), ProtocolError);
    CHECK_THROWS_AS(capabilities_from_json(json{{"protocol_version", 1}}), ProtocolError);
    auto c = json::parse(fixture("capabilities.json"));
    c["n_layers"] = 0;
    CHECK_THROWS_AS(capabilities_from_json(c), ProtocolError);
}
