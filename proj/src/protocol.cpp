#include "circuitlab/protocol.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <set>

namespace circuitlab {

void throw_protocol_error(const std::string& type, const std::string& message) {
    if (type == "ShapeError") throw ShapeError(message);
    if (type == "DisjointnessError") throw DisjointnessError(message);
    if (type == "AlignmentError") throw AlignmentError(message);
    if (type == "UnknownChar") throw UnknownChar(message);
    if (type == "ProtocolError") throw ProtocolError(message);
    throw BackendError(type + ": " + message);
}

std::string to_string(const HeadId& h) {
    return "L" + std::to_string(h.layer) + "H" + std::to_string(h.head);
}

// ---------------------------------------------------------------------------
// base64

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
    }
    return v;
}

}  // namespace

std::string encode_floats(const std::vector<float>& values) {
    std::string bytes(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t v = to_le(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(&bytes[i * 4], &v, 4);
    }
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        std::uint32_t n = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) |
                          std::uint8_t(bytes[i + 2]);
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += kB64[(n >> 6) & 63];
        out += kB64[n & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest) {
        std::uint32_t n = std::uint8_t(bytes[i]) << 16;
        if (rest == 2) n |= std::uint8_t(bytes[i + 1]) << 8;
        out += kB64[(n >> 18) & 63];
        out += kB64[(n >> 12) & 63];
        out += rest == 2 ? kB64[(n >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<float> decode_floats(std::string_view b64) {
    if (b64.size() % 4) throw ProtocolError("base64 length is not a multiple of 4");
    std::string bytes;
    bytes.reserve(b64.size() / 4 * 3);
    for (std::size_t i = 0; i < b64.size(); i += 4) {
        std::array<int, 4> v{};
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            char c = b64[i + j];
            if (c == '=' && i + 4 == b64.size() && j >= 2) {
                v[j] = 0;
                ++pad;
                continue;
            }
            if (pad) throw ProtocolError("bad base64 padding");
            v[j] = b64_value(c);
            if (v[j] < 0) throw ProtocolError("bad base64 character");
        }
        std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
        bytes += static_cast<char>((n >> 16) & 0xFF);
        if (pad < 2) bytes += static_cast<char>((n >> 8) & 0xFF);
        if (pad < 1) bytes += static_cast<char>(n & 0xFF);
    }
    if (bytes.size() % 4) throw ShapeError("activation byte count is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t v;
        std::memcpy(&v, &bytes[i * 4], 4);
        out[i] = std::bit_cast<float>(to_le(v));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_head(const Capabilities& caps, const HeadId& h, const char* what) {
    if (h.layer < 0 || h.layer >= caps.n_layers || h.head < 0 || h.head >= caps.n_heads) {
        throw ShapeError(std::string(what) + " head " + to_string(h) + " outside " +
                         std::to_string(caps.n_layers) + "x" + std::to_string(caps.n_heads));
    }
}

void check_positions(const std::vector<int>& positions, int n_tokens, const char* what) {
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] < 0 || positions[i] >= n_tokens) {
            throw ShapeError(std::string(what) + " position " + std::to_string(positions[i]) +
                             " outside prompt of " + std::to_string(n_tokens) + " tokens");
        }
        if (i && positions[i] <= positions[i - 1]) {
            throw ShapeError(std::string(what) + " positions must be strictly increasing");
        }
    }
}

}  // namespace

void validate_request(const Capabilities& caps, int n_tokens, const ForwardRequest& request) {
    if (n_tokens > caps.max_seq_len) {
        throw ShapeError("prompt of " + std::to_string(n_tokens) + " tokens exceeds max_seq_len " +
                         std::to_string(caps.max_seq_len));
    }
    for (const auto& c : request.captures) {
        check_head(caps, c.head, "capture");
        check_positions(c.positions, n_tokens, "capture");
    }
    std::set<HeadId> patched;
    for (const auto& p : request.patches) {
        check_head(caps, p.head, "patch");
        check_positions(p.positions, n_tokens, "patch");
        if (p.values.size() != p.positions.size() * static_cast<std::size_t>(caps.d_model)) {
            throw ShapeError("patch on " + to_string(p.head) + " carries " +
                             std::to_string(p.values.size()) + " floats, expected " +
                             std::to_string(p.positions.size() * caps.d_model));
        }
        if (!patched.insert(p.head).second) {
            throw ShapeError("head " + to_string(p.head) + " patched twice");
        }
    }
    for (const auto& h : request.ablate) {
        check_head(caps, h, "ablate");
        if (patched.count(h)) {
            throw DisjointnessError("head " + to_string(h) + " is both patched and ablated");
        }
    }
    for (const auto& q : request.return_logprobs_at) {
        if (q.position < 0 || q.position >= n_tokens) {
            throw ShapeError("logprob position " + std::to_string(q.position) + " outside prompt");
        }
    }
}

bool offsets_partition(const Tokenization& t, std::size_t text_size) {
    if (t.tokens.size() != t.offsets.size()) return false;
    std::size_t at = 0;
    for (const auto& o : t.offsets) {
        if (o.start != at || o.end <= o.start) return false;
        at = o.end;
    }
    return at == text_size;
}

Tokenization tokenize_with_offsets(HookableModel& model, const std::string& text) {
    Tokenization t = model.tokenize(text);
    if (!offsets_partition(t, text.size())) {
        throw AlignmentError("token offsets do not partition the text");
    }
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
        const auto& o = t.offsets[i];
        if (text.compare(o.start, o.end - o.start, t.tokens[i]) != 0) {
            throw AlignmentError("token " + std::to_string(i) + " does not match its offsets");
        }
    }
    return t;
}

std::vector<SpanMapping> map_spans(const Tokenization& tokens,
                                   const std::vector<TokenSpan>& spans) {
    const std::size_t text_end = tokens.offsets.empty() ? 0 : tokens.offsets.back().end;
    std::vector<SpanMapping> out;
    for (const auto& s : spans) {
        SpanMapping m;
        if (s.end <= s.start || s.end > text_end) {
            m.error = "span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                      ") is empty or outside the text";
            out.push_back(std::move(m));
            continue;
        }
        // First token ending after span start.
        auto it = std::upper_bound(tokens.offsets.begin(), tokens.offsets.end(), s.start,
                                   [](std::size_t p, const TokenSpan& o) { return p < o.end; });
        for (; it != tokens.offsets.end() && it->start < s.end; ++it) {
            m.tokens.push_back(static_cast<int>(it - tokens.offsets.begin()));
        }
        const auto& first = tokens.offsets[static_cast<std::size_t>(m.tokens.front())];
        const auto& last = tokens.offsets[static_cast<std::size_t>(m.tokens.back())];
        m.hazard = first.start < s.start || last.end > s.end;
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void check_version(const json& j) {
    const int v = j.value("protocol_version", -1);
    if (v != kProtocolVersion) {
        throw ProtocolError("unsupported protocol_version " + std::to_string(v));
    }
}

json envelope(const std::string& id) {
    return json{{"protocol_version", kProtocolVersion}, {"id", id}};
}

json spans_json(const std::vector<TokenSpan>& spans) {
    json out = json::array();
    for (const auto& s : spans) out.push_back(json::array({s.start, s.end}));
    return out;
}

std::vector<TokenSpan> spans_from(const json& j) {
    std::vector<TokenSpan> out;
    for (const auto& s : j) out.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    return out;
}

json heads_json(const std::vector<HeadId>& heads) {
    json out = json::array();
    for (const auto& h : heads) out.push_back(to_json(h));
    return out;
}

std::vector<HeadId> heads_from(const json& j) {
    std::vector<HeadId> out;
    for (const auto& h : j) out.push_back(head_from_json(h));
    return out;
}

template <typename F>
auto parse_guard(const char* what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed ") + what + ": " + e.what());
    }
}

}  // namespace

json to_json(const Capabilities& c) {
    return json{{"protocol_version", kProtocolVersion},
                {"model_id", c.model_id},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},
                {"d_model", c.d_model},
                {"d_head", c.d_head},
                {"max_seq_len", c.max_seq_len},
                {"tokenizer_fingerprint", c.tokenizer_fingerprint},
                {"float_tolerance", c.float_tolerance}};
}

Capabilities capabilities_from_json(const json& j) {
    return parse_guard("capabilities", [&] {
        check_version(j);
        Capabilities c;
        c.model_id = j.at("model_id").get<std::string>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.d_head = j.at("d_head").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
        c.tokenizer_fingerprint = j.at("tokenizer_fingerprint").get<std::string>();
        c.float_tolerance = j.value("float_tolerance", 0.0);
        if (c.n_layers <= 0 || c.n_heads <= 0 || c.d_model <= 0 || c.max_seq_len <= 0) {
            throw ProtocolError("capabilities report an empty shape");
        }
        return c;
    });
}

json to_json(const HeadId& h) { return json{{"layer", h.layer}, {"head", h.head}}; }

HeadId head_from_json(const json& j) {
    return HeadId{j.at("layer").get<int>(), j.at("head").get<int>()};
}

json tokenize_request_json(const std::string& id, const std::string& text) {
    json j = envelope(id);
    j["text"] = text;
    return j;
}

json to_json(const Tokenization& t, const std::string& id) {
    json j = envelope(id);
    j["tokens"] = t.tokens;
    j["offsets"] = spans_json(t.offsets);
    return j;
}

Tokenization tokenization_from_json(const json& j) {
    return parse_guard("tokenize response", [&] {
        check_version(j);
        Tokenization t;
        t.tokens = j.at("tokens").get<std::vector<std::string>>();
        t.offsets = spans_from(j.at("offsets"));
        return t;
    });
}

json to_json(const ForwardRequest& r) {
    json j = envelope(r.id);
    j["prompt"] = r.prompt;
    json caps = json::array();
    for (const auto& c : r.captures) {
        caps.push_back({{"layer", c.head.layer}, {"head", c.head.head}, {"positions", c.positions}});
    }
    j["captures"] = caps;
    json patches = json::array();
    for (const auto& p : r.patches) {
        patches.push_back({{"layer", p.head.layer},
                           {"head", p.head.head},
                           {"positions", p.positions},
                           {"values", encode_floats(p.values)}});
    }
    j["patches"] = patches;
    j["ablate"] = heads_json(r.ablate);
    json lp = json::array();
    for (const auto& q : r.return_logprobs_at) {
        lp.push_back({{"position", q.position}, {"candidates", q.candidates}});
    }
    j["return_logprobs_at"] = lp;
    return j;
}

ForwardRequest forward_request_from_json(const json& j) {
    return parse_guard("forward request", [&] {
        check_version(j);
        ForwardRequest r;
        r.id = j.value("id", "");
        r.prompt = j.at("prompt").get<std::string>();
        for (const auto& c : j.value("captures", json::array())) {
            r.captures.push_back({head_from_json(c), c.at("positions").get<std::vector<int>>()});
        }
        for (const auto& p : j.value("patches", json::array())) {
            r.patches.push_back({head_from_json(p), p.at("positions").get<std::vector<int>>(),
                                 decode_floats(p.at("values").get<std::string>())});
        }
        r.ablate = heads_from(j.value("ablate", json::array()));
        for (const auto& q : j.value("return_logprobs_at", json::array())) {
            r.return_logprobs_at.push_back(
                {q.at("position").get<int>(), q.at("candidates").get<std::vector<std::string>>()});
        }
        return r;
    });
}

json to_json(const ForwardResult& r) {
    json j = envelope(r.id);
    j["n_tokens"] = r.n_tokens;
    json caps = json::array();
    for (const auto& a : r.captures) {
        caps.push_back({{"layer", a.head.layer},
                        {"head", a.head.head},
                        {"positions", a.positions},
                        {"values", encode_floats(a.values)}});
    }
    j["captures"] = caps;
    json lp = json::array();
    for (const auto& a : r.logprobs) {
        lp.push_back({{"position", a.position}, {"candidates", a.candidates}, {"logprobs", a.logprobs}});
    }
    j["logprobs"] = lp;
    return j;
}

ForwardResult forward_result_from_json(const json& j) {
    return parse_guard("forward response", [&] {
        check_version(j);
        ForwardResult r;
        r.id = j.value("id", "");
        r.n_tokens = j.at("n_tokens").get<int>();
        for (const auto& c : j.at("captures")) {
            r.captures.push_back({head_from_json(c), c.at("positions").get<std::vector<int>>(),
                                  decode_floats(c.at("values").get<std::string>())});
        }
        for (const auto& a : j.at("logprobs")) {
            r.logprobs.push_back({a.at("position").get<int>(),
                                  a.at("candidates").get<std::vector<std::string>>(),
                                  a.at("logprobs").get<std::vector<double>>()});
        }
        return r;
    });
}

json to_json(const GenerateRequest& r) {
    json j = envelope(r.id);
    j["prompt"] = r.prompt;
    j["max_tokens"] = r.max_tokens;
    j["ablate"] = heads_json(r.ablate);
    j["stop"] = r.stop;
    return j;
}

GenerateRequest generate_request_from_json(const json& j) {
    return parse_guard("generate request", [&] {
        check_version(j);
        GenerateRequest r;
        r.id = j.value("id", "");
        r.prompt = j.at("prompt").get<std::string>();
        r.max_tokens = j.value("max_tokens", 64);
        r.ablate = heads_from(j.value("ablate", json::array()));
        r.stop = j.value("stop", std::vector<std::string>{});
        return r;
    });
}

json to_json(const GenerateResult& r) {
    json j = envelope(r.id);
    j["text"] = r.text;
    j["tokens"] = r.tokens;
    j["logprobs"] = r.logprobs;
    j["offsets"] = spans_json(r.offsets);
    return j;
}

GenerateResult generate_result_from_json(const json& j) {
    return parse_guard("generate response", [&] {
        check_version(j);
        GenerateResult r;
        r.id = j.value("id", "");
        r.text = j.at("text").get<std::string>();
        r.tokens = j.at("tokens").get<std::vector<std::string>>();
        r.logprobs = j.at("logprobs").get<std::vector<double>>();
        r.offsets = spans_from(j.at("offsets"));
        return r;
    });
}

json error_json(const std::string& id, const std::string& type, const std::string& message) {
    json j = envelope(id);
    j["error"] = {{"type", type}, {"message", message}};
    return j;
}

}  // namespace circuitlab
