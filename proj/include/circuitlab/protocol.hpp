#pragma once

// Hookable-model contract shared by the in-process toy backend and the HTTP
// backend. Messages are JSON objects carrying "protocol_version" and a request
// "id"; activations travel as base64 of little-endian float32 arrays.
//
//   GET  /capabilities
//   POST /tokenize   {text}
//   POST /forward    {prompt, captures[], patches[], ablate[], return_logprobs_at[]}
//   POST /generate   {prompt, max_tokens, ablate[], stop[]}
//
// A head's activation is its output-projected contribution to the residual
// stream, so every captured or patched vector has d_model floats per position.
// Logprob at position p is log P(next token = candidate | tokens[0..p]).

#include <compare>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace circuitlab {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

// Error types; each has a wire name used in error responses.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* type() const { return "ProtocolError"; }
};
class ShapeError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
    const char* type() const override { return "ShapeError"; }
};
class DisjointnessError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
    const char* type() const override { return "DisjointnessError"; }
};
class AlignmentError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
    const char* type() const override { return "AlignmentError"; }
};
class UnknownChar : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
    const char* type() const override { return "UnknownChar"; }
};
// Transport failures and anything the backend reports that is not one of the
// typed errors above.
class BackendError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
    const char* type() const override { return "BackendError"; }
};

// Rethrows the typed error named by `type`.
[[noreturn]] void throw_protocol_error(const std::string& type, const std::string& message);

struct HeadId {
    int layer = 0;
    int head = 0;

    auto operator<=>(const HeadId&) const = default;
};

std::string to_string(const HeadId& h);  // "L3H7"

struct Capabilities {
    std::string model_id;
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int max_seq_len = 0;
    std::string tokenizer_fingerprint;
    double float_tolerance = 0.0;

    int total_heads() const { return n_layers * n_heads; }
};

struct TokenSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    bool operator==(const TokenSpan&) const = default;
};

struct Tokenization {
    std::vector<std::string> tokens;
    std::vector<TokenSpan> offsets;  // char range of each token
};

struct CaptureSpec {
    HeadId head;
    std::vector<int> positions;
};

struct PatchSpec {
    HeadId head;
    std::vector<int> positions;
    std::vector<float> values;  // positions.size() * d_model
};

struct LogprobQuery {
    int position = 0;
    std::vector<std::string> candidates;
};

struct ForwardRequest {
    std::string id;
    std::string prompt;
    std::vector<CaptureSpec> captures;
    std::vector<PatchSpec> patches;
    std::vector<HeadId> ablate;
    std::vector<LogprobQuery> return_logprobs_at;
};

struct Activation {
    HeadId head;
    std::vector<int> positions;
    std::vector<float> values;
};

struct LogprobAnswer {
    int position = 0;
    std::vector<std::string> candidates;
    std::vector<double> logprobs;
};

struct ForwardResult {
    std::string id;
    int n_tokens = 0;
    std::vector<Activation> captures;
    std::vector<LogprobAnswer> logprobs;
};

struct GenerateRequest {
    std::string id;
    std::string prompt;
    int max_tokens = 64;
    std::vector<HeadId> ablate;
    std::vector<std::string> stop;  // generation ends once the text contains one
};

struct GenerateResult {
    std::string id;
    std::string text;
    std::vector<std::string> tokens;
    std::vector<double> logprobs;     // greedy choice per generated token
    std::vector<TokenSpan> offsets;   // into text
};

class HookableModel {
public:
    virtual ~HookableModel() = default;
    virtual Capabilities capabilities() = 0;
    virtual Tokenization tokenize(const std::string& text) = 0;
    virtual ForwardResult forward(const ForwardRequest& request) = 0;
    virtual GenerateResult generate(const GenerateRequest& request) = 0;
};

// base64 (RFC 4648, padded) of float32 little-endian.
std::string encode_floats(const std::vector<float>& values);
std::vector<float> decode_floats(std::string_view b64);

// Shape and disjointness checks shared by every backend.
void validate_request(const Capabilities& caps, int n_tokens, const ForwardRequest& request);

// Checked tokenization: throws AlignmentError unless the offsets partition text.
Tokenization tokenize_with_offsets(HookableModel& model, const std::string& text);
bool offsets_partition(const Tokenization& t, std::size_t text_size);

struct SpanMapping {
    std::vector<int> tokens;  // minimal covering token set, ascending
    bool hazard = false;      // covering tokens spill past the span edges
    std::string error;        // non-empty when the span cannot be mapped
};

std::vector<SpanMapping> map_spans(const Tokenization& tokens,
                                   const std::vector<TokenSpan>& spans);

// JSON codecs. Requests and responses always carry protocol_version; readers
// reject other versions with ProtocolError.
json to_json(const Capabilities& c);
Capabilities capabilities_from_json(const json& j);
json to_json(const HeadId& h);
HeadId head_from_json(const json& j);
json tokenize_request_json(const std::string& id, const std::string& text);
json to_json(const Tokenization& t, const std::string& id);
Tokenization tokenization_from_json(const json& j);
json to_json(const ForwardRequest& r);
ForwardRequest forward_request_from_json(const json& j);
json to_json(const ForwardResult& r);
ForwardResult forward_result_from_json(const json& j);
json to_json(const GenerateRequest& r);
GenerateRequest generate_request_from_json(const json& j);
json to_json(const GenerateResult& r);
GenerateResult generate_result_from_json(const json& j);
json error_json(const std::string& id, const std::string& type, const std::string& message);

}  // namespace circuitlab
