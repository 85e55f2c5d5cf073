#pragma once

// JSON codecs shared by the dataset, pair, score and protocol files.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "circuitlab/logic.hpp"
#include "circuitlab/prompt.hpp"

namespace circuitlab {

using json = nlohmann::json;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json to_json(const Rule& r);
Rule rule_from_json(const json& j);
json to_json(const Problem& p);
Problem problem_from_json(const json& j);
json to_json(const InferenceStep& s);
InferenceStep step_from_json(const json& j);
json to_json(const ReasoningChain& c);
ReasoningChain chain_from_json(const json& j);
json to_json(const RoleSpan& s);
RoleSpan span_from_json(const json& j);
json to_json(const PromptShot& s);
PromptShot shot_from_json(const json& j);

// Non-Syntax spans only; Syntax is the complement and is rebuilt by tag_roles.
json spans_to_json(const std::vector<RoleSpan>& spans);

// Rebuilds a PromptDoc from its shots (text and spans are re-rendered).
PromptDoc doc_from_shots(std::vector<PromptShot> shots);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);
json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);

}  // namespace circuitlab
