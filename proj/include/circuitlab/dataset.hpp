#pragma once

// k-shot dataset synthesis and its JSON-lines record format.
//
// Record fields:
//   id, k, seed            record index, shot count, per-record seed
//   prompt_text            full rendered document, gold query chain included
//   query_prompt_len       byte length of the generation prompt (everything up
//                          to and including the query's "# (Answer)" line)
//   shots[]                {problem, chain[, cutoff]} per shot, query last
//   role_spans[]           non-Syntax spans {role, start, end, shot, step}
//   gold_chain, question   the query's gold chain and question letter
//   generation_attempts    problem-generator attempts spent on this record
// Unknown fields are ignored on read.

#include <cstdint>
#include <functional>
#include <filesystem>
#include <string>
#include <vector>

#include "circuitlab/logic.hpp"
#include "circuitlab/prompt.hpp"
#include "circuitlab/serialize.hpp"

namespace circuitlab {

struct DatasetRecord {
    int id = 0;
    int k = 0;
    std::uint64_t seed = 0;
    PromptDoc doc;
    int generation_attempts = 0;

    const ReasoningChain& gold_chain() const { return doc.query().chain; }
    const Problem& problem() const { return doc.query().problem; }
    Premise question() const { return doc.query().problem.question; }
    // Text a model is asked to continue: demonstrations plus the query's
    // problem statement.
    std::size_t query_prompt_len() const;
    std::string query_prompt() const { return doc.text.substr(0, query_prompt_len()); }
};

// count problems with their gold chains, problem i seeded by derive_seed(seed, i).
std::vector<Demo> generate_shots(std::uint64_t seed, int count, const GeneratorConfig& config,
                                 int* attempts = nullptr);

// demo_config, when given, replaces config for the k demonstrations.
DatasetRecord make_record(int id, int k, std::uint64_t record_seed, const GeneratorConfig& config,
                          const GeneratorConfig* demo_config = nullptr);

// n records; record i uses derive_seed(seed, i), so output is identical for any
// jobs value.
std::vector<DatasetRecord> synth_dataset(int k, int n, std::uint64_t seed,
                                         const GeneratorConfig& config, int jobs = 1);

json to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const json& j);

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

// Runs fn(i) for i in [0, n) on up to jobs threads.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace circuitlab
