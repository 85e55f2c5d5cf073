#pragma once

// Clean/corrupted prompt pairs for activation patching.
//
// Every edit is length preserving, so a character position means the same
// thing in both texts. Both texts are truncated right before the component of
// interest; the component is the next character the model has to produce.
//
//   c1  a used fact letter is replaced (fact rule and KB lines); the component
//       is the first premise selection whose gold choice changes
//   c2  the last fired one-premise rule Rx loses its conclusion to an unused
//       letter and an unused two-premise rule Ry becomes "If V, B then D"; the
//       component is the termination char after V (clean ']', corrupted ',')
//   c3  one condition of a fired rule is replaced by an unseen letter; the
//       component is the rule-number digits of the first diverging step
//   c4  demonstrations are re-derived under the other traversal policy; the
//       component is the first query premise where the two policies differ

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "circuitlab/dataset.hpp"
#include "circuitlab/logic.hpp"
#include "circuitlab/prompt.hpp"
#include "circuitlab/rng.hpp"
#include "circuitlab/serialize.hpp"

namespace circuitlab {

enum class CorruptionKind { C1, C2, C3, C4 };

inline constexpr CorruptionKind kAllKinds[] = {CorruptionKind::C1, CorruptionKind::C2,
                                               CorruptionKind::C3, CorruptionKind::C4};

std::string to_string(CorruptionKind kind);       // "c1" .. "c4"
std::string long_name(CorruptionKind kind);       // "C1_Fact_PremiseSelection" ..
CorruptionKind kind_from_string(const std::string& s);  // accepts either form

struct CharRange {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - start; }
    bool contains(std::size_t p) const { return p >= start && p < end; }
    bool operator==(const CharRange&) const = default;
};

struct PromptPair {
    CorruptionKind kind = CorruptionKind::C1;
    PromptDoc clean;      // truncated at the component
    PromptDoc corrupted;  // same truncation point
    std::vector<CharRange> causal_spans;
    CharRange component_span;
    std::size_t preceding_char = 0;
    std::string clean_target;
    std::string corrupted_target;
    std::uint64_t seed = 0;
    int attempt = 0;
};

struct CorruptOptions {
    // Oracle used to continue the corrupted query, and the policy the clean
    // demonstrations were derived with (c4 re-derives with the other one).
    TraversalPolicy policy{};
    std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
};

// Random corruption; choices are tried in random order until one yields a
// valid pair. Absent when none does.
std::optional<PromptPair> corrupt(const PromptDoc& doc, CorruptionKind kind, Rng& rng,
                                  const CorruptOptions& options = {});

// Explicit variants (deterministic; absent when the edit does not produce a
// structurally valid pair).
std::optional<PromptPair> corrupt_fact(const PromptDoc& doc, int fact_rule_id, Premise replacement,
                                       const CorruptOptions& options = {});
std::optional<PromptPair> corrupt_termination(const PromptDoc& doc, int ry_rule_id,
                                              Premise second_condition, Premise new_conclusion,
                                              const CorruptOptions& options = {});
std::optional<PromptPair> corrupt_rule(const PromptDoc& doc, int rx_rule_id, int condition_index,
                                       Premise replacement, const CorruptOptions& options = {});
std::optional<PromptPair> corrupt_traversal(const PromptDoc& doc,
                                            const CorruptOptions& options = {});

// Rule Rx used by c2: the last fired rule with a single condition, if any.
std::optional<int> last_single_premise_rule(const ReasoningChain& chain, const Problem& problem);

// Structural checks; when why is given it receives the first failure.
bool validate_structure(const PromptPair& pair, std::string* why = nullptr);

class InsufficientYield : public std::runtime_error {
public:
    InsufficientYield(const std::string& what, int produced, int attempts)
        : std::runtime_error(what), produced_(produced), attempts_(attempts) {}
    int produced() const { return produced_; }
    int attempts() const { return attempts_; }

private:
    int produced_;
    int attempts_;
};

struct PairGeneration {
    std::vector<PromptPair> pairs;
    int attempts = 0;
    double yield() const { return attempts ? static_cast<double>(pairs.size()) / attempts : 0.0; }
};

// Generate-corrupt-validate loop bounded by 10n attempts. Attempt i draws its
// problems from derive_seed(seed, i); results are identical for any jobs.
// Throws InsufficientYield when fewer than n pairs come out.
PairGeneration generate_pairs(int n, int k, CorruptionKind kind, std::uint64_t seed,
                              const GeneratorConfig& config, int jobs = 1,
                              const CorruptOptions& options = {});

json to_json(const PromptPair& pair, int id);
PromptPair pair_from_json(const json& j);
void write_pairs(const std::filesystem::path& path, const std::vector<PromptPair>& pairs);
std::vector<PromptPair> read_pairs(const std::filesystem::path& path);

}  // namespace circuitlab
