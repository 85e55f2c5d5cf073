#pragma once

// Causal mediation over a hookable model: activation patching (AIE), path
// patching, head-role aggregation, circuit networks and head ablation.
//
// All measured quantities are probabilities of the first token of the clean
// target, taken at the last prompt token.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "circuitlab/counterfactual.hpp"
#include "circuitlab/dataset.hpp"
#include "circuitlab/eval.hpp"
#include "circuitlab/protocol.hpp"

namespace circuitlab {

enum class HeadRole {
    ReadFact,
    SelectPremise,
    ReadRuleCondition,
    MatchRuleCondition,
    ReadRule,
    SelectRule,
    ReadTraversalAlg,
    ImplementTraversalAlg,
};

inline constexpr HeadRole kAllHeadRoles[] = {
    HeadRole::ReadFact,         HeadRole::SelectPremise,    HeadRole::ReadRuleCondition,
    HeadRole::MatchRuleCondition, HeadRole::ReadRule,       HeadRole::SelectRule,
    HeadRole::ReadTraversalAlg, HeadRole::ImplementTraversalAlg};

std::string to_string(HeadRole role);
HeadRole head_role_from_string(const std::string& s);

// Reading heads are found by patching the causal spans, decision heads by
// patching the token right before the component.
enum class PositionMode { CausalSpan, PrecedingToken };

std::string to_string(PositionMode mode);  // "causal-span" / "preceding-token"
PositionMode position_mode_from_string(const std::string& s);

HeadRole role_for(CorruptionKind kind, PositionMode mode);
CorruptionKind kind_of(HeadRole role);
PositionMode mode_of(HeadRole role);

class LayerOrderError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct AIEMatrix {
    HeadRole role = HeadRole::ReadFact;
    std::string model_id;
    int n_layers = 0;
    int n_heads = 0;
    std::vector<double> scores;  // row-major [layer][head]
    int n_pairs = 0;
    int skipped = 0;

    double at(int layer, int head) const { return scores[static_cast<std::size_t>(layer * n_heads + head)]; }
    double at(const HeadId& h) const { return at(h.layer, h.head); }
};

// A pair resolved against a tokenizer.
struct PreparedPair {
    int index = 0;  // position in the input list
    std::string clean_text;
    std::string corrupted_text;
    std::vector<int> positions;  // patched token positions, ascending
    int readout = 0;             // last prompt token
    std::string target_token;    // first token of the clean target
};

struct Preparation {
    std::vector<PreparedPair> usable;
    std::vector<std::string> skipped;  // one reason per unusable pair
};

// Skips (and explains) pairs whose texts tokenize to different lengths, whose
// spans map to different or spilling token sets, or whose target token does
// not follow the prompt tokens.
Preparation prepare_pairs(HookableModel& model, const std::vector<PromptPair>& pairs,
                          PositionMode mode);

// Per-head probability deltas for one pair, row-major.
std::vector<double> aie_pair(HookableModel& model, const PreparedPair& pair);

AIEMatrix aie(HookableModel& model, const std::vector<PromptPair>& pairs, PositionMode mode,
              int jobs = 1);

// Mean over pairs; every column is summed in sorted order so the result does
// not depend on pair order.
std::vector<double> mean_of(const std::vector<std::vector<double>>& per_pair, std::size_t width);

// k highest scores; ties by (layer, head).
std::vector<HeadId> select_top_heads(const AIEMatrix& matrix, int k);

// Per layer, the mean of its ceil(pct * J) largest scores.
std::vector<double> layer_role_score(const AIEMatrix& matrix, double pct = 0.15);

struct PathEdgeScore {
    HeadId emit;
    HeadId rec;
    double score = 0.0;
    int n_pairs = 0;
    std::optional<CorruptionKind> kind;
};

// Two passes on the clean prompt: emit <- its corrupted-run activation while
// capturing rec, then rec <- that capture alone. Returns p(pass 2) - p(clean).
// Does not check layer order.
double path_patch_pair_unchecked(HookableModel& model, const PreparedPair& pair, const HeadId& emit,
                                 const HeadId& rec);

PathEdgeScore path_patch(HookableModel& model, const std::vector<PromptPair>& pairs,
                         const HeadId& emit, const HeadId& rec, PositionMode mode, int jobs = 1);

// Every ordered node pair with emit.layer < rec.layer, strongest |score| first.
std::vector<PathEdgeScore> path_edges(HookableModel& model, const std::vector<PromptPair>& pairs,
                                      const std::vector<HeadId>& nodes, PositionMode mode,
                                      int jobs = 1);

struct CircuitNode {
    HeadId head;
    std::vector<HeadRole> roles;
};

struct CircuitGraph {
    std::vector<CircuitNode> nodes;  // (layer, head) order
    std::vector<PathEdgeScore> edges;
};

std::vector<CircuitNode> circuit_nodes(const std::vector<AIEMatrix>& matrices, int top_heads = 5);

// Keeps the top_edges strongest (by |score|) edges of each corruption kind
// whose endpoints are both nodes and whose layers increase.
CircuitGraph circuit_network(const std::vector<AIEMatrix>& matrices,
                             const std::vector<PathEdgeScore>& candidate_edges, int top_heads = 5,
                             int top_edges = 10);

// Same, computing the edges on the model from pairs of each kind.
CircuitGraph circuit_network(HookableModel& model, const std::vector<AIEMatrix>& matrices,
                             const std::map<CorruptionKind, std::vector<PromptPair>>& pairs,
                             int top_heads = 5, int top_edges = 10,
                             PositionMode mode = PositionMode::PrecedingToken, int jobs = 1);

enum class AblationName { Baseline, Rand, RS, PS, PST, ThreeRoles };

std::string to_string(AblationName name);  // baseline rand rs ps pst 3roles
AblationName ablation_from_string(const std::string& s);

struct AblationConfig {
    AblationName name = AblationName::Baseline;
    int top_k = 5;
    double rand_fraction = 0.03;
    int rand_runs = 3;
    std::uint64_t seed = 0;
};

// Roles whose top-k heads make up a named set (empty for baseline and rand).
std::vector<HeadRole> roles_of(AblationName name);

// Head set for one run; rand draws round(fraction * L * J) heads (at least
// one) uniformly without replacement from derive_seed(seed, run).
std::vector<HeadId> ablation_heads(const AblationConfig& config,
                                   const std::map<HeadRole, std::vector<HeadId>>& role_heads,
                                   const Capabilities& caps, int run = 0);

struct MetricRow {
    std::string config;
    std::string dataset;
    std::string metric;
    double value = 0.0;
    int n = 0;
    std::uint64_t seed = 0;
};

struct AblationResult {
    std::vector<std::vector<HeadId>> head_sets;  // one per run
    std::vector<MetricRow> rows;
    int failed = 0;  // records whose generation raised a protocol error
};

AblationResult ablate_eval(HookableModel& model, const std::vector<DatasetRecord>& dataset,
                           const std::string& dataset_name, const AblationConfig& config,
                           const std::map<HeadRole, std::vector<HeadId>>& role_heads, int jobs = 1);

// Files.
json to_json(const AIEMatrix& m);
AIEMatrix aie_from_json(const json& j);
json to_json(const PathEdgeScore& e);
PathEdgeScore edge_from_json(const json& j);
json edges_to_json(const std::vector<PathEdgeScore>& edges);
std::vector<PathEdgeScore> edges_from_json(const json& j);
json to_json(const CircuitGraph& g);
CircuitGraph circuit_from_json(const json& j);

// RFC 4180, header config,dataset,metric,value,n,seed.
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> metrics_from_csv(const std::string& text);

}  // namespace circuitlab
