#pragma once

// Small decoder-only transformer with per-head hooks, used as an offline
// backend. Pre-norm blocks, learned positional embeddings, one token per
// character. Weights are random (seeded) and never trained.
//
// Per layer l and position t:
//   a_lj = head j's attention output times its slice of W_O   (d_model wide)
//   h    = x_l + sum_j a_lj
//   m_l  = MLP(LN2(h))
//   x_{l+1} = h + m_l
// Patches replace a_lj before the sum; ablation sets it to zero everywhere.

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "circuitlab/protocol.hpp"

namespace circuitlab {

struct ToyConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_head = 8;
    int mlp_ratio = 4;
    int max_seq_len = 16384;
    std::uint64_t seed = 0;

    int d_model() const { return n_heads * d_head; }
};

// '\n' then printable ASCII 32..126.
inline constexpr int kToyVocabSize = 96;
int toy_token_id(char c);  // -1 when outside the vocabulary
char toy_token_char(int id);

// Hidden states and per-component contributions of one run, row-major with
// d_model floats per position.
struct ToyTrace {
    int n_tokens = 0;
    std::vector<std::vector<float>> hidden;  // [L+1]: residual entering layer l; [L] is final
    std::vector<std::vector<float>> heads;   // [l * J + j]
    std::vector<std::vector<float>> mlp;     // [l]
};

class ToyModel : public HookableModel {
public:
    explicit ToyModel(const ToyConfig& config = {});

    Capabilities capabilities() override;
    Tokenization tokenize(const std::string& text) override;
    ForwardResult forward(const ForwardRequest& request) override;
    GenerateResult generate(const GenerateRequest& request) override;

    const ToyConfig& config() const { return config_; }
    std::vector<int> encode(const std::string& text) const;  // throws UnknownChar

    ToyTrace trace(const std::string& prompt, const std::vector<HeadId>& ablate = {});

    // Copy whose listed heads have their W_O rows zeroed.
    ToyModel masked_clone(const std::vector<HeadId>& heads) const;

    // FNV-1a over every weight's bit pattern in generation order.
    std::uint64_t weight_checksum() const;

    struct Weights;
    struct State;

private:
    ToyModel(const ToyConfig& config, std::shared_ptr<const Weights> weights);

    std::shared_ptr<const State> plain_run(const std::vector<int>& tokens,
                                           const std::vector<HeadId>& ablate);

    ToyConfig config_;
    std::shared_ptr<const Weights> weights_;

    // Hook-free runs keyed by (prompt, ablation set). Prefix positions before
    // the first patched position are reused from here; results are identical
    // to a full recomputation since each position is computed the same way.
    struct CacheEntry {
        std::string key;
        std::shared_ptr<const State> state;
    };
    std::mutex cache_mutex_;
    std::list<CacheEntry> cache_;
};

}  // namespace circuitlab
