#include "circuitlab/toy_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>

#include "circuitlab/rng.hpp"

namespace circuitlab {

int toy_token_id(char c) {
    if (c == '\n') return 0;
    const auto u = static_cast<unsigned char>(c);
    if (u >= 32 && u <= 126) return u - 31;
    return -1;
}

char toy_token_char(int id) { return id == 0 ? '\n' : static_cast<char>(id + 31); }

struct LayerWeights {
    std::vector<float> ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ToyModel::Weights {
    std::vector<float> tok_embed, pos_embed;
    std::vector<LayerWeights> layers;
    std::vector<float> lnf_g, lnf_b, unembed;

    // Generation (and checksum) order.
    template <typename F>
    void each(F&& f) const {
        f(tok_embed);
        f(pos_embed);
        for (auto& l : layers) {
            for (const auto* v : {&l.ln1_g, &l.ln1_b, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_g, &l.ln2_b,
                            &l.w1, &l.b1, &l.w2, &l.b2}) {
                f(*v);
            }
        }
        f(lnf_g);
        f(lnf_b);
        f(unembed);
    }
};

struct ToyModel::State {
    int n = 0;
    std::vector<std::vector<float>> x;     // [L+1]
    std::vector<std::vector<float>> k, v;  // [L]
    std::vector<std::vector<float>> a;     // [L*J]
    std::vector<std::vector<float>> m;     // [L]
};

namespace {

using Weights = ToyModel::Weights;
using State = ToyModel::State;

void fill_uniform(std::vector<float>& v, std::size_t n, Rng& rng, double scale, double center = 0.0) {
    v.resize(n);
    // Uniform with standard deviation `scale`.
    const double half = scale * std::sqrt(3.0);
    for (auto& x : v) x = static_cast<float>(center + (2.0 * rng.unit() - 1.0) * half);
}

void layer_norm(const float* in, const std::vector<float>& g, const std::vector<float>& b, int d,
                float* out) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += in[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int i = 0; i < d; ++i) {
        out[i] = static_cast<float>((in[i] - mean) * inv) * g[i] + b[i];
    }
}

// out[c] = sum_r in[r] * w[r * cols + c]
void matvec(const float* in, const std::vector<float>& w, int rows, int cols, float* out) {
    std::fill(out, out + cols, 0.0f);
    for (int r = 0; r < rows; ++r) {
        const float s = in[r];
        const float* row = &w[static_cast<std::size_t>(r) * cols];
        for (int c = 0; c < cols; ++c) out[c] += s * row[c];
    }
}

float gelu(float x) {
    return 0.5f * x * (1.0f + std::tanh(0.7978845608f * (x + 0.044715f * x * x * x)));
}

struct Hooks {
    std::vector<char> ablated;               // [L*J]
    std::vector<const PatchSpec*> patch;     // [L*J]
};

Hooks make_hooks(const ToyConfig& c, const std::vector<HeadId>& ablate,
                 const std::vector<PatchSpec>& patches) {
    const std::size_t n = static_cast<std::size_t>(c.n_layers * c.n_heads);
    Hooks h{std::vector<char>(n, 0), std::vector<const PatchSpec*>(n, nullptr)};
    for (const auto& a : ablate) h.ablated[a.layer * c.n_heads + a.head] = 1;
    for (const auto& p : patches) h.patch[p.head.layer * c.n_heads + p.head.head] = &p;
    return h;
}

State empty_state(const ToyConfig& c) {
    State s;
    s.x.resize(c.n_layers + 1);
    s.k.resize(c.n_layers);
    s.v.resize(c.n_layers);
    s.a.resize(c.n_layers * c.n_heads);
    s.m.resize(c.n_layers);
    return s;
}

State prefix_of(const State& full, int p) {
    State s;
    const auto cut = [p, &full](const std::vector<std::vector<float>>& src) {
        std::vector<std::vector<float>> out(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            const std::size_t len = full.n ? src[i].size() / full.n * p : 0;
            out[i].assign(src[i].begin(), src[i].begin() + static_cast<std::ptrdiff_t>(len));
        }
        return out;
    };
    s.n = p;
    s.x = cut(full.x);
    s.k = cut(full.k);
    s.v = cut(full.v);
    s.a = cut(full.a);
    s.m = cut(full.m);
    return s;
}

// Appends one position. Each position is computed the same way regardless of
// how the prefix was obtained.
void append(const Weights& w, const ToyConfig& c, State& s, int token, const Hooks& hooks) {
    const int d = c.d_model();
    const int dh = c.d_head;
    const int J = c.n_heads;
    const int f = d * c.mlp_ratio;
    const int t = s.n;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    std::vector<float> x(d), hn(d), q(d), kk(d), vv(d), o(dh), a(d), h(d), u(f), mm(d), scores(t + 1);
    for (int i = 0; i < d; ++i) {
        x[i] = w.tok_embed[static_cast<std::size_t>(token) * d + i] +
               w.pos_embed[static_cast<std::size_t>(t) * d + i];
    }
    s.x[0].insert(s.x[0].end(), x.begin(), x.end());

    for (int l = 0; l < c.n_layers; ++l) {
        const auto& lw = w.layers[l];
        layer_norm(x.data(), lw.ln1_g, lw.ln1_b, d, hn.data());
        matvec(hn.data(), lw.wq, d, d, q.data());
        matvec(hn.data(), lw.wk, d, d, kk.data());
        matvec(hn.data(), lw.wv, d, d, vv.data());
        s.k[l].insert(s.k[l].end(), kk.begin(), kk.end());
        s.v[l].insert(s.v[l].end(), vv.begin(), vv.end());

        h = x;
        for (int j = 0; j < J; ++j) {
            const int cell = l * J + j;
            bool done = false;
            if (hooks.ablated[cell]) {
                std::fill(a.begin(), a.end(), 0.0f);
                done = true;
            } else if (const PatchSpec* p = hooks.patch[cell]) {
                auto it = std::lower_bound(p->positions.begin(), p->positions.end(), t);
                if (it != p->positions.end() && *it == t) {
                    const auto row = static_cast<std::size_t>(it - p->positions.begin()) * d;
                    std::copy(p->values.begin() + row, p->values.begin() + row + d, a.begin());
                    done = true;
                }
            }
            if (!done) {
                float best = -std::numeric_limits<float>::infinity();
                for (int u2 = 0; u2 <= t; ++u2) {
                    const float* key = &s.k[l][static_cast<std::size_t>(u2) * d + j * dh];
                    float dot = 0.0f;
                    for (int i = 0; i < dh; ++i) dot += q[j * dh + i] * key[i];
                    scores[u2] = dot * scale;
                    best = std::max(best, scores[u2]);
                }
                float total = 0.0f;
                for (int u2 = 0; u2 <= t; ++u2) {
                    scores[u2] = std::exp(scores[u2] - best);
                    total += scores[u2];
                }
                std::fill(o.begin(), o.end(), 0.0f);
                for (int u2 = 0; u2 <= t; ++u2) {
                    const float pw = scores[u2] / total;
                    const float* val = &s.v[l][static_cast<std::size_t>(u2) * d + j * dh];
                    for (int i = 0; i < dh; ++i) o[i] += pw * val[i];
                }
                std::fill(a.begin(), a.end(), 0.0f);
                for (int i = 0; i < dh; ++i) {
                    const float* row = &lw.wo[static_cast<std::size_t>(j * dh + i) * d];
                    for (int cc = 0; cc < d; ++cc) a[cc] += o[i] * row[cc];
                }
            }
            s.a[cell].insert(s.a[cell].end(), a.begin(), a.end());
            for (int i = 0; i < d; ++i) h[i] += a[i];
        }

        layer_norm(h.data(), lw.ln2_g, lw.ln2_b, d, hn.data());
        matvec(hn.data(), lw.w1, d, f, u.data());
        for (int i = 0; i < f; ++i) u[i] = gelu(u[i] + lw.b1[i]);
        matvec(u.data(), lw.w2, f, d, mm.data());
        for (int i = 0; i < d; ++i) mm[i] += lw.b2[i];
        s.m[l].insert(s.m[l].end(), mm.begin(), mm.end());

        for (int i = 0; i < d; ++i) x[i] = h[i] + mm[i];
        s.x[l + 1].insert(s.x[l + 1].end(), x.begin(), x.end());
    }
    ++s.n;
}

// Natural-log next-token distribution after position t.
std::vector<double> log_softmax_at(const Weights& w, const ToyConfig& c, const State& s, int t) {
    const int d = c.d_model();
    std::vector<float> hn(d), logits(kToyVocabSize);
    layer_norm(&s.x[c.n_layers][static_cast<std::size_t>(t) * d], w.lnf_g, w.lnf_b, d, hn.data());
    matvec(hn.data(), w.unembed, d, kToyVocabSize, logits.data());
    double best = logits[0];
    for (float z : logits) best = std::max(best, static_cast<double>(z));
    double total = 0.0;
    for (float z : logits) total += std::exp(z - best);
    const double log_total = std::log(total) + best;
    std::vector<double> out(kToyVocabSize);
    for (int i = 0; i < kToyVocabSize; ++i) out[i] = logits[i] - log_total;
    return out;
}

std::vector<HeadId> sorted_unique(std::vector<HeadId> heads) {
    std::sort(heads.begin(), heads.end());
    heads.erase(std::unique(heads.begin(), heads.end()), heads.end());
    return heads;
}

constexpr std::size_t kCacheSize = 8;

}  // namespace

ToyModel::ToyModel(const ToyConfig& config) : config_(config) {
    if (config.n_layers <= 0 || config.n_heads <= 0 || config.d_head <= 0 ||
        config.mlp_ratio <= 0 || config.max_seq_len <= 0) {
        throw std::invalid_argument("toy model shape must be positive");
    }
    const int d = config.d_model();
    const int f = d * config.mlp_ratio;
    const std::size_t dd = static_cast<std::size_t>(d) * d;
    auto w = std::make_shared<Weights>();
    Rng rng(config.seed);
    const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double inv_f = 1.0 / std::sqrt(static_cast<double>(f));
    fill_uniform(w->tok_embed, static_cast<std::size_t>(kToyVocabSize) * d, rng, 1.0);
    fill_uniform(w->pos_embed, static_cast<std::size_t>(config.max_seq_len) * d, rng, 0.5);
    w->layers.resize(config.n_layers);
    for (auto& l : w->layers) {
        fill_uniform(l.ln1_g, d, rng, 0.1, 1.0);
        fill_uniform(l.ln1_b, d, rng, 0.1);
        fill_uniform(l.wq, dd, rng, 2.0 * inv_d);
        fill_uniform(l.wk, dd, rng, 2.0 * inv_d);
        fill_uniform(l.wv, dd, rng, inv_d);
        fill_uniform(l.wo, dd, rng, inv_d);
        fill_uniform(l.ln2_g, d, rng, 0.1, 1.0);
        fill_uniform(l.ln2_b, d, rng, 0.1);
        fill_uniform(l.w1, static_cast<std::size_t>(d) * f, rng, inv_d);
        fill_uniform(l.b1, f, rng, 0.1);
        fill_uniform(l.w2, static_cast<std::size_t>(f) * d, rng, inv_f);
        fill_uniform(l.b2, d, rng, 0.1);
    }
    fill_uniform(w->lnf_g, d, rng, 0.1, 1.0);
    fill_uniform(w->lnf_b, d, rng, 0.1);
    fill_uniform(w->unembed, static_cast<std::size_t>(d) * kToyVocabSize, rng, 2.0 * inv_d);
    weights_ = std::move(w);
}

ToyModel::ToyModel(const ToyConfig& config, std::shared_ptr<const Weights> weights)
    : config_(config), weights_(std::move(weights)) {}

Capabilities ToyModel::capabilities() {
    Capabilities c;
    c.model_id = "toy-L" + std::to_string(config_.n_layers) + "-J" +
                 std::to_string(config_.n_heads) + "-d" + std::to_string(config_.d_model()) +
                 "-s" + std::to_string(config_.seed);
    c.n_layers = config_.n_layers;
    c.n_heads = config_.n_heads;
    c.d_model = config_.d_model();
    c.d_head = config_.d_head;
    c.max_seq_len = config_.max_seq_len;
    std::uint64_t h = 1469598103934665603ull;
    for (int i = 0; i < kToyVocabSize; ++i) {
        h ^= static_cast<unsigned char>(toy_token_char(i));
        h *= 1099511628211ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "char96-%016llx", static_cast<unsigned long long>(h));
    c.tokenizer_fingerprint = buf;
    c.float_tolerance = 1e-6;
    return c;
}

std::vector<int> ToyModel::encode(const std::string& text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const int id = toy_token_id(text[i]);
        if (id < 0) {
            throw UnknownChar("character code " +
                              std::to_string(static_cast<unsigned char>(text[i])) +
                              " at offset " + std::to_string(i) + " is not in the vocabulary");
        }
        out.push_back(id);
    }
    return out;
}

Tokenization ToyModel::tokenize(const std::string& text) {
    encode(text);
    Tokenization t;
    for (std::size_t i = 0; i < text.size(); ++i) {
        t.tokens.emplace_back(1, text[i]);
        t.offsets.push_back({i, i + 1});
    }
    return t;
}

std::shared_ptr<const ToyModel::State> ToyModel::plain_run(const std::vector<int>& tokens,
                                                           const std::vector<HeadId>& ablate) {
    std::string key;
    key.reserve(tokens.size() + 8 * ablate.size() + 1);
    for (int t : tokens) key += toy_token_char(t);
    key += '\x01';
    for (const auto& h : ablate) key += to_string(h) + ";";
    {
        std::lock_guard lock(cache_mutex_);
        for (auto it = cache_.begin(); it != cache_.end(); ++it) {
            if (it->key == key) {
                cache_.splice(cache_.begin(), cache_, it);
                return cache_.front().state;
            }
        }
    }
    auto state = std::make_shared<State>(empty_state(config_));
    const Hooks hooks = make_hooks(config_, ablate, {});
    for (int t : tokens) append(*weights_, config_, *state, t, hooks);
    std::lock_guard lock(cache_mutex_);
    cache_.push_front({std::move(key), state});
    if (cache_.size() > kCacheSize) cache_.pop_back();
    return state;
}

ForwardResult ToyModel::forward(const ForwardRequest& request) {
    const std::vector<int> tokens = encode(request.prompt);
    const int n = static_cast<int>(tokens.size());
    const Capabilities caps = capabilities();
    validate_request(caps, n, request);
    for (const auto& q : request.return_logprobs_at) {
        for (const auto& cand : q.candidates) {
            if (cand.size() != 1 || toy_token_id(cand[0]) < 0) {
                throw ShapeError("candidate \"" + cand + "\" is not a single token");
            }
        }
    }
    const auto ablate = sorted_unique(request.ablate);
    std::shared_ptr<const State> state = plain_run(tokens, ablate);

    int first_patch = n;
    for (const auto& p : request.patches) {
        if (!p.positions.empty()) first_patch = std::min(first_patch, p.positions.front());
    }
    if (first_patch < n) {
        auto patched = std::make_shared<State>(prefix_of(*state, first_patch));
        const Hooks hooks = make_hooks(config_, ablate, request.patches);
        for (int t = first_patch; t < n; ++t) append(*weights_, config_, *patched, tokens[t], hooks);
        state = std::move(patched);
    }

    const int d = config_.d_model();
    ForwardResult r;
    r.id = request.id;
    r.n_tokens = n;
    for (const auto& c : request.captures) {
        Activation act{c.head, c.positions, {}};
        const auto& src = state->a[c.head.layer * config_.n_heads + c.head.head];
        act.values.reserve(c.positions.size() * d);
        for (int p : c.positions) {
            const auto at = src.begin() + static_cast<std::ptrdiff_t>(p) * d;
            act.values.insert(act.values.end(), at, at + d);
        }
        r.captures.push_back(std::move(act));
    }
    for (const auto& q : request.return_logprobs_at) {
        const auto dist = log_softmax_at(*weights_, config_, *state, q.position);
        LogprobAnswer ans{q.position, q.candidates, {}};
        for (const auto& cand : q.candidates) ans.logprobs.push_back(dist[toy_token_id(cand[0])]);
        r.logprobs.push_back(std::move(ans));
    }
    return r;
}

GenerateResult ToyModel::generate(const GenerateRequest& request) {
    const std::vector<int> tokens = encode(request.prompt);
    if (tokens.empty()) throw ShapeError("generate needs a non-empty prompt");
    ForwardRequest shape;
    shape.ablate = request.ablate;
    validate_request(capabilities(), static_cast<int>(tokens.size()), shape);
    if (request.max_tokens < 0) throw ShapeError("max_tokens must be non-negative");

    const auto ablate = sorted_unique(request.ablate);
    State state = *plain_run(tokens, ablate);
    const Hooks hooks = make_hooks(config_, ablate, {});

    GenerateResult r;
    r.id = request.id;
    for (int i = 0; i < request.max_tokens && state.n < config_.max_seq_len; ++i) {
        if (i > 0) append(*weights_, config_, state, toy_token_id(r.text.back()), hooks);
        const auto dist = log_softmax_at(*weights_, config_, state, state.n - 1);
        const int best = static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        const char ch = toy_token_char(best);
        r.offsets.push_back({r.text.size(), r.text.size() + 1});
        r.text += ch;
        r.tokens.emplace_back(1, ch);
        r.logprobs.push_back(dist[best]);
        bool stop = false;
        for (const auto& s : request.stop) {
            if (!s.empty() && r.text.find(s) != std::string::npos) stop = true;
        }
        if (stop) break;
    }
    return r;
}

ToyTrace ToyModel::trace(const std::string& prompt, const std::vector<HeadId>& ablate) {
    const auto tokens = encode(prompt);
    ForwardRequest shape;
    shape.ablate = ablate;
    validate_request(capabilities(), static_cast<int>(tokens.size()), shape);
    const auto state = plain_run(tokens, sorted_unique(ablate));
    return ToyTrace{state->n, state->x, state->a, state->m};
}

ToyModel ToyModel::masked_clone(const std::vector<HeadId>& heads) const {
    auto w = std::make_shared<Weights>(*weights_);
    const int d = config_.d_model();
    for (const auto& h : heads) {
        if (h.layer < 0 || h.layer >= config_.n_layers || h.head < 0 || h.head >= config_.n_heads) {
            throw ShapeError("head " + to_string(h) + " outside the model");
        }
        auto& wo = w->layers[h.layer].wo;
        const auto begin = static_cast<std::size_t>(h.head * config_.d_head) * d;
        std::fill(wo.begin() + begin, wo.begin() + begin + static_cast<std::size_t>(config_.d_head) * d,
                  0.0f);
    }
    return ToyModel(config_, std::move(w));
}

std::uint64_t ToyModel::weight_checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    weights_->each([&h](const std::vector<float>& v) {
        for (float x : v) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
            for (int b = 0; b < 4; ++b) {
                h ^= (bits >> (8 * b)) & 0xFF;
                h *= 1099511628211ull;
            }
        }
    });
    return h;
}

}  // namespace circuitlab
