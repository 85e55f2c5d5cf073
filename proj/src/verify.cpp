#include "circuitlab/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "circuitlab/cma.hpp"
#include "circuitlab/http_backend.hpp"
#include "circuitlab/rng.hpp"

namespace circuitlab {

namespace {

struct CheckFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw CheckFailed(what);
}

std::string sci(double v) {
    std::ostringstream ss;
    ss.precision(3);
    ss << std::scientific << v;
    return ss.str();
}

std::vector<std::string> vocabulary() {
    std::vector<std::string> out;
    for (int id = 0; id < kToyVocabSize; ++id) out.emplace_back(1, toy_token_char(id));
    return out;
}

// Log-probabilities of every vocabulary token at each position.
std::vector<double> logprobs(HookableModel& m, const std::string& prompt, const std::vector<int>& at,
                             std::vector<PatchSpec> patches = {}, std::vector<HeadId> ablate = {},
                             std::vector<CaptureSpec> captures = {}) {
    ForwardRequest r;
    r.prompt = prompt;
    r.patches = std::move(patches);
    r.ablate = std::move(ablate);
    r.captures = std::move(captures);
    const auto vocab = vocabulary();
    for (int p : at) r.return_logprobs_at.push_back({p, vocab});
    std::vector<double> out;
    for (const auto& a : m.forward(r).logprobs) out.insert(out.end(), a.logprobs.begin(), a.logprobs.end());
    return out;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "result sizes differ");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

std::vector<int> all_positions(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    return p;
}

std::vector<HeadId> all_heads(const ToyConfig& c) {
    std::vector<HeadId> out;
    for (int l = 0; l < c.n_layers; ++l) {
        for (int j = 0; j < c.n_heads; ++j) out.push_back({l, j});
    }
    return out;
}

double first_token_prob(HookableModel& m, const PreparedPair& p, std::vector<PatchSpec> patches = {}) {
    ForwardRequest r;
    r.prompt = p.clean_text;
    r.patches = std::move(patches);
    r.return_logprobs_at = {{p.readout, {p.target_token}}};
    return std::exp(m.forward(r).logprobs[0].logprobs[0]);
}

std::vector<float> capture(HookableModel& m, const std::string& prompt, const HeadId& h,
                           const std::vector<int>& pos) {
    ForwardRequest r;
    r.prompt = prompt;
    r.captures = {{h, pos}};
    return m.forward(r).captures[0].values;
}

}  // namespace

std::vector<VerifyCheck> toy_verify(const VerifyOptions& options,
                                    const std::function<void(const VerifyCheck&)>& on_check) {
    const ToyConfig& cfg = options.config;
    ToyModel toy(cfg);
    const auto heads = all_heads(cfg);

    GeneratorConfig gen;
    std::map<CorruptionKind, std::vector<PromptPair>> pairs;
    std::map<CorruptionKind, std::vector<PromptPair>> same;
    for (CorruptionKind kind : kAllKinds) {
        pairs[kind] = generate_pairs(options.pairs, 1, kind,
                                     derive_seed(options.seed, static_cast<std::uint64_t>(kind)), gen)
                          .pairs;
        for (auto p : pairs[kind]) {
            p.corrupted = p.clean;
            same[kind].push_back(std::move(p));
        }
    }
    const std::string prompt = pairs[CorruptionKind::C1].front().clean.text;
    const int n = static_cast<int>(prompt.size());
    const int last = n - 1;

    std::vector<std::pair<std::string, std::function<std::string()>>> checks;

    checks.emplace_back("tokenizer_offsets", [&] {
        const auto t = tokenize_with_offsets(toy, prompt);
        require(offsets_partition(t, prompt.size()), "offsets do not partition the text");
        std::string joined;
        for (const auto& s : t.tokens) joined += s;
        require(joined == prompt, "tokens do not reassemble the text");
        require(static_cast<int>(t.tokens.size()) == n, "expected one token per character");
        return std::to_string(n) + " tokens";
    });

    checks.emplace_back("weights_reproducible", [&] {
        ToyModel again(cfg);
        require(again.weight_checksum() == toy.weight_checksum(), "checksums differ");
        require(logprobs(again, prompt, {0}) == logprobs(toy, prompt, {0}), "first logits differ");
        std::ostringstream ss;
        ss << "checksum " << toy.weight_checksum();
        return ss.str();
    });

    checks.emplace_back("softmax_normalization", [&] {
        double worst = 0.0;
        const auto lp = logprobs(toy, prompt, {0, n / 2, last});
        for (int q = 0; q < 3; ++q) {
            double sum = 0.0;
            for (int i = 0; i < kToyVocabSize; ++i) sum += std::exp(lp[static_cast<std::size_t>(q * kToyVocabSize + i)]);
            worst = std::max(worst, std::abs(sum - 1.0));
        }
        require(worst < 1e-6, "probability mass off by " + sci(worst));
        return "max |sum - 1| " + sci(worst);
    });

    checks.emplace_back("hook_transparency", [&] {
        ToyModel fresh(cfg);
        const auto plain = logprobs(fresh, prompt, {last});
        require(logprobs(toy, prompt, {last}) == plain, "cached and fresh runs differ");
        require(logprobs(toy, prompt, {last}, {}, {}, {{heads.back(), {0, last}}}) == plain,
                "a capture changed the output");
        return std::string("bit-identical");
    });

    checks.emplace_back("self_patch", [&] {
        const auto pos = all_positions(n);
        const auto plain = logprobs(toy, prompt, {last});
        double worst = 0.0;
        for (const auto& h : heads) {
            const auto own = capture(toy, prompt, h, pos);
            worst = std::max(worst, max_diff(plain, logprobs(toy, prompt, {last}, {{h, pos, own}})));
        }
        require(worst < 1e-6, "self-patch moved a logprob by " + sci(worst));
        return "max |dlogprob| " + sci(worst);
    });

    checks.emplace_back("residual_decomposition", [&] {
        const auto t = toy.trace(prompt);
        const int d = cfg.d_model();
        double worst = 0.0;
        for (int l = 0; l < cfg.n_layers; ++l) {
            for (int p = 0; p < t.n_tokens; ++p) {
                double err = 0.0, norm = 0.0;
                for (int i = 0; i < d; ++i) {
                    const std::size_t at = static_cast<std::size_t>(p * d + i);
                    double sum = static_cast<double>(t.hidden[l][at]) + t.mlp[l][at];
                    for (int j = 0; j < cfg.n_heads; ++j) sum += t.heads[static_cast<std::size_t>(l * cfg.n_heads + j)][at];
                    const double h = t.hidden[l + 1][at];
                    err += (h - sum) * (h - sum);
                    norm += h * h;
                }
                worst = std::max(worst, std::sqrt(err / norm));
            }
        }
        require(worst < 1e-5, "relative error " + sci(worst));
        return "max relative error " + sci(worst);
    });

    checks.emplace_back("ablation_masked_clone", [&] {
        std::vector<std::vector<HeadId>> sets = {{heads.front()}, {heads.back()}};
        std::vector<HeadId> layer0;
        for (int j = 0; j < cfg.n_heads; ++j) layer0.push_back({0, j});
        sets.push_back(layer0);
        if (heads.size() > 2) sets.push_back({heads[1], heads[heads.size() - 2]});
        double worst = 0.0;
        for (const auto& s : sets) {
            auto clone = toy.masked_clone(s);
            worst = std::max(worst, max_diff(logprobs(toy, prompt, {n / 2, last}, {}, s),
                                             logprobs(clone, prompt, {n / 2, last})));
        }
        require(worst < 1e-6, "difference " + sci(worst));
        return "max |dlogprob| " + sci(worst);
    });

    checks.emplace_back("causality", [&] {
        const int t = n / 2;
        std::string changed = prompt;
        changed[static_cast<std::size_t>(t)] = prompt[static_cast<std::size_t>(t)] == 'Z' ? 'Y' : 'Z';
        const auto before = all_positions(t);
        require(logprobs(toy, prompt, before) == logprobs(toy, changed, before),
                "an earlier position saw a later token");
        require(logprobs(toy, prompt, {t}) != logprobs(toy, changed, {t}), "edited position did not change");
        return "positions < " + std::to_string(t) + " unchanged";
    });

    checks.emplace_back("null_aie", [&] {
        double worst = 0.0;
        for (const auto& [kind, list] : same) {
            for (PositionMode mode : {PositionMode::CausalSpan, PositionMode::PrecedingToken}) {
                const auto m = aie(toy, list, mode);
                require(m.n_pairs == static_cast<int>(list.size()), "identical pairs were skipped");
                double mean = 0.0;
                for (double s : m.scores) mean += std::abs(s);
                worst = std::max(worst, mean / static_cast<double>(m.scores.size()));
            }
        }
        require(worst < 1e-9, "mean |AIE| " + sci(worst));
        return "mean |AIE| " + sci(worst);
    });

    checks.emplace_back("aie_manual_oracle", [&] {
        const auto& pair = pairs[CorruptionKind::C3].front();
        const auto prep = prepare_pairs(toy, {pair}, PositionMode::CausalSpan);
        require(prep.usable.size() == 1, "pair not usable");
        const auto& p = prep.usable.front();
        const auto m = aie(toy, {pair}, PositionMode::CausalSpan);
        PreparedPair corrupted = p;
        corrupted.clean_text = p.corrupted_text;
        const double base = first_token_prob(toy, corrupted);
        for (const auto& h : heads) {
            const auto clean = capture(toy, p.clean_text, h, p.positions);
            const double want = first_token_prob(toy, corrupted, {{h, p.positions, clean}}) - base;
            require(m.at(h) == want, "head " + to_string(h) + " disagrees with the two-pass oracle");
        }
        return std::to_string(heads.size()) + " heads exact";
    });

    checks.emplace_back("aggregation_order_independence", [&] {
        const auto& all = pairs[CorruptionKind::C4];
        const auto a = aie(toy, all, PositionMode::PrecedingToken);
        auto shuffled = all;
        Rng rng(derive_seed(options.seed, 99));
        rng.shuffle(shuffled);
        const auto b = aie(toy, shuffled, PositionMode::PrecedingToken, 3);
        require(a.scores == b.scores, "pair order or job count changed the mean");
        return std::to_string(a.n_pairs) + " pairs, exact";
    });

    checks.emplace_back("path_layer_order", [&] {
        const auto& list = pairs[CorruptionKind::C2];
        for (const auto& [e, r] : std::vector<std::pair<HeadId, HeadId>>{{{1, 0}, {0, 0}}, {{1, 0}, {1, 1}}}) {
            if (e.layer >= cfg.n_layers || r.head >= cfg.n_heads) continue;
            bool thrown = false;
            try {
                path_patch(toy, list, e, r, PositionMode::CausalSpan);
            } catch (const LayerOrderError&) {
                thrown = true;
            }
            require(thrown, "no LayerOrderError for " + to_string(e) + " -> " + to_string(r));
        }
        return std::string("rejected");
    });

    checks.emplace_back("path_degenerate", [&] {
        double worst = 0.0;
        for (int l = 1; l < cfg.n_layers; ++l) {
            for (const auto& [kind, list] : same) {
                const auto e = path_patch(toy, list, {l - 1, 0}, {l, cfg.n_heads - 1}, PositionMode::CausalSpan);
                worst = std::max(worst, std::abs(e.score));
            }
        }
        require(worst < 1e-9, "identical pairs scored " + sci(worst));
        return "max |score| " + sci(worst);
    });

    checks.emplace_back("path_collapse", [&] {
        const auto prep = prepare_pairs(toy, pairs[CorruptionKind::C1], PositionMode::CausalSpan);
        double worst = 0.0;
        for (const auto& p : prep.usable) {
            for (const auto& h : {heads.front(), heads.back()}) {
                const double collapsed = path_patch_pair_unchecked(toy, p, h, h);
                const auto corrupted = capture(toy, p.corrupted_text, h, p.positions);
                const double direct =
                    first_token_prob(toy, p, {{h, p.positions, corrupted}}) - first_token_prob(toy, p);
                worst = std::max(worst, std::abs(collapsed - direct));
            }
        }
        require(worst < 1e-6, "collapsed path differs by " + sci(worst));
        return "max difference " + sci(worst);
    });

    checks.emplace_back("generate_deterministic", [&] {
        GenerateRequest g;
        g.prompt = prompt;
        g.max_tokens = 24;
        const auto a = toy.generate(g);
        ToyModel fresh(cfg);
        const auto b = fresh.generate(g);
        require(a.text == b.text && a.logprobs == b.logprobs, "generation differs between runs");
        return std::to_string(a.tokens.size()) + " tokens";
    });

    if (options.loopback) {
        checks.emplace_back("loopback", [&] {
            ToyModel served(cfg);
            ModelServer server(served);
            const int port = server.bind("127.0.0.1", 0);
            server.start();
            struct Stop {
                ModelServer& s;
                ~Stop() { s.stop(); }
            } stop{server};
            HttpModel wire("http://127.0.0.1:" + std::to_string(port), 30.0);
            const auto pos = std::vector<int>{1, last};
            const auto own = capture(toy, prompt, heads.back(), pos);
            const std::vector<PatchSpec> patch = {{heads.back(), pos, own}};
            const std::vector<HeadId> ablate = {heads.front()};
            require(logprobs(wire, prompt, {last}, patch, ablate) == logprobs(toy, prompt, {last}, patch, ablate),
                    "wire and in-process results differ");
            require(capture(wire, prompt, heads[1], pos) == capture(toy, prompt, heads[1], pos),
                    "captured activations differ over the wire");
            bool typed = false;
            try {
                const std::vector<float> one(own.begin(), own.begin() + cfg.d_model());
                logprobs(wire, prompt, {last}, {{heads.front(), {0}, one}}, {heads.front()});
            } catch (const DisjointnessError&) {
                typed = true;
            }
            require(typed, "DisjointnessError did not cross the wire");
            return "port " + std::to_string(port) + ", bit-identical";
        });
    }

    std::vector<VerifyCheck> out;
    for (auto& [name, fn] : checks) {
        VerifyCheck c;
        c.name = name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.detail = fn();
            c.passed = true;
        } catch (const std::exception& e) {
            c.detail = e.what();
        }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (on_check) on_check(c);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace circuitlab
