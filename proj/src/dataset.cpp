#include "circuitlab/dataset.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "circuitlab/rng.hpp"

namespace circuitlab {

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> workers;
    const int count = std::min(jobs, n);
    for (int w = 0; w < count; ++w) {
        workers.emplace_back([&] {
            while (true) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
}

std::size_t DatasetRecord::query_prompt_len() const {
    const std::size_t q = doc.shots.size() - 1;
    return doc.shot_offset(q) + chain_start_offset(problem());
}

std::vector<Demo> generate_shots(std::uint64_t seed, int count, const GeneratorConfig& config,
                                 int* attempts) {
    std::vector<Demo> shots;
    int total_attempts = 0;
    for (int i = 0; i < count; ++i) {
        GeneratorConfig cfg = config;
        Problem p = generate_problem(derive_seed(seed, static_cast<std::uint64_t>(i)), cfg,
                                     &total_attempts);
        ReasoningChain c = derive_chain(p, config.policy);
        shots.emplace_back(std::move(p), std::move(c));
    }
    if (attempts) *attempts = total_attempts;
    return shots;
}

DatasetRecord make_record(int id, int k, std::uint64_t record_seed, const GeneratorConfig& config,
                          const GeneratorConfig* demo_config) {
    DatasetRecord rec;
    rec.id = id;
    rec.k = k;
    rec.seed = record_seed;
    std::vector<Demo> shots;
    for (int i = 0; i <= k; ++i) {
        const GeneratorConfig& cfg = (i < k && demo_config) ? *demo_config : config;
        Problem p = generate_problem(derive_seed(record_seed, static_cast<std::uint64_t>(i)), cfg,
                                     &rec.generation_attempts);
        ReasoningChain c = derive_chain(p, cfg.policy);
        shots.emplace_back(std::move(p), std::move(c));
    }
    Demo query = std::move(shots.back());
    shots.pop_back();
    rec.doc = render_prompt(shots, query);
    return rec;
}

std::vector<DatasetRecord> synth_dataset(int k, int n, std::uint64_t seed,
                                         const GeneratorConfig& config, int jobs) {
    if (n < 0) throw std::invalid_argument("n must be non-negative");
    std::vector<DatasetRecord> out(static_cast<std::size_t>(n));
    parallel_for(n, jobs, [&](int i) {
        try {
            out[static_cast<std::size_t>(i)] =
                make_record(i, k, derive_seed(seed, static_cast<std::uint64_t>(i)), config);
        } catch (const GenerationExhausted& e) {
            throw GenerationExhausted("record " + std::to_string(i) + ": " + e.what(),
                                      e.attempts());
        }
    });
    return out;
}

json to_json(const DatasetRecord& r) {
    json shots = json::array();
    for (const auto& s : r.doc.shots) shots.push_back(to_json(s));
    return json{{"id", r.id},
                {"k", r.k},
                {"seed", r.seed},
                {"prompt_text", r.doc.text},
                {"query_prompt_len", r.query_prompt_len()},
                {"shots", shots},
                {"role_spans", spans_to_json(r.doc.spans)},
                {"gold_chain", to_json(r.gold_chain())},
                {"question", std::string(1, r.question())},
                {"generation_attempts", r.generation_attempts}};
}

DatasetRecord record_from_json(const json& j) {
    DatasetRecord r;
    r.id = j.at("id").get<int>();
    r.k = j.at("k").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.generation_attempts = j.value("generation_attempts", 0);
    std::vector<PromptShot> shots;
    for (const auto& s : j.at("shots")) shots.push_back(shot_from_json(s));
    r.doc = doc_from_shots(std::move(shots));
    if (j.contains("prompt_text") && j.at("prompt_text").get<std::string>() != r.doc.text) {
        throw DataError("record " + std::to_string(r.id) +
                        ": prompt_text does not match its shots");
    }
    return r;
}

void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(to_json(r));
    write_jsonl(path, rows);
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
    std::vector<DatasetRecord> out;
    for (const auto& row : read_jsonl(path)) out.push_back(record_from_json(row));
    return out;
}

}  // namespace circuitlab
