#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqtrans/datapipe.hpp"
#include "seqtrans/evaluator.hpp"

namespace seqtrans::synth {

// Markov walk over categories; items drawn uniformly inside the current
// category. K*M items total; everything reproducible from the seed.
struct SynthSpec {
    std::size_t categories = 8;     // K
    std::size_t items_per_cat = 25; // M
    std::size_t seq_len = 30;       // T
    std::size_t users = 2000;       // U
    std::vector<double> transition; // K x K row-major, rows sum to 1
    std::uint64_t seed = 7;

    void validate() const;
    double p(std::size_t from, std::size_t to) const {
        return transition[from * categories + to];
    }

    // deterministic cycle k -> (k+1) mod K
    static SynthSpec det_cycle(std::size_t k, std::size_t m, std::size_t t, std::size_t u,
                               std::uint64_t seed);
    // cycle with probability `mass`, remainder spread uniformly
    static SynthSpec noisy_cycle(std::size_t k, std::size_t m, std::size_t t, std::size_t u,
                                 double mass, std::uint64_t seed);
};

std::vector<data::InteractionEvent> generate(const SynthSpec& spec);

void save_spec(const SynthSpec& spec, const std::string& path);  // key=value lines
SynthSpec load_spec(const std::string& path);

// Exact expected metrics of the probability-ranking predictor under the same
// negative-sampling protocol, with ties resolved in expectation.
struct OracleReport {
    double category_accuracy = 0.0;           // expected argmax correctness
    std::map<int, double> hit, ndcg;          // item metrics per cutoff
};

OracleReport bayes_oracle(const SynthSpec& spec, const eval::EvalProtocol& protocol);

std::string oracle_json(const OracleReport& r, const SynthSpec& spec,
                        const eval::EvalProtocol& protocol);

}  // namespace seqtrans::synth
