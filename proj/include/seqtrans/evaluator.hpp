#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "seqtrans/datapipe.hpp"
#include "seqtrans/model.hpp"
#include "seqtrans/rng.hpp"

namespace seqtrans::eval {

struct EvalProtocol {
    std::size_t negatives = 500;
    std::vector<int> cutoffs = {1, 5, 10, 15, 20};
    std::uint64_t seed = 0;
    std::string tie_rule = "pessimistic";  // ground truth ranks below ties
    bool full_catalog = false;             // rank against every unvisited item

    void validate() const;
};

enum class Split { valid, test };

Split split_from_tag(const std::string& tag);
const std::string& split_tag(Split s);

// N distinct item ids, none from the user's full history; ids are 1..n_items
std::vector<int> sample_negatives(std::span<const int> history_items_sorted, std::size_t n_items,
                                  std::size_t n, Rng& rng);

// the candidate list one evaluation case ranks: truth first, then N negatives
// drawn from a per-(user, split) seed so every model sees the same candidates
std::vector<int> protocol_candidates(const data::SplitDataset& ds, std::size_t user,
                                     const EvalProtocol& protocol, Split split, int truth_item);

// count of candidates scoring strictly above the truth plus all ties
std::size_t rank_ground_truth(std::span<const double> scores, std::size_t truth_index);

int hit_at_n(std::size_t rank, int n);
double ndcg_at_n(std::size_t rank, int n);

struct MetricsTable {
    std::map<int, double> hit, ndcg;           // cutoff -> mean
    std::vector<std::size_t> rank_histogram;   // index = rank among candidates
    std::size_t cases = 0;
};

// scores for (truth + negatives), truth first
using Scorer = std::function<std::vector<double>(
    int user, std::span<const int> history_items, std::span<const int> history_cats,
    std::span<const int> candidates)>;

struct EvalOptions {
    std::size_t max_history = 0;
    bool include_valid_in_test_history = true;
};

// reference path: one user at a time, in dense user order
MetricsTable evaluate_with_scorer(const data::SplitDataset& ds, const EvalProtocol& protocol,
                                  Split split, const Scorer& scorer,
                                  const EvalOptions& opts = {});

// model path: batches users of equal history length, aggregates in user order
MetricsTable evaluate(const model::ParamSet& params, const data::SplitDataset& ds,
                      const EvalProtocol& protocol, Split split,
                      const model::ScoreOptions& sopts = {},
                      const EvalOptions& opts = {});

// ranks the true next category against the whole category set
MetricsTable category_metrics(const model::ParamSet& params, const data::SplitDataset& ds,
                              const EvalProtocol& protocol, Split split,
                              const model::ScoreOptions& sopts = {},
                              const EvalOptions& opts = {});

std::string metrics_csv(const MetricsTable& t);
std::string metrics_pretty(const MetricsTable& t);
std::string metrics_json(const MetricsTable& t, const std::string& variant,
                         const std::string& split, const EvalProtocol& protocol);

}  // namespace seqtrans::eval
