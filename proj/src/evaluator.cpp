#include "seqtrans/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace seqtrans::eval {

void EvalProtocol::validate() const {
    if (negatives < 1) throw std::invalid_argument("protocol: negatives must be >= 1");
    if (cutoffs.empty() || !std::is_sorted(cutoffs.begin(), cutoffs.end()) || cutoffs.front() < 1)
        throw std::invalid_argument("protocol: cutoffs must be ascending and >= 1");
    if (tie_rule != "pessimistic")
        throw std::invalid_argument("protocol: unknown tie rule '" + tie_rule + "'");
}

Split split_from_tag(const std::string& tag) {
    if (tag == "valid") return Split::valid;
    if (tag == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + tag + "' (expected valid|test)");
}

const std::string& split_tag(Split s) {
    static const std::string v = "valid", t = "test";
    return s == Split::valid ? v : t;
}

std::vector<int> sample_negatives(std::span<const int> history_items_sorted, std::size_t n_items,
                                  std::size_t n, Rng& rng) {
    std::vector<int> unvisited;
    unvisited.reserve(n_items);
    std::size_t h = 0;
    for (int id = 1; id <= static_cast<int>(n_items); ++id) {
        while (h < history_items_sorted.size() && history_items_sorted[h] < id) ++h;
        if (h < history_items_sorted.size() && history_items_sorted[h] == id) continue;
        unvisited.push_back(id);
    }
    if (unvisited.size() < n)
        throw std::runtime_error("sample_negatives: only " + std::to_string(unvisited.size()) +
                                 " unvisited items but " + std::to_string(n) + " requested");
    // partial Fisher-Yates: first n entries become the sample
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(unvisited.size() - i));
        std::swap(unvisited[i], unvisited[j]);
    }
    unvisited.resize(n);
    return unvisited;
}

std::size_t rank_ground_truth(std::span<const double> scores, std::size_t truth_index) {
    if (truth_index >= scores.size())
        throw std::invalid_argument("rank_ground_truth: truth index outside candidate set");
    const double truth = scores[truth_index];
    std::size_t rank = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i == truth_index) continue;
        if (scores[i] >= truth) ++rank;
    }
    return rank;
}

int hit_at_n(std::size_t rank, int n) {
    if (n < 1) throw std::invalid_argument("hit_at_n: n must be >= 1");
    return rank < static_cast<std::size_t>(n) ? 1 : 0;
}

double ndcg_at_n(std::size_t rank, int n) {
    if (n < 1) throw std::invalid_argument("ndcg_at_n: n must be >= 1");
    if (rank >= static_cast<std::size_t>(n)) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 2.0);
}

namespace {

struct Case {
    std::vector<int> history_items, history_cats;
    int truth_item = 0, truth_cat = 0;
};

Case build_case(const data::UserSplit& us, Split split, bool include_valid) {
    Case c;
    c.history_items = us.train_items;
    c.history_cats = us.train_cats;
    if (split == Split::valid) {
        c.truth_item = us.valid_item;
        c.truth_cat = us.valid_cat;
    } else {
        if (include_valid) {
            c.history_items.push_back(us.valid_item);
            c.history_cats.push_back(us.valid_cat);
        }
        c.truth_item = us.test_item;
        c.truth_cat = us.test_cat;
    }
    return c;
}

struct Accumulator {
    explicit Accumulator(const EvalProtocol& p, std::size_t histogram_size) {
        for (int n : p.cutoffs) {
            hit_sum[n] = 0.0;
            ndcg_sum[n] = 0.0;
        }
        histogram.assign(histogram_size, 0);
    }
    void add(std::size_t rank, const EvalProtocol& p) {
        for (int n : p.cutoffs) {
            hit_sum[n] += hit_at_n(rank, n);
            ndcg_sum[n] += ndcg_at_n(rank, n);
        }
        if (rank < histogram.size()) ++histogram[rank];
        ++cases;
    }
    MetricsTable finish(const EvalProtocol& p) const {
        MetricsTable t;
        t.cases = cases;
        t.rank_histogram = histogram;
        for (int n : p.cutoffs) {
            t.hit[n] = cases ? hit_sum.at(n) / static_cast<double>(cases) : 0.0;
            t.ndcg[n] = cases ? ndcg_sum.at(n) / static_cast<double>(cases) : 0.0;
        }
        return t;
    }
    std::map<int, double> hit_sum, ndcg_sum;
    std::vector<std::size_t> histogram;
    std::size_t cases = 0;
};

}  // namespace

std::vector<int> protocol_candidates(const data::SplitDataset& ds, std::size_t user,
                                     const EvalProtocol& protocol, Split split, int truth_item) {
    std::vector<int> cands;
    if (protocol.full_catalog) {
        const auto& hist = ds.users[user].all_items;
        std::size_t h = 0;
        for (int id = 1; id <= static_cast<int>(ds.maps.n_items()); ++id) {
            while (h < hist.size() && hist[h] < id) ++h;
            if (h < hist.size() && hist[h] == id) continue;
            cands.push_back(id);
        }
    } else {
        Rng rng(mix_seed(protocol.seed, user, static_cast<std::uint64_t>(split)));
        try {
            cands = sample_negatives(ds.users[user].all_items, ds.maps.n_items(),
                                     protocol.negatives, rng);
        } catch (const std::exception& e) {
            throw std::runtime_error("user '" + ds.maps.users[user] + "': " + e.what());
        }
    }
    cands.insert(cands.begin(), truth_item);
    return cands;
}

MetricsTable evaluate_with_scorer(const data::SplitDataset& ds, const EvalProtocol& protocol,
                                  Split split, const Scorer& scorer, const EvalOptions& opts) {
    protocol.validate();
    Accumulator acc(protocol,
                    protocol.full_catalog ? ds.maps.n_items() + 1 : protocol.negatives + 1);
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        Case c = build_case(ds.users[u], split, opts.include_valid_in_test_history);
        std::vector<int> cands = protocol_candidates(ds, u, protocol, split, c.truth_item);
        std::span<const int> items = c.history_items;
        std::span<const int> cats = c.history_cats;
        if (opts.max_history > 0 && items.size() > opts.max_history) {
            items = items.subspan(items.size() - opts.max_history);
            cats = cats.subspan(cats.size() - opts.max_history);
        }
        std::vector<double> scores = scorer(static_cast<int>(u), items, cats, cands);
        if (scores.size() != cands.size())
            throw std::logic_error("scorer returned " + std::to_string(scores.size()) +
                                   " scores for " + std::to_string(cands.size()) + " candidates");
        acc.add(rank_ground_truth(scores, 0), protocol);
    }
    return acc.finish(protocol);
}

namespace {

// group users by effective history length, run batched mean-path forwards,
// and hand each user's final-step logits row to the sink
void batched_final_rows(const model::ParamSet& params, const std::vector<Case>& cases,
                        const model::ScoreOptions& sopts,
                        const std::function<void(std::size_t user, const model::FinalLogits& fl,
                                                 std::size_t row)>& sink) {
    const std::size_t n_users = cases.size();
    std::vector<std::size_t> length(n_users);
    for (std::size_t u = 0; u < n_users; ++u) {
        length[u] = cases[u].history_items.size();
        if (sopts.max_history > 0) length[u] = std::min(length[u], sopts.max_history);
    }
    std::vector<std::size_t> order(n_users);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&length](std::size_t a, std::size_t b) { return length[a] < length[b]; });

    constexpr std::size_t kMaxEvalBatch = 256;
    std::size_t begin = 0;
    while (begin < n_users) {
        std::size_t end = begin + 1;
        while (end < n_users && end - begin < kMaxEvalBatch &&
               length[order[end]] == length[order[begin]])
            ++end;
        const std::size_t len = length[order[begin]];

        model::SeqBatch batch;
        batch.len = len;
        for (std::size_t k = begin; k < end; ++k) {
            const Case& c = cases[order[k]];
            const std::size_t off = c.history_items.size() - len;
            batch.users.push_back(static_cast<int>(order[k]));
            batch.items.insert(batch.items.end(), c.history_items.begin() + off,
                               c.history_items.end());
            batch.cats.insert(batch.cats.end(), c.history_cats.begin() + off,
                              c.history_cats.end());
        }
        model::FinalLogits fl = model::final_logits(params, batch, sopts);
        for (std::size_t k = begin; k < end; ++k) sink(order[k], fl, k - begin);
        begin = end;
    }
}

std::vector<Case> build_cases(const data::SplitDataset& ds, Split split,
                              const EvalOptions& opts) {
    std::vector<Case> cases(ds.users.size());
    for (std::size_t u = 0; u < ds.users.size(); ++u)
        cases[u] = build_case(ds.users[u], split, opts.include_valid_in_test_history);
    return cases;
}

}  // namespace

MetricsTable evaluate(const model::ParamSet& params, const data::SplitDataset& ds,
                      const EvalProtocol& protocol, Split split,
                      const model::ScoreOptions& sopts, const EvalOptions& opts) {
    protocol.validate();
    if (!model::has_item_head(params.variant))
        throw std::invalid_argument("evaluate: variant '" + model::variant_tag(params.variant) +
                                    "' has no item head");
    const std::vector<Case> cases = build_cases(ds, split, opts);
    const std::size_t n_items = params.sizes.items;

    std::vector<std::size_t> ranks(cases.size(), 0);
    batched_final_rows(params, cases, sopts,
                       [&](std::size_t u, const model::FinalLogits& fl, std::size_t row) {
                           std::vector<int> cands = protocol_candidates(ds, u, protocol, split,
                                                                        cases[u].truth_item);
                           std::vector<double> scores(cands.size());
                           const double* logits = fl.item.data.data() + row * n_items;
                           for (std::size_t i = 0; i < cands.size(); ++i)
                               scores[i] = logits[static_cast<std::size_t>(cands[i]) - 1];
                           ranks[u] = rank_ground_truth(scores, 0);
                       });

    Accumulator acc(protocol,
                    protocol.full_catalog ? ds.maps.n_items() + 1 : protocol.negatives + 1);
    for (std::size_t rank : ranks) acc.add(rank, protocol);
    return acc.finish(protocol);
}

MetricsTable category_metrics(const model::ParamSet& params, const data::SplitDataset& ds,
                              const EvalProtocol& protocol, Split split,
                              const model::ScoreOptions& sopts, const EvalOptions& opts) {
    protocol.validate();
    if (!model::has_cat_head(params.variant))
        throw std::invalid_argument("category_metrics: variant '" +
                                    model::variant_tag(params.variant) + "' has no category head");
    const std::vector<Case> cases = build_cases(ds, split, opts);
    const std::size_t n_cats = params.sizes.cats;

    std::vector<std::size_t> ranks(cases.size(), 0);
    batched_final_rows(params, cases, sopts,
                       [&](std::size_t u, const model::FinalLogits& fl, std::size_t row) {
                           const double* logits = fl.cat.data.data() + row * n_cats;
                           ranks[u] = rank_ground_truth(
                               std::span<const double>(logits, n_cats),
                               static_cast<std::size_t>(cases[u].truth_cat) - 1);
                       });

    Accumulator acc(protocol, n_cats);
    for (std::size_t rank : ranks) acc.add(rank, protocol);
    return acc.finish(protocol);
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string metrics_csv(const MetricsTable& t) {
    std::ostringstream out;
    out << "cutoff,hit,ndcg\n";
    for (const auto& [n, h] : t.hit)
        out << n << "," << fmt_double(h) << "," << fmt_double(t.ndcg.at(n)) << "\n";
    return out.str();
}

std::string metrics_pretty(const MetricsTable& t) {
    std::ostringstream out;
    out << "  n      Hit@n     NDCG@n\n";
    for (const auto& [n, h] : t.hit) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%3d   %8.4f   %8.4f\n", n, h, t.ndcg.at(n));
        out << buf;
    }
    out << "cases: " << t.cases << "\n";
    return out.str();
}

std::string metrics_json(const MetricsTable& t, const std::string& variant,
                         const std::string& split, const EvalProtocol& protocol) {
    nlohmann::json j;
    j["variant"] = variant;
    j["split"] = split;
    j["protocol"] = {{"negatives", protocol.negatives},
                     {"cutoffs", protocol.cutoffs},
                     {"seed", protocol.seed},
                     {"tie_rule", protocol.tie_rule},
                     {"full_catalog", protocol.full_catalog}};
    nlohmann::json hit = nlohmann::json::object(), ndcg = nlohmann::json::object();
    for (const auto& [n, v] : t.hit) hit[std::to_string(n)] = v;
    for (const auto& [n, v] : t.ndcg) ndcg[std::to_string(n)] = v;
    j["metrics"] = {{"hit", hit}, {"ndcg", ndcg}};
    j["cases"] = t.cases;
    j["per_user_rank_histogram"] = t.rank_histogram;
    return j.dump(2) + "\n";
}

}  // namespace seqtrans::eval
