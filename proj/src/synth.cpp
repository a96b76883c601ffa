#include "seqtrans/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "seqtrans/rng.hpp"

namespace seqtrans::synth {

void SynthSpec::validate() const {
    if (categories < 1 || items_per_cat < 1 || seq_len < 1 || users < 1)
        throw std::invalid_argument("synth spec: K, M, T, U must all be >= 1");
    if (transition.size() != categories * categories)
        throw std::invalid_argument("synth spec: transition matrix must be K x K");
    for (std::size_t r = 0; r < categories; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < categories; ++c) {
            const double v = p(r, c);
            if (v < 0.0) throw std::invalid_argument("synth spec: negative transition probability");
            row += v;
        }
        if (std::abs(row - 1.0) > 1e-12)
            throw std::invalid_argument("synth spec: transition row " + std::to_string(r) +
                                        " sums to " + std::to_string(row));
    }
}

SynthSpec SynthSpec::det_cycle(std::size_t k, std::size_t m, std::size_t t, std::size_t u,
                               std::uint64_t seed) {
    SynthSpec s;
    s.categories = k;
    s.items_per_cat = m;
    s.seq_len = t;
    s.users = u;
    s.seed = seed;
    s.transition.assign(k * k, 0.0);
    for (std::size_t r = 0; r < k; ++r) s.transition[r * k + (r + 1) % k] = 1.0;
    return s;
}

SynthSpec SynthSpec::noisy_cycle(std::size_t k, std::size_t m, std::size_t t, std::size_t u,
                                 double mass, std::uint64_t seed) {
    if (k < 2 || mass < 0.0 || mass > 1.0)
        throw std::invalid_argument("noisy_cycle: need K >= 2 and mass in [0,1]");
    SynthSpec s = det_cycle(k, m, t, u, seed);
    const double rest = (1.0 - mass) / static_cast<double>(k - 1);
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c)
            s.transition[r * k + c] = c == (r + 1) % k ? mass : rest;
    return s;
}

namespace {

std::string user_ext(std::size_t u) { return "u" + std::to_string(u); }
std::string cat_ext(std::size_t c) { return "c" + std::to_string(c); }
std::string item_ext(const SynthSpec& spec, std::size_t c, std::size_t m) {
    return "i" + std::to_string(c * spec.items_per_cat + m);
}

std::size_t item_category(const SynthSpec& spec, const std::string& ext) {
    return std::stoull(ext.substr(1)) / spec.items_per_cat;
}

std::size_t sample_row(const SynthSpec& spec, std::size_t from, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < spec.categories; ++c) {
        acc += spec.p(from, c);
        if (u < acc) return c;
    }
    return spec.categories - 1;
}

}  // namespace

std::vector<data::InteractionEvent> generate(const SynthSpec& spec) {
    spec.validate();
    std::vector<data::InteractionEvent> events;
    events.reserve(spec.users * spec.seq_len);
    for (std::size_t u = 0; u < spec.users; ++u) {
        Rng rng(mix_seed(spec.seed, u));
        std::size_t cat = static_cast<std::size_t>(rng.below(spec.categories));
        for (std::size_t t = 0; t < spec.seq_len; ++t) {
            if (t > 0) cat = sample_row(spec, cat, rng);
            const std::size_t m = static_cast<std::size_t>(rng.below(spec.items_per_cat));
            events.push_back({user_ext(u), item_ext(spec, cat, m), cat_ext(cat),
                              static_cast<std::int64_t>(t)});
        }
    }
    return events;
}

void save_spec(const SynthSpec& spec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "categories = " << spec.categories << "\n";
    out << "items_per_cat = " << spec.items_per_cat << "\n";
    out << "seq_len = " << spec.seq_len << "\n";
    out << "users = " << spec.users << "\n";
    out << "seed = " << spec.seed << "\n";
    out << "transition =";
    char buf[40];
    for (double v : spec.transition) {
        std::snprintf(buf, sizeof(buf), " %.17g", v);
        out << buf;
    }
    out << "\n";
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

SynthSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    SynthSpec spec;
    spec.transition.clear();
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
        std::istringstream val(line.substr(eq + 1));
        if (key == "categories") val >> spec.categories;
        else if (key == "items_per_cat") val >> spec.items_per_cat;
        else if (key == "seq_len") val >> spec.seq_len;
        else if (key == "users") val >> spec.users;
        else if (key == "seed") val >> spec.seed;
        else if (key == "transition") {
            double v;
            while (val >> v) spec.transition.push_back(v);
        } else
            throw std::runtime_error("synth spec '" + path + "': unknown key '" + key + "'");
    }
    spec.validate();
    return spec;
}

OracleReport bayes_oracle(const SynthSpec& spec, const eval::EvalProtocol& protocol) {
    spec.validate();
    protocol.validate();
    const auto events = generate(spec);
    const data::SplitDataset ds = data::leave_one_out_split(events);

    // dense item id -> category index, recovered from the generator's naming
    std::vector<std::size_t> cat_of(ds.maps.n_items() + 1, 0);
    for (std::size_t id = 1; id <= ds.maps.n_items(); ++id)
        cat_of[id] = item_category(spec, ds.maps.items[id]);

    OracleReport report;
    std::map<int, double> hit_sum, ndcg_sum;
    for (int n : protocol.cutoffs) {
        hit_sum[n] = 0.0;
        ndcg_sum[n] = 0.0;
    }
    double cat_sum = 0.0;

    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        const data::UserSplit& us = ds.users[u];
        // test case: history ends at the validation event
        const std::size_t cur = cat_of[static_cast<std::size_t>(us.valid_item)];
        const std::size_t truth_cat = cat_of[static_cast<std::size_t>(us.test_item)];

        // expected argmax correctness with uniform tie-break
        double row_max = 0.0;
        for (std::size_t c = 0; c < spec.categories; ++c) row_max = std::max(row_max, spec.p(cur, c));
        std::size_t arg_ties = 0;
        bool truth_in_argmax = false;
        for (std::size_t c = 0; c < spec.categories; ++c)
            if (spec.p(cur, c) == row_max) {
                ++arg_ties;
                if (c == truth_cat) truth_in_argmax = true;
            }
        cat_sum += truth_in_argmax ? 1.0 / static_cast<double>(arg_ties) : 0.0;

        std::vector<int> cands =
            eval::protocol_candidates(ds, u, protocol, eval::Split::test, us.test_item);
        const double m = static_cast<double>(spec.items_per_cat);
        const double p_truth = spec.p(cur, truth_cat) / m;
        std::size_t greater = 0, equal = 0;
        for (std::size_t i = 1; i < cands.size(); ++i) {
            const double p = spec.p(cur, cat_of[static_cast<std::size_t>(cands[i])]) / m;
            if (p > p_truth) ++greater;
            else if (p == p_truth) ++equal;
        }
        // truth's rank is uniform over [greater, greater+equal]
        const double ties = static_cast<double>(equal) + 1.0;
        for (int n : protocol.cutoffs) {
            const double top = std::min<double>(
                static_cast<double>(n) - static_cast<double>(greater), ties);
            hit_sum[n] += std::max(0.0, top) / ties;
            if (greater < static_cast<std::size_t>(n)) {
                const std::size_t stop =
                    std::min(greater + equal, static_cast<std::size_t>(n) - 1);
                double nd = 0.0;
                for (std::size_t r = greater; r <= stop; ++r)
                    nd += 1.0 / std::log2(static_cast<double>(r) + 2.0);
                ndcg_sum[n] += nd / ties;
            }
        }
    }

    const double cases = static_cast<double>(ds.users.size());
    report.category_accuracy = cat_sum / cases;
    for (int n : protocol.cutoffs) {
        report.hit[n] = hit_sum[n] / cases;
        report.ndcg[n] = ndcg_sum[n] / cases;
    }
    return report;
}

std::string oracle_json(const OracleReport& r, const SynthSpec& spec,
                        const eval::EvalProtocol& protocol) {
    nlohmann::json j;
    j["spec"] = {{"categories", spec.categories},
                 {"items_per_cat", spec.items_per_cat},
                 {"seq_len", spec.seq_len},
                 {"users", spec.users},
                 {"seed", spec.seed}};
    j["protocol"] = {{"negatives", protocol.negatives},
                     {"cutoffs", protocol.cutoffs},
                     {"seed", protocol.seed}};
    j["category_accuracy"] = r.category_accuracy;
    nlohmann::json hit = nlohmann::json::object(), ndcg = nlohmann::json::object();
    for (const auto& [n, v] : r.hit) hit[std::to_string(n)] = v;
    for (const auto& [n, v] : r.ndcg) ndcg[std::to_string(n)] = v;
    j["hit"] = hit;
    j["ndcg"] = ndcg;
    return j.dump(2) + "\n";
}

}  // namespace seqtrans::synth
