#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <optional>

#include "seqtrans/datapipe.hpp"
#include "seqtrans/evaluator.hpp"
#include "seqtrans/model.hpp"
#include "seqtrans/synth.hpp"
#include "seqtrans/trainer.hpp"

namespace py = pybind11;
using namespace seqtrans;

namespace {

synth::SynthSpec make_spec(std::size_t categories, std::size_t items_per_cat, std::size_t seq_len,
                           std::size_t users, std::uint64_t seed, double cycle_mass,
                           const std::optional<std::vector<double>>& transition) {
    synth::SynthSpec spec;
    if (transition) {
        spec.categories = categories;
        spec.items_per_cat = items_per_cat;
        spec.seq_len = seq_len;
        spec.users = users;
        spec.seed = seed;
        spec.transition = *transition;
        spec.validate();
    } else if (cycle_mass >= 1.0) {
        spec = synth::SynthSpec::det_cycle(categories, items_per_cat, seq_len, users, seed);
    } else {
        spec = synth::SynthSpec::noisy_cycle(categories, items_per_cat, seq_len, users,
                                             cycle_mass, seed);
    }
    return spec;
}

train::TrainConfig make_config(const std::string& variant, std::size_t d, std::size_t window,
                               std::size_t batch_size, double learning_rate, double dropout,
                               double lambda, std::size_t max_epochs, std::size_t patience,
                               std::uint64_t seed, bool sample_at_eval, bool combine_heads,
                               const std::string& optimizer, double grad_clip,
                               std::size_t max_history, std::size_t negatives,
                               const std::vector<int>& cutoffs, std::uint64_t eval_seed) {
    train::TrainConfig c;
    c.variant = variant;
    c.d = d;
    c.window = window;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.dropout = dropout;
    c.lambda = lambda;
    c.max_epochs = max_epochs;
    c.patience = patience;
    c.seed = seed;
    c.sample_at_eval = sample_at_eval;
    c.combine_heads = combine_heads;
    c.optimizer = optimizer;
    c.grad_clip = grad_clip;
    c.max_history = max_history;
    c.protocol.negatives = negatives;
    c.protocol.cutoffs = cutoffs;
    c.protocol.seed = eval_seed;
    c.validate();
    return c;
}

py::dict metrics_to_dict(const eval::MetricsTable& t) {
    py::dict hit, ndcg;
    for (const auto& [n, v] : t.hit) hit[py::int_(n)] = v;
    for (const auto& [n, v] : t.ndcg) ndcg[py::int_(n)] = v;
    py::dict out;
    out["hit"] = hit;
    out["ndcg"] = ndcg;
    out["cases"] = t.cases;
    out["rank_histogram"] = t.rank_histogram;
    return out;
}

py::list history_to_list(const std::vector<train::EpochRecord>& history) {
    py::list out;
    for (const auto& r : history) {
        py::dict row;
        row["epoch"] = r.epoch;
        row["train_loss"] = r.train_loss;
        py::dict comps;
        for (const auto& [name, v] : r.components) comps[py::str(name)] = v;
        row["components"] = comps;
        row["val_hit5"] = r.val_hit5;
        row["val_ndcg5"] = r.val_ndcg5;
        out.append(row);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "seq2seq translation models for category-aware sequential recommendation";

    py::class_<data::SplitDataset>(m, "SplitDataset")
        .def_property_readonly("n_users",
                               [](const data::SplitDataset& ds) { return ds.maps.n_users(); })
        .def_property_readonly("n_items",
                               [](const data::SplitDataset& ds) { return ds.maps.n_items(); })
        .def_property_readonly("n_categories",
                               [](const data::SplitDataset& ds) { return ds.maps.n_cats(); })
        .def("stats",
             [](const data::SplitDataset& ds) {
                 auto s = data::dataset_stats(ds);
                 py::dict out;
                 out["users"] = s.users;
                 out["items"] = s.items;
                 out["interactions"] = s.interactions;
                 out["categories"] = s.categories;
                 out["sparsity"] = s.sparsity;
                 return out;
             })
        .def("save", [](const data::SplitDataset& ds, const std::string& path) {
            data::save_split(ds, path);
        });

    m.def("load_split", &data::load_split, py::arg("path"));

    m.def(
        "prepare_tsv",
        [](const std::string& path, std::size_t item_min, std::size_t user_min,
           std::size_t user_min_records, const std::string& filter_mode) {
            std::ifstream in(path, std::ios::binary);
            if (!in) throw std::runtime_error("cannot open '" + path + "'");
            auto events = data::parse_canonical(in);
            const auto mode = filter_mode == "single_pass" ? data::FilterMode::single_pass
                                                           : data::FilterMode::fixpoint;
            events = data::ncore_filter(std::move(events), item_min, user_min, user_min_records,
                                        mode);
            return data::leave_one_out_split(events);
        },
        py::arg("path"), py::arg("item_min") = 5, py::arg("user_min") = 5,
        py::arg("user_min_records") = 0, py::arg("filter_mode") = "fixpoint",
        "parse a canonical user/item/category/timestamp TSV, filter and split it");

    m.def(
        "synth_dataset",
        [](std::size_t categories, std::size_t items_per_cat, std::size_t seq_len,
           std::size_t users, std::uint64_t seed, double cycle_mass,
           const std::optional<std::vector<double>>& transition) {
            auto spec = make_spec(categories, items_per_cat, seq_len, users, seed, cycle_mass,
                                  transition);
            return data::leave_one_out_split(synth::generate(spec));
        },
        py::arg("categories") = 8, py::arg("items_per_cat") = 25, py::arg("seq_len") = 30,
        py::arg("users") = 2000, py::arg("seed") = 7, py::arg("cycle_mass") = 1.0,
        py::arg("transition") = std::nullopt,
        "generate a category-walk benchmark and split it (cycle_mass=1 -> deterministic cycle)");

    m.def(
        "synth_tsv",
        [](const std::string& path, std::size_t categories, std::size_t items_per_cat,
           std::size_t seq_len, std::size_t users, std::uint64_t seed, double cycle_mass,
           const std::optional<std::vector<double>>& transition) {
            auto spec = make_spec(categories, items_per_cat, seq_len, users, seed, cycle_mass,
                                  transition);
            data::write_canonical_tsv(synth::generate(spec), path);
        },
        py::arg("path"), py::arg("categories") = 8, py::arg("items_per_cat") = 25,
        py::arg("seq_len") = 30, py::arg("users") = 2000, py::arg("seed") = 7,
        py::arg("cycle_mass") = 1.0, py::arg("transition") = std::nullopt,
        "write a generated benchmark as canonical TSV");

    m.def(
        "bayes_oracle",
        [](std::size_t categories, std::size_t items_per_cat, std::size_t seq_len,
           std::size_t users, std::uint64_t seed, double cycle_mass,
           const std::optional<std::vector<double>>& transition, std::size_t negatives,
           const std::vector<int>& cutoffs, std::uint64_t eval_seed) {
            auto spec = make_spec(categories, items_per_cat, seq_len, users, seed, cycle_mass,
                                  transition);
            eval::EvalProtocol protocol;
            protocol.negatives = negatives;
            protocol.cutoffs = cutoffs;
            protocol.seed = eval_seed;
            auto r = synth::bayes_oracle(spec, protocol);
            py::dict hit, ndcg;
            for (const auto& [n, v] : r.hit) hit[py::int_(n)] = v;
            for (const auto& [n, v] : r.ndcg) ndcg[py::int_(n)] = v;
            py::dict out;
            out["category_accuracy"] = r.category_accuracy;
            out["hit"] = hit;
            out["ndcg"] = ndcg;
            return out;
        },
        py::arg("categories") = 8, py::arg("items_per_cat") = 25, py::arg("seq_len") = 30,
        py::arg("users") = 2000, py::arg("seed") = 7, py::arg("cycle_mass") = 1.0,
        py::arg("transition") = std::nullopt, py::arg("negatives") = 100,
        py::arg("cutoffs") = std::vector<int>{1, 5, 10, 15, 20}, py::arg("eval_seed") = 0,
        "expected metrics of the probability-ranking predictor under the same protocol");

    py::class_<train::Checkpoint>(m, "Checkpoint")
        .def_property_readonly("variant",
                               [](const train::Checkpoint& c) {
                                   return model::variant_tag(c.params.variant);
                               })
        .def_property_readonly("epoch", [](const train::Checkpoint& c) { return c.epoch; })
        .def_property_readonly("best_val_ndcg5",
                               [](const train::Checkpoint& c) { return c.best_val_ndcg5; })
        .def_property_readonly("parameter_count",
                               [](const train::Checkpoint& c) {
                                   return c.params.parameter_count();
                               })
        .def("save", [](const train::Checkpoint& c, const std::string& path) {
            train::save_checkpoint(c, path);
        });

    m.def("load_checkpoint", &train::load_checkpoint, py::arg("path"));

    m.def(
        "train",
        [](const data::SplitDataset& ds, const std::string& variant, std::size_t d,
           std::size_t window, std::size_t batch_size, double learning_rate, double dropout,
           double lambda, std::size_t max_epochs, std::size_t patience, std::uint64_t seed,
           bool sample_at_eval, bool combine_heads, const std::string& optimizer,
           double grad_clip, std::size_t max_history, std::size_t negatives,
           const std::vector<int>& cutoffs, std::uint64_t eval_seed) {
            auto config = make_config(variant, d, window, batch_size, learning_rate, dropout,
                                      lambda, max_epochs, patience, seed, sample_at_eval,
                                      combine_heads, optimizer, grad_clip, max_history, negatives,
                                      cutoffs, eval_seed);
            train::FitResult result = train::fit(ds, config);
            return py::make_tuple(result.checkpoint, history_to_list(result.history));
        },
        py::arg("dataset"), py::arg("variant") = "tstm", py::arg("d") = 50,
        py::arg("window") = 5, py::arg("batch_size") = 128, py::arg("learning_rate") = 0.001,
        py::arg("dropout") = 0.2, py::arg("lambda_") = 1.0, py::arg("max_epochs") = 100,
        py::arg("patience") = 10, py::arg("seed") = 0, py::arg("sample_at_eval") = false,
        py::arg("combine_heads") = false, py::arg("optimizer") = "adam",
        py::arg("grad_clip") = 5.0, py::arg("max_history") = 0, py::arg("negatives") = 500,
        py::arg("cutoffs") = std::vector<int>{1, 5, 10, 15, 20}, py::arg("eval_seed") = 0,
        "train a variant; returns (checkpoint, per-epoch history)");

    m.def(
        "evaluate",
        [](const train::Checkpoint& ckpt, const data::SplitDataset& ds, const std::string& split,
           std::optional<std::size_t> negatives, std::optional<std::vector<int>> cutoffs,
           std::optional<std::uint64_t> eval_seed, bool include_valid_in_test_history) {
            train::check_checkpoint(ckpt, "", ds.maps.digest());
            eval::EvalProtocol protocol = ckpt.config.protocol;
            if (negatives) protocol.negatives = *negatives;
            if (cutoffs) protocol.cutoffs = *cutoffs;
            if (eval_seed) protocol.seed = *eval_seed;
            eval::EvalOptions opts;
            opts.include_valid_in_test_history = include_valid_in_test_history;
            auto table = eval::evaluate(ckpt.params, ds, protocol, eval::split_from_tag(split),
                                        ckpt.config.score_options(), opts);
            return metrics_to_dict(table);
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("split") = "test",
        py::arg("negatives") = std::nullopt, py::arg("cutoffs") = std::nullopt,
        py::arg("eval_seed") = std::nullopt, py::arg("include_valid_in_test_history") = true,
        "rank the held-out item against sampled negatives");

    m.def(
        "category_metrics",
        [](const train::Checkpoint& ckpt, const data::SplitDataset& ds, const std::string& split,
           std::optional<std::vector<int>> cutoffs) {
            train::check_checkpoint(ckpt, "", ds.maps.digest());
            eval::EvalProtocol protocol = ckpt.config.protocol;
            if (cutoffs) protocol.cutoffs = *cutoffs;
            auto table = eval::category_metrics(ckpt.params, ds, protocol,
                                                eval::split_from_tag(split),
                                                ckpt.config.score_options());
            return metrics_to_dict(table);
        },
        py::arg("checkpoint"), py::arg("dataset"), py::arg("split") = "test",
        py::arg("cutoffs") = std::nullopt,
        "rank the true next category against the whole category set");

    m.def(
        "score_candidates",
        [](const train::Checkpoint& ckpt, const std::vector<int>& history_items,
           const std::vector<int>& history_cats, int user, const std::vector<int>& candidates) {
            return model::score_candidates(ckpt.params, history_items, history_cats, user,
                                           candidates, ckpt.config.score_options());
        },
        py::arg("checkpoint"), py::arg("history_items"), py::arg("history_cats"), py::arg("user"),
        py::arg("candidates"),
        "ranking scores for an explicit candidate list (dense 1-based ids)");

    m.def(
        "gradcheck",
        [](const std::string& variant) {
            auto report = train::gradcheck(variant);
            py::dict per_tensor;
            for (const auto& e : report.tensors) per_tensor[py::str(e.name)] = e.max_rel_err;
            py::dict out;
            out["max_rel_err"] = report.max_rel_err;
            out["tensors"] = per_tensor;
            return out;
        },
        py::arg("variant") = "tstm",
        "compare analytic gradients against central differences on a tiny instance");

    m.def("variants", [] {
        std::vector<std::string> tags;
        for (auto v : model::all_variants()) tags.push_back(model::variant_tag(v));
        return tags;
    });

#ifdef VERSION_INFO
    m.attr("__version__") = VERSION_INFO;
#else
    m.attr("__version__") = "dev";
#endif
}
