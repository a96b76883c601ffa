#include "seqtrans/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqtrans/datapipe.hpp"
#include "seqtrans/evaluator.hpp"
#include "seqtrans/model.hpp"
#include "seqtrans/synth.hpp"
#include "seqtrans/trainer.hpp"

namespace seqtrans::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CheckFailed {};  // maps to exit code 1

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

using ResolvedConfig = std::vector<std::pair<std::string, std::string>>;

void write_resolved_config(const ResolvedConfig& entries, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::string text;
    for (const auto& [key, value] : entries) text += key + " = " + value + "\n";
    write_text(out_dir / "config.resolved", text);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string join_cutoffs(const std::vector<int>& cutoffs) {
    std::string s;
    for (int n : cutoffs) {
        if (!s.empty()) s += ",";
        s += std::to_string(n);
    }
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Flat `key = value` config files (# comments). Values are injected as
// --key=value tokens ahead of the explicit flags, so the command line wins
// and unknown keys fail the parse.
std::vector<std::string> expand_config_args(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::size_t cfg_at = 0;
    std::string cfg_path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            cfg_at = i;
            cfg_path = args[i + 1];
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            cfg_at = i;
            cfg_path = args[i].substr(9);
            break;
        }
    }
    if (cfg_at == 0) return args;
    if (cfg_at == 1) throw std::runtime_error("--config must follow a subcommand");

    std::ifstream in(cfg_path);
    if (!in) throw std::runtime_error("cannot open config file '" + cfg_path + "'");
    std::vector<std::string> injected;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(cfg_path + ": line " + std::to_string(line_no) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error(cfg_path + ": line " + std::to_string(line_no) +
                                     ": empty key");
        injected.push_back("--" + key + "=" + value);
    }

    std::vector<std::string> out(args.begin(), args.begin() + 2);  // prog + subcommand
    out.insert(out.end(), injected.begin(), injected.end());
    for (std::size_t i = 2; i < args.size(); ++i) {
        if (i == cfg_at) {
            if (args[i] == "--config") ++i;  // skip the path token too
            continue;
        }
        out.push_back(args[i]);
    }
    return out;
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return in;
}

// shared train/eval options; attached to the train and sweep commands
struct RunFlags {
    std::string variant = "tstm";
    std::size_t d = 50;
    std::size_t window = 5;
    std::size_t batch_size = 128;
    double learning_rate = 0.001;
    double dropout = 0.2;
    double lambda = 1.0;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    bool sample_at_eval = false;
    bool combine_heads = false;
    std::string optimizer = "adam";
    double grad_clip = 5.0;
    std::size_t max_history = 0;
    std::size_t negatives = 500;
    std::vector<int> cutoffs = {1, 5, 10, 15, 20};
    std::uint64_t eval_seed = 0;

    train::TrainConfig to_config() const {
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
        return c;
    }

    ResolvedConfig resolved() const {
        return {{"variant", variant},
                {"d", std::to_string(d)},
                {"L", std::to_string(window)},
                {"batch-size", std::to_string(batch_size)},
                {"lr", fmt_double(learning_rate)},
                {"dropout", fmt_double(dropout)},
                {"lambda", fmt_double(lambda)},
                {"max-epochs", std::to_string(max_epochs)},
                {"patience", std::to_string(patience)},
                {"seed", std::to_string(seed)},
                {"sample-at-eval", sample_at_eval ? "true" : "false"},
                {"combine-heads", combine_heads ? "true" : "false"},
                {"optimizer", optimizer},
                {"grad-clip", fmt_double(grad_clip)},
                {"max-history", std::to_string(max_history)},
                {"negatives", std::to_string(negatives)},
                {"cutoffs", join_cutoffs(cutoffs)},
                {"eval-seed", std::to_string(eval_seed)}};
    }
};

void add_config_flag(CLI::App* sub, std::string& sink) {
    sub->add_option("--config", sink,
                    "flat key = value file; explicit command-line flags win");
}

void add_train_flags(CLI::App* sub, RunFlags& f) {
    sub->add_option("--variant", f.variant, "model variant: lstm|ci|ic|ivaec|ici|tstm|s-tstm")
        ->capture_default_str();
    sub->add_option("--d", f.d, "embedding and hidden width")->capture_default_str();
    sub->add_option("--L,--window", f.window, "sliding window length")->capture_default_str();
    sub->add_option("--batch-size", f.batch_size)->capture_default_str();
    sub->add_option("--lr,--learning-rate", f.learning_rate)->capture_default_str();
    sub->add_option("--dropout", f.dropout, "embedding dropout rate")->capture_default_str();
    sub->add_option("--lambda", f.lambda, "weight on the divergence terms")->capture_default_str();
    sub->add_option("--max-epochs", f.max_epochs)->capture_default_str();
    sub->add_option("--patience", f.patience, "epochs without validation improvement before stop")
        ->capture_default_str();
    sub->add_option("--seed", f.seed)->capture_default_str();
    sub->add_flag("--sample-at-eval", f.sample_at_eval,
                  "sample the latents at evaluation instead of using the posterior mean");
    sub->add_flag("--combine-heads", f.combine_heads,
                  "add the encoder-side item logits to the ranking scores");
    sub->add_option("--optimizer", f.optimizer, "adam|sgd")->capture_default_str();
    sub->add_option("--grad-clip", f.grad_clip, "global-norm gradient clip, 0 disables")
        ->capture_default_str();
    sub->add_option("--max-history", f.max_history,
                    "evaluation history truncation, 0 = unlimited")
        ->capture_default_str();
    sub->add_option("--negatives", f.negatives, "sampled negatives per evaluation case")
        ->capture_default_str();
    sub->add_option("--cutoffs", f.cutoffs, "metric cutoffs")
        ->delimiter(',')
        ->capture_default_str();
    sub->add_option("--eval-seed", f.eval_seed, "negative-sampling seed")->capture_default_str();
}

struct FilterCounts {
    std::size_t users = 0, items = 0, interactions = 0;
};

FilterCounts filter_counts(const std::vector<data::InteractionEvent>& events) {
    std::set<std::string> users, items;
    for (const auto& e : events) {
        users.insert(e.user);
        items.insert(e.item);
    }
    return {users.size(), items.size(), events.size()};
}

void write_metrics_pair(const fs::path& out_dir, const std::string& stem,
                        const eval::MetricsTable& table, const std::string& variant,
                        const std::string& split, const eval::EvalProtocol& protocol) {
    write_text(out_dir / (stem + ".csv"), eval::metrics_csv(table));
    write_text(out_dir / (stem + ".json"), eval::metrics_json(table, variant, split, protocol));
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"seq2seq translation models for category-aware sequential recommendation"};
    app.name("seqtrans");
    app.require_subcommand(1);

    // ---------------- prepare ----------------
    auto* prepare = app.add_subcommand("prepare", "ingest, filter and split an interaction log");
    prepare->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    struct {
        std::string input, format = "canonical", out, config;
        std::size_t item_min = 5, user_min = 5, user_min_records = 0;
        std::string genre_rule = "first", filter_mode = "fixpoint";
        std::uint64_t genre_seed = 0;
    } prep;
    add_config_flag(prepare, prep.config);
    prepare->add_option("--input", prep.input,
                        "canonical TSV file, or a MovieLens directory with ratings.dat/movies.dat")
        ->required();
    prepare->add_option("--format", prep.format, "canonical|movielens")->capture_default_str();
    prepare->add_option("--item-min", prep.item_min, "min distinct users per item")
        ->capture_default_str();
    prepare->add_option("--user-min", prep.user_min, "min distinct items per user")
        ->capture_default_str();
    prepare->add_option("--user-min-records", prep.user_min_records,
                        "drop users with fewer events than this (0 disables)")
        ->capture_default_str();
    prepare->add_option("--genre-rule", prep.genre_rule, "first|random_seeded")
        ->capture_default_str();
    prepare->add_option("--genre-seed", prep.genre_seed)->capture_default_str();
    prepare->add_option("--filter-mode", prep.filter_mode, "fixpoint|single_pass")
        ->capture_default_str();
    prepare->add_option("--out", prep.out, "output directory")->required();
    prepare->callback([&] {
        const fs::path out_dir(prep.out);
        write_resolved_config({{"input", prep.input},
                               {"format", prep.format},
                               {"item-min", std::to_string(prep.item_min)},
                               {"user-min", std::to_string(prep.user_min)},
                               {"user-min-records", std::to_string(prep.user_min_records)},
                               {"genre-rule", prep.genre_rule},
                               {"genre-seed", std::to_string(prep.genre_seed)},
                               {"filter-mode", prep.filter_mode},
                               {"out", prep.out}},
                              out_dir);

        std::vector<data::InteractionEvent> events;
        std::size_t dropped_unknown = 0;
        if (prep.format == "canonical") {
            auto in = open_input(prep.input);
            events = data::parse_canonical(in);
        } else if (prep.format == "movielens") {
            auto ratings = open_input(fs::path(prep.input) / "ratings.dat");
            auto movies = open_input(fs::path(prep.input) / "movies.dat");
            auto res = data::parse_movielens(ratings, movies, prep.genre_rule, prep.genre_seed);
            events = std::move(res.events);
            dropped_unknown = res.dropped_unknown_movies;
        } else {
            throw std::runtime_error("unknown format '" + prep.format + "'");
        }

        const auto mode = prep.filter_mode == "fixpoint" ? data::FilterMode::fixpoint
                          : prep.filter_mode == "single_pass"
                              ? data::FilterMode::single_pass
                              : throw std::runtime_error("unknown filter mode '" +
                                                         prep.filter_mode + "'");
        const auto alt_mode = mode == data::FilterMode::fixpoint ? data::FilterMode::single_pass
                                                                 : data::FilterMode::fixpoint;
        auto alt_filtered = data::ncore_filter(events, prep.item_min, prep.user_min,
                                               prep.user_min_records, alt_mode);
        auto filtered = data::ncore_filter(std::move(events), prep.item_min, prep.user_min,
                                           prep.user_min_records, mode);
        const FilterCounts chosen = filter_counts(filtered);
        const FilterCounts alt = filter_counts(alt_filtered);
        alt_filtered.clear();

        data::SplitReport report;
        data::SplitDataset ds = data::leave_one_out_split(filtered, &report);
        data::save_split(ds, (out_dir / "split.cache").string());
        const data::DatasetStats stats = data::dataset_stats(ds);

        json j;
        j["users"] = stats.users;
        j["items"] = stats.items;
        j["interactions"] = stats.interactions;
        j["categories"] = stats.categories;
        j["sparsity"] = stats.sparsity;
        j["dropped_short_users"] = report.dropped_short_users;
        j["dropped_unknown_movies"] = dropped_unknown;
        j["filter"] = {{"mode", prep.filter_mode},
                       {"users", chosen.users},
                       {"items", chosen.items},
                       {"interactions", chosen.interactions}};
        j["filter_alt"] = {{"mode", alt_mode == data::FilterMode::fixpoint ? "fixpoint"
                                                                           : "single_pass"},
                           {"users", alt.users},
                           {"items", alt.items},
                           {"interactions", alt.interactions}};
        j["filter_modes_agree"] = chosen.users == alt.users && chosen.items == alt.items &&
                                  chosen.interactions == alt.interactions;
        write_text(out_dir / "stats.json", j.dump(2) + "\n");

        std::cout << "users " << stats.users << "  items " << stats.items << "  interactions "
                  << stats.interactions << "  categories " << stats.categories << "  sparsity "
                  << fmt4(100.0 * stats.sparsity) << "%\n";
        if (!j["filter_modes_agree"].get<bool>())
            std::cout << "note: fixpoint and single-pass filtering disagree; see stats.json\n";
        std::cout << "split cache: " << (out_dir / "split.cache").string() << "\n";
    });

    // ---------------- train ----------------
    auto* tr = app.add_subcommand("train", "train a variant and keep the best checkpoint");
    tr->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    RunFlags tf;
    std::string tr_data, tr_out, tr_config;
    add_config_flag(tr, tr_config);
    tr->add_option("--data", tr_data, "split cache from `prepare`")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    add_train_flags(tr, tf);
    tr->callback([&] {
        const fs::path out_dir(tr_out);
        ResolvedConfig rc = {{"data", tr_data}, {"out", tr_out}};
        for (auto& kv : tf.resolved()) rc.push_back(kv);
        write_resolved_config(rc, out_dir);

        data::SplitDataset ds = data::load_split(tr_data);
        train::TrainConfig config = tf.to_config();
        train::FitResult fit = train::fit(ds, config);
        train::write_history_csv(fit.history, config.variant,
                                 (out_dir / "history.csv").string());
        train::save_checkpoint(fit.checkpoint, (out_dir / "checkpoint.bin").string());
        std::cout << "variant " << config.variant << "  epochs " << fit.history.size()
                  << "  best epoch " << fit.checkpoint.epoch << "  val NDCG@5 "
                  << fmt4(fit.checkpoint.best_val_ndcg5) << "\n";
        std::cout << "checkpoint: " << (out_dir / "checkpoint.bin").string() << "\n";
    });

    // ---------------- evaluate ----------------
    auto* ev = app.add_subcommand("evaluate", "rank held-out items under the sampled protocol");
    ev->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    struct {
        std::string data, checkpoint, out, split = "test", expect_variant, config;
        std::size_t negatives = 0;  // 0 = take from the checkpoint config
        std::vector<int> cutoffs;
        std::uint64_t eval_seed = 0;
        bool eval_seed_set = false;
        bool categories = false;
        bool exclude_valid = false;
        bool full_catalog = false;
    } ef;
    add_config_flag(ev, ef.config);
    ev->add_option("--data", ef.data, "split cache")->required();
    ev->add_option("--checkpoint", ef.checkpoint)->required();
    ev->add_option("--out", ef.out, "output directory")->required();
    ev->add_option("--split", ef.split, "valid|test")->capture_default_str();
    ev->add_option("--negatives", ef.negatives, "override the checkpoint protocol");
    ev->add_option("--cutoffs", ef.cutoffs, "override the checkpoint protocol")->delimiter(',');
    ev->add_option("--eval-seed", ef.eval_seed)->each([&](const std::string&) {
        ef.eval_seed_set = true;
    });
    ev->add_option("--expect-variant", ef.expect_variant,
                   "fail unless the checkpoint holds this variant");
    ev->add_flag("--categories", ef.categories, "also rank the next category");
    ev->add_flag("--full-catalog", ef.full_catalog,
                 "rank against every unvisited item instead of sampled negatives");
    ev->add_flag("--exclude-valid-history", ef.exclude_valid,
                 "do not append the validation event to test histories");
    ev->callback([&] {
        const fs::path out_dir(ef.out);
        data::SplitDataset ds = data::load_split(ef.data);
        train::Checkpoint ckpt = train::load_checkpoint(ef.checkpoint);
        train::check_checkpoint(ckpt, ef.expect_variant, ds.maps.digest());

        eval::EvalProtocol protocol = ckpt.config.protocol;
        if (ef.negatives > 0) protocol.negatives = ef.negatives;
        if (!ef.cutoffs.empty()) protocol.cutoffs = ef.cutoffs;
        if (ef.eval_seed_set) protocol.seed = ef.eval_seed;
        protocol.full_catalog = ef.full_catalog;
        const eval::Split split = eval::split_from_tag(ef.split);
        eval::EvalOptions eopts;
        eopts.include_valid_in_test_history = !ef.exclude_valid;
        const std::string variant = model::variant_tag(ckpt.params.variant);

        write_resolved_config(
            {{"data", ef.data},
             {"checkpoint", ef.checkpoint},
             {"out", ef.out},
             {"split", ef.split},
             {"negatives", std::to_string(protocol.negatives)},
             {"cutoffs", join_cutoffs(protocol.cutoffs)},
             {"eval-seed", std::to_string(protocol.seed)},
             {"expect-variant", ef.expect_variant},
             {"categories", ef.categories ? "true" : "false"},
             {"full-catalog", ef.full_catalog ? "true" : "false"},
             {"exclude-valid-history", ef.exclude_valid ? "true" : "false"}},
            out_dir);

        if (model::has_item_head(ckpt.params.variant)) {
            eval::MetricsTable table = eval::evaluate(ckpt.params, ds, protocol, split,
                                                      ckpt.config.score_options(), eopts);
            write_metrics_pair(out_dir, "metrics", table, variant, ef.split, protocol);
            std::cout << "item ranking (" << ef.split << ", "
                      << (protocol.full_catalog ? std::string("full catalog")
                                                : "N=" + std::to_string(protocol.negatives))
                      << ")\n"
                      << eval::metrics_pretty(table);
        }
        if (ef.categories || !model::has_item_head(ckpt.params.variant)) {
            eval::MetricsTable cat = eval::category_metrics(ckpt.params, ds, protocol, split,
                                                            ckpt.config.score_options(), eopts);
            write_metrics_pair(out_dir, "category_metrics", cat, variant, ef.split, protocol);
            std::cout << "category ranking (" << ef.split << ", all categories)\n"
                      << eval::metrics_pretty(cat);
        }
    });

    // ---------------- gradcheck ----------------
    auto* gc = app.add_subcommand("gradcheck",
                                  "compare analytic gradients against central differences");
    std::string gc_variant = "tstm";
    gc->add_option("--variant", gc_variant, "variant tag, or 'all'")->capture_default_str();
    gc->callback([&] {
        std::vector<std::string> tags;
        if (gc_variant == "all")
            for (auto v : model::all_variants()) tags.push_back(model::variant_tag(v));
        else
            tags.push_back(gc_variant);
        bool ok = true;
        for (const auto& tag : tags) {
            train::GradCheckReport report = train::gradcheck(tag);
            std::cout << tag << ": max relative error " << report.max_rel_err << "\n";
            for (const auto& e : report.tensors)
                std::cout << "  " << e.name << "  " << e.max_rel_err << "\n";
            ok = ok && report.max_rel_err < 1e-4;
        }
        if (!ok) {
            std::cout << "FAIL: gradient mismatch above 1e-4\n";
            throw CheckFailed{};
        }
        std::cout << "OK\n";
    });

    // ---------------- synth ----------------
    auto* sy = app.add_subcommand("synth", "generate a category-walk benchmark dataset");
    sy->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    struct {
        std::size_t K = 8, M = 25, T = 30, users = 2000;
        bool det_cycle = false;
        double cycle_mass = -1.0;
        std::string matrix_file, out, config;
        std::uint64_t seed = 7;
        std::size_t negatives = 100;
        std::vector<int> cutoffs = {1, 5, 10, 15, 20};
        std::uint64_t eval_seed = 0;
    } sf;
    add_config_flag(sy, sf.config);
    sy->add_option("--K,--categories", sf.K)->capture_default_str();
    sy->add_option("--M,--items-per-cat", sf.M)->capture_default_str();
    sy->add_option("--T,--seq-len", sf.T)->capture_default_str();
    sy->add_option("--users", sf.users)->capture_default_str();
    sy->add_flag("--det-cycle", sf.det_cycle, "deterministic category cycle");
    sy->add_option("--cycle-mass", sf.cycle_mass,
                   "cycle transition probability, remainder spread uniformly");
    sy->add_option("--matrix-file", sf.matrix_file, "K rows of K transition probabilities");
    sy->add_option("--seed", sf.seed)->capture_default_str();
    sy->add_option("--negatives", sf.negatives, "oracle protocol negatives")
        ->capture_default_str();
    sy->add_option("--cutoffs", sf.cutoffs)->delimiter(',')->capture_default_str();
    sy->add_option("--eval-seed", sf.eval_seed)->capture_default_str();
    sy->add_option("--out", sf.out, "output directory")->required();
    sy->callback([&] {
        const fs::path out_dir(sf.out);
        write_resolved_config(
            {{"K", std::to_string(sf.K)},
             {"M", std::to_string(sf.M)},
             {"T", std::to_string(sf.T)},
             {"users", std::to_string(sf.users)},
             {"det-cycle", sf.det_cycle ? "true" : "false"},
             {"cycle-mass", fmt_double(sf.cycle_mass)},
             {"matrix-file", sf.matrix_file},
             {"seed", std::to_string(sf.seed)},
             {"negatives", std::to_string(sf.negatives)},
             {"cutoffs", join_cutoffs(sf.cutoffs)},
             {"eval-seed", std::to_string(sf.eval_seed)},
             {"out", sf.out}},
            out_dir);

        synth::SynthSpec spec;
        if (sf.det_cycle) {
            spec = synth::SynthSpec::det_cycle(sf.K, sf.M, sf.T, sf.users, sf.seed);
        } else if (sf.cycle_mass >= 0.0) {
            spec = synth::SynthSpec::noisy_cycle(sf.K, sf.M, sf.T, sf.users, sf.cycle_mass,
                                                 sf.seed);
        } else if (!sf.matrix_file.empty()) {
            spec.categories = sf.K;
            spec.items_per_cat = sf.M;
            spec.seq_len = sf.T;
            spec.users = sf.users;
            spec.seed = sf.seed;
            spec.transition.clear();
            auto in = open_input(sf.matrix_file);
            double v;
            while (in >> v) spec.transition.push_back(v);
        } else {
            throw std::runtime_error("one of --det-cycle, --cycle-mass, --matrix-file required");
        }
        spec.validate();

        auto events = synth::generate(spec);
        data::write_canonical_tsv(events, (out_dir / "data.tsv").string());
        synth::save_spec(spec, (out_dir / "spec.txt").string());

        eval::EvalProtocol protocol;
        protocol.negatives = sf.negatives;
        protocol.cutoffs = sf.cutoffs;
        protocol.seed = sf.eval_seed;
        synth::OracleReport oracle = synth::bayes_oracle(spec, protocol);
        write_text(out_dir / "oracle.json", synth::oracle_json(oracle, spec, protocol));
        std::cout << "events " << events.size() << "  oracle category accuracy "
                  << fmt4(oracle.category_accuracy) << "  oracle Hit@5 "
                  << fmt4(oracle.hit.count(5) ? oracle.hit.at(5) : 0.0) << "\n";
    });

    // ---------------- sweep ----------------
    auto* sw = app.add_subcommand("sweep", "train/evaluate over a grid of lambda or L");
    sw->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    RunFlags wf;
    struct {
        std::string param = "lambda", data, out, config;
        std::vector<double> values;
    } swf;
    add_config_flag(sw, swf.config);
    sw->add_option("--param", swf.param, "lambda|L")->capture_default_str();
    sw->add_option("--values", swf.values, "grid values")->delimiter(',')->required();
    sw->add_option("--data", swf.data, "split cache")->required();
    sw->add_option("--out", swf.out, "output directory")->required();
    add_train_flags(sw, wf);
    sw->callback([&] {
        if (swf.param != "lambda" && swf.param != "L")
            throw std::runtime_error("sweep parameter must be lambda or L");
        const fs::path out_dir(swf.out);
        std::string values_text;
        for (double v : swf.values) {
            if (!values_text.empty()) values_text += ",";
            values_text += fmt_double(v);
        }
        ResolvedConfig rc = {{"param", swf.param},
                             {"values", values_text},
                             {"data", swf.data},
                             {"out", swf.out}};
        for (auto& kv : wf.resolved()) rc.push_back(kv);
        write_resolved_config(rc, out_dir);

        data::SplitDataset ds = data::load_split(swf.data);

        std::ostringstream csv;
        csv << "param,value,hit5,ndcg5\n";
        for (double value : swf.values) {
            train::TrainConfig config = wf.to_config();
            if (swf.param == "lambda") {
                config.lambda = value;
            } else {
                if (value < 1 || value != std::floor(value))
                    throw std::runtime_error("L sweep values must be positive integers");
                config.window = static_cast<std::size_t>(value);
            }
            if (!std::binary_search(config.protocol.cutoffs.begin(),
                                    config.protocol.cutoffs.end(), 5)) {
                config.protocol.cutoffs.push_back(5);
                std::sort(config.protocol.cutoffs.begin(), config.protocol.cutoffs.end());
            }

            std::ostringstream tag;
            tag << swf.param << "-" << value;
            const fs::path run_dir = out_dir / tag.str();
            fs::create_directories(run_dir);

            train::FitResult fit = train::fit(ds, config);
            train::write_history_csv(fit.history, config.variant,
                                     (run_dir / "history.csv").string());
            train::save_checkpoint(fit.checkpoint, (run_dir / "checkpoint.bin").string());

            const bool item_head = model::has_item_head(fit.checkpoint.params.variant);
            eval::MetricsTable table =
                item_head ? eval::evaluate(fit.checkpoint.params, ds, config.protocol,
                                           eval::Split::test, config.score_options())
                          : eval::category_metrics(fit.checkpoint.params, ds, config.protocol,
                                                   eval::Split::test, config.score_options());
            write_metrics_pair(run_dir, "metrics", table, config.variant, "test",
                               config.protocol);
            char row[128];
            std::snprintf(row, sizeof(row), "%s,%.17g,%.17g,%.17g\n", swf.param.c_str(), value,
                          table.hit.at(5), table.ndcg.at(5));
            csv << row;
            std::cout << swf.param << "=" << value << "  Hit@5 " << fmt4(table.hit.at(5))
                      << "  NDCG@5 " << fmt4(table.ndcg.at(5)) << "\n";
        }
        write_text(out_dir / "sweep.csv", csv.str());
    });

    try {
        std::vector<std::string> args = expand_config_args(argc, argv);
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        reversed.pop_back();  // drop the program name
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const CheckFailed&) {
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace seqtrans::cli
