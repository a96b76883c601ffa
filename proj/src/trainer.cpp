#include "seqtrans/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace seqtrans::train {

using nlohmann::json;

void TrainConfig::validate() const {
    model::variant_from_tag(variant);
    if (d < 1 || d % 2 != 0) throw std::invalid_argument("config: d must be positive and even");
    if (window < 1) throw std::invalid_argument("config: window length must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: batch size must be >= 1");
    if (learning_rate <= 0) throw std::invalid_argument("config: learning rate must be positive");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("config: dropout must be in [0,1)");
    if (lambda < 0) throw std::invalid_argument("config: lambda must be >= 0");
    if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
    if (optimizer != "adam" && optimizer != "sgd")
        throw std::invalid_argument("config: unknown optimizer '" + optimizer + "'");
    if (grad_clip < 0) throw std::invalid_argument("config: grad_clip must be >= 0");
    protocol.validate();
}

model::ScoreOptions TrainConfig::score_options() const {
    model::ScoreOptions s;
    s.max_history = max_history;
    s.combine_heads = combine_heads;
    s.sample_at_eval = sample_at_eval;
    s.eval_eps_seed = mix_seed(seed, 0xEAu);
    return s;
}

namespace {

std::vector<double> mask_column(const model::Batch& batch, std::size_t t) {
    std::vector<double> col(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) col[b] = batch.mask[b * batch.L + t];
    return col;
}

// dense ids are 1-based; class indices drop the padding slot. Masked steps
// carry id 0 and their upstream gradient is exactly zero.
std::vector<int> class_column(const std::vector<int>& ids, std::size_t L, std::size_t batch_size,
                              std::size_t t) {
    std::vector<int> col(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) col[b] = std::max(0, ids[b * L + t] - 1);
    return col;
}

}  // namespace

LossBreakdown total_loss(nn::Tape& tape, const model::ForwardOutput& out,
                         const model::Batch& batch, double lambda) {
    const std::size_t L = batch.L, B = batch.size();
    auto check_len = [L](const std::vector<nn::Tensor>& v, const char* what) {
        if (!v.empty() && v.size() != L)
            throw std::invalid_argument(std::string("total_loss: ") + what + " stream has " +
                                        std::to_string(v.size()) + " steps, batch has " +
                                        std::to_string(L));
    };
    check_len(out.item_first, "item_first");
    check_len(out.item_final, "item_final");
    check_len(out.cat_logits, "cat");
    check_len(out.cat_extra, "cat_extra");
    check_len(out.kl_cat, "kl_cat");
    check_len(out.kl_item, "kl_item");
    check_len(out.kl_cat_extra, "kl_cat_extra");
    if (out.item_final.empty() && out.cat_logits.empty())
        throw std::invalid_argument("total_loss: forward output has no prediction head");

    double valid = 0.0;
    for (double m : batch.mask) valid += m;
    if (valid <= 0) throw std::invalid_argument("total_loss: batch has no valid steps");
    const double inv_valid = 1.0 / valid;

    std::vector<nn::Tensor> masks(L);
    for (std::size_t t = 0; t < L; ++t)
        masks[t] = tape.constant(mask_column(batch, t),
                                 std::vector<std::size_t>{B == 1 ? std::size_t{1} : B});

    auto masked_mean = [&](const std::vector<nn::Tensor>& xs) {
        nn::Tensor acc;
        for (std::size_t t = 0; t < L; ++t) {
            nn::Tensor s = tape.sum(tape.mul(xs[t], masks[t]));
            acc = acc.valid() ? tape.add(acc, s) : s;
        }
        return tape.scale(acc, inv_valid);
    };
    auto nll_mean = [&](const std::vector<nn::Tensor>& logits, const std::vector<int>& targets) {
        nn::Tensor acc;
        for (std::size_t t = 0; t < L; ++t) {
            std::vector<int> cls = class_column(targets, L, B, t);
            nn::Tensor ce = tape.softmax_cross_entropy(logits[t], cls);
            nn::Tensor s = tape.sum(tape.mul(ce, masks[t]));
            acc = acc.valid() ? tape.add(acc, s) : s;
        }
        return tape.scale(acc, inv_valid);
    };

    LossBreakdown lb;
    lb.valid_steps = valid;
    nn::Tensor nll_total, kl_total;
    auto emit = [&](const char* name, nn::Tensor mean, bool is_kl) {
        lb.components.emplace_back(name, mean.item());
        nn::Tensor& tot = is_kl ? kl_total : nll_total;
        tot = tot.valid() ? tape.add(tot, mean) : mean;
    };

    const bool two_item_heads = !out.item_first.empty();
    if (two_item_heads)
        emit("nll_item1", nll_mean(out.item_first, batch.target_items), false);
    else if (!out.item_final.empty())
        emit("nll_item", nll_mean(out.item_final, batch.target_items), false);
    if (!out.cat_logits.empty()) emit("nll_cat", nll_mean(out.cat_logits, batch.target_cats), false);
    if (!out.cat_extra.empty()) emit("nll_cat2", nll_mean(out.cat_extra, batch.target_cats), false);
    if (two_item_heads)
        emit("nll_item3", nll_mean(out.item_final, batch.target_items), false);
    if (!out.kl_cat.empty()) emit("kl_cat", masked_mean(out.kl_cat), true);
    if (!out.kl_cat_extra.empty()) emit("kl_cat2", masked_mean(out.kl_cat_extra), true);
    if (!out.kl_item.empty()) emit("kl_item", masked_mean(out.kl_item), true);

    lb.total = kl_total.valid() ? tape.add(nll_total, tape.scale(kl_total, lambda)) : nll_total;
    if (!std::isfinite(lb.total.item()))
        throw std::runtime_error("total_loss: non-finite loss");
    return lb;
}

AdamState AdamState::init(const std::vector<std::pair<std::string, nn::Array*>>& params) {
    AdamState s;
    for (const auto& [name, arr] : params) {
        s.m.emplace_back(arr->size(), 0.0);
        s.v.emplace_back(arr->size(), 0.0);
    }
    return s;
}

void adam_step(const std::vector<std::pair<std::string, nn::Array*>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state, double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient list sizes disagree");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        nn::Array& p = *params[k].second;
        const auto g = grads[k];
        if (g.size() != p.size())
            throw std::invalid_argument("adam_step: gradient shape mismatch for " +
                                        params[k].first);
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void sgd_step(const std::vector<std::pair<std::string, nn::Array*>>& params,
              const std::vector<std::span<const double>>& grads, double lr) {
    if (params.size() != grads.size())
        throw std::invalid_argument("sgd_step: parameter/gradient list sizes disagree");
    for (std::size_t k = 0; k < params.size(); ++k) {
        nn::Array& p = *params[k].second;
        const auto g = grads[k];
        if (g.size() != p.size())
            throw std::invalid_argument("sgd_step: gradient shape mismatch for " + params[k].first);
        for (std::size_t i = 0; i < g.size(); ++i) p.data[i] -= lr * g[i];
    }
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double clip) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double x : g) sq += x * x;
    const double norm = std::sqrt(sq);
    if (clip > 0.0 && norm > clip) {
        const double s = clip / norm;
        for (auto& g : grads)
            for (double& x : g) x *= s;
    }
    return norm;
}

FitResult fit(const data::SplitDataset& ds, const TrainConfig& config) {
    config.validate();
    if (ds.users.empty()) throw std::invalid_argument("fit: dataset has no users");
    const model::Variant variant = model::variant_from_tag(config.variant);

    std::vector<data::TrainingWindow> windows = data::all_windows(ds, config.window);
    if (windows.empty()) throw std::invalid_argument("fit: no training windows (all sequences too short)");

    model::ParamSet params =
        model::make_params(variant, ds.sizes(), config.d, mix_seed(config.seed, 0x11u));
    auto entries = params.entries();
    AdamState adam = AdamState::init(entries);

    // validation tracking needs cutoff 5 even if the caller dropped it
    eval::EvalProtocol val_protocol = config.protocol;
    if (!std::binary_search(val_protocol.cutoffs.begin(), val_protocol.cutoffs.end(), 5)) {
        val_protocol.cutoffs.push_back(5);
        std::sort(val_protocol.cutoffs.begin(), val_protocol.cutoffs.end());
    }

    FitResult result;
    model::ParamSet best = params;
    std::size_t best_epoch = 0;
    double best_ndcg = -1.0;
    std::size_t stale = 0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        auto batches =
            data::make_batches(windows, config.batch_size, mix_seed(config.seed, 0x5Fu, epoch));
        double loss_weighted = 0.0, valid_total = 0.0;
        std::vector<std::pair<std::string, double>> comp_sums;

        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const model::Batch& batch = batches[bi];
            nn::Tape tape;
            model::ForwardOptions fopts;
            fopts.training = true;
            fopts.dropout_rate = config.dropout;
            fopts.dropout_seed = mix_seed(config.seed, 0xD0u, epoch, bi);
            model::SeededEps eps(mix_seed(config.seed, 0xE5u, epoch, bi));
            fopts.eps = &eps;

            model::ForwardOutput out = model::forward(tape, params, batch, fopts);
            LossBreakdown lb = total_loss(tape, out, batch, config.lambda);
            tape.backward(lb.total);

            std::vector<std::vector<double>> grads;
            grads.reserve(entries.size());
            for (std::size_t k = 0; k < entries.size(); ++k) {
                auto g = out.params[k].second.grad();
                grads.emplace_back(g.begin(), g.end());
            }
            clip_global_norm(grads, config.grad_clip);
            std::vector<std::span<const double>> grad_spans(grads.begin(), grads.end());
            if (config.optimizer == "adam")
                adam_step(entries, grad_spans, adam, config.learning_rate);
            else
                sgd_step(entries, grad_spans, config.learning_rate);

            loss_weighted += lb.total.item() * lb.valid_steps;
            valid_total += lb.valid_steps;
            if (comp_sums.empty())
                for (const auto& [name, v] : lb.components) comp_sums.emplace_back(name, 0.0);
            for (std::size_t c = 0; c < lb.components.size(); ++c)
                comp_sums[c].second += lb.components[c].second * lb.valid_steps;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_weighted / valid_total;
        for (auto& [name, sum] : comp_sums) rec.components.emplace_back(name, sum / valid_total);

        // category-only variants are validated on the category ranking instead
        eval::MetricsTable val =
            model::has_item_head(variant)
                ? eval::evaluate(params, ds, val_protocol, eval::Split::valid,
                                 config.score_options())
                : eval::category_metrics(params, ds, val_protocol, eval::Split::valid,
                                         config.score_options());
        rec.val_hit5 = val.hit.at(5);
        rec.val_ndcg5 = val.ndcg.at(5);
        result.history.push_back(rec);

        if (rec.val_ndcg5 > best_ndcg) {
            best_ndcg = rec.val_ndcg5;
            best = params;
            best_epoch = epoch;
            stale = 0;
        } else {
            ++stale;
        }
        if (stale >= config.patience) break;
    }

    result.checkpoint.params = std::move(best);
    result.checkpoint.config = config;
    result.checkpoint.catalog_digest = ds.maps.digest();
    result.checkpoint.epoch = best_epoch;
    result.checkpoint.best_val_ndcg5 = best_ndcg;
    return result;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json protocol_to_json(const eval::EvalProtocol& p) {
    return json{{"negatives", p.negatives},
                {"cutoffs", p.cutoffs},
                {"seed", p.seed},
                {"tie_rule", p.tie_rule}};
}

eval::EvalProtocol protocol_from_json(const json& j) {
    eval::EvalProtocol p;
    p.negatives = j.at("negatives").get<std::size_t>();
    p.cutoffs = j.at("cutoffs").get<std::vector<int>>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.tie_rule = j.at("tie_rule").get<std::string>();
    return p;
}

json config_to_json(const TrainConfig& c) {
    return json{{"variant", c.variant},
                {"d", c.d},
                {"window", c.window},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"dropout", c.dropout},
                {"lambda", c.lambda},
                {"max_epochs", c.max_epochs},
                {"patience", c.patience},
                {"seed", c.seed},
                {"sample_at_eval", c.sample_at_eval},
                {"combine_heads", c.combine_heads},
                {"optimizer", c.optimizer},
                {"grad_clip", c.grad_clip},
                {"max_history", c.max_history},
                {"protocol", protocol_to_json(c.protocol)}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.variant = j.at("variant").get<std::string>();
    c.d = j.at("d").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.sample_at_eval = j.at("sample_at_eval").get<bool>();
    c.combine_heads = j.at("combine_heads").get<bool>();
    c.optimizer = j.at("optimizer").get<std::string>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.max_history = j.at("max_history").get<std::size_t>();
    c.protocol = protocol_from_json(j.at("protocol"));
    return c;
}

constexpr const char* kCkptMagic = "SEQTRANS-CKPT v1";

}  // namespace

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& variant,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "epoch,train_loss";
    for (const auto& name : model::loss_components(model::variant_from_tag(variant)))
        out << "," << name;
    out << ",val_hit5,val_ndcg5\n";
    for (const auto& r : history) {
        out << r.epoch << "," << fmt_double(r.train_loss);
        for (const auto& [name, v] : r.components) out << "," << fmt_double(v);
        out << "," << fmt_double(r.val_hit5) << "," << fmt_double(r.val_ndcg5) << "\n";
    }
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");

    json meta;
    meta["variant"] = model::variant_tag(ckpt.params.variant);
    meta["d"] = ckpt.params.d;
    meta["sizes"] = {{"items", ckpt.params.sizes.items},
                     {"cats", ckpt.params.sizes.cats},
                     {"users", ckpt.params.sizes.users}};
    meta["config"] = config_to_json(ckpt.config);
    meta["catalog_digest"] = ckpt.catalog_digest;
    meta["epoch"] = ckpt.epoch;
    meta["best_val_ndcg5"] = ckpt.best_val_ndcg5;
    json tensors = json::array();
    for (const auto& [name, arr] : ckpt.params.entries())
        tensors.push_back({{"name", name}, {"shape", arr->shape}});
    meta["tensors"] = tensors;

    out << kCkptMagic << "\n" << meta.dump() << "\n";
    for (const auto& [name, arr] : ckpt.params.entries())
        out.write(reinterpret_cast<const char*>(arr->data.data()),
                  static_cast<std::streamsize>(arr->data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint '" + path + "': empty file");
    if (line != kCkptMagic)
        throw std::runtime_error("checkpoint '" + path + "': unsupported header '" + line +
                                 "' (expected '" + kCkptMagic + "')");
    if (!std::getline(in, line))
        throw std::runtime_error("checkpoint '" + path + "': missing metadata");
    json meta;
    try {
        meta = json::parse(line);
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint '" + path + "': corrupt metadata: " + e.what());
    }

    Checkpoint ckpt;
    ckpt.config = config_from_json(meta.at("config"));
    ckpt.catalog_digest = meta.at("catalog_digest").get<std::uint64_t>();
    ckpt.epoch = meta.at("epoch").get<std::size_t>();
    ckpt.best_val_ndcg5 = meta.at("best_val_ndcg5").get<double>();

    model::CatalogSizes sizes;
    sizes.items = meta.at("sizes").at("items").get<std::size_t>();
    sizes.cats = meta.at("sizes").at("cats").get<std::size_t>();
    sizes.users = meta.at("sizes").at("users").get<std::size_t>();
    ckpt.params = model::make_params(model::variant_from_tag(meta.at("variant").get<std::string>()),
                                     sizes, meta.at("d").get<std::size_t>(), std::nullopt);

    auto entries = ckpt.params.entries();
    const json& tensors = meta.at("tensors");
    if (tensors.size() != entries.size())
        throw std::runtime_error("checkpoint '" + path + "': tensor manifest mismatch");
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& [name, arr] = entries[k];
        if (tensors[k].at("name").get<std::string>() != name ||
            tensors[k].at("shape").get<std::vector<std::size_t>>() != arr->shape)
            throw std::runtime_error("checkpoint '" + path + "': tensor manifest mismatch at '" +
                                     name + "'");
        in.read(reinterpret_cast<char*>(arr->data.data()),
                static_cast<std::streamsize>(arr->data.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(arr->data.size() * sizeof(double)))
            throw std::runtime_error("checkpoint '" + path + "': truncated at tensor '" + name +
                                     "'");
    }
    in.peek();
    if (!in.eof()) throw std::runtime_error("checkpoint '" + path + "': trailing data");
    return ckpt;
}

void check_checkpoint(const Checkpoint& ckpt, const std::string& expected_variant,
                      std::optional<std::uint64_t> dataset_digest) {
    if (!expected_variant.empty() &&
        model::variant_tag(ckpt.params.variant) != expected_variant)
        throw std::runtime_error("checkpoint holds variant '" +
                                 model::variant_tag(ckpt.params.variant) +
                                 "' but evaluation is configured for '" + expected_variant + "'");
    if (dataset_digest && *dataset_digest != ckpt.catalog_digest)
        throw std::runtime_error("checkpoint catalog digest does not match the dataset");
}

GradCheckReport gradcheck(const std::string& variant, const GradTamper& tamper) {
    const model::Variant v = model::variant_from_tag(variant);
    const model::CatalogSizes sizes{5, 2, 2};
    const std::size_t d = 4, L = 2;
    model::ParamSet params = model::make_params(v, sizes, d, 0x9c0ffeeULL);

    model::Batch batch;
    batch.L = L;
    batch.users = {0, 1};
    batch.items = {1, 3, 2, 5};
    batch.cats = {1, 2, 2, 1};
    batch.target_items = {3, 4, 5, 1};
    batch.target_cats = {2, 1, 1, 2};
    batch.mask = {1, 1, 1, 1};
    const double lambda = 1.0;

    auto loss_value = [&]() {
        nn::Tape tape(false);
        model::ForwardOptions fopts;
        model::SeededEps eps(0x715eedULL);
        fopts.eps = &eps;
        model::ForwardOutput out = model::forward(tape, params, batch, fopts);
        return total_loss(tape, out, batch, lambda).total.item();
    };

    // analytic gradients
    std::vector<std::vector<double>> analytic;
    {
        nn::Tape tape;
        model::ForwardOptions fopts;
        model::SeededEps eps(0x715eedULL);
        fopts.eps = &eps;
        model::ForwardOutput out = model::forward(tape, params, batch, fopts);
        LossBreakdown lb = total_loss(tape, out, batch, lambda);
        tape.backward(lb.total);
        for (const auto& [name, leaf] : out.params) {
            auto g = leaf.grad();
            analytic.emplace_back(g.begin(), g.end());
            if (tamper) tamper(name, analytic.back());
        }
    }

    GradCheckReport report;
    auto entries = params.entries();
    const double h = 1e-3;
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& [name, arr] = entries[k];
        GradCheckEntry entry{name, 0.0};
        for (std::size_t i = 0; i < arr->data.size(); ++i) {
            const double saved = arr->data[i];
            arr->data[i] = saved + h;
            const double f_plus = loss_value();
            arr->data[i] = saved - h;
            const double f_minus = loss_value();
            arr->data[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[k][i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        report.tensors.push_back(entry);
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    }
    return report;
}

}  // namespace seqtrans::train
