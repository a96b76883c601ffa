#include "seqtrans/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace seqtrans::model {

namespace {

const std::vector<std::pair<Variant, std::string>>& tag_table() {
    static const std::vector<std::pair<Variant, std::string>> t = {
        {Variant::lstm, "lstm"}, {Variant::ci, "ci"},     {Variant::ic, "ic"},
        {Variant::ivaec, "ivaec"}, {Variant::ici, "ici"}, {Variant::tstm, "tstm"},
        {Variant::stsm, "s-tstm"},
    };
    return t;
}

}  // namespace

Variant variant_from_tag(const std::string& tag) {
    for (const auto& [v, t] : tag_table())
        if (t == tag) return v;
    throw std::invalid_argument("unknown model variant '" + tag + "'");
}

const std::string& variant_tag(Variant v) {
    for (const auto& [vv, t] : tag_table())
        if (vv == v) return t;
    throw std::logic_error("unmapped variant");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::lstm, Variant::ci,   Variant::ic,
                                           Variant::ivaec, Variant::ici, Variant::tstm,
                                           Variant::stsm};
    return v;
}

bool has_item_head(Variant v) {
    return v == Variant::lstm || v == Variant::ci || v == Variant::ici || v == Variant::tstm ||
           v == Variant::stsm;
}

bool has_cat_head(Variant v) { return v != Variant::lstm; }

bool has_vae(Variant v) {
    return v == Variant::ivaec || v == Variant::tstm || v == Variant::stsm;
}

const std::vector<std::string>& loss_components(Variant v) {
    static const std::vector<std::string> lstm = {"nll_item"};
    static const std::vector<std::string> ci = {"nll_item", "nll_cat"};
    static const std::vector<std::string> ic = {"nll_cat"};
    static const std::vector<std::string> ivaec = {"nll_cat", "kl_cat"};
    static const std::vector<std::string> ici = {"nll_item1", "nll_cat", "nll_item3"};
    static const std::vector<std::string> tstm = {"nll_item1", "nll_cat", "nll_item3", "kl_cat",
                                                  "kl_item"};
    static const std::vector<std::string> stsm = {"nll_item1", "nll_cat", "nll_cat2", "nll_item3",
                                                  "kl_cat", "kl_cat2", "kl_item"};
    switch (v) {
        case Variant::lstm: return lstm;
        case Variant::ci: return ci;
        case Variant::ic: return ic;
        case Variant::ivaec: return ivaec;
        case Variant::ici: return ici;
        case Variant::tstm: return tstm;
        case Variant::stsm: return stsm;
    }
    throw std::logic_error("unmapped variant");
}

std::vector<std::pair<std::string, nn::Array*>> ParamSet::entries() {
    std::vector<std::pair<std::string, nn::Array*>> out;
    auto push = [&out](const char* name, nn::Array& a) {
        if (!a.data.empty()) out.emplace_back(name, &a);
    };
    auto push_lstm = [&](const char* base, nn::LstmParams& p) {
        if (p.bias.data.empty()) return;
        out.emplace_back(std::string(base) + ".w_input", &p.w_input);
        out.emplace_back(std::string(base) + ".w_hidden", &p.w_hidden);
        out.emplace_back(std::string(base) + ".bias", &p.bias);
    };
    push("item_emb", item_emb);
    push("cat_emb", cat_emb);
    push("user_emb", user_emb);
    push_lstm("lstm1", lstm1);
    push_lstm("lstm2", lstm2);
    push_lstm("lstm3", lstm3);
    push_lstm("lstm2_extra", lstm2_extra);
    push_lstm("lstm3_extra", lstm3_extra);
    push("z_proj", z_proj);
    push("z_proj_extra", z_proj_extra);
    push("fusion", fusion);
    push("head_item", head_item);
    push("head_item_alt", head_item_alt);
    push("head_item_latent", head_item_latent);
    push("head_cat", head_cat);
    push("head_cat_extra", head_cat_extra);
    return out;
}

std::vector<std::pair<std::string, const nn::Array*>> ParamSet::entries() const {
    std::vector<std::pair<std::string, const nn::Array*>> out;
    for (auto& [name, arr] : const_cast<ParamSet*>(this)->entries()) out.emplace_back(name, arr);
    return out;
}

std::size_t ParamSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, arr] : entries()) n += arr->size();
    return n;
}

ParamSet make_params(Variant v, CatalogSizes sizes, std::size_t d,
                     std::optional<std::uint64_t> seed) {
    if (d == 0) throw std::invalid_argument("make_params: d must be positive");
    if (has_vae(v) && d % 2 != 0)
        throw std::invalid_argument("make_params: latent variants need even d, got " +
                                    std::to_string(d));
    ParamSet p;
    p.variant = v;
    p.d = d;
    p.sizes = sizes;
    const std::size_t items = sizes.items, cats = sizes.cats;

    p.item_emb = nn::Array({items + 1, d});
    const bool uses_cats = v != Variant::lstm;
    if (uses_cats) p.cat_emb = nn::Array({cats + 1, d});

    p.lstm1 = nn::LstmParams::zeros(d, d);
    if (v == Variant::ci || v == Variant::ic || v == Variant::ivaec || v == Variant::ici ||
        v == Variant::tstm || v == Variant::stsm)
        p.lstm2 = nn::LstmParams::zeros(d, 2 * d);
    if (v == Variant::ici || v == Variant::tstm || v == Variant::stsm)
        p.lstm3 = nn::LstmParams::zeros(d, 2 * d);
    if (v == Variant::stsm) {
        p.lstm2_extra = nn::LstmParams::zeros(d, 2 * d);
        p.lstm3_extra = nn::LstmParams::zeros(d, 2 * d);
    }

    if (v == Variant::ivaec || v == Variant::tstm || v == Variant::stsm)
        p.z_proj = nn::Array({d, d / 2});
    if (v == Variant::stsm) p.z_proj_extra = nn::Array({d, d / 2});

    if (v == Variant::tstm || v == Variant::stsm) {
        p.user_emb = nn::Array({sizes.users, d});
        p.fusion = nn::Array({2 * d, d});
        p.head_item_latent = nn::Array({items, d / 2});
    }

    if (has_item_head(v)) p.head_item = nn::Array({items, d});
    if (v == Variant::ici) p.head_item_alt = nn::Array({items, d});
    if (has_cat_head(v)) p.head_cat = nn::Array({cats, d});
    if (v == Variant::stsm) p.head_cat_extra = nn::Array({cats, d});

    if (seed) {
        auto ents = p.entries();
        for (std::size_t i = 0; i < ents.size(); ++i) {
            auto& [name, arr] = ents[i];
            Rng rng(mix_seed(*seed, i));
            const bool is_emb = name == "item_emb" || name == "cat_emb" || name == "user_emb";
            const bool is_bias = name.ends_with(".bias");
            if (is_bias) continue;
            if (is_emb) {
                for (double& x : arr->data) x = rng.uniform(-0.05, 0.05);
            } else {
                // fusion is applied transposed, so fan-in is its row count
                const double fan_in = name == "fusion" ? static_cast<double>(arr->rows())
                                                       : static_cast<double>(arr->cols());
                const double bound = 1.0 / std::sqrt(fan_in);
                for (double& x : arr->data) x = rng.uniform(-bound, bound);
            }
        }
    }
    return p;
}

nn::Array ZeroEps::draw(std::size_t, std::size_t, std::size_t rows, std::size_t cols) {
    return rows == 1 ? nn::Array({cols}) : nn::Array({rows, cols});
}

nn::Array SeededEps::draw(std::size_t stream, std::size_t step, std::size_t rows,
                          std::size_t cols) {
    nn::Array a = rows == 1 ? nn::Array({cols}) : nn::Array({rows, cols});
    Rng rng(mix_seed(seed_, stream, step));
    for (double& x : a.data) x = rng.normal();
    return a;
}

namespace {

// Everything one forward pass needs, shared by the variant wirings.
struct Net {
    nn::Tape& tape;
    const ParamSet& p;
    const ForwardOptions& opts;
    std::size_t batch, steps;
    std::span<const int> users, items, cats;

    nn::Tensor item_emb, cat_emb, user_emb;
    nn::LstmLeaves lstm1, lstm2, lstm3, lstm2_extra, lstm3_extra;
    nn::Tensor z_proj, z_proj_extra, fusion;
    nn::Tensor head_item, head_item_alt, head_item_latent, head_cat, head_cat_extra;

    Rng drop_rng;
    ZeroEps zero_eps;
    EpsSource* eps;
    std::vector<std::pair<std::string, nn::Tensor>> leaves;  // entries() order

    Net(nn::Tape& t, const ParamSet& params, const ForwardOptions& o, std::span<const int> u,
        std::span<const int> it, std::span<const int> ct, std::size_t b, std::size_t n)
        : tape(t), p(params), opts(o), batch(b), steps(n), users(u), items(it), cats(ct),
          drop_rng(o.dropout_seed), eps(o.eps ? o.eps : &zero_eps) {
        auto lift = [&](const char* name, const nn::Array& a) {
            if (a.data.empty()) return nn::Tensor();
            nn::Tensor leaf = t.leaf(a);
            leaves.emplace_back(name, leaf);
            return leaf;
        };
        item_emb = lift("item_emb", p.item_emb);
        cat_emb = lift("cat_emb", p.cat_emb);
        user_emb = lift("user_emb", p.user_emb);
        auto lift_lstm = [&](const char* base, const nn::LstmParams& lp) {
            if (lp.bias.data.empty()) return nn::LstmLeaves{};
            nn::LstmLeaves l = t.lstm_leaves(lp);
            leaves.emplace_back(std::string(base) + ".w_input", l.w_input);
            leaves.emplace_back(std::string(base) + ".w_hidden", l.w_hidden);
            leaves.emplace_back(std::string(base) + ".bias", l.bias);
            return l;
        };
        lstm1 = lift_lstm("lstm1", p.lstm1);
        lstm2 = lift_lstm("lstm2", p.lstm2);
        lstm3 = lift_lstm("lstm3", p.lstm3);
        lstm2_extra = lift_lstm("lstm2_extra", p.lstm2_extra);
        lstm3_extra = lift_lstm("lstm3_extra", p.lstm3_extra);
        z_proj = lift("z_proj", p.z_proj);
        z_proj_extra = lift("z_proj_extra", p.z_proj_extra);
        fusion = lift("fusion", p.fusion);
        head_item = lift("head_item", p.head_item);
        head_item_alt = lift("head_item_alt", p.head_item_alt);
        head_item_latent = lift("head_item_latent", p.head_item_latent);
        head_cat = lift("head_cat", p.head_cat);
        head_cat_extra = lift("head_cat_extra", p.head_cat_extra);
    }

    nn::Tensor embed(nn::Tensor table, std::span<const int> ids, std::size_t step) {
        std::vector<int> col(batch);
        for (std::size_t b = 0; b < batch; ++b) col[b] = ids[b * steps + step];
        nn::Tensor e = tape.embedding_lookup(table, col);
        return tape.dropout(e, opts.dropout_rate, drop_rng, opts.training);
    }

    nn::Tensor embed_users() {
        nn::Tensor e = tape.embedding_lookup(user_emb, users);
        return tape.dropout(e, opts.dropout_rate, drop_rng, opts.training);
    }

    nn::Tensor eps_tensor(std::size_t stream, std::size_t step) {
        return tape.constant(eps->draw(stream, step, batch, p.d / 2));
    }

    nn::LstmState initial_state() { return tape.lstm_initial_state(batch, p.d); }
};

ForwardOutput run_network(nn::Tape& tape, const ParamSet& p, std::span<const int> users,
                          std::span<const int> items, std::span<const int> cats, std::size_t batch,
                          std::size_t steps, const ForwardOptions& opts) {
    if (steps == 0) throw std::invalid_argument("forward: empty sequence");
    Net net(tape, p, opts, users, items, cats, batch, steps);
    ForwardOutput out;
    out.params = net.leaves;
    const Variant v = p.variant;

    nn::LstmState s1 = net.initial_state();
    nn::LstmState s2 = net.initial_state();
    nn::LstmState s3 = net.initial_state();
    nn::LstmState s2b = net.initial_state();
    nn::LstmState s3b = net.initial_state();

    for (std::size_t t = 0; t < steps; ++t) {
        nn::Tensor iemb = net.embed(net.item_emb, items, t);
        nn::Tensor cemb;
        if (has_cat_head(v)) cemb = net.embed(net.cat_emb, cats, t);

        switch (v) {
            case Variant::lstm: {
                s1 = tape.lstm_step(net.lstm1, iemb, s1);
                out.item_final.push_back(tape.matmul_nt(s1.h, net.head_item));
                break;
            }
            case Variant::ci: {
                // layer 1 reads categories, layer 2 items conditioned on the
                // category state
                s1 = tape.lstm_step(net.lstm1, cemb, s1);
                out.cat_logits.push_back(tape.matmul_nt(s1.h, net.head_cat));
                s2 = tape.lstm_step(net.lstm2, tape.concat_cols(iemb, s1.h), s2);
                out.item_final.push_back(tape.matmul_nt(s2.h, net.head_item));
                break;
            }
            case Variant::ic: {
                s1 = tape.lstm_step(net.lstm1, iemb, s1);
                s2 = tape.lstm_step(net.lstm2, tape.concat_cols(cemb, s1.h), s2);
                out.cat_logits.push_back(tape.matmul_nt(s2.h, net.head_cat));
                break;
            }
            case Variant::ivaec: {
                s1 = tape.lstm_step(net.lstm1, iemb, s1);
                auto post = vae::split_posterior(tape, s1.h);
                auto z = vae::reparameterize(tape, post, net.eps_tensor(0, t));
                out.kl_cat.push_back(vae::kl_standard_normal(tape, post));
                nn::Tensor cond = tape.matmul_nt(z.z, net.z_proj);
                s2 = tape.lstm_step(net.lstm2, tape.concat_cols(cemb, cond), s2);
                out.cat_logits.push_back(tape.matmul_nt(s2.h, net.head_cat));
                break;
            }
            case Variant::ici: {
                s1 = tape.lstm_step(net.lstm1, iemb, s1);
                out.item_first.push_back(tape.matmul_nt(s1.h, net.head_item));
                s2 = tape.lstm_step(net.lstm2, tape.concat_cols(cemb, s1.h), s2);
                out.cat_logits.push_back(tape.matmul_nt(s2.h, net.head_cat));
                s3 = tape.lstm_step(net.lstm3, tape.concat_cols(iemb, s2.h), s3);
                out.item_final.push_back(tape.matmul_nt(s3.h, net.head_item_alt));
                break;
            }
            case Variant::tstm:
            case Variant::stsm: {
                s1 = tape.lstm_step(net.lstm1, iemb, s1);
                out.item_first.push_back(tape.matmul_nt(s1.h, net.head_item));
                auto post = vae::split_posterior(tape, s1.h);
                auto z = vae::reparameterize(tape, post, net.eps_tensor(0, t));
                out.kl_cat.push_back(vae::kl_standard_normal(tape, post));
                nn::Tensor cond = tape.matmul_nt(z.z, net.z_proj);
                s2 = tape.lstm_step(net.lstm2, tape.concat_cols(cemb, cond), s2);
                out.cat_logits.push_back(tape.matmul_nt(s2.h, net.head_cat));
                s3 = tape.lstm_step(net.lstm3, tape.concat_cols(iemb, s2.h), s3);

                nn::Tensor top = s3.h;
                if (v == Variant::stsm) {
                    auto post2 = vae::split_posterior(tape, s3.h);
                    auto z2 = vae::reparameterize(tape, post2, net.eps_tensor(2, t));
                    out.kl_cat_extra.push_back(vae::kl_standard_normal(tape, post2));
                    nn::Tensor cond2 = tape.matmul_nt(z2.z, net.z_proj_extra);
                    s2b = tape.lstm_step(net.lstm2_extra, tape.concat_cols(cemb, cond2), s2b);
                    out.cat_extra.push_back(tape.matmul_nt(s2b.h, net.head_cat_extra));
                    s3b = tape.lstm_step(net.lstm3_extra, tape.concat_cols(iemb, s2b.h), s3b);
                    top = s3b.h;
                }

                nn::Tensor fused = tape.concat_cols(net.embed_users(), top);
                nn::Tensor personal = tape.matmul(fused, net.fusion);
                auto post_p = vae::split_posterior(tape, personal);
                auto z_p = vae::reparameterize(tape, post_p, net.eps_tensor(1, t));
                out.kl_item.push_back(vae::kl_standard_normal(tape, post_p));
                out.item_final.push_back(tape.matmul_nt(z_p.z, net.head_item_latent));
                break;
            }
        }
    }
    return out;
}

}  // namespace

ForwardOutput forward(nn::Tape& tape, const ParamSet& p, const Batch& batch,
                      const ForwardOptions& opts) {
    const std::size_t b = batch.size();
    if (batch.items.size() != b * batch.L || batch.cats.size() != b * batch.L)
        throw std::invalid_argument("forward: item/category sequences do not align with L");
    return run_network(tape, p, batch.users, batch.items, batch.cats, b, batch.L, opts);
}

FinalLogits final_logits(const ParamSet& p, const SeqBatch& batch, const ScoreOptions& opts) {
    if (batch.len == 0) throw std::invalid_argument("final_logits: empty history");
    const std::size_t b = batch.size();

    // truncate to the most recent max_history steps
    std::size_t len = batch.len, offset = 0;
    if (opts.max_history > 0 && len > opts.max_history) {
        offset = len - opts.max_history;
        len = opts.max_history;
    }
    std::vector<int> items(b * len), cats(b * len);
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t t = 0; t < len; ++t) {
            items[r * len + t] = batch.items[r * batch.len + offset + t];
            cats[r * len + t] = batch.cats[r * batch.len + offset + t];
        }

    ForwardOptions fopts;
    SeededEps sampled(opts.eval_eps_seed);
    if (opts.sample_at_eval) fopts.eps = &sampled;

    nn::Tape tape(/*grad_enabled=*/false);
    ForwardOutput out = run_network(tape, p, batch.users, items, cats, b, len, fopts);

    FinalLogits fl;
    if (!out.item_final.empty()) {
        nn::Tensor last = out.item_final.back();
        fl.item = nn::Array(b == 1 ? std::vector<std::size_t>{1, p.sizes.items}
                                   : std::vector<std::size_t>(last.shape()),
                            std::vector<double>(last.values().begin(), last.values().end()));
        if (opts.combine_heads && !out.item_first.empty()) {
            auto first = out.item_first.back().values();
            for (std::size_t i = 0; i < fl.item.data.size(); ++i) fl.item.data[i] += first[i];
        }
    }
    const auto& cat_src = out.cat_extra.empty() ? out.cat_logits : out.cat_extra;
    if (!cat_src.empty()) {
        nn::Tensor last = cat_src.back();
        fl.cat = nn::Array(b == 1 ? std::vector<std::size_t>{1, p.sizes.cats}
                                  : std::vector<std::size_t>(last.shape()),
                           std::vector<double>(last.values().begin(), last.values().end()));
    }
    return fl;
}

std::vector<double> score_candidates(const ParamSet& p, std::span<const int> history_items,
                                     std::span<const int> history_cats, int user,
                                     std::span<const int> candidates, const ScoreOptions& opts) {
    if (history_items.empty()) throw std::invalid_argument("score_candidates: empty history");
    if (history_items.size() != history_cats.size())
        throw std::invalid_argument("score_candidates: item/category history lengths differ");
    if (!has_item_head(p.variant))
        throw std::invalid_argument("score_candidates: variant '" + variant_tag(p.variant) +
                                    "' has no item head");
    SeqBatch batch;
    batch.users = {user};
    batch.items.assign(history_items.begin(), history_items.end());
    batch.cats.assign(history_cats.begin(), history_cats.end());
    batch.len = history_items.size();
    FinalLogits fl = final_logits(p, batch, opts);

    std::vector<double> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const int id = candidates[i];
        if (id < 1 || static_cast<std::size_t>(id) > p.sizes.items)
            throw std::out_of_range("score_candidates: item id " + std::to_string(id) +
                                    " outside catalog");
        scores[i] = fl.item.data[static_cast<std::size_t>(id) - 1];
    }
    return scores;
}

}  // namespace seqtrans::model
