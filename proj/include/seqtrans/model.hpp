#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqtrans/tensor.hpp"
#include "seqtrans/vae.hpp"

namespace seqtrans::model {

// lstm      plain item-sequence recurrence, item head only
// ci        coupled translation, category sequence -> item sequence
// ic        inverse coupled translation, items -> categories
// ivaec     ic with a latent bottleneck between the two layers
// ici       three-layer item -> category -> item translation, no latents
// tstm      tripled translation with two latent bottlenecks and user fusion
// s-tstm    tstm with the category/item block stacked once more
enum class Variant { lstm, ci, ic, ivaec, ici, tstm, stsm };

Variant variant_from_tag(const std::string& tag);
const std::string& variant_tag(Variant v);
const std::vector<Variant>& all_variants();

bool has_item_head(Variant v);
bool has_cat_head(Variant v);
bool has_vae(Variant v);
// loss component names, in emission order (the ModelVariant contract)
const std::vector<std::string>& loss_components(Variant v);

struct CatalogSizes {
    std::size_t items = 0;  // real items; dense ids 1..items, 0 = padding
    std::size_t cats = 0;   // real categories; dense ids 1..cats, 0 = padding
    std::size_t users = 0;  // dense ids 0..users-1
};

// All trainable arrays of one variant. Absent arrays stay empty.
struct ParamSet {
    Variant variant = Variant::lstm;
    std::size_t d = 0;
    CatalogSizes sizes;

    nn::Array item_emb;  // (|I|+1) x d, row 0 = padding
    nn::Array cat_emb;   // (|C|+1) x d, row 0 = padding
    nn::Array user_emb;  // |U| x d
    nn::LstmParams lstm1, lstm2, lstm3;
    nn::LstmParams lstm2_extra, lstm3_extra;   // s-tstm second block
    nn::Array z_proj, z_proj_extra;            // d x d/2
    nn::Array fusion;                          // 2d x d, applied transposed
    nn::Array head_item;                       // |I| x d
    nn::Array head_item_alt;                   // |I| x d   (ici final head)
    nn::Array head_item_latent;                // |I| x d/2
    nn::Array head_cat, head_cat_extra;        // |C| x d

    // present tensors in a fixed traversal order (optimizer / io / gradcheck order)
    std::vector<std::pair<std::string, nn::Array*>> entries();
    std::vector<std::pair<std::string, const nn::Array*>> entries() const;
    std::size_t parameter_count() const;
};

// allocates the variant's tensors; seed given -> init (uniform +-1/sqrt(fan_in)
// for weight matrices, +-0.05 for embeddings, zero biases), otherwise zeros
ParamSet make_params(Variant v, CatalogSizes sizes, std::size_t d,
                     std::optional<std::uint64_t> seed);

// One training mini-batch of aligned windows, row-major [B x L].
// Targets are the inputs shifted one step; masked steps carry id 0.
struct Batch {
    std::size_t L = 0;
    std::vector<int> users;
    std::vector<int> items, cats;
    std::vector<int> target_items, target_cats;
    std::vector<double> mask;
    std::size_t size() const { return users.size(); }
};

// Per-step standard-normal draws for the reparameterized latents.
// stream 0: category-side latent, 1: fused personal latent, 2: stacked block.
class EpsSource {
public:
    virtual ~EpsSource() = default;
    virtual nn::Array draw(std::size_t stream, std::size_t step, std::size_t rows,
                           std::size_t cols) = 0;
};

class ZeroEps final : public EpsSource {
public:
    nn::Array draw(std::size_t, std::size_t, std::size_t rows, std::size_t cols) override;
};

// Stateless: the draw is a pure function of (seed, stream, step), so a forward
// pass can be replayed bit-exactly.
class SeededEps final : public EpsSource {
public:
    explicit SeededEps(std::uint64_t seed) : seed_(seed) {}
    nn::Array draw(std::size_t stream, std::size_t step, std::size_t rows,
                   std::size_t cols) override;

private:
    std::uint64_t seed_;
};

struct ForwardOptions {
    bool training = false;
    double dropout_rate = 0.0;
    std::uint64_t dropout_seed = 0;
    EpsSource* eps = nullptr;  // null = mean path (eps 0)
};

// Per-step logits and divergence streams; vectors are empty when the variant
// lacks the head (the loss-presence contract).
struct ForwardOutput {
    std::vector<nn::Tensor> item_first;  // encoder-side item head
    std::vector<nn::Tensor> item_final;  // ranking head
    std::vector<nn::Tensor> cat_logits;
    std::vector<nn::Tensor> cat_extra;   // s-tstm stacked block head
    std::vector<nn::Tensor> kl_cat, kl_item, kl_cat_extra;  // [B] per step
    // parameter leaves in ParamSet::entries() order, for gradient readout
    std::vector<std::pair<std::string, nn::Tensor>> params;
    std::size_t steps() const { return std::max(item_final.size(), cat_logits.size()); }
};

ForwardOutput forward(nn::Tape& tape, const ParamSet& p, const Batch& batch,
                      const ForwardOptions& opts);

// Histories of equal length, for evaluation-time scoring.
struct SeqBatch {
    std::vector<int> users;
    std::vector<int> items, cats;  // [B x len] row-major
    std::size_t len = 0;
    std::size_t size() const { return users.size(); }
};

struct ScoreOptions {
    std::size_t max_history = 0;  // 0 = unlimited; else keep the most recent n
    bool combine_heads = false;   // add encoder-side item logits to the ranking head
    bool sample_at_eval = false;
    std::uint64_t eval_eps_seed = 0;
};

struct FinalLogits {
    nn::Array item;  // [B x |I|]; empty when the variant has no item head
    nn::Array cat;   // [B x |C|]; empty when the variant has no category head
};

// final-step logits over the whole catalog, mean path unless sampling is on
FinalLogits final_logits(const ParamSet& p, const SeqBatch& batch, const ScoreOptions& opts);

// ranking scores for an explicit candidate set (ids are dense, 1-based)
std::vector<double> score_candidates(const ParamSet& p, std::span<const int> history_items,
                                     std::span<const int> history_cats, int user,
                                     std::span<const int> candidates, const ScoreOptions& opts);

}  // namespace seqtrans::model
