#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seqtrans/datapipe.hpp"
#include "seqtrans/evaluator.hpp"
#include "seqtrans/model.hpp"

namespace seqtrans::train {

struct TrainConfig {
    std::string variant = "tstm";
    std::size_t d = 50;
    std::size_t window = 5;  // L
    std::size_t batch_size = 128;
    double learning_rate = 0.001;
    double dropout = 0.2;
    double lambda = 1.0;  // weight on the divergence terms
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    bool sample_at_eval = false;
    bool combine_heads = false;
    std::string optimizer = "adam";  // or "sgd"
    double grad_clip = 5.0;          // global-norm clip, 0 disables
    std::size_t max_history = 0;     // evaluation truncation, 0 = unlimited
    eval::EvalProtocol protocol;     // validation/test ranking protocol

    void validate() const;
    model::ScoreOptions score_options() const;
};

struct LossBreakdown {
    nn::Tensor total;  // scalar on the caller's tape
    std::vector<std::pair<std::string, double>> components;  // masked per-step means
    double valid_steps = 0;
};

// mean over valid steps of every NLL head plus lambda times every divergence
// stream the variant emits
LossBreakdown total_loss(nn::Tape& tape, const model::ForwardOutput& out,
                         const model::Batch& batch, double lambda);

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;

    static AdamState init(const std::vector<std::pair<std::string, nn::Array*>>& params);
};

// bias-corrected Adam over parallel (param, grad) lists
void adam_step(const std::vector<std::pair<std::string, nn::Array*>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state, double lr);

void sgd_step(const std::vector<std::pair<std::string, nn::Array*>>& params,
              const std::vector<std::span<const double>>& grads, double lr);

// scales grads in place so the global norm is at most `clip`; returns the norm
double clip_global_norm(std::vector<std::vector<double>>& grads, double clip);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::vector<std::pair<std::string, double>> components;
    double val_hit5 = 0.0, val_ndcg5 = 0.0;
};

struct Checkpoint {
    model::ParamSet params;
    TrainConfig config;
    std::uint64_t catalog_digest = 0;
    std::size_t epoch = 0;           // epoch the parameters were taken from
    double best_val_ndcg5 = 0.0;
};

struct FitResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> history;
};

FitResult fit(const data::SplitDataset& ds, const TrainConfig& config);

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& variant,
                       const std::string& path);

// magic header SEQTRANS-CKPT v1; reload is bit-exact
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
// throws when the checkpoint does not match the requested variant / dataset
void check_checkpoint(const Checkpoint& ckpt, const std::string& expected_variant,
                      std::optional<std::uint64_t> dataset_digest);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> tensors;
    double max_rel_err = 0.0;
};

// test hook: mutate one named gradient buffer before comparison
using GradTamper = std::function<void(const std::string&, std::span<double>)>;

// compares analytic gradients of the full training loss against central
// differences (step 1e-3) on a fixed tiny instance; relative error uses
// |a-b| / max(|a|, |b|, 1)
GradCheckReport gradcheck(const std::string& variant, const GradTamper& tamper = nullptr);

}  // namespace seqtrans::train
