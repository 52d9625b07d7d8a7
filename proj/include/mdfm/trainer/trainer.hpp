#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdfm/autodiff/param_set.hpp"
#include "mdfm/metrics/metrics.hpp"
#include "mdfm/model/config.hpp"
#include "mdfm/model/network.hpp"
#include "mdfm/seqdata/dataset.hpp"

namespace mdfm::trainer {

enum class FloodMode { batch, sample };
enum class FgmNorm { per_tensor, global };

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 32;
    double weight_decay = 0.01;
    double flood = 0.0;
    double fgm_eps = 1.0;
    std::size_t epochs = 8;
    std::uint64_t seed = 1;
    bool adversarial = true;
    // Warm up each encoder on its own with a temporary head before joint
    // training.
    bool finetune_init = false;
    std::size_t finetune_epochs = 2;
    FloodMode flood_mode = FloodMode::batch;
    FgmNorm fgm_norm = FgmNorm::per_tensor;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct OptState {
    ad::ParamSet m, v;
    std::uint64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static OptState zeros_like(const ad::ParamSet& params);
};

// -log softmax(logits)[label] with max subtraction.
double cross_entropy(const std::vector<double>& logits, int label);
// |ce - b| + b
double flooding_loss(double ce, double b);
// d flooding_loss / d ce, with 0 at the kink.
double flooding_slope(double ce, double b);

// eps * g / ||g|| per tensor (or over all tensors jointly with
// FgmNorm::global); zero gradients map to zero perturbations.
std::map<std::string, ad::Tensor> fgm_perturb(const std::map<std::string, ad::Tensor>& grads, double eps,
                                              FgmNorm norm = FgmNorm::per_tensor);

// Decoupled weight decay theta *= (1 - lr wd), then the bias-corrected Adam
// update with the state's moments.
void adamw_step(ad::ParamSet& params, const ad::ParamSet& grads, OptState& state, double lr, double wd);

struct Example {
    model::EncodedSample enc;
    int label = 0;
};

struct BatchGrad {
    ad::ParamSet grads;
    double loss = 0.0;     // flooded batch loss
    double mean_ce = 0.0;
};

// Gradient of the flooded batch loss. Per-sample graphs are accumulated in
// batch order so the result does not depend on threading.
BatchGrad batch_gradient(const std::vector<const Example*>& batch, const ad::ParamSet& params,
                         const model::ModelConfig& mcfg, const TrainConfig& tcfg, std::mt19937_64* dropout_rng);

struct StepMetrics {
    double loss = 0.0;
    double mean_ce = 0.0;
    double adv_loss = 0.0;  // pass-2 loss, 0 without FGM
};

// One optimizer step: clean pass, optional FGM pass on perturbed
// token-embedding tables, summed gradients, AdamW, tables restored.
StepMetrics train_step(const std::vector<const Example*>& batch, ad::ParamSet& params, OptState& state,
                       const model::ModelConfig& mcfg, const TrainConfig& tcfg, std::mt19937_64& dropout_rng);

std::vector<Example> encode_examples(const std::vector<seqdata::DnaSample>& samples, const model::Tokenizers& tok,
                                     const model::ModelConfig& mcfg);

// P(positive) for each sample in eval mode.
std::vector<double> predict_scores(const std::vector<seqdata::DnaSample>& samples, const model::Tokenizers& tok,
                                   const ad::ParamSet& params, const model::ModelConfig& mcfg, std::size_t jobs = 1);
metrics::MetricReport evaluate_model(const std::vector<seqdata::DnaSample>& samples, const model::Tokenizers& tok,
                                     const ad::ParamSet& params, const model::ModelConfig& mcfg, std::size_t jobs = 1);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_ce = 0.0;
    bool has_val = false;
    metrics::MetricReport val;

    nlohmann::json to_json() const;
};

struct FitResult {
    model::Tokenizers tokenizers;
    ad::ParamSet params;
    std::vector<EpochLog> log;
};

// Trains the BPE vocabulary on the training sequences, initializes with
// tcfg.seed and runs tcfg.epochs epochs of seeded shuffled mini-batches.
// When `val` is given its metrics are logged after every epoch; `log` then
// receives one JSON line per epoch.
FitResult fit(const std::vector<seqdata::DnaSample>& train, const std::vector<seqdata::DnaSample>* val,
              const model::ModelConfig& mcfg, const TrainConfig& tcfg, std::ostream* log = nullptr,
              std::size_t jobs = 1);

// Stratified fold index per sample: each class is shuffled with `seed` and
// positives then negatives are dealt round-robin, so fold sizes and per-fold
// class counts differ by at most one. Throws if a class has fewer members
// than folds.
std::vector<std::size_t> stratified_folds(const std::vector<int>& labels, std::size_t folds, std::uint64_t seed);

struct CvResult {
    std::size_t best = 0;
    std::vector<std::vector<double>> fold_auprc;  // [config][fold]
    std::vector<double> mean_auprc;

    void write_tsv(const std::filesystem::path& path, const std::vector<TrainConfig>& grid) const;
};

// Mean validation AUPRC per grid entry; ties go to the lexicographically
// smallest canonical JSON of the config.
CvResult cross_validate(const std::vector<seqdata::DnaSample>& train, const std::vector<TrainConfig>& grid,
                        const model::ModelConfig& mcfg, std::size_t folds = 5, std::uint64_t fold_seed = 1,
                        std::size_t jobs = 1);

}  // namespace mdfm::trainer
