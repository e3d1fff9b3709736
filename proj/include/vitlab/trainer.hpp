#pragma once

#include <set>
#include <string>
#include <vector>

#include "vitlab/dataset.hpp"
#include "vitlab/model.hpp"
#include "vitlab/param_vector.hpp"

namespace vitlab {

struct TrainConfig {
    double lr_max = 1.25e-4;
    double weight_decay = 5e-2;
    std::size_t epochs = 50;
    std::size_t warmup_epochs = 5;
    std::size_t batch_size = 96;  // clipped to the dataset size
    std::uint64_t seed = 0;
    double label_smoothing = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::size_t> checkpoint_epochs;  // extra marks; warmup end and final are always emitted

    void validate() const;
};

struct AdamMoments {
    ParamVector m, v;
    std::size_t step = 0;
};

struct Checkpoint {
    std::string model_spec;  // serialized ModelSpec
    std::string tag;         // init | warmup | epoch_N | final
    std::size_t epoch = 0;
    std::string rng_state;
    double train_nll = 0.0;
    double test_err = 0.0;
    ParamVector params;
    AdamMoments moments;
};

struct MetricRow {
    std::size_t epoch;
    double lr;
    double train_nll;
    double test_err;
};

struct TrainResult {
    Model model;
    std::vector<Checkpoint> checkpoints;
    std::vector<MetricRow> log;
};

// Mean cross-entropy of logits (B,C) against labels, with optional label
// smoothing; stable log-softmax composition.
Var ce_loss(Tape& t, Var logits, const std::vector<std::size_t>& labels, std::size_t classes,
            double label_smoothing);

// CE + (wd/2)*||theta||^2 over decaying segments (norm affine and biases are
// excluded via their decay flags).
Var regularized_nll_var(Tape& t, Var logits, const std::vector<std::size_t>& labels, std::size_t classes,
                        double label_smoothing, const ParamVector& theta, const std::vector<Var>& leaves,
                        double weight_decay);

double regularized_nll(const Model& m, const Tensor& images, const std::vector<std::size_t>& labels,
                       double weight_decay, double label_smoothing = 0.0);

// Dataset-mean regularized NLL under the standard batch split (batch
// statistics make the value depend on the split, so every consumer shares
// this one). Returns +inf when any batch loss is non-finite.
double dataset_regularized_nll(const Model& m, const Dataset& ds, double weight_decay, std::size_t batch_size);

// Twice-differentiable closure of the regularized NLL on one batch; the
// backbone of every Hessian and landscape analysis.
LossClosure model_batch_closure(const ModelSpec& spec, Tensor images, std::vector<std::size_t> labels,
                                double weight_decay, double label_smoothing = 0.0);

// Linear warmup to lr_max over the warmup steps, then cosine annealing to 0
// at the final step.
double lr_at(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch);

// Decoupled AdamW update: theta <- theta - lr*(mhat/(sqrt(vhat)+eps) + wd*theta).
void adamw_step(ParamVector& params, const ParamVector& grads, AdamMoments& moments, double lr,
                const TrainConfig& cfg);

struct EvalResult {
    double error = 0.0;
    double nll = 0.0;
};

EvalResult evaluate(const Model& m, const Dataset& ds, std::size_t batch_size,
                    const std::set<std::string>* ablate = nullptr);

// Deterministic batch split that never produces a singleton batch (batch
// statistics need at least two samples).
std::vector<std::vector<std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size);

TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train_set,
                  const Dataset& test_set);

// Continues an interrupted run; bit-for-bit identical to the uninterrupted one.
TrainResult resume(const Checkpoint& ck, const TrainConfig& cfg, const Dataset& train_set,
                   const Dataset& test_set);

// Versioned binary container (magic, version, spec text, shape table, raw
// 64-bit data, rng state).
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string metric_csv(const std::vector<MetricRow>& rows);

}  // namespace vitlab
