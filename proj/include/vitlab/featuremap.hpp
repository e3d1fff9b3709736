#pragma once

#include <string>
#include <vector>

#include "vitlab/dataset.hpp"
#include "vitlab/model.hpp"

namespace vitlab {

struct VarianceEntry {
    std::string layer;
    BlockKind kind;
    int stage = 0;
    int index = -1;
    double variance = 0.0;  // spatial variance per (sample, channel), averaged
};

// Per-block feature map variance over an evaluation set; class tokens are
// excluded from token grids.
std::vector<VarianceEntry> variance_profile(const Model& m, const Dataset& ds, std::size_t batch_size);

// Linear CKA on n x p / n x q activations (column-centered Gram formula).
// Zero-variance inputs are rejected.
double linear_cka(const Tensor& x, const Tensor& y);

// Unbiased linear HSIC estimator from a raw (uncentered) Gram matrix pair;
// needs n >= 4 samples.
double unbiased_hsic(const std::vector<double>& k, const std::vector<double>& l, std::size_t n);

struct CKAMatrix {
    std::vector<std::string> layers;
    std::vector<int> stages;
    std::vector<double> values;  // row-major L x L
    std::vector<char> flagged;   // cells whose estimator was undefined

    double at(std::size_t i, std::size_t j) const { return values[i * layers.size() + j]; }
};

// Pairwise mini-batch linear CKA over all block outputs (per-sample flattened
// activations, unbiased HSIC averaged across batches before the ratio).
CKAMatrix cka_matrix(const Model& m, const Dataset& ds, std::size_t batch_size);

struct LesionEntry {
    std::string unit;
    BlockKind kind;
    int stage = 0;
    int index = -1;
    double acc_drop = 0.0;  // clean accuracy minus ablated accuracy
};

// Zeroes one residual branch at a time and measures the accuracy drop; the
// model parameters are left untouched. Units outside the model's residual
// branches are rejected.
std::vector<LesionEntry> lesion_sweep(const Model& m, const Dataset& ds, std::size_t batch_size,
                                      const std::vector<std::string>& units);
std::vector<LesionEntry> lesion_sweep(const Model& m, const Dataset& ds, std::size_t batch_size);

struct ReliabilityBin {
    double confidence = 0.0;  // mean max-softmax confidence of the bin
    double accuracy = 0.0;
    std::size_t count = 0;
};

struct Reliability {
    std::vector<ReliabilityBin> bins;
    double ece = 0.0;
};

Reliability reliability_from_logits(const Tensor& logits, const std::vector<std::size_t>& labels,
                                    std::size_t bins);
Reliability reliability_diagram(const Model& m, const Dataset& ds, std::size_t bins, std::size_t batch_size);

}  // namespace vitlab
