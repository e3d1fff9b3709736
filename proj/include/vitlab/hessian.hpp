#pragma once

#include <string>
#include <vector>

#include "vitlab/dataset.hpp"
#include "vitlab/model.hpp"
#include "vitlab/param_vector.hpp"

namespace vitlab {

struct EigPair {
    double value = 0.0;  // signed Rayleigh quotient
    ParamVector vector;
    std::size_t iters = 0;
    double residual = 0.0;  // ||Hv - lambda*v|| / ||v||
    bool degenerate = false;
};

struct PowerIterConfig {
    std::size_t k = 5;
    std::size_t max_iters = 100;
    double tol = 1e-3;  // relative change of the Rayleigh quotient
    std::uint64_t seed = 0;
};

// Power iteration with Gram-Schmidt deflation on Hessian-vector products;
// eigenpairs ordered by |value| descending. When H annihilates the deflated
// subspace the remaining eigenvalues are reported as 0 with a degeneracy flag.
std::vector<EigPair> top_k_eigs(const LossClosure& f, const ParamVector& theta, const PowerIterConfig& cfg);

// One mini-batch worth of top-k eigenvalues at one checkpoint.
struct SpectrumRecord {
    std::string checkpoint;
    std::size_t batch_id = 0;
    std::vector<double> eigenvalues;
    std::vector<double> residuals;
    std::vector<std::size_t> iters;
    bool skipped = false;
    std::string note;
};

struct SpectrumConfig {
    std::size_t batch_size = 16;
    std::size_t k = 5;
    double sample_fraction = 0.1;
    std::size_t max_iters = 100;
    double tol = 1e-3;
    std::uint64_t seed = 0;
    double weight_decay = 5e-2;  // the closure always carries the l2 term
    std::string checkpoint_tag = "ck";
};

// Per-batch top-k eigenvalues of the regularized NLL over a sampled subset.
std::vector<SpectrumRecord> spectrum(const Model& m, const Dataset& ds, const SpectrumConfig& cfg);

std::vector<double> collect_eigenvalues(const std::vector<SpectrumRecord>& records);

// Negative max-eigenvalue proportion; rejects an empty spectrum.
double nep(const std::vector<double>& eigenvalues);

// Average of positive max eigenvalues; rejects a spectrum without positives.
double ape(const std::vector<double>& eigenvalues);

// Gaussian direction rescaled so each filter group matches the parameter
// group's norm; zero-norm groups are zeroed.
ParamVector filter_normalized_direction(const ParamVector& theta, std::uint64_t seed);

struct LandscapeGrid {
    ParamVector d1, d2;
    std::vector<double> alphas, betas;
    std::vector<std::vector<double>> losses;  // losses[i][j] at theta + a_i d1 + b_j d2
};

// Regularized NLL over the dataset at each displaced parameter point;
// non-finite cells record +inf. The model is untouched (displacements act on
// a copy).
LandscapeGrid loss_surface(const Model& m, const Dataset& ds, const ParamVector& d1, const ParamVector& d2,
                           std::vector<double> alphas, std::vector<double> betas, double weight_decay,
                           std::size_t batch_size);

}  // namespace vitlab
