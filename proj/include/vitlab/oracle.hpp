#pragma once

#include <complex>
#include <vector>

#include "vitlab/param_vector.hpp"
#include "vitlab/tensor.hpp"

namespace vitlab {
// Independent verification routes. Everything here is deliberately naive and
// shares no code with the implementation paths it checks.
namespace oracle {

// Central finite-difference gradient, one probed coordinate at a time.
double fd_partial(const LossClosure& f, const ParamVector& theta, std::size_t flat_index, double eps);

// Finite difference of gradients: (grad(theta + eps*v) - grad(theta - eps*v)) / (2 eps).
ParamVector fd_hvp(const LossClosure& f, const ParamVector& theta, const ParamVector& v, double eps);

// Dense Hessian assembled from finite-difference columns of the gradient,
// symmetrized. dim x dim, row-major.
std::vector<double> dense_hessian(const LossClosure& f, const ParamVector& theta, double eps);

// Eigenvalues of a dense symmetric matrix (cyclic Jacobi), descending by value.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n);

// O(N^4) two-dimensional DFT, centered (zero frequency at H/2, W/2).
std::vector<std::complex<double>> naive_dft2_centered(const Tensor& map);

// Centered-Gram linear HSIC / CKA on n x p activations.
double naive_linear_cka(const Tensor& x, const Tensor& y);

// Straight-line re-implementation of a 3-layer tanh-free MLP used as the
// forward oracle: relu(x W1 + b1) W2 + b2 ... laid out as plain loops.
std::vector<double> straight_line_mlp(const std::vector<double>& x, std::size_t in_dim,
                                      const std::vector<std::size_t>& widths,
                                      const std::vector<std::vector<double>>& weights,
                                      const std::vector<std::vector<double>>& biases);

// Brute-force neighborhood enumerator for local attention sets.
std::vector<std::vector<std::size_t>> neighborhood_sets(std::size_t grid_h, std::size_t grid_w, int k);

}  // namespace oracle
}  // namespace vitlab
