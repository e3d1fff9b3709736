#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vitlab/tape.hpp"
#include "vitlab/tensor.hpp"

namespace vitlab {

// Structural role of a parameter segment; drives filter-normalized direction
// grouping and weight-decay exclusions.
enum class ParamKind : std::uint8_t {
    kConvFilter,  // shape (Cout, ...) -> one group per output channel
    kLinear,      // shape (rows, cols) -> one group per row
    kVector,      // biases, norm affine, tokens -> whole-tensor group
};

struct ParamSegment {
    std::string name;
    Tensor value;
    ParamKind kind = ParamKind::kVector;
    bool decay = false;  // participates in l2 / weight decay
};

// Ordered list of named parameter leaves; the theta of every analysis.
struct ParamVector {
    std::vector<ParamSegment> segments;

    std::size_t total_dim() const;
    bool same_structure(const ParamVector& other) const;

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);

    ParamVector zeros_like() const;

    // vector-space helpers (structure must match)
    static double dot(const ParamVector& a, const ParamVector& b);
    double norm() const;
    void axpy(double alpha, const ParamVector& x);  // this += alpha*x
    void scale(double alpha);

    bool same_bits(const ParamVector& other) const;
};

// Binds every segment as a parameter leaf on the tape, in order.
std::vector<Var> bind_params(Tape& tape, const ParamVector& theta);

// Reads gradient (or any aligned list of vars) back into ParamVector form.
ParamVector read_back(const Tape& tape, const std::vector<Var>& vars, const ParamVector& like);

// A twice-differentiable scalar objective: builds the loss graph for the given
// parameter values and reports the bound parameter leaves.
using LossClosure = std::function<std::pair<Var, std::vector<Var>>(Tape&, const ParamVector&)>;

double closure_value(const LossClosure& f, const ParamVector& theta);
ParamVector closure_grad(const LossClosure& f, const ParamVector& theta);

// Exact Hessian-vector product H*v via the gradient of <grad, v> (double
// backward); no full Hessian is materialized.
ParamVector closure_hvp(const LossClosure& f, const ParamVector& theta, const ParamVector& v);

}  // namespace vitlab
