#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vitlab/tensor.hpp"

namespace vitlab {

// Handle into a Tape.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

enum class OpKind : std::uint8_t {
    kInput,   // replayable input leaf
    kParam,   // differentiable parameter leaf
    kConst,   // constant leaf (masks, seeds, data)
    kAdd,
    kSub,
    kMul,
    kDiv,
    kNeg,
    kAddScalar,
    kMulScalar,
    kMatmul,
    kPermute,
    kReshape,
    kSlice,
    kUnslice,
    kConcat,
    kExp,
    kLog,
    kErf,
    kPowScalar,
    kRelu,
    kSoftmax,
    kSum,
    kMean,
    kMax,
    kIm2col,
    kCol2im,
    kBoxBlur,
    kBoxBlurT,
};

const char* op_name(OpKind op);

struct ConvGeom {
    std::size_t kh = 0, kw = 0;  // kernel extent
    std::size_t sh = 1, sw = 1;  // stride
    std::size_t ph = 0, pw = 0;  // zero padding
};

struct OpAttrs {
    double scalar = 0.0;
    int axis = 0;
    bool keepdim = false;
    Shape shape;                       // reshape target / unslice / col2im image shape
    std::vector<int> perm;             // permute axes
    std::vector<std::size_t> offsets;  // slice / unslice placement
    ConvGeom conv;
    int window = 0;  // box blur extent
};

struct Node {
    OpKind op;
    std::array<std::int32_t, 2> in{{-1, -1}};
    OpAttrs attrs;
    Tensor val;
    bool requires_grad = false;
};

struct TapeError : std::runtime_error {
    std::int32_t node_id;
    TapeError(std::int32_t id, const std::string& msg)
        : std::runtime_error("node " + std::to_string(id) + ": " + msg), node_id(id) {}
};

// Recorded computation. Ops execute eagerly at build time; the record supports
// replay with fresh inputs, and reverse-mode gradients that extend the same
// tape (so gradients of gradients — Hessian-vector products — compose).
class Tape {
public:
    // leaves
    Var input(Tensor v);
    Var param(Tensor v);
    Var constant(Tensor v);

    // elementwise (broadcasting, right-aligned)
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var neg(Var a);
    Var add_scalar(Var a, double s);
    Var mul_scalar(Var a, double s);
    Var exp(Var a);
    Var log(Var a);
    Var erf(Var a);
    Var pow_scalar(Var a, double p);
    Var relu(Var a);

    // linear algebra / structure
    Var matmul(Var a, Var b);  // (...,m,k)x(...,k,n), leading dims broadcast
    Var permute(Var a, std::vector<int> axes);
    Var reshape(Var a, Shape s);
    Var slice(Var a, std::vector<std::size_t> starts, Shape sizes);
    Var concat(Var a, Var b, int axis);
    Var softmax(Var a, int axis);

    // reductions (single axis, or axis = -1 for all -> shape {1})
    Var sum(Var a, int axis, bool keepdim);
    Var mean(Var a, int axis, bool keepdim);
    Var max(Var a, int axis, bool keepdim);
    Var sum_all(Var a) { return sum(a, -1, false); }

    // spatial ops on (..., H, W)
    Var im2col(Var x, ConvGeom g);              // (B,C,H,W) -> (B, C*kh*kw, OH*OW)
    Var col2im(Var cols, ConvGeom g, Shape x);  // adjoint of im2col
    Var box_blur(Var x, int k);                 // mean over in-bounds k x k window
    Var box_blur_t(Var x, int k);               // adjoint of box_blur

    // composites
    Var gelu(Var a);
    Var dot(Var a, Var b);  // flatten + sum(a*b) -> scalar
    Var transpose_last2(Var a);
    Var reduce_to(Var v, const Shape& target);
    Var zeros_like_const(Var a);
    Var ones_like_const(Var a);

    // introspection. val() returns a reference into the node arena: it is
    // invalidated by the next op pushed, so copy it out before building more.
    // shape() returns by value for that reason.
    const Tensor& val(Var v) const { return node(v).val; }
    Shape shape(Var v) const { return node(v).val.shape; }
    const Node& node(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // Reverse-mode gradient of a scalar output w.r.t. parameter leaves.
    // Adjoint computations are recorded as further tape nodes, so results
    // remain differentiable (gradient of gradient works).
    std::vector<Var> gradient(Var scalar_out, std::span<const Var> wrt);

    // arena control
    std::size_t mark() const { return nodes_.size(); }
    void rewind(std::size_t m);
    void clear() { nodes_.clear(); n_inputs_ = 0; }

    // Replay the recorded program with fresh input-leaf values (in creation
    // order). Pure: does not mutate stored values. Shape mismatches are
    // rejected with the offending node id.
    std::vector<Tensor> replay(std::span<const Tensor> inputs, std::span<const Var> outputs) const;

    std::size_t input_count() const { return n_inputs_; }

private:
    Var push(OpKind op, std::int32_t a, std::int32_t b, OpAttrs attrs);
    std::vector<Node> nodes_;
    std::size_t n_inputs_ = 0;
};

// Kernel dispatch shared by eager execution and replay.
Tensor eval_op(OpKind op, const OpAttrs& attrs, const Tensor* a, const Tensor* b);

}  // namespace vitlab
