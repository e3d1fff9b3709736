#include "vitlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vitlab {

namespace {

constexpr double kTwoOverSqrtPi = 1.1283791670955126;

std::vector<std::size_t> padded_broadcast_strides(const Shape& s, std::size_t out_rank) {
    std::vector<std::size_t> st(out_rank, 0);
    const auto rs = row_major_strides(s);
    const std::size_t off = out_rank - s.size();
    for (std::size_t i = 0; i < s.size(); ++i) st[off + i] = (s[i] == 1) ? 0 : rs[i];
    return st;
}

template <class F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F f) {
    if (a.shape == b.shape) {
        Tensor out(a.shape);
        const std::size_t n = out.numel();
        for (std::size_t i = 0; i < n; ++i) out.data[i] = f(a.data[i], b.data[i]);
        return out;
    }
    const Shape os = broadcast_shape(a.shape, b.shape);
    const std::size_t nd = os.size();
    const auto sa = padded_broadcast_strides(a.shape, nd);
    const auto sb = padded_broadcast_strides(b.shape, nd);
    Tensor out(os);
    std::vector<std::size_t> idx(nd, 0);
    std::size_t ia = 0, ib = 0;
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.data[i] = f(a.data[ia], b.data[ib]);
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            ia -= sa[d] * os[d];
            ib -= sb[d] * os[d];
        }
    }
    return out;
}

template <class F>
Tensor unary(const Tensor& a, F f) {
    Tensor out(a.shape);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out.data[i] = f(a.data[i]);
    return out;
}

void mm2d(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tensor matmul_kernel(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw std::invalid_argument("matmul: operands must have rank >= 2");
    const std::size_t m = a.shape[a.ndim() - 2], k = a.shape[a.ndim() - 1];
    const std::size_t k2 = b.shape[b.ndim() - 2], n = b.shape[b.ndim() - 1];
    if (k != k2)
        throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape) + " x " +
                                    shape_str(b.shape));
    const Shape la(a.shape.begin(), a.shape.end() - 2);
    const Shape lb(b.shape.begin(), b.shape.end() - 2);
    const Shape lead = broadcast_shape(la, lb);
    Shape os = lead;
    os.push_back(m);
    os.push_back(n);
    Tensor out(os);

    const std::size_t nb = shape_numel(lead);
    const std::size_t nd = lead.size();
    const auto sa = padded_broadcast_strides(la, nd);
    const auto sb = padded_broadcast_strides(lb, nd);
    // leading strides are in units of elements of the sub-matrices
    std::vector<std::size_t> idx(nd, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t bi = 0; bi < nb; ++bi) {
        mm2d(a.data.data() + oa * m * k, b.data.data() + ob * k * n, out.data.data() + bi * m * n, m, k, n);
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < lead[d]) break;
            idx[d] = 0;
            oa -= sa[d] * lead[d];
            ob -= sb[d] * lead[d];
        }
    }
    return out;
}

Tensor permute_kernel(const Tensor& a, const std::vector<int>& perm) {
    const std::size_t nd = a.ndim();
    if (perm.size() != nd) throw std::invalid_argument("permute: axes rank mismatch");
    std::vector<char> seen(nd, 0);
    for (int p : perm) {
        if (p < 0 || static_cast<std::size_t>(p) >= nd || seen[p]) throw std::invalid_argument("permute: bad axes");
        seen[p] = 1;
    }
    Shape os(nd);
    for (std::size_t d = 0; d < nd; ++d) os[d] = a.shape[perm[d]];
    const auto ast = row_major_strides(a.shape);
    std::vector<std::size_t> gst(nd);
    for (std::size_t d = 0; d < nd; ++d) gst[d] = ast[perm[d]];
    Tensor out(os);
    std::vector<std::size_t> idx(nd, 0);
    std::size_t ia = 0;
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.data[i] = a.data[ia];
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            ia += gst[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            ia -= gst[d] * os[d];
        }
    }
    return out;
}

Tensor slice_kernel(const Tensor& a, const std::vector<std::size_t>& starts, const Shape& sizes) {
    const std::size_t nd = a.ndim();
    if (starts.size() != nd || sizes.size() != nd) throw std::invalid_argument("slice: rank mismatch");
    for (std::size_t d = 0; d < nd; ++d)
        if (starts[d] + sizes[d] > a.shape[d]) throw std::invalid_argument("slice: out of range");
    Tensor out(sizes);
    const auto ast = row_major_strides(a.shape);
    std::vector<std::size_t> idx(nd, 0);
    std::size_t ia = 0;
    for (std::size_t d = 0; d < nd; ++d) ia += starts[d] * ast[d];
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.data[i] = a.data[ia];
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            ia += ast[d];
            if (idx[d] < sizes[d]) break;
            idx[d] = 0;
            ia -= ast[d] * sizes[d];
        }
    }
    return out;
}

Tensor unslice_kernel(const Tensor& a, const Shape& full, const std::vector<std::size_t>& starts) {
    const std::size_t nd = a.ndim();
    if (starts.size() != nd || full.size() != nd) throw std::invalid_argument("unslice: rank mismatch");
    for (std::size_t d = 0; d < nd; ++d)
        if (starts[d] + a.shape[d] > full[d]) throw std::invalid_argument("unslice: out of range");
    Tensor out(full);
    const auto ost = row_major_strides(full);
    std::vector<std::size_t> idx(nd, 0);
    std::size_t io = 0;
    for (std::size_t d = 0; d < nd; ++d) io += starts[d] * ost[d];
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.data[io] = a.data[i];
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            io += ost[d];
            if (idx[d] < a.shape[d]) break;
            idx[d] = 0;
            io -= ost[d] * a.shape[d];
        }
    }
    return out;
}

Tensor concat_kernel(const Tensor& a, const Tensor& b, int axis) {
    if (a.ndim() != b.ndim()) throw std::invalid_argument("concat: rank mismatch");
    const std::size_t nd = a.ndim();
    if (axis < 0 || static_cast<std::size_t>(axis) >= nd) throw std::invalid_argument("concat: bad axis");
    for (std::size_t d = 0; d < nd; ++d)
        if (d != static_cast<std::size_t>(axis) && a.shape[d] != b.shape[d])
            throw std::invalid_argument("concat: extents differ off-axis");
    Shape os = a.shape;
    os[axis] += b.shape[axis];
    Tensor out(os);
    const std::size_t inner = row_major_strides(a.shape)[axis] * 1;  // stride at axis == product after axis * 1
    std::size_t after = 1;
    for (std::size_t d = axis + 1; d < nd; ++d) after *= a.shape[d];
    std::size_t outer = 1;
    for (std::size_t d = 0; d < static_cast<std::size_t>(axis); ++d) outer *= a.shape[d];
    (void)inner;
    const std::size_t wa = a.shape[axis] * after, wb = b.shape[axis] * after;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.data.data() + o * wa, wa, out.data.data() + o * (wa + wb));
        std::copy_n(b.data.data() + o * wb, wb, out.data.data() + o * (wa + wb) + wa);
    }
    return out;
}

void axis_split(const Shape& s, int axis, std::size_t& outer, std::size_t& alen, std::size_t& inner) {
    outer = 1;
    inner = 1;
    alen = s[axis];
    for (int d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
}

Tensor softmax_kernel(const Tensor& a, int axis) {
    std::size_t outer, alen, inner;
    axis_split(a.shape, axis, outer, alen, inner);
    Tensor out(a.shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * alen * inner + i;
            double mx = a.data[base];
            for (std::size_t t = 1; t < alen; ++t) mx = std::max(mx, a.data[base + t * inner]);
            double sum = 0.0;
            for (std::size_t t = 0; t < alen; ++t) {
                const double e = std::exp(a.data[base + t * inner] - mx);
                out.data[base + t * inner] = e;
                sum += e;
            }
            const double r = 1.0 / sum;
            for (std::size_t t = 0; t < alen; ++t) out.data[base + t * inner] *= r;
        }
    }
    return out;
}

enum class Red { kSum, kMean, kMax };

Tensor reduce_kernel(const Tensor& a, int axis, bool keepdim, Red which) {
    if (axis == -1) {
        double acc = which == Red::kMax ? a.data[0] : 0.0;
        if (which == Red::kMax) {
            for (double v : a.data) acc = std::max(acc, v);
        } else {
            for (double v : a.data) acc += v;
            if (which == Red::kMean) acc /= static_cast<double>(a.numel());
        }
        if (!keepdim) return Tensor::scalar(acc);
        return Tensor(Shape(a.ndim(), 1), {acc});
    }
    if (axis < 0 || static_cast<std::size_t>(axis) >= a.ndim()) throw std::invalid_argument("reduce: bad axis");
    std::size_t outer, alen, inner;
    axis_split(a.shape, axis, outer, alen, inner);
    Shape os;
    for (std::size_t d = 0; d < a.ndim(); ++d) {
        if (d == static_cast<std::size_t>(axis)) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(a.shape[d]);
        }
    }
    if (os.empty()) os.push_back(1);
    Tensor out(os);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * alen * inner + i;
            double acc = which == Red::kMax ? a.data[base] : 0.0;
            for (std::size_t t = (which == Red::kMax ? 1 : 0); t < alen; ++t) {
                const double v = a.data[base + t * inner];
                if (which == Red::kMax)
                    acc = std::max(acc, v);
                else
                    acc += v;
            }
            if (which == Red::kMean) acc /= static_cast<double>(alen);
            out.data[o * inner + i] = acc;
        }
    }
    return out;
}

void conv_out_extent(const Shape& x, const ConvGeom& g, std::size_t& oh, std::size_t& ow) {
    const std::size_t h = x[2], w = x[3];
    if (h + 2 * g.ph < g.kh || w + 2 * g.pw < g.kw)
        throw std::invalid_argument("im2col: kernel larger than padded input");
    oh = (h + 2 * g.ph - g.kh) / g.sh + 1;
    ow = (w + 2 * g.pw - g.kw) / g.sw + 1;
}

Tensor im2col_kernel(const Tensor& x, const ConvGeom& g) {
    if (x.ndim() != 4) throw std::invalid_argument("im2col: expected (B,C,H,W)");
    std::size_t oh, ow;
    conv_out_extent(x.shape, g, oh, ow);
    const std::size_t bsz = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    Tensor out({bsz, c * g.kh * g.kw, oh * ow});
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xp = x.data.data() + (b * c + ch) * h * w;
            for (std::size_t di = 0; di < g.kh; ++di) {
                for (std::size_t dj = 0; dj < g.kw; ++dj) {
                    double* op = out.data.data() + (b * c * g.kh * g.kw + (ch * g.kh + di) * g.kw + dj) * oh * ow;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.sh + di) -
                                                 static_cast<std::ptrdiff_t>(g.ph);
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.sw + dj) -
                                                      static_cast<std::ptrdiff_t>(g.pw);
                            double v = 0.0;
                            if (y >= 0 && y < static_cast<std::ptrdiff_t>(h) && xx >= 0 &&
                                xx < static_cast<std::ptrdiff_t>(w))
                                v = xp[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(xx)];
                            op[oy * ow + ox] = v;
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor col2im_kernel(const Tensor& cols, const ConvGeom& g, const Shape& xshape) {
    if (xshape.size() != 4) throw std::invalid_argument("col2im: expected image shape (B,C,H,W)");
    std::size_t oh, ow;
    conv_out_extent(xshape, g, oh, ow);
    const std::size_t bsz = xshape[0], c = xshape[1], h = xshape[2], w = xshape[3];
    if (cols.shape != Shape{bsz, c * g.kh * g.kw, oh * ow})
        throw std::invalid_argument("col2im: column shape mismatch");
    Tensor out(xshape);
    for (std::size_t b = 0; b < bsz; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* xp = out.data.data() + (b * c + ch) * h * w;
            for (std::size_t di = 0; di < g.kh; ++di) {
                for (std::size_t dj = 0; dj < g.kw; ++dj) {
                    const double* op =
                        cols.data.data() + (b * c * g.kh * g.kw + (ch * g.kh + di) * g.kw + dj) * oh * ow;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.sh + di) -
                                                 static_cast<std::ptrdiff_t>(g.ph);
                        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.sw + dj) -
                                                      static_cast<std::ptrdiff_t>(g.pw);
                            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                            xp[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(xx)] += op[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    return out;
}

// In-bounds k x k window mean. Multiplies each member by the reciprocal of the
// window population and accumulates in row-major order; the zero-logit MSA
// path produces bit-identical sums, which the uniform-attention equivalence
// tests rely on.
Tensor box_blur_kernel(const Tensor& x, int k, bool transpose) {
    if (k < 1) throw std::invalid_argument("box_blur: k must be >= 1");
    if (x.ndim() < 2) throw std::invalid_argument("box_blur: expected (...,H,W)");
    const std::size_t h = x.shape[x.ndim() - 2], w = x.shape[x.ndim() - 1];
    const std::size_t maps = x.numel() / (h * w);
    const std::ptrdiff_t lo = -((k - 1) / 2), hi = k / 2;
    Tensor out(x.shape);
    for (std::size_t m = 0; m < maps; ++m) {
        const double* xp = x.data.data() + m * h * w;
        double* op = out.data.data() + m * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            const std::size_t y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y) + lo));
            const std::size_t y1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(h - 1, static_cast<std::ptrdiff_t>(y) + hi));
            for (std::size_t xx = 0; xx < w; ++xx) {
                const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(xx) + lo));
                const std::size_t x1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(w - 1, static_cast<std::ptrdiff_t>(xx) + hi));
                const double r = 1.0 / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
                if (!transpose) {
                    double acc = 0.0;
                    for (std::size_t yy = y0; yy <= y1; ++yy)
                        for (std::size_t xc = x0; xc <= x1; ++xc) acc += xp[yy * w + xc] * r;
                    op[y * w + xx] = acc;
                } else {
                    const double v = xp[y * w + xx] * r;
                    for (std::size_t yy = y0; yy <= y1; ++yy)
                        for (std::size_t xc = x0; xc <= x1; ++xc) op[yy * w + xc] += v;
                }
            }
        }
    }
    return out;
}

}  // namespace

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::kInput: return "input";
        case OpKind::kParam: return "param";
        case OpKind::kConst: return "const";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kDiv: return "div";
        case OpKind::kNeg: return "neg";
        case OpKind::kAddScalar: return "add_scalar";
        case OpKind::kMulScalar: return "mul_scalar";
        case OpKind::kMatmul: return "matmul";
        case OpKind::kPermute: return "permute";
        case OpKind::kReshape: return "reshape";
        case OpKind::kSlice: return "slice";
        case OpKind::kUnslice: return "unslice";
        case OpKind::kConcat: return "concat";
        case OpKind::kExp: return "exp";
        case OpKind::kLog: return "log";
        case OpKind::kErf: return "erf";
        case OpKind::kPowScalar: return "pow_scalar";
        case OpKind::kRelu: return "relu";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kSum: return "sum";
        case OpKind::kMean: return "mean";
        case OpKind::kMax: return "max";
        case OpKind::kIm2col: return "im2col";
        case OpKind::kCol2im: return "col2im";
        case OpKind::kBoxBlur: return "box_blur";
        case OpKind::kBoxBlurT: return "box_blur_t";
    }
    return "?";
}

Tensor eval_op(OpKind op, const OpAttrs& attrs, const Tensor* a, const Tensor* b) {
    switch (op) {
        case OpKind::kAdd: return broadcast_binary(*a, *b, [](double x, double y) { return x + y; });
        case OpKind::kSub: return broadcast_binary(*a, *b, [](double x, double y) { return x - y; });
        case OpKind::kMul: return broadcast_binary(*a, *b, [](double x, double y) { return x * y; });
        case OpKind::kDiv: return broadcast_binary(*a, *b, [](double x, double y) { return x / y; });
        case OpKind::kNeg: return unary(*a, [](double x) { return -x; });
        case OpKind::kAddScalar: {
            const double s = attrs.scalar;
            return unary(*a, [s](double x) { return x + s; });
        }
        case OpKind::kMulScalar: {
            const double s = attrs.scalar;
            return unary(*a, [s](double x) { return x * s; });
        }
        case OpKind::kMatmul: return matmul_kernel(*a, *b);
        case OpKind::kPermute: return permute_kernel(*a, attrs.perm);
        case OpKind::kReshape: {
            if (shape_numel(attrs.shape) != a->numel())
                throw std::invalid_argument("reshape: element count mismatch " + shape_str(a->shape) + " -> " +
                                            shape_str(attrs.shape));
            Tensor out = *a;
            out.shape = attrs.shape;
            return out;
        }
        case OpKind::kSlice: return slice_kernel(*a, attrs.offsets, attrs.shape);
        case OpKind::kUnslice: return unslice_kernel(*a, attrs.shape, attrs.offsets);
        case OpKind::kConcat: return concat_kernel(*a, *b, attrs.axis);
        case OpKind::kExp: return unary(*a, [](double x) { return std::exp(x); });
        case OpKind::kLog: return unary(*a, [](double x) { return std::log(x); });
        case OpKind::kErf: return unary(*a, [](double x) { return std::erf(x); });
        case OpKind::kPowScalar: {
            const double p = attrs.scalar;
            return unary(*a, [p](double x) { return std::pow(x, p); });
        }
        case OpKind::kRelu: return unary(*a, [](double x) { return x > 0.0 ? x : 0.0; });
        case OpKind::kSoftmax: return softmax_kernel(*a, attrs.axis);
        case OpKind::kSum: return reduce_kernel(*a, attrs.axis, attrs.keepdim, Red::kSum);
        case OpKind::kMean: return reduce_kernel(*a, attrs.axis, attrs.keepdim, Red::kMean);
        case OpKind::kMax: return reduce_kernel(*a, attrs.axis, attrs.keepdim, Red::kMax);
        case OpKind::kIm2col: return im2col_kernel(*a, attrs.conv);
        case OpKind::kCol2im: return col2im_kernel(*a, attrs.conv, attrs.shape);
        case OpKind::kBoxBlur: return box_blur_kernel(*a, attrs.window, false);
        case OpKind::kBoxBlurT: return box_blur_kernel(*a, attrs.window, true);
        default: throw std::logic_error("eval_op: leaf kind");
    }
}

const Node& Tape::node(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw std::invalid_argument("tape: invalid var");
    return nodes_[v.id];
}

Var Tape::push(OpKind op, std::int32_t a, std::int32_t b, OpAttrs attrs) {
    const Tensor* ta = a >= 0 ? &nodes_[a].val : nullptr;
    const Tensor* tb = b >= 0 ? &nodes_[b].val : nullptr;
    Tensor v = eval_op(op, attrs, ta, tb);
    const bool rg = (a >= 0 && nodes_[a].requires_grad) || (b >= 0 && nodes_[b].requires_grad);
    nodes_.push_back(Node{op, {a, b}, std::move(attrs), std::move(v), rg});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::input(Tensor v) {
    nodes_.push_back(Node{OpKind::kInput, {-1, -1}, {}, std::move(v), false});
    ++n_inputs_;
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::param(Tensor v) {
    nodes_.push_back(Node{OpKind::kParam, {-1, -1}, {}, std::move(v), true});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor v) {
    nodes_.push_back(Node{OpKind::kConst, {-1, -1}, {}, std::move(v), false});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::add(Var a, Var b) { return push(OpKind::kAdd, a.id, b.id, {}); }
Var Tape::sub(Var a, Var b) { return push(OpKind::kSub, a.id, b.id, {}); }
Var Tape::mul(Var a, Var b) { return push(OpKind::kMul, a.id, b.id, {}); }
Var Tape::div(Var a, Var b) { return push(OpKind::kDiv, a.id, b.id, {}); }
Var Tape::neg(Var a) { return push(OpKind::kNeg, a.id, -1, {}); }

Var Tape::add_scalar(Var a, double s) {
    OpAttrs at;
    at.scalar = s;
    return push(OpKind::kAddScalar, a.id, -1, std::move(at));
}

Var Tape::mul_scalar(Var a, double s) {
    OpAttrs at;
    at.scalar = s;
    return push(OpKind::kMulScalar, a.id, -1, std::move(at));
}

Var Tape::exp(Var a) { return push(OpKind::kExp, a.id, -1, {}); }
Var Tape::log(Var a) { return push(OpKind::kLog, a.id, -1, {}); }
Var Tape::erf(Var a) { return push(OpKind::kErf, a.id, -1, {}); }

Var Tape::pow_scalar(Var a, double p) {
    OpAttrs at;
    at.scalar = p;
    return push(OpKind::kPowScalar, a.id, -1, std::move(at));
}

Var Tape::relu(Var a) { return push(OpKind::kRelu, a.id, -1, {}); }

Var Tape::matmul(Var a, Var b) { return push(OpKind::kMatmul, a.id, b.id, {}); }

Var Tape::permute(Var a, std::vector<int> axes) {
    OpAttrs at;
    at.perm = std::move(axes);
    return push(OpKind::kPermute, a.id, -1, std::move(at));
}

Var Tape::reshape(Var a, Shape s) {
    OpAttrs at;
    at.shape = std::move(s);
    return push(OpKind::kReshape, a.id, -1, std::move(at));
}

Var Tape::slice(Var a, std::vector<std::size_t> starts, Shape sizes) {
    OpAttrs at;
    at.offsets = std::move(starts);
    at.shape = std::move(sizes);
    return push(OpKind::kSlice, a.id, -1, std::move(at));
}

Var Tape::concat(Var a, Var b, int axis) {
    OpAttrs at;
    at.axis = axis;
    return push(OpKind::kConcat, a.id, b.id, std::move(at));
}

Var Tape::softmax(Var a, int axis) {
    const int nd = static_cast<int>(shape(a).size());
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw std::invalid_argument("softmax: bad axis");
    OpAttrs at;
    at.axis = axis;
    return push(OpKind::kSoftmax, a.id, -1, std::move(at));
}

Var Tape::sum(Var a, int axis, bool keepdim) {
    OpAttrs at;
    at.axis = axis;
    at.keepdim = keepdim;
    return push(OpKind::kSum, a.id, -1, std::move(at));
}

Var Tape::mean(Var a, int axis, bool keepdim) {
    OpAttrs at;
    at.axis = axis;
    at.keepdim = keepdim;
    return push(OpKind::kMean, a.id, -1, std::move(at));
}

Var Tape::max(Var a, int axis, bool keepdim) {
    OpAttrs at;
    at.axis = axis;
    at.keepdim = keepdim;
    return push(OpKind::kMax, a.id, -1, std::move(at));
}

Var Tape::im2col(Var x, ConvGeom g) {
    OpAttrs at;
    at.conv = g;
    return push(OpKind::kIm2col, x.id, -1, std::move(at));
}

Var Tape::col2im(Var cols, ConvGeom g, Shape x) {
    OpAttrs at;
    at.conv = g;
    at.shape = std::move(x);
    return push(OpKind::kCol2im, cols.id, -1, std::move(at));
}

Var Tape::box_blur(Var x, int k) {
    OpAttrs at;
    at.window = k;
    return push(OpKind::kBoxBlur, x.id, -1, std::move(at));
}

Var Tape::box_blur_t(Var x, int k) {
    OpAttrs at;
    at.window = k;
    return push(OpKind::kBoxBlurT, x.id, -1, std::move(at));
}

Var Tape::gelu(Var a) {
    Var t = mul_scalar(a, 1.0 / std::sqrt(2.0));
    t = add_scalar(erf(t), 1.0);
    return mul_scalar(mul(a, t), 0.5);
}

Var Tape::dot(Var a, Var b) {
    if (shape(a) != shape(b)) throw std::invalid_argument("dot: shape mismatch");
    return sum_all(mul(a, b));
}

Var Tape::transpose_last2(Var a) {
    const std::size_t nd = shape(a).size();
    if (nd < 2) throw std::invalid_argument("transpose_last2: rank < 2");
    std::vector<int> p(nd);
    for (std::size_t i = 0; i < nd; ++i) p[i] = static_cast<int>(i);
    std::swap(p[nd - 1], p[nd - 2]);
    return permute(a, std::move(p));
}

Var Tape::reduce_to(Var v, const Shape& target) {
    if (shape(v) == target) return v;
    Var cur = v;
    while (shape(cur).size() > target.size()) cur = sum(cur, 0, false);
    for (std::size_t d = 0; d < target.size(); ++d) {
        if (target[d] == 1 && shape(cur)[d] != 1) cur = sum(cur, static_cast<int>(d), true);
    }
    if (shape(cur) != target)
        throw std::invalid_argument("reduce_to: cannot reduce " + shape_str(shape(v)) + " to " + shape_str(target));
    return cur;
}

Var Tape::zeros_like_const(Var a) { return constant(Tensor::zeros(shape(a))); }
Var Tape::ones_like_const(Var a) { return constant(Tensor::ones(shape(a))); }

void Tape::rewind(std::size_t m) {
    if (m > nodes_.size()) throw std::invalid_argument("tape: rewind past end");
    for (std::size_t i = m; i < nodes_.size(); ++i)
        if (nodes_[i].op == OpKind::kInput) --n_inputs_;
    nodes_.resize(m);
}

std::vector<Var> Tape::gradient(Var scalar_out, std::span<const Var> wrt) {
    const Node& on = node(scalar_out);
    if (on.val.numel() != 1)
        throw std::invalid_argument("gradient: output is not scalar, shape " + shape_str(on.val.shape));
    for (Var w : wrt) {
        const Node& wn = node(w);
        if (wn.op != OpKind::kParam) throw std::invalid_argument("gradient: wrt var is not a parameter leaf");
    }

    std::vector<std::int32_t> adj(static_cast<std::size_t>(scalar_out.id) + 1, -1);
    auto finish = [&]() {
        std::vector<Var> out;
        out.reserve(wrt.size());
        for (Var w : wrt) {
            if (static_cast<std::size_t>(w.id) < adj.size() && adj[w.id] >= 0)
                out.push_back(Var{adj[w.id]});
            else
                out.push_back(constant(Tensor::zeros(node(w).val.shape)));
        }
        return out;
    };
    if (!on.requires_grad) return finish();

    adj[scalar_out.id] = constant(Tensor::ones(on.val.shape)).id;

    auto acc = [&](std::int32_t target, Var g) {
        if (target < 0 || !nodes_[target].requires_grad) return;
        if (adj[target] < 0)
            adj[target] = g.id;
        else
            adj[target] = add(Var{adj[target]}, g).id;
    };

    for (std::int32_t id = scalar_out.id; id >= 0; --id) {
        if (adj[id] < 0) continue;
        const OpKind op = nodes_[id].op;
        const auto in = nodes_[id].in;
        const OpAttrs attrs = nodes_[id].attrs;
        const Var d{adj[id]};
        const Var self{id};
        const Shape s0 = in[0] >= 0 ? nodes_[in[0]].val.shape : Shape{};
        const Shape s1 = in[1] >= 0 ? nodes_[in[1]].val.shape : Shape{};

        switch (op) {
            case OpKind::kInput:
            case OpKind::kParam:
            case OpKind::kConst: break;
            case OpKind::kAdd:
                acc(in[0], reduce_to(d, s0));
                acc(in[1], reduce_to(d, s1));
                break;
            case OpKind::kSub:
                acc(in[0], reduce_to(d, s0));
                acc(in[1], reduce_to(neg(d), s1));
                break;
            case OpKind::kMul:
                acc(in[0], reduce_to(mul(d, Var{in[1]}), s0));
                acc(in[1], reduce_to(mul(d, Var{in[0]}), s1));
                break;
            case OpKind::kDiv:
                acc(in[0], reduce_to(div(d, Var{in[1]}), s0));
                acc(in[1], reduce_to(neg(mul(d, div(self, Var{in[1]}))), s1));
                break;
            case OpKind::kNeg: acc(in[0], neg(d)); break;
            case OpKind::kAddScalar: acc(in[0], d); break;
            case OpKind::kMulScalar: acc(in[0], mul_scalar(d, attrs.scalar)); break;
            case OpKind::kMatmul:
                acc(in[0], reduce_to(matmul(d, transpose_last2(Var{in[1]})), s0));
                acc(in[1], reduce_to(matmul(transpose_last2(Var{in[0]}), d), s1));
                break;
            case OpKind::kPermute: {
                std::vector<int> inv(attrs.perm.size());
                for (std::size_t i = 0; i < attrs.perm.size(); ++i) inv[attrs.perm[i]] = static_cast<int>(i);
                acc(in[0], permute(d, std::move(inv)));
                break;
            }
            case OpKind::kReshape: acc(in[0], reshape(d, s0)); break;
            case OpKind::kSlice: {
                OpAttrs u;
                u.shape = s0;
                u.offsets = attrs.offsets;
                acc(in[0], push(OpKind::kUnslice, d.id, -1, std::move(u)));
                break;
            }
            case OpKind::kUnslice: acc(in[0], slice(d, attrs.offsets, s0)); break;
            case OpKind::kConcat: {
                std::vector<std::size_t> z0(s0.size(), 0), z1(s1.size(), 0);
                z1[attrs.axis] = s0[attrs.axis];
                acc(in[0], slice(d, z0, s0));
                acc(in[1], slice(d, z1, s1));
                break;
            }
            case OpKind::kExp: acc(in[0], mul(d, self)); break;
            case OpKind::kLog: acc(in[0], div(d, Var{in[0]})); break;
            case OpKind::kErf: {
                Var x{in[0]};
                Var t = exp(neg(mul(x, x)));
                acc(in[0], mul(d, mul_scalar(t, kTwoOverSqrtPi)));
                break;
            }
            case OpKind::kPowScalar: {
                const double p = attrs.scalar;
                acc(in[0], mul(d, mul_scalar(pow_scalar(Var{in[0]}, p - 1.0), p)));
                break;
            }
            case OpKind::kRelu: {
                Tensor mask(s0);
                const Tensor& xv = nodes_[in[0]].val;
                for (std::size_t i = 0; i < mask.numel(); ++i) mask.data[i] = xv.data[i] > 0.0 ? 1.0 : 0.0;
                acc(in[0], mul(d, constant(std::move(mask))));
                break;
            }
            case OpKind::kSoftmax: {
                Var t = mul(d, self);
                acc(in[0], mul(self, sub(d, sum(t, attrs.axis, true))));
                break;
            }
            case OpKind::kSum:
            case OpKind::kMean:
            case OpKind::kMax: {
                Var dk = d;
                if (!attrs.keepdim) {
                    Shape ks = s0;
                    if (attrs.axis == -1) {
                        for (auto& e : ks) e = 1;
                    } else {
                        ks[attrs.axis] = 1;
                    }
                    dk = reshape(d, ks);
                }
                if (op == OpKind::kSum) {
                    acc(in[0], mul(dk, constant(Tensor::ones(s0))));
                } else if (op == OpKind::kMean) {
                    const double extent = attrs.axis == -1 ? static_cast<double>(shape_numel(s0))
                                                           : static_cast<double>(s0[attrs.axis]);
                    acc(in[0], mul(mul_scalar(dk, 1.0 / extent), constant(Tensor::ones(s0))));
                } else {
                    // one-hot of the first-listed maximum along the axis
                    const Tensor& xv = nodes_[in[0]].val;
                    Tensor mask(s0);
                    if (attrs.axis == -1) {
                        std::size_t arg = 0;
                        for (std::size_t i = 1; i < xv.numel(); ++i)
                            if (xv.data[i] > xv.data[arg]) arg = i;
                        mask.data[arg] = 1.0;
                    } else {
                        std::size_t outer, alen, inner;
                        outer = 1;
                        inner = 1;
                        alen = s0[attrs.axis];
                        for (int dd = 0; dd < attrs.axis; ++dd) outer *= s0[dd];
                        for (std::size_t dd = attrs.axis + 1; dd < s0.size(); ++dd) inner *= s0[dd];
                        for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < inner; ++i) {
                                const std::size_t base = o * alen * inner + i;
                                std::size_t arg = 0;
                                for (std::size_t tt = 1; tt < alen; ++tt)
                                    if (xv.data[base + tt * inner] > xv.data[base + arg * inner]) arg = tt;
                                mask.data[base + arg * inner] = 1.0;
                            }
                    }
                    acc(in[0], mul(dk, constant(std::move(mask))));
                }
                break;
            }
            case OpKind::kIm2col: acc(in[0], col2im(d, attrs.conv, s0)); break;
            case OpKind::kCol2im: acc(in[0], im2col(d, attrs.conv)); break;
            case OpKind::kBoxBlur: acc(in[0], box_blur_t(d, attrs.window)); break;
            case OpKind::kBoxBlurT: acc(in[0], box_blur(d, attrs.window)); break;
        }
    }
    return finish();
}

std::vector<Tensor> Tape::replay(std::span<const Tensor> inputs, std::span<const Var> outputs) const {
    if (inputs.size() != n_inputs_)
        throw std::invalid_argument("replay: expected " + std::to_string(n_inputs_) + " inputs, got " +
                                    std::to_string(inputs.size()));
    std::vector<Tensor> vals(nodes_.size());
    std::size_t next = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        switch (n.op) {
            case OpKind::kInput:
                if (inputs[next].shape != n.val.shape)
                    throw TapeError(static_cast<std::int32_t>(i),
                                    "input shape " + shape_str(inputs[next].shape) +
                                        " does not match recorded signature " + shape_str(n.val.shape));
                vals[i] = inputs[next++];
                break;
            case OpKind::kParam:
            case OpKind::kConst: vals[i] = n.val; break;
            default: {
                const Tensor* a = n.in[0] >= 0 ? &vals[n.in[0]] : nullptr;
                const Tensor* b = n.in[1] >= 0 ? &vals[n.in[1]] : nullptr;
                try {
                    vals[i] = eval_op(n.op, n.attrs, a, b);
                } catch (const std::exception& e) {
                    throw TapeError(static_cast<std::int32_t>(i), std::string(op_name(n.op)) + ": " + e.what());
                }
            }
        }
    }
    std::vector<Tensor> out;
    out.reserve(outputs.size());
    for (Var v : outputs) out.push_back(vals.at(v.id));
    return out;
}

}  // namespace vitlab
