#include "vitlab/param_vector.hpp"

#include <cmath>
#include <stdexcept>

namespace vitlab {

std::size_t ParamVector::total_dim() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.value.numel();
    return n;
}

bool ParamVector::same_structure(const ParamVector& other) const {
    if (segments.size() != other.segments.size()) return false;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i].name != other.segments[i].name) return false;
        if (segments[i].value.shape != other.segments[i].value.shape) return false;
    }
    return true;
}

std::vector<double> ParamVector::flatten() const {
    std::vector<double> flat;
    flat.reserve(total_dim());
    for (const auto& s : segments) flat.insert(flat.end(), s.value.data.begin(), s.value.data.end());
    return flat;
}

void ParamVector::unflatten(const std::vector<double>& flat) {
    if (flat.size() != total_dim()) throw std::invalid_argument("param_vector: unflatten size mismatch");
    std::size_t off = 0;
    for (auto& s : segments) {
        std::copy_n(flat.begin() + off, s.value.numel(), s.value.data.begin());
        off += s.value.numel();
    }
}

ParamVector ParamVector::zeros_like() const {
    ParamVector z = *this;
    for (auto& s : z.segments) std::fill(s.value.data.begin(), s.value.data.end(), 0.0);
    return z;
}

double ParamVector::dot(const ParamVector& a, const ParamVector& b) {
    if (!a.same_structure(b)) throw std::invalid_argument("param_vector: dot structure mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.segments.size(); ++i) {
        const auto& x = a.segments[i].value.data;
        const auto& y = b.segments[i].value.data;
        for (std::size_t j = 0; j < x.size(); ++j) acc += x[j] * y[j];
    }
    return acc;
}

double ParamVector::norm() const { return std::sqrt(dot(*this, *this)); }

void ParamVector::axpy(double alpha, const ParamVector& x) {
    if (!same_structure(x)) throw std::invalid_argument("param_vector: axpy structure mismatch");
    for (std::size_t i = 0; i < segments.size(); ++i) {
        auto& y = segments[i].value.data;
        const auto& v = x.segments[i].value.data;
        for (std::size_t j = 0; j < y.size(); ++j) y[j] += alpha * v[j];
    }
}

void ParamVector::scale(double alpha) {
    for (auto& s : segments)
        for (double& v : s.value.data) v *= alpha;
}

bool ParamVector::same_bits(const ParamVector& other) const {
    if (!same_structure(other)) return false;
    for (std::size_t i = 0; i < segments.size(); ++i)
        if (!segments[i].value.same_bits(other.segments[i].value)) return false;
    return true;
}

std::vector<Var> bind_params(Tape& tape, const ParamVector& theta) {
    std::vector<Var> leaves;
    leaves.reserve(theta.segments.size());
    for (const auto& s : theta.segments) leaves.push_back(tape.param(s.value));
    return leaves;
}

ParamVector read_back(const Tape& tape, const std::vector<Var>& vars, const ParamVector& like) {
    if (vars.size() != like.segments.size()) throw std::invalid_argument("read_back: segment count mismatch");
    ParamVector out = like;
    for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor& v = tape.val(vars[i]);
        if (v.shape != like.segments[i].value.shape) throw std::invalid_argument("read_back: shape mismatch");
        out.segments[i].value = v;
    }
    return out;
}

double closure_value(const LossClosure& f, const ParamVector& theta) {
    Tape tape;
    auto [loss, leaves] = f(tape, theta);
    (void)leaves;
    return tape.val(loss).data[0];
}

ParamVector closure_grad(const LossClosure& f, const ParamVector& theta) {
    Tape tape;
    auto [loss, leaves] = f(tape, theta);
    auto g = tape.gradient(loss, leaves);
    return read_back(tape, g, theta);
}

ParamVector closure_hvp(const LossClosure& f, const ParamVector& theta, const ParamVector& v) {
    if (!theta.same_structure(v)) throw std::invalid_argument("hvp: v does not match theta structure");
    Tape tape;
    auto [loss, leaves] = f(tape, theta);
    auto g = tape.gradient(loss, leaves);
    Var s;
    for (std::size_t i = 0; i < g.size(); ++i) {
        Var vi = tape.constant(v.segments[i].value);
        Var di = tape.dot(g[i], vi);
        s = i == 0 ? di : tape.add(s, di);
    }
    auto hv = tape.gradient(s, leaves);
    ParamVector out = read_back(tape, hv, theta);
    for (const auto& seg : out.segments)
        if (!seg.value.all_finite())
            throw std::runtime_error("hvp: non-finite result in segment '" + seg.name + "'");
    return out;
}

}  // namespace vitlab
