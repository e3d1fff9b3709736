#include "vitlab/tensor.hpp"

#include <cmath>
#include <cstring>

namespace vitlab {

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                    std::to_string(data.size()));
    for (std::size_t d0 : shape)
        if (d0 == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
    for (std::size_t d0 : shape)
        if (d0 == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
    data.assign(shape_numel(shape), 0.0);
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
    if (idx.size() != shape.size()) throw std::invalid_argument("tensor::at: rank mismatch");
    auto st = row_major_strides(shape);
    std::size_t flat = 0, i = 0;
    for (std::size_t v : idx) {
        if (v >= shape[i]) throw std::out_of_range("tensor::at: index out of range");
        flat += v * st[i++];
    }
    return data[flat];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool Tensor::same_bits(const Tensor& other) const {
    if (shape != other.shape) return false;
    return std::memcmp(data.data(), other.data.data(), data.size() * sizeof(double)) == 0;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t n = std::max(a.size(), b.size());
    Shape out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
        const std::size_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

}  // namespace vitlab
