#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitlab {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);
std::vector<std::size_t> row_major_strides(const Shape& s);

// Dense n-dimensional array of 64-bit floats, row-major.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);
    explicit Tensor(Shape s);  // zero-filled

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v);
    static Tensor ones(Shape s) { return full(std::move(s), 1.0); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor identity(std::size_t n);

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    bool all_finite() const;
    bool same_bits(const Tensor& other) const;
};

// Right-aligned NumPy-style broadcast; throws std::invalid_argument on mismatch.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace vitlab
