#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace slotmorph {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& dims)
{
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& dims)
{
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

// Dense row-major tensor. Value type; copies are deep.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape dims, T fill = T{0}) : dims_(std::move(dims)), data_(numel(dims_), fill) {}
    Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data))
    {
        if (numel(dims_) != data_.size())
            throw ShapeError("tensor: data size " + std::to_string(data_.size()) +
                             " does not match dims " + shape_str(dims_));
    }

    static Tensor from(Shape dims, std::initializer_list<T> values)
    {
        return Tensor(std::move(dims), std::vector<T>(values));
    }

    const Shape& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Extent of the trailing axis; 1 for scalars.
    std::size_t cols() const { return dims_.empty() ? 1 : dims_.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    T item() const
    {
        if (data_.size() != 1) throw ShapeError("tensor: item() on " + shape_str(dims_));
        return data_[0];
    }

    void reshape(Shape dims)
    {
        if (numel(dims) != data_.size())
            throw ShapeError("reshape: " + shape_str(dims_) + " -> " + shape_str(dims));
        dims_ = std::move(dims);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(dims_, std::move(out));
    }

private:
    Shape dims_;
    std::vector<T> data_;
};

}  // namespace slotmorph
