#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "idmm/errors.hpp"

namespace idmm {

// Dense row-major array of rank 1..4 with shape metadata. The universal
// numeric value of the library; float for training, double for the
// verification path.
template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(numel_), T(0));
    }

    TensorT(std::vector<std::int64_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != numel_)
            throw DimError("tensor: data length " + std::to_string(data_.size()) +
                           " does not match shape product " + std::to_string(numel_));
    }

    static TensorT zeros(std::vector<std::int64_t> shape) { return TensorT(std::move(shape)); }

    static TensorT full(std::vector<std::int64_t> shape, T v) {
        TensorT t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return numel_; }

    // 2-D helpers; most of the numeric core works on matrices.
    std::int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::int64_t cols() const { return numel_ == 0 || shape_.empty() ? 0 : numel_ / shape_[0]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T* row(std::int64_t i) { return data_.data() + i * cols(); }
    const T* row(std::int64_t i) const { return data_.data() + i * cols(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    T& operator()(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * cols() + j)]; }
    T operator()(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * cols() + j)]; }

    bool requires_grad = false;

    // Gradient buffer, same length as data when allocated.
    std::vector<T>& grad() { return grad_; }
    const std::vector<T>& grad() const { return grad_; }
    bool has_grad() const { return !grad_.empty(); }
    void alloc_grad() { grad_.assign(data_.size(), T(0)); }
    void drop_grad() { grad_.clear(); }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const char* context) const {
        if (!all_finite())
            throw NumericError(std::string("non-finite value in ") + context);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape_.size(); ++i)
            os << (i ? "x" : "") << shape_[i];
        os << ']';
        return os.str();
    }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        TensorT<U> t(shape_, std::move(out));
        t.requires_grad = requires_grad;
        return t;
    }

private:
    void validate_shape() {
        if (shape_.empty() || shape_.size() > 4)
            throw DimError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
        numel_ = 1;
        for (std::int64_t d : shape_) {
            if (d <= 0) throw DimError("tensor dimensions must be positive");
            numel_ *= d;
        }
    }

    std::vector<std::int64_t> shape_;
    std::vector<T> data_;
    std::vector<T> grad_;
    std::int64_t numel_ = 0;
};

using Tensor = TensorT<float>;

} // namespace idmm
