#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace palm {

/// Dense row-major tensor with shared storage. Copies are shallow; ops that
/// need fresh storage call `clone()`. Rank is dynamic but almost everything
/// in this codebase is 1-D or 2-D.
template <class S>
class Tensor {
public:
    using Scalar = S;
    using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatMap =
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Tensor() = default;

    explicit Tensor(std::vector<int> dims)
        : dims_(std::move(dims)),
          store_(std::make_shared<std::vector<S>>(count(dims_), S(0))) {}

    Tensor(std::vector<int> dims, std::vector<S> values)
        : dims_(std::move(dims)), store_(std::make_shared<std::vector<S>>(std::move(values))) {
        if (static_cast<std::int64_t>(store_->size()) != count(dims_))
            throw std::invalid_argument("tensor: value count does not match shape");
    }

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }

    static Tensor full(std::vector<int> dims, S value) {
        Tensor t(std::move(dims));
        std::fill(t.begin(), t.end(), value);
        return t;
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    bool defined() const { return store_ != nullptr; }
    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(dims_.size()); }

    std::int64_t size() const { return store_ ? static_cast<std::int64_t>(store_->size()) : 0; }

    /// Rows/cols of a 1-D or 2-D tensor (1-D counts as a single row).
    int rows() const { return rank() == 1 ? 1 : dims_[0]; }
    int cols() const { return rank() == 1 ? dims_[0] : dims_[rank() - 1]; }

    S* data() { return store_->data(); }
    const S* data() const { return store_->data(); }
    S* begin() { return data(); }
    S* end() { return data() + size(); }
    const S* begin() const { return data(); }
    const S* end() const { return data() + size(); }

    S& operator[](std::int64_t i) { return (*store_)[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return (*store_)[static_cast<std::size_t>(i)]; }

    S& at(int r, int c) { return (*store_)[static_cast<std::size_t>(r) * cols() + c]; }
    const S& at(int r, int c) const { return (*store_)[static_cast<std::size_t>(r) * cols() + c]; }

    MatMap mat() { return MatMap(data(), rows(), cols()); }
    ConstMatMap mat() const { return ConstMatMap(data(), rows(), cols()); }

    /// Deep copy with fresh storage.
    Tensor clone() const {
        Tensor t;
        t.dims_ = dims_;
        t.store_ = std::make_shared<std::vector<S>>(*store_);
        return t;
    }

    /// Same storage, new shape (element count must match).
    Tensor reshaped(std::vector<int> dims) const {
        if (count(dims) != size()) throw std::invalid_argument("tensor: reshape size mismatch");
        Tensor t;
        t.dims_ = std::move(dims);
        t.store_ = store_;
        return t;
    }

    void fill(S value) { std::fill(begin(), end(), value); }

    void zero() { fill(S(0)); }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    static std::string shape_str(const std::vector<int>& dims) {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(dims[i]);
        }
        return s + "]";
    }

    std::string shape_str() const { return shape_str(dims_); }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out(dims_);
        for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<T>((*this)[i]);
        return out;
    }

private:
    static std::int64_t count(const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int d : dims) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::vector<int> dims_;
    std::shared_ptr<std::vector<S>> store_;
};

} // namespace palm
