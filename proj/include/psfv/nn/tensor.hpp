#pragma once

#include <Eigen/Core>

#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace psfv::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

inline Index shape_size(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ')';
    return os.str();
}

/// Dense row-major array with a runtime shape over an Eigen vector.
template <class Scalar_>
class Tensor
{
public:
    using Scalar = Scalar_;

    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(shape_size(shape_))) {}
    Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             to_string(shape_));
        }
    }

    static Tensor constant(Shape shape, Scalar value)
    {
        Tensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index dim(std::size_t i) const { return shape_.at(i); }
    Index size() const { return data_.size(); }
    bool empty() const { return shape_.empty(); }

    Vector<Scalar>& data() { return data_; }
    const Vector<Scalar>& data() const { return data_; }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    /// Row-major rows x cols view of the storage.
    Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols)
    {
        return Eigen::Map<RowMatrix<Scalar>>(data_.data(), rows, cols);
    }
    Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const
    {
        return Eigen::Map<const RowMatrix<Scalar>>(data_.data(), rows, cols);
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    template <class Other>
    Tensor<Other> cast() const
    {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    bool all_finite() const { return data_.allFinite(); }

    void set_zero() { data_.setZero(); }

private:
    Shape shape_;
    Vector<Scalar> data_;
};

} // namespace psfv::nn
