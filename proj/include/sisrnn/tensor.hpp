#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sisrnn {

using Index = Eigen::Index;

// All numeric storage is dense, row-major, 64-bit. Row-major matters: the
// checkpoint blob and the IDX loader both serialize values in this order.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense value carrier of rank 0, 1 or 2.
///
/// Rank 0 is a scalar, rank 1 a flat vector of n entries (stored 1 x n),
/// rank 2 an m x n matrix whose rows are batch entries by convention.
/// Zero-width vectors (n = 0) are valid; they appear as disabled noise layers.
class Tensor {
public:
    Tensor() : shape_{}, m_(Mat::Zero(1, 1)) {}

    static Tensor scalar(double v) {
        Tensor t;
        t.m_(0, 0) = v;
        return t;
    }

    static Tensor vector(std::vector<double> v) {
        Tensor t;
        t.shape_ = {static_cast<Index>(v.size())};
        t.m_.resize(1, static_cast<Index>(v.size()));
        for (Index i = 0; i < t.m_.cols(); ++i) t.m_(0, i) = v[static_cast<size_t>(i)];
        return t;
    }

    static Tensor vector(std::initializer_list<double> v) {
        return vector(std::vector<double>(v));
    }

    static Tensor row_vector(Mat m) {
        if (m.rows() != 1) throw std::invalid_argument("row_vector: expected a single row");
        Tensor t;
        t.shape_ = {m.cols()};
        t.m_ = std::move(m);
        return t;
    }

    static Tensor matrix(Mat m) {
        Tensor t;
        t.shape_ = {m.rows(), m.cols()};
        t.m_ = std::move(m);
        return t;
    }

    static Tensor zeros(std::vector<Index> shape) {
        Tensor t;
        t.set_shape(std::move(shape));
        t.m_.setZero();
        return t;
    }

    static Tensor full(std::vector<Index> shape, double v) {
        Tensor t;
        t.set_shape(std::move(shape));
        t.m_.setConstant(v);
        return t;
    }

    const std::vector<Index>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index size() const { return m_.size(); }
    Index rows() const { return m_.rows(); }
    Index cols() const { return m_.cols(); }

    const Mat& mat() const { return m_; }
    Mat& mat() { return m_; }

    double value() const {
        if (size() != 1) throw std::invalid_argument("Tensor::value: tensor is not a scalar (size " + std::to_string(size()) + ")");
        return m_(0, 0);
    }

    double at(Index i) const { return m_(0, i); }
    double at(Index i, Index j) const { return m_(i, j); }

    std::span<const double> values() const { return {m_.data(), static_cast<size_t>(m_.size())}; }
    std::span<double> values_mut() { return {m_.data(), static_cast<size_t>(m_.size())}; }

    bool all_finite() const { return m_.allFinite(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    /// Reinterprets the flat row-major values under a new shape of equal size.
    Tensor reshape(std::vector<Index> shape) const {
        Tensor t;
        t.set_shape(std::move(shape));
        if (t.size() != size()) throw std::invalid_argument("Tensor::reshape: size mismatch");
        std::copy(m_.data(), m_.data() + m_.size(), t.m_.data());
        return t;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    void set_shape(std::vector<Index> shape) {
        if (shape.size() > 2) throw std::invalid_argument("Tensor: rank > 2 not supported");
        for (Index d : shape)
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
        shape_ = std::move(shape);
        if (shape_.empty()) m_.resize(1, 1);
        else if (shape_.size() == 1) m_.resize(1, shape_[0]);
        else m_.resize(shape_[0], shape_[1]);
    }

    std::vector<Index> shape_;  // {} scalar, {n} vector, {m,n} matrix
    Mat m_;
};

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    auto va = a.values();
    auto vb = b.values();
    for (size_t i = 0; i < va.size(); ++i)
        if (va[i] != vb[i]) return false;
    return true;
}

}  // namespace sisrnn
