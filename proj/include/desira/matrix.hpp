#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace desira {

/// Dense row-major matrix; rows are agents, columns are stations throughout.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double row_sum(std::size_t i) const {
        double acc = 0.0;
        for (double v : row(i)) acc += v;
        return acc;
    }

    double col_sum(std::size_t j) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows_; ++i) acc += (*this)(i, j);
        return acc;
    }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Frobenius norm of (x - y).
inline double frobenius_distance(const Matrix& x, const Matrix& y) {
    if (!x.same_shape(y)) throw std::invalid_argument("frobenius_distance: shape mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x.data()[k] - y.data()[k];
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline double frobenius_norm(const Matrix& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v * v;
    return std::sqrt(acc);
}

}  // namespace desira
