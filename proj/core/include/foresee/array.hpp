#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "foresee/error.hpp"

namespace fse {

/// Dense real array, row-major. Values are held in 64-bit precision; the
/// 32-bit storage option exists only at checkpoint serialization time.
class Array {
public:
    Array() = default;

    /// Zero-filled array of the given shape. Extents must be positive.
    explicit Array(std::vector<int> shape);

    Array(std::vector<int> shape, std::vector<double> values);

    static Array zeros(std::vector<int> shape) { return Array(std::move(shape)); }
    static Array full(std::vector<int> shape, double value);
    static Array scalar(double value) { return Array({1, 1}, {value}); }
    /// 2-d array from nested lists; rows must have equal length.
    static Array matrix(std::vector<std::vector<double>> rows);
    /// 1xN row vector.
    static Array row(std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    /// Leading/trailing extents of a 2-d array.
    int rows() const;
    int cols() const;

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(int r, int c);
    double at(int r, int c) const;

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool same_shape(const Array& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// Exact (bitwise) equality of shape and values.
    bool operator==(const Array& other) const {
        return shape_ == other.shape_ && values_ == other.values_;
    }

    std::string shape_string() const;

private:
    std::vector<int> shape_;
    std::vector<double> values_;
};

std::string shape_string(const std::vector<int>& shape);

// Value-level kernels. The autodiff tape dispatches to these for forward
// evaluation and replay, so replaying a recorded computation reproduces
// outputs bitwise.

Array matmul(const Array& a, const Array& b);
Array add(const Array& a, const Array& b); // equal shapes, or {m,k}+{1,k} bias row
Array sub(const Array& a, const Array& b);
Array hadamard(const Array& a, const Array& b);
Array sigmoid(const Array& a);
Array tanh_(const Array& a);
Array relu(const Array& a);
Array concat_cols(const Array& a, const Array& b);
Array slice_cols(const Array& a, int begin, int len);
Array reduce_sum(const Array& a); // {1,1}
Array scale(const Array& a, double factor);

/// Input clamp bounds for exp/log. Early in training the log-variance head
/// can emit transiently extreme values; clamping keeps every array finite.
inline constexpr double kExpInputMax = 50.0;
inline constexpr double kLogInputMin = 1e-30;

/// exp with input clamped to <= kExpInputMax. If clamp_count is non-null it
/// is incremented once per clamped element.
Array exp_(const Array& a, long* clamp_count = nullptr);
/// log with input clamped to >= kLogInputMin.
Array log_(const Array& a, long* clamp_count = nullptr);

} // namespace fse
