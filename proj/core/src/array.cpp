#include "foresee/array.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <utility>

namespace fse {

namespace {

std::size_t checked_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int extent : shape) {
        if (extent <= 0) {
            throw DimensionError("array extent must be positive, got shape " + shape_string(shape));
        }
        n *= static_cast<std::size_t>(extent);
    }
    return n;
}

void require_2d(const Array& a, const char* what) {
    if (a.ndim() != 2) {
        throw DimensionError(std::string(what) + " requires a 2-d array, got shape " + a.shape_string());
    }
}

} // namespace

Array::Array(std::vector<int> shape)
    : shape_(std::move(shape)), values_(checked_count(shape_), 0.0) {}

Array::Array(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (checked_count(shape_) != values_.size()) {
        throw DimensionError("value count " + std::to_string(values_.size()) +
                             " does not match shape " + fse::shape_string(shape_));
    }
}

Array Array::full(std::vector<int> shape, double value) {
    Array a(std::move(shape));
    for (double& v : a.values_) v = value;
    return a;
}

Array Array::matrix(std::vector<std::vector<double>> rows) {
    if (rows.empty() || rows.front().empty()) {
        throw DimensionError("matrix literal must be non-empty");
    }
    const int r = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows.front().size());
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(r) * c);
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) {
            throw DimensionError("matrix literal rows must have equal length");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Array({r, c}, std::move(values));
}

Array Array::row(std::vector<double> values) {
    const int c = static_cast<int>(values.size());
    return Array({1, c}, std::move(values));
}

int Array::rows() const {
    require_2d(*this, "rows()");
    return shape_[0];
}

int Array::cols() const {
    require_2d(*this, "cols()");
    return shape_[1];
}

double& Array::at(int r, int c) {
    require_2d(*this, "at()");
    if (r < 0 || r >= shape_[0] || c < 0 || c >= shape_[1]) {
        throw DimensionError("index (" + std::to_string(r) + "," + std::to_string(c) +
                             ") out of range for shape " + shape_string());
    }
    return values_[static_cast<std::size_t>(r) * shape_[1] + c];
}

double Array::at(int r, int c) const {
    return const_cast<Array*>(this)->at(r, c);
}

bool Array::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Array::shape_string() const { return fse::shape_string(shape_); }

std::string shape_string(const std::vector<int>& shape) {
    std::string s = "{";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += "}";
    return s;
}

Array matmul(const Array& a, const Array& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul shape mismatch: " + a.shape_string() + " x " + b.shape_string());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Array out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    // i-k-j order: contiguous inner loop, and each out element accumulates in
    // ascending k, so results are independent of this loop arrangement.
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const double av = pa[static_cast<std::size_t>(i) * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + static_cast<std::size_t>(l) * n;
            double* orow = po + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Array add(const Array& a, const Array& b) {
    if (a.same_shape(b)) {
        Array out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        return out;
    }
    // Broadcast a single row across every row of a (bias addition).
    if (a.ndim() == 2 && b.ndim() == 2 && b.rows() == 1 && a.cols() == b.cols()) {
        Array out = a;
        const int n = a.cols();
        for (int r = 0; r < a.rows(); ++r) {
            for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(r) * n + c] += b[c];
        }
        return out;
    }
    throw DimensionError("add shape mismatch: " + a.shape_string() + " + " + b.shape_string());
}

Array sub(const Array& a, const Array& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("sub shape mismatch: " + a.shape_string() + " - " + b.shape_string());
    }
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Array hadamard(const Array& a, const Array& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("hadamard shape mismatch: " + a.shape_string() + " * " + b.shape_string());
    }
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Array sigmoid(const Array& a) {
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return out;
}

Array tanh_(const Array& a) {
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return out;
}

Array relu(const Array& a) {
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return out;
}

Array concat_cols(const Array& a, const Array& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows()) {
        throw DimensionError("concat_cols shape mismatch: " + a.shape_string() + " | " + b.shape_string());
    }
    const int r = a.rows(), ca = a.cols(), cb = b.cols();
    Array out({r, ca + cb});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) out.at(i, j) = a[static_cast<std::size_t>(i) * ca + j];
        for (int j = 0; j < cb; ++j) out.at(i, ca + j) = b[static_cast<std::size_t>(i) * cb + j];
    }
    return out;
}

Array slice_cols(const Array& a, int begin, int len) {
    if (a.ndim() != 2 || begin < 0 || len <= 0 || begin + len > a.cols()) {
        throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                             ") out of range for shape " + a.shape_string());
    }
    const int r = a.rows(), c = a.cols();
    Array out({r, len});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < len; ++j) {
            out[static_cast<std::size_t>(i) * len + j] = a[static_cast<std::size_t>(i) * c + begin + j];
        }
    }
    return out;
}

Array reduce_sum(const Array& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return Array::scalar(s);
}

Array scale(const Array& a, double factor) {
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
    return out;
}

Array exp_(const Array& a, long* clamp_count) {
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = out[i];
        if (v > kExpInputMax) {
            v = kExpInputMax;
            if (clamp_count) ++*clamp_count;
        }
        out[i] = std::exp(v);
    }
    return out;
}

Array log_(const Array& a, long* clamp_count) {
    Array out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = out[i];
        if (v < kLogInputMin) {
            v = kLogInputMin;
            if (clamp_count) ++*clamp_count;
        }
        out[i] = std::log(v);
    }
    return out;
}

} // namespace fse
