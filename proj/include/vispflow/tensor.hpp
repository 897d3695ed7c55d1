#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "vispflow/errors.hpp"

namespace vispflow {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor of 64-bit floats.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            throw dim_error("tensor data length does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        const std::size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor full(Shape s, double v) {
        const std::size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor identity(int n) {
        Tensor t = zeros({n, n});
        for (int i = 0; i < n; ++i) t.data[static_cast<std::size_t>(i) * n + i] = 1.0;
        return t;
    }

    std::size_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }

    // Trailing-2D view helpers: rows() x cols() matrices batched over
    // leading dimensions.
    int rows() const { return ndim() >= 2 ? shape[shape.size() - 2] : 1; }
    int cols() const { return ndim() >= 1 ? shape.back() : 1; }
    std::size_t batches() const {
        std::size_t b = 1;
        for (int i = 0; i + 2 < ndim(); ++i) b *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
        return ndim() >= 2 ? b : 1;
    }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// C = A * B for trailing 2D matrices. A may carry leading batch dims; B is
// either 2D (shared across the batch) or has the same leading dims as A.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw dim_error("matmul: operands must have at least 2 dims");
    const int m = a.rows(), k = a.cols();
    const int k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw dim_error("matmul: inner dims disagree " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const std::size_t ab = a.batches(), bb = b.batches();
    if (bb != 1 && bb != ab)
        throw dim_error("matmul: batch dims disagree " + shape_str(a.shape) + " vs " + shape_str(b.shape));

    Shape out_shape(a.shape.begin(), a.shape.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor c = Tensor::zeros(std::move(out_shape));

    const std::size_t a_stride = static_cast<std::size_t>(m) * k;
    const std::size_t b_stride = bb == 1 ? 0 : static_cast<std::size_t>(k) * n;
    const std::size_t c_stride = static_cast<std::size_t>(m) * n;
    for (std::size_t batch = 0; batch < ab; ++batch) {
        const double* pa = a.data.data() + batch * a_stride;
        const double* pb = b.data.data() + batch * b_stride;
        double* pc = c.data.data() + batch * c_stride;
        for (int i = 0; i < m; ++i) {
            const double* arow = pa + static_cast<std::size_t>(i) * k;
            double* crow = pc + static_cast<std::size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = pb + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    return c;
}

inline Tensor transpose2d(const Tensor& x) {
    if (x.ndim() != 2) throw dim_error("transpose2d: expected 2D tensor");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
    return out;
}

// Row-wise softmax over the last dimension, shifted by the row max so it
// never overflows.
inline Tensor softmax_lastdim(const Tensor& x) {
    if (x.ndim() < 1 || x.cols() < 1) throw dim_error("softmax_lastdim: last dim must be >= 1");
    Tensor y = x;
    const int c = x.cols();
    const std::size_t rows = x.numel() / static_cast<std::size_t>(c);
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = y.data.data() + r * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < c; ++j) row[j] /= sum;
    }
    return y;
}

}  // namespace vispflow
