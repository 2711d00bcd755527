#pragma once

// Dense row-major float32 tensor. This is the one value type every other
// header builds on; matrix products are routed through Eigen maps so the
// heavy lifting stays in one place.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Core>

#include "opstyle/common.hpp"

namespace opstyle {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0f);
    }

    Tensor(std::vector<int64_t> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_arg(static_cast<int64_t>(data_.size()) == numel_of(shape_),
                  "tensor: data length does not match shape");
    }

    static Tensor full(std::vector<int64_t> shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    float& operator()(int64_t i, int64_t j) {
        return data_[static_cast<size_t>(i * shape_[1] + j)];
    }
    float operator()(int64_t i, int64_t j) const {
        return data_[static_cast<size_t>(i * shape_[1] + j)];
    }
    float& operator()(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    float operator()(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    float& operator()(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    float operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(std::vector<int64_t> shape) const {
        check_arg(numel_of(shape) == size(), "reshape: element count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            check_arg(d >= 0, "tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatF = Eigen::Map<MatF>;
using CMapMatF = Eigen::Map<const MatF>;

inline MapMatF as_matrix(Tensor& t, int64_t rows, int64_t cols) {
    check_arg(rows * cols == t.size(), "as_matrix: size mismatch for " + t.shape_str());
    return MapMatF(t.data(), rows, cols);
}

inline CMapMatF as_matrix(const Tensor& t, int64_t rows, int64_t cols) {
    check_arg(rows * cols == t.size(), "as_matrix: size mismatch for " + t.shape_str());
    return CMapMatF(t.data(), rows, cols);
}

// C = op(A) * op(B) with optional transposes; shapes are taken from the
// leading two logical dims implied by the arguments.
inline Tensor matmul(const Tensor& a, int64_t ar, int64_t ac,
                     const Tensor& b, int64_t br, int64_t bc,
                     bool ta = false, bool tb = false) {
    const int64_t m = ta ? ac : ar;
    const int64_t k = ta ? ar : ac;
    const int64_t k2 = tb ? bc : br;
    const int64_t n = tb ? br : bc;
    check_arg(k == k2, "matmul: inner dimension mismatch");
    Tensor c({m, n});
    auto A = as_matrix(a, ar, ac);
    auto B = as_matrix(b, br, bc);
    auto C = as_matrix(c, m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
    return c;
}

inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
    check_arg(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required");
    return matmul(a, a.dim(0), a.dim(1), b, b.dim(0), b.dim(1), ta, tb);
}

inline void axpy(Tensor& y, const Tensor& x, float alpha) {
    check_arg(y.same_shape(x), "axpy: shape mismatch");
    float* yd = y.data();
    const float* xd = x.data();
    for (int64_t i = 0, n = y.size(); i < n; ++i) yd[i] += alpha * xd[i];
}

inline void scale(Tensor& t, float alpha) {
    for (int64_t i = 0, n = t.size(); i < n; ++i) t[i] *= alpha;
}

inline Tensor lerp(const Tensor& a, const Tensor& b, float t) {
    check_arg(a.same_shape(b), "lerp: shape mismatch");
    Tensor out(a.shape());
    for (int64_t i = 0, n = a.size(); i < n; ++i) out[i] = a[i] + t * (b[i] - a[i]);
    return out;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    check_arg(a.same_shape(b), "max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (int64_t i = 0, n = a.size(); i < n; ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
    check_arg(a.same_shape(b), "dot: shape mismatch");
    double s = 0.0;
    for (int64_t i = 0, n = a.size(); i < n; ++i) s += double(a[i]) * double(b[i]);
    return s;
}

inline double sum(const Tensor& t) {
    double s = 0.0;
    for (int64_t i = 0, n = t.size(); i < n; ++i) s += t[i];
    return s;
}

} // namespace opstyle
