#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fieldlab {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
        n *= d;
    }
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

/// Dense row-major 64-bit real array. The single value carrier of the
/// library: states, parameters, gradients, probes all live here.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("tensor: shape/data size mismatch");
    }

    static Tensor zeros(Shape s) {
        auto n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }
    static Tensor full(Shape s, double v) {
        auto n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor row(std::vector<double> d) {
        Shape s{1, static_cast<std::int64_t>(d.size())};
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor vec(std::vector<double> d) {
        Shape s{static_cast<std::int64_t>(d.size())};
        return Tensor(std::move(s), std::move(d));
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool is_scalar() const { return numel() == 1; }

    std::int64_t rows() const {
        if (shape.size() != 2) throw std::invalid_argument("tensor: rows() needs 2-D, got " + shape_str(shape));
        return shape[0];
    }
    std::int64_t cols() const {
        if (shape.size() != 2) throw std::invalid_argument("tensor: cols() needs 2-D, got " + shape_str(shape));
        return shape[1];
    }

    double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    /// Row r of a 2-D tensor as a 1-D tensor (copy).
    Tensor row_at(std::int64_t r) const {
        std::int64_t c = cols();
        Tensor out = Tensor::zeros({c});
        for (std::int64_t j = 0; j < c; ++j) out.at(j) = at(r, j);
        return out;
    }
};

// ---- eager arithmetic on raw tensors (metric-side helpers, no gradients) ----

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (auto& v : out.data) v *= c;
    return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double squared_norm(const Tensor& a) { return dot(a, a); }
inline double norm2(const Tensor& a) { return std::sqrt(squared_norm(a)); }

inline Tensor matmul_eager(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.cols() != b.rows())
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            double av = a.at(i, p);
            if (av == 0.0) continue;
            for (std::int64_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
    return out;
}

}  // namespace fieldlab
