#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace t2p {

// Dense row-major tensor of doubles. Shapes are small at desk scale, so
// everything lives in one contiguous vector and ops are plain loops.
struct Array {
    std::vector<int> shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(std::vector<int> s) : shape(std::move(s)), data(count(shape), 0.0) {}
    Array(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != count(shape))
            throw std::invalid_argument("Array: value count does not match shape");
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) {
            if (e < 0) throw std::invalid_argument("Array: negative extent");
            n *= e;
        }
        return n;
    }

    static Array zeros(std::vector<int> s) { return Array(std::move(s)); }
    static Array full(std::vector<int> s, double v) {
        Array a(std::move(s));
        std::fill(a.data.begin(), a.data.end(), v);
        return a;
    }
    static Array scalar(double v) { return Array({}, {v}); }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }

    double& operator[](std::int64_t i) { return data[static_cast<size_t>(i)]; }
    const double& operator[](std::int64_t i) const { return data[static_cast<size_t>(i)]; }

    // Multi-index access for tests and small fixtures; hot paths index flat.
    double& at(std::initializer_list<int> idx) { return data[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int> idx) const { return data[static_cast<size_t>(offset(idx))]; }

    std::int64_t offset(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw std::invalid_argument("Array::at: index rank mismatch");
        std::int64_t off = 0;
        int d = 0;
        for (int i : idx) {
            if (i < 0 || i >= shape[static_cast<size_t>(d)])
                throw std::out_of_range("Array::at: index out of range");
            off = off * shape[static_cast<size_t>(d)] + i;
            ++d;
        }
        return off;
    }

    bool same_shape(const Array& o) const { return shape == o.shape; }
    bool all_finite() const;
    std::string shape_str() const;
};

// y[m, j] += sum_k x[m, k] * w[k, j]      (x: MxK, w: KxJ)
void matmul_nn_acc(const double* x, const double* w, double* y, int m, int k, int j);
// y[m, i] += sum_j g[m, j] * w[i, j]      (g: MxJ, w: IxJ) -- i.e. g * w^T
void matmul_nt_acc(const double* g, const double* w, double* y, int m, int j, int i);
// y[k, j] += sum_m x[m, k] * g[m, j]      (x: MxK, g: MxJ) -- i.e. x^T * g
void matmul_tn_acc(const double* x, const double* g, double* y, int m, int k, int j);

std::string shape_to_string(const std::vector<int>& s);

}  // namespace t2p
