#include "t2p/dct.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace t2p {

Array dct_matrix(int n) {
    if (n < 1) throw std::invalid_argument("dct_matrix: size must be >= 1");
    Array m({n, n});
    const double pi = 3.14159265358979323846264338327950288;
    for (int k = 0; k < n; ++k) {
        const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (int t = 0; t < n; ++t)
            m[static_cast<std::int64_t>(k) * n + t] = scale * std::cos(pi * (2 * t + 1) * k / (2.0 * n));
    }
    return m;
}

namespace {

Array apply_matrix(const Array& x, const Array& m, bool transpose) {
    const int n = m.dim(0);
    if (x.shape.empty() || x.shape.back() != n)
        throw std::invalid_argument("dct: last axis extent " +
                                    std::to_string(x.shape.empty() ? 0 : x.shape.back()) +
                                    " does not match transform size " + std::to_string(n));
    Array y(x.shape);
    const std::int64_t rows = x.size() / n;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = &x[r * n];
        double* yr = &y[r * n];
        for (int k = 0; k < n; ++k) {
            double acc = 0.0;
            const double* mk = transpose ? nullptr : &m[static_cast<std::int64_t>(k) * n];
            if (!transpose) {
                for (int t = 0; t < n; ++t) acc += mk[t] * xr[t];
            } else {
                for (int t = 0; t < n; ++t) acc += m[static_cast<std::int64_t>(t) * n + k] * xr[t];
            }
            yr[k] = acc;
        }
    }
    return y;
}

}  // namespace

Array dct(const Array& x) {
    const int n = x.shape.empty() ? 0 : x.shape.back();
    return apply_matrix(x, dct_matrix(n), false);
}

Array idct(const Array& coeffs) {
    const int n = coeffs.shape.empty() ? 0 : coeffs.shape.back();
    return apply_matrix(coeffs, dct_matrix(n), true);
}

Array replicate_pad(const Array& past, int extra) {
    if (past.shape.empty() || past.shape.back() < 1)
        throw std::invalid_argument("replicate_pad: empty time axis");
    if (extra < 0) throw std::invalid_argument("replicate_pad: negative pad");
    if (extra == 0) return past;
    const int t = past.shape.back();
    std::vector<int> out_shape = past.shape;
    out_shape.back() = t + extra;
    Array y(out_shape);
    const std::int64_t rows = past.size() / t;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::memcpy(&y[r * (t + extra)], &past[r * t], sizeof(double) * static_cast<size_t>(t));
        const double last = past[r * t + t - 1];
        for (int e = 0; e < extra; ++e) y[r * (t + extra) + t + e] = last;
    }
    return y;
}

}  // namespace t2p
