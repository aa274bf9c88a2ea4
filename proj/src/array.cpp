#include "t2p/array.hpp"

#include <cmath>
#include <sstream>

namespace t2p {

bool Array::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Array::shape_str() const { return shape_to_string(shape); }

std::string shape_to_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

// All three kernels keep the innermost loop contiguous in both operands so the
// compiler can vectorize without reassociating reductions. Rows of the
// left/gradient operand that are entirely zero are skipped; winner-takes-all
// backward passes produce whole blocks of such rows.

namespace {

inline bool row_all_zero(const double* r, int n) {
    for (int c = 0; c < n; ++c)
        if (r[c] != 0.0) return false;
    return true;
}

}  // namespace

void matmul_nn_acc(const double* x, const double* w, double* y, int m, int k, int j) {
    for (int a = 0; a < m; ++a) {
        const double* xr = x + static_cast<std::int64_t>(a) * k;
        if (row_all_zero(xr, k)) continue;
        double* yr = y + static_cast<std::int64_t>(a) * j;
        for (int b = 0; b < k; ++b) {
            const double xv = xr[b];
            const double* wr = w + static_cast<std::int64_t>(b) * j;
            for (int c = 0; c < j; ++c) yr[c] += xv * wr[c];
        }
    }
}

void matmul_nt_acc(const double* g, const double* w, double* y, int m, int j, int i) {
    for (int a = 0; a < m; ++a) {
        const double* gr = g + static_cast<std::int64_t>(a) * j;
        if (row_all_zero(gr, j)) continue;
        double* yr = y + static_cast<std::int64_t>(a) * i;
        for (int b = 0; b < i; ++b) {
            const double* wr = w + static_cast<std::int64_t>(b) * j;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int c = 0; c < j; ++c) acc += gr[c] * wr[c];
            yr[b] += acc;
        }
    }
}

void matmul_tn_acc(const double* x, const double* g, double* y, int m, int k, int j) {
    for (int a = 0; a < m; ++a) {
        const double* gr = g + static_cast<std::int64_t>(a) * j;
        if (row_all_zero(gr, j)) continue;
        const double* xr = x + static_cast<std::int64_t>(a) * k;
        for (int b = 0; b < k; ++b) {
            const double xv = xr[b];
            if (xv == 0.0) continue;
            double* yr = y + static_cast<std::int64_t>(b) * j;
            for (int c = 0; c < j; ++c) yr[c] += xv * gr[c];
        }
    }
}

}  // namespace t2p
