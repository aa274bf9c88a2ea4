#pragma once

#include "t2p/array.hpp"

namespace t2p {

// Orthonormal DCT-II matrix of size n (rows = coefficients, cols = time).
// M^T M = I, so the inverse transform is the transpose and energy is
// preserved.
Array dct_matrix(int n);

// Forward transform along the last axis.
Array dct(const Array& x);
// Inverse transform along the last axis (transpose of the forward matrix).
Array idct(const Array& coeffs);

// Extends the last axis by repeating the final entry `extra` times.
Array replicate_pad(const Array& past, int extra);

}  // namespace t2p
