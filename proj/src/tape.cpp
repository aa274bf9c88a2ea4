#include "t2p/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "t2p/params.hpp"

namespace t2p {

namespace {

#if defined(__GLIBC__)
// Tape buffers are allocated and freed in tight cycles; without this, glibc
// serves the larger ones from fresh mmap pages and the kernel zero-fill
// dominates the runtime.
const bool kMallocTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif

std::int64_t axis_block(const std::vector<int>& shape, int axis) {
    std::int64_t b = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) b *= shape[i];
    return b;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Var Tape::fresh(const char* op, std::vector<int> shape) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.owned = Array(std::move(shape));
    n.val = &n.owned;
    n.op = op;
    return &n;
}

Var Tape::alias(const char* op, const Array* external) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.val = external;
    n.op = op;
    return &n;
}

void Tape::finish(Var n) {
    if (check_numerics_ && !n->v().all_finite())
        throw NumericalError(std::string("non-finite value produced by op '") + n->op + "'");
}

Var Tape::input(Array v) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.owned = std::move(v);
    n.val = &n.owned;
    n.op = "input";
    return &n;
}

Var Tape::input_ref(const Array* v) { return alias("input", v); }

Var Tape::param(ParameterStore& store, const std::string& name) {
    Var n = alias("param", &store.value(name));
    n->param = name;
    return n;
}

Var Tape::add(Var a, Var b) {
    require(a->v().same_shape(b->v()), "add: shape mismatch " + a->v().shape_str() + " vs " + b->v().shape_str());
    Var y = fresh("add", a->v().shape);
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) y->owned[i] = a->v()[i] + b->v()[i];
    y->back = [y, a, b, n] {
        a->gbuf(); b->gbuf();
        a->grad_flows = true;
        b->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) {
            a->grad[i] += y->grad[i];
            b->grad[i] += y->grad[i];
        }
    };
    finish(y);
    return y;
}

Var Tape::sub(Var a, Var b) {
    require(a->v().same_shape(b->v()), "sub: shape mismatch");
    Var y = fresh("sub", a->v().shape);
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) y->owned[i] = a->v()[i] - b->v()[i];
    y->back = [y, a, b, n] {
        a->gbuf(); b->gbuf();
        a->grad_flows = true;
        b->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) {
            a->grad[i] += y->grad[i];
            b->grad[i] -= y->grad[i];
        }
    };
    finish(y);
    return y;
}

Var Tape::mul(Var a, Var b) {
    require(a->v().same_shape(b->v()), "mul: shape mismatch");
    Var y = fresh("mul", a->v().shape);
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) y->owned[i] = a->v()[i] * b->v()[i];
    y->back = [y, a, b, n] {
        a->gbuf(); b->gbuf();
        a->grad_flows = true;
        b->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) {
            a->grad[i] += y->grad[i] * b->v()[i];
            b->grad[i] += y->grad[i] * a->v()[i];
        }
    };
    finish(y);
    return y;
}

Var Tape::affine(Var a, double mul, double shift) {
    Var y = fresh("affine", a->v().shape);
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) y->owned[i] = mul * a->v()[i] + shift;
    y->back = [y, a, mul, n] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) a->grad[i] += mul * y->grad[i];
    };
    finish(y);
    return y;
}

Var Tape::relu(Var a) {
    Var y = fresh("relu", a->v().shape);
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) y->owned[i] = a->v()[i] > 0.0 ? a->v()[i] : 0.0;
    y->back = [y, a, n] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i)
            if (a->v()[i] > 0.0) a->grad[i] += y->grad[i];
    };
    finish(y);
    return y;
}

Var Tape::sigmoid(Var a) {
    Var y = fresh("sigmoid", a->v().shape);
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) y->owned[i] = 1.0 / (1.0 + std::exp(-a->v()[i]));
    y->back = [y, a, n] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) {
            const double s = y->owned[i];
            a->grad[i] += y->grad[i] * s * (1.0 - s);
        }
    };
    finish(y);
    return y;
}

Var Tape::mul_const(Var a, const Array& c) {
    require(a->v().same_shape(c), "mul_const: shape mismatch");
    Var y = fresh("mul_const", a->v().shape);
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) y->owned[i] = a->v()[i] * c[i];
    Array cc = c;
    y->back = [y, a, cc = std::move(cc), n] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) a->grad[i] += y->grad[i] * cc[i];
    };
    finish(y);
    return y;
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    require(Array::count(shape) == a->v().size(), "reshape: element count mismatch");
    Var y = fresh("reshape", std::move(shape));
    y->owned.data = a->v().data;
    const std::int64_t n = a->v().size();
    y->back = [y, a, n] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) a->grad[i] += y->grad[i];
    };
    finish(y);
    return y;
}

Var Tape::permute(Var a, std::vector<int> axes) {
    const auto& xs = a->v().shape;
    require(axes.size() == xs.size(), "permute: axes rank mismatch");
    std::vector<int> out_shape(xs.size());
    for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = xs[static_cast<size_t>(axes[i])];
    Var y = fresh("permute", out_shape);

    const int r = static_cast<int>(xs.size());
    std::vector<std::int64_t> in_stride(r, 1);
    for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * xs[i + 1];

    // walk the output in order, advancing a multi-index odometer over the
    // permuted source strides
    const std::int64_t n = a->v().size();
    auto mapping = std::make_shared<std::vector<std::int64_t>>(n);
    std::vector<int> idx(r, 0);
    std::vector<std::int64_t> stride_for_out(r);
    for (int i = 0; i < r; ++i) stride_for_out[i] = in_stride[static_cast<size_t>(axes[i])];
    std::int64_t src = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        (*mapping)[o] = src;
        y->owned[o] = a->v()[src];
        for (int i = r - 1; i >= 0; --i) {
            src += stride_for_out[i];
            if (++idx[i] < out_shape[static_cast<size_t>(i)]) break;
            src -= stride_for_out[i] * out_shape[static_cast<size_t>(i)];
            idx[i] = 0;
        }
    }
    y->back = [y, a, mapping, n] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t o = 0; o < n; ++o) a->grad[(*mapping)[o]] += y->grad[o];
    };
    finish(y);
    return y;
}

Var Tape::concat(const std::vector<Var>& xs, int axis) {
    require(!xs.empty(), "concat: empty input");
    const auto& s0 = xs[0]->v().shape;
    require(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: bad axis");
    int total = 0;
    for (Var x : xs) {
        require(x->v().rank() == static_cast<int>(s0.size()), "concat: rank mismatch");
        for (int d = 0; d < x->v().rank(); ++d)
            if (d != axis)
                require(x->v().shape[static_cast<size_t>(d)] == s0[static_cast<size_t>(d)],
                        "concat: off-axis extent mismatch");
        total += x->v().dim(axis);
    }
    std::vector<int> out_shape = s0;
    out_shape[static_cast<size_t>(axis)] = total;
    Var y = fresh("concat", out_shape);

    std::int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
    const std::int64_t block = axis_block(out_shape, axis);

    std::int64_t col = 0;
    struct Piece { Var x; std::int64_t cols; std::int64_t col0; };
    auto pieces = std::make_shared<std::vector<Piece>>();
    for (Var x : xs) {
        const std::int64_t cols = x->v().dim(axis) * block;
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(&y->owned[o * total * block + col], &x->v()[o * cols], sizeof(double) * static_cast<size_t>(cols));
        pieces->push_back({x, cols, col});
        col += cols;
    }
    const std::int64_t row = static_cast<std::int64_t>(total) * block;
    y->back = [y, pieces, outer, row] {
        for (auto& p : *pieces) {
            p.x->gbuf();
            p.x->grad_flows = true;
        }
        for (std::int64_t o = 0; o < outer; ++o)
            for (auto& p : *pieces)
                for (std::int64_t c = 0; c < p.cols; ++c)
                    p.x->grad[o * p.cols + c] += y->grad[o * row + p.col0 + c];
    };
    finish(y);
    return y;
}

Var Tape::slice(Var a, int axis, int begin, int end) {
    const auto& s = a->v().shape;
    require(axis >= 0 && axis < static_cast<int>(s.size()), "slice: bad axis");
    require(0 <= begin && begin < end && end <= s[static_cast<size_t>(axis)], "slice: bad range");
    std::vector<int> out_shape = s;
    out_shape[static_cast<size_t>(axis)] = end - begin;
    Var y = fresh("slice", out_shape);

    std::int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    const std::int64_t block = axis_block(s, axis);
    const std::int64_t in_row = s[static_cast<size_t>(axis)] * block;
    const std::int64_t out_row = static_cast<std::int64_t>(end - begin) * block;
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(&y->owned[o * out_row], &a->v()[o * in_row + begin * block],
                    sizeof(double) * static_cast<size_t>(out_row));
    y->back = [y, a, outer, block, in_row, out_row, begin] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t c = 0; c < out_row; ++c)
                a->grad[o * in_row + begin * block + c] += y->grad[o * out_row + c];
    };
    finish(y);
    return y;
}

Var Tape::index_axis0(Var a, int i) {
    const auto& s = a->v().shape;
    require(!s.empty() && i >= 0 && i < s[0], "index_axis0: bad index");
    std::vector<int> out_shape(s.begin() + 1, s.end());
    Var y = fresh("index_axis0", out_shape);
    const std::int64_t block = y->owned.size();
    std::memcpy(y->owned.data.data(), &a->v()[i * block], sizeof(double) * static_cast<size_t>(block));
    y->back = [y, a, i, block] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t c = 0; c < block; ++c) a->grad[i * block + c] += y->grad[c];
    };
    finish(y);
    return y;
}

Var Tape::gather_axis0(Var a, std::vector<int> idx) {
    const auto& s = a->v().shape;
    require(!s.empty(), "gather_axis0: rank 0");
    std::vector<int> out_shape = s;
    out_shape[0] = static_cast<int>(idx.size());
    Var y = fresh("gather_axis0", out_shape);
    const std::int64_t block = axis_block(s, 0);
    for (size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] >= 0 && idx[r] < s[0], "gather_axis0: index out of range");
        std::memcpy(&y->owned[static_cast<std::int64_t>(r) * block], &a->v()[idx[r] * block],
                    sizeof(double) * static_cast<size_t>(block));
    }
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    y->back = [y, a, ids, block] {
        a->gbuf();
        a->grad_flows = true;
        for (size_t r = 0; r < ids->size(); ++r)
            for (std::int64_t c = 0; c < block; ++c)
                a->grad[(*ids)[r] * block + c] += y->grad[static_cast<std::int64_t>(r) * block + c];
    };
    finish(y);
    return y;
}

Var Tape::expand_axis(Var a, int axis, int n) {
    const auto& s = a->v().shape;
    require(axis >= 0 && axis <= static_cast<int>(s.size()), "expand_axis: bad axis");
    std::vector<int> out_shape = s;
    out_shape.insert(out_shape.begin() + axis, n);
    Var y = fresh("expand_axis", out_shape);

    std::int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    const std::int64_t block = a->v().size() / std::max<std::int64_t>(outer, 1);
    for (std::int64_t o = 0; o < outer; ++o)
        for (int r = 0; r < n; ++r)
            std::memcpy(&y->owned[(o * n + r) * block], &a->v()[o * block],
                        sizeof(double) * static_cast<size_t>(block));
    y->back = [y, a, outer, block, n] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t o = 0; o < outer; ++o)
            for (int r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < block; ++c)
                    a->grad[o * block + c] += y->grad[(o * n + r) * block + c];
    };
    finish(y);
    return y;
}

Var Tape::mean_axis(Var a, int axis) {
    const auto& s = a->v().shape;
    require(axis >= 0 && axis < static_cast<int>(s.size()), "mean_axis: bad axis");
    const int n = s[static_cast<size_t>(axis)];
    require(n > 0, "mean_axis: empty axis");
    std::vector<int> out_shape = s;
    out_shape.erase(out_shape.begin() + axis);
    Var y = fresh("mean_axis", out_shape);

    std::int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    const std::int64_t block = axis_block(s, axis);
    const double inv = 1.0 / n;
    for (std::int64_t o = 0; o < outer; ++o)
        for (int r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < block; ++c)
                y->owned[o * block + c] += a->v()[(o * n + r) * block + c] * inv;
    y->back = [y, a, outer, block, n, inv] {
        a->gbuf();
        a->grad_flows = true;
        for (std::int64_t o = 0; o < outer; ++o)
            for (int r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < block; ++c)
                    a->grad[(o * n + r) * block + c] += y->grad[o * block + c] * inv;
    };
    finish(y);
    return y;
}

Var Tape::cumsum_axis(Var a, int axis) {
    const auto& s = a->v().shape;
    require(axis >= 0 && axis < static_cast<int>(s.size()), "cumsum_axis: bad axis");
    const int n = s[static_cast<size_t>(axis)];
    Var y = fresh("cumsum_axis", s);
    std::int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    const std::int64_t block = axis_block(s, axis);
    for (std::int64_t o = 0; o < outer; ++o)
        for (int r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < block; ++c) {
                const std::int64_t cur = (o * n + r) * block + c;
                y->owned[cur] = a->v()[cur] + (r > 0 ? y->owned[cur - block] : 0.0);
            }
    y->back = [y, a, outer, block, n] {
        a->gbuf();
        a->grad_flows = true;
        // suffix sums of the output gradient
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t c = 0; c < block; ++c) {
                double acc = 0.0;
                for (int r = n - 1; r >= 0; --r) {
                    acc += y->grad[(o * n + r) * block + c];
                    a->grad[(o * n + r) * block + c] += acc;
                }
            }
    };
    finish(y);
    return y;
}

Var Tape::sum_all(Var a) {
    Var y = fresh("sum_all", {});
    double acc = 0.0;
    const std::int64_t n = a->v().size();
    for (std::int64_t i = 0; i < n; ++i) acc += a->v()[i];
    y->owned[0] = acc;
    y->back = [y, a, n] {
        a->gbuf();
        a->grad_flows = true;
        const double g = y->grad[0];
        for (std::int64_t i = 0; i < n; ++i) a->grad[i] += g;
    };
    finish(y);
    return y;
}

Var Tape::linear(Var x, Var w, Var b) {
    const auto& xs = x->v().shape;
    require(!xs.empty(), "linear: input must have a feature axis");
    require(w->v().rank() == 2, "linear: weight must be 2-d");
    const int din = xs.back();
    require(w->v().dim(0) == din, "linear: weight rows " + std::to_string(w->v().dim(0)) +
                                      " do not match input features " + std::to_string(din));
    const int dout = w->v().dim(1);
    if (b) require(b->v().rank() == 1 && b->v().dim(0) == dout, "linear: bias shape mismatch");

    std::vector<int> out_shape = xs;
    out_shape.back() = dout;
    Var y = fresh("linear", out_shape);
    const int m = static_cast<int>(x->v().size() / din);
    matmul_nn_acc(x->v().data.data(), w->v().data.data(), y->owned.data.data(), m, din, dout);
    if (b) {
        for (int r = 0; r < m; ++r) {
            double* yr = &y->owned[static_cast<std::int64_t>(r) * dout];
            for (int c = 0; c < dout; ++c) yr[c] += b->v()[c];
        }
    }
    y->back = [y, x, w, b, m, din, dout] {
        x->gbuf(); w->gbuf();
        x->grad_flows = true;
        w->grad_flows = true;
        matmul_nt_acc(y->grad.data.data(), w->v().data.data(), x->grad.data.data(), m, dout, din);
        matmul_tn_acc(x->v().data.data(), y->grad.data.data(), w->grad.data.data(), m, din, dout);
        if (b) {
            b->gbuf();
        b->grad_flows = true;
            for (int r = 0; r < m; ++r) {
                const double* gr = &y->grad[static_cast<std::int64_t>(r) * dout];
                for (int c = 0; c < dout; ++c) b->grad[c] += gr[c];
            }
        }
    };
    finish(y);
    return y;
}

Var Tape::matconst(Var x, const Array& mtx, bool transpose) {
    require(mtx.rank() == 2, "matconst: matrix must be 2-d");
    const int rows = mtx.dim(0), cols = mtx.dim(1);
    const int din = transpose ? cols : rows;
    const int dout = transpose ? rows : cols;
    const auto& xs = x->v().shape;
    require(!xs.empty() && xs.back() == din, "matconst: feature axis mismatch");

    std::vector<int> out_shape = xs;
    out_shape.back() = dout;
    Var y = fresh("matconst", out_shape);
    const int m = static_cast<int>(x->v().size() / din);
    if (!transpose)
        matmul_nn_acc(x->v().data.data(), mtx.data.data(), y->owned.data.data(), m, din, dout);
    else
        matmul_nt_acc(x->v().data.data(), mtx.data.data(), y->owned.data.data(), m, din, dout);

    auto mcopy = std::make_shared<Array>(mtx);
    y->back = [y, x, mcopy, transpose, m, din, dout] {
        x->gbuf();
        x->grad_flows = true;
        if (!transpose)
            matmul_nt_acc(y->grad.data.data(), mcopy->data.data(), x->grad.data.data(), m, dout, din);
        else
            matmul_nn_acc(y->grad.data.data(), mcopy->data.data(), x->grad.data.data(), m, dout, din);
    };
    finish(y);
    return y;
}

Var Tape::bmm(Var a, Var b, bool trans_b) {
    const auto& as = a->v().shape;
    const auto& bs = b->v().shape;
    require(as.size() >= 2 && as.size() == bs.size(), "bmm: rank mismatch");
    for (size_t i = 0; i + 2 < as.size(); ++i)
        require(as[i] == bs[i], "bmm: leading extent mismatch");
    const int m = as[as.size() - 2];
    const int k = as[as.size() - 1];
    const int n = trans_b ? bs[bs.size() - 2] : bs[bs.size() - 1];
    const int bk = trans_b ? bs[bs.size() - 1] : bs[bs.size() - 2];
    require(bk == k, "bmm: inner extent mismatch");

    std::vector<int> out_shape(as.begin(), as.end() - 2);
    std::int64_t batches = 1;
    for (int e : out_shape) batches *= e;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Var y = fresh("bmm", out_shape);

    const std::int64_t ablk = static_cast<std::int64_t>(m) * k;
    const std::int64_t bblk = static_cast<std::int64_t>(k) * n;
    const std::int64_t yblk = static_cast<std::int64_t>(m) * n;
    for (std::int64_t t = 0; t < batches; ++t) {
        const double* ap = &a->v()[t * ablk];
        const double* bp = &b->v()[t * bblk];
        double* yp = &y->owned[t * yblk];
        if (!trans_b)
            matmul_nn_acc(ap, bp, yp, m, k, n);
        else
            matmul_nt_acc(ap, bp, yp, m, k, n);
    }
    y->back = [y, a, b, trans_b, batches, m, k, n, ablk, bblk, yblk] {
        a->gbuf(); b->gbuf();
        a->grad_flows = true;
        b->grad_flows = true;
        for (std::int64_t t = 0; t < batches; ++t) {
            const double* ap = &a->v()[t * ablk];
            const double* bp = &b->v()[t * bblk];
            const double* gy = &y->grad[t * yblk];
            double* ga = &a->grad[t * ablk];
            double* gb = &b->grad[t * bblk];
            if (!trans_b) {
                matmul_nt_acc(gy, bp, ga, m, n, k);  // dA = dC B^T
                matmul_tn_acc(ap, gy, gb, m, k, n);  // dB = A^T dC
            } else {
                matmul_nn_acc(gy, bp, ga, m, n, k);  // dA = dC B
                matmul_tn_acc(gy, ap, gb, m, n, k);  // dB = dC^T A
            }
        }
    };
    finish(y);
    return y;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const auto& xs = x->v().shape;
    require(!xs.empty(), "layer_norm: rank 0");
    const int d = xs.back();
    require(d >= 1, "layer_norm: empty feature axis");
    require(gamma->v().rank() == 1 && gamma->v().dim(0) == d, "layer_norm: gamma shape");
    require(beta->v().rank() == 1 && beta->v().dim(0) == d, "layer_norm: beta shape");

    Var y = fresh("layer_norm", xs);
    const std::int64_t rows = x->v().size() / d;
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * d);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = &x->v()[r * d];
        double mu = 0.0;
        for (int c = 0; c < d; ++c) mu += xr[c];
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        double* hr = xhat->data() + r * d;
        double* yr = &y->owned[r * d];
        for (int c = 0; c < d; ++c) {
            hr[c] = (xr[c] - mu) * is;
            yr[c] = gamma->v()[c] * hr[c] + beta->v()[c];
        }
    }
    y->back = [y, x, gamma, beta, xhat, inv_std, rows, d] {
        x->gbuf(); gamma->gbuf(); beta->gbuf();
        x->grad_flows = gamma->grad_flows = beta->grad_flows = true;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* gy = &y->grad[r * d];
            const double* hr = xhat->data() + r * d;
            const double is = (*inv_std)[static_cast<size_t>(r)];
            double sum_g = 0.0, sum_gh = 0.0;
            for (int c = 0; c < d; ++c) {
                const double gh = gy[c] * gamma->v()[c];
                sum_g += gh;
                sum_gh += gh * hr[c];
                gamma->grad[c] += gy[c] * hr[c];
                beta->grad[c] += gy[c];
            }
            double* gx = &x->grad[r * d];
            const double invd = 1.0 / d;
            for (int c = 0; c < d; ++c) {
                const double gh = gy[c] * gamma->v()[c];
                gx[c] += is * (gh - invd * sum_g - hr[c] * invd * sum_gh);
            }
        }
    };
    finish(y);
    return y;
}

Var Tape::softmax_masked(Var logits, const Array* mask01) {
    const auto& xs = logits->v().shape;
    require(!xs.empty(), "softmax: rank 0");
    const int d = xs.back();
    if (mask01) require(mask01->same_shape(logits->v()), "softmax: mask shape mismatch");

    Var y = fresh("softmax", xs);
    const std::int64_t rows = logits->v().size() / d;
    std::shared_ptr<Array> mask = mask01 ? std::make_shared<Array>(*mask01) : nullptr;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* lr = &logits->v()[r * d];
        const double* mr = mask ? &(*mask)[r * d] : nullptr;
        double mx = -1e300;
        bool any = false;
        for (int c = 0; c < d; ++c) {
            if (mr && mr[c] == 0.0) continue;
            any = true;
            mx = std::max(mx, lr[c]);
        }
        double* yr = &y->owned[r * d];
        if (!any) continue;  // fully masked row stays zero
        double z = 0.0;
        for (int c = 0; c < d; ++c) {
            if (mr && mr[c] == 0.0) { yr[c] = 0.0; continue; }
            yr[c] = std::exp(lr[c] - mx);
            z += yr[c];
        }
        const double inv = 1.0 / z;
        for (int c = 0; c < d; ++c) yr[c] *= inv;
    }
    y->back = [y, logits, mask, rows, d] {
        logits->gbuf();
        logits->grad_flows = true;
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* yr = &y->owned[r * d];
            const double* gy = &y->grad[r * d];
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += yr[c] * gy[c];
            double* gl = &logits->grad[r * d];
            for (int c = 0; c < d; ++c) gl[c] += yr[c] * (gy[c] - dot);
        }
    };
    finish(y);
    return y;
}

Var Tape::dropout(Var x, double rate, Rng& rng, bool training) {
    require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;  // identity in inference mode
    Var y = fresh("dropout", x->v().shape);
    const std::int64_t n = x->v().size();
    const double keep = 1.0 - rate;
    const double inv_keep = 1.0 / keep;
    auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double m = rng.uniform() < keep ? inv_keep : 0.0;
        (*mask)[static_cast<size_t>(i)] = m;
        y->owned[i] = x->v()[i] * m;
    }
    y->back = [y, x, mask, n] {
        x->gbuf();
        x->grad_flows = true;
        for (std::int64_t i = 0; i < n; ++i) x->grad[i] += y->grad[i] * (*mask)[static_cast<size_t>(i)];
    };
    finish(y);
    return y;
}

Var Tape::segmented_attention(Var q, Var k, Var v, const std::vector<int>& seg_of_pair,
                              int n_receivers, double scale) {
    require(q->v().rank() == 3 && k->v().rank() == 3 && v->v().rank() == 3,
            "segmented_attention: expects (rows, steps, dim) operands");
    const int steps = q->v().dim(1);
    const int dq = q->v().dim(2);
    const int dv = v->v().dim(2);
    const int pairs = k->v().dim(0);
    require(q->v().dim(0) == n_receivers, "segmented_attention: receiver count mismatch");
    require(k->v().dim(1) == steps && v->v().dim(1) == steps, "segmented_attention: step mismatch");
    require(k->v().dim(2) == dq, "segmented_attention: key dim mismatch");
    require(static_cast<int>(seg_of_pair.size()) == pairs && v->v().dim(0) == pairs,
            "segmented_attention: pair count mismatch");

    auto by_receiver = std::make_shared<std::vector<std::vector<int>>>(static_cast<size_t>(n_receivers));
    for (int p = 0; p < pairs; ++p) {
        require(seg_of_pair[p] >= 0 && seg_of_pair[p] < n_receivers, "segmented_attention: bad segment");
        (*by_receiver)[static_cast<size_t>(seg_of_pair[p])].push_back(p);
    }

    Var y = fresh("segmented_attention", {n_receivers, steps, dv});
    auto alpha = std::make_shared<std::vector<double>>(static_cast<size_t>(pairs) * steps, 0.0);

    for (int i = 0; i < n_receivers; ++i) {
        const auto& ps = (*by_receiver)[static_cast<size_t>(i)];
        if (ps.empty()) continue;  // empty neighbor set -> zero message
        for (int t = 0; t < steps; ++t) {
            const double* qv = &q->v()[(static_cast<std::int64_t>(i) * steps + t) * dq];
            double mx = -1e300;
            std::vector<double> logit(ps.size());
            for (size_t e = 0; e < ps.size(); ++e) {
                const double* kv = &k->v()[(static_cast<std::int64_t>(ps[e]) * steps + t) * dq];
                double dot = 0.0;
                for (int c = 0; c < dq; ++c) dot += qv[c] * kv[c];
                logit[e] = dot * scale;
                mx = std::max(mx, logit[e]);
            }
            double z = 0.0;
            for (size_t e = 0; e < ps.size(); ++e) {
                logit[e] = std::exp(logit[e] - mx);
                z += logit[e];
            }
            double* yo = &y->owned[(static_cast<std::int64_t>(i) * steps + t) * dv];
            for (size_t e = 0; e < ps.size(); ++e) {
                const double a = logit[e] / z;
                (*alpha)[static_cast<size_t>(ps[e]) * steps + t] = a;
                const double* vv = &v->v()[(static_cast<std::int64_t>(ps[e]) * steps + t) * dv];
                for (int c = 0; c < dv; ++c) yo[c] += a * vv[c];
            }
        }
    }

    y->back = [y, q, k, v, by_receiver, alpha, steps, dq, dv, scale, n_receivers] {
        q->gbuf(); k->gbuf(); v->gbuf();
        q->grad_flows = k->grad_flows = v->grad_flows = true;
        for (int i = 0; i < n_receivers; ++i) {
            const auto& ps = (*by_receiver)[static_cast<size_t>(i)];
            if (ps.empty()) continue;
            for (int t = 0; t < steps; ++t) {
                const double* gy = &y->grad[(static_cast<std::int64_t>(i) * steps + t) * dv];
                const double* qv = &q->v()[(static_cast<std::int64_t>(i) * steps + t) * dq];
                double* gq = &q->grad[(static_cast<std::int64_t>(i) * steps + t) * dq];
                // d_alpha, then the softmax Jacobian
                double dot_ad = 0.0;
                std::vector<double> da(ps.size());
                for (size_t e = 0; e < ps.size(); ++e) {
                    const int p = ps[e];
                    const double a = (*alpha)[static_cast<size_t>(p) * steps + t];
                    const double* vv = &v->v()[(static_cast<std::int64_t>(p) * steps + t) * dv];
                    double d = 0.0;
                    for (int c = 0; c < dv; ++c) d += gy[c] * vv[c];
                    da[e] = d;
                    dot_ad += a * d;
                    double* gv = &v->grad[(static_cast<std::int64_t>(p) * steps + t) * dv];
                    for (int c = 0; c < dv; ++c) gv[c] += a * gy[c];
                }
                for (size_t e = 0; e < ps.size(); ++e) {
                    const int p = ps[e];
                    const double a = (*alpha)[static_cast<size_t>(p) * steps + t];
                    const double dlogit = a * (da[e] - dot_ad) * scale;
                    const double* kv = &k->v()[(static_cast<std::int64_t>(p) * steps + t) * dq];
                    double* gk = &k->grad[(static_cast<std::int64_t>(p) * steps + t) * dq];
                    for (int c = 0; c < dq; ++c) {
                        gq[c] += dlogit * kv[c];
                        gk[c] += dlogit * qv[c];
                    }
                }
            }
        }
    };
    finish(y);
    return y;
}

Var Tape::per_agent_affine3(Var x, const std::vector<Mat3>& rot, bool transpose,
                            const std::vector<Vec3>* shift) {
    const auto& xs = x->v().shape;
    require(xs.size() >= 3 && xs.back() == 3, "per_agent_affine3: expects (..., N, ..., 3)");
    const int n_agents = xs[1];
    require(static_cast<int>(rot.size()) == n_agents, "per_agent_affine3: rotation count mismatch");
    if (shift) require(static_cast<int>(shift->size()) == n_agents, "per_agent_affine3: shift count mismatch");

    Var y = fresh("per_agent_affine3", xs);
    const std::int64_t lead = xs[0];
    std::int64_t inner = 1;
    for (size_t i = 2; i + 1 < xs.size(); ++i) inner *= xs[i];

    auto rots = std::make_shared<std::vector<Mat3>>(rot);
    auto apply = [transpose](const Mat3& r, const double* in, double* out) {
        if (!transpose) {
            out[0] = r[0] * in[0] + r[1] * in[1] + r[2] * in[2];
            out[1] = r[3] * in[0] + r[4] * in[1] + r[5] * in[2];
            out[2] = r[6] * in[0] + r[7] * in[1] + r[8] * in[2];
        } else {
            out[0] = r[0] * in[0] + r[3] * in[1] + r[6] * in[2];
            out[1] = r[1] * in[0] + r[4] * in[1] + r[7] * in[2];
            out[2] = r[2] * in[0] + r[5] * in[1] + r[8] * in[2];
        }
    };
    for (std::int64_t l = 0; l < lead; ++l)
        for (int n = 0; n < n_agents; ++n)
            for (std::int64_t c = 0; c < inner; ++c) {
                const std::int64_t off = ((l * n_agents + n) * inner + c) * 3;
                apply((*rots)[static_cast<size_t>(n)], &x->v()[off], &y->owned[off]);
                if (shift)
                    for (int a = 0; a < 3; ++a) y->owned[off + a] += (*shift)[static_cast<size_t>(n)][static_cast<size_t>(a)];
            }
    y->back = [y, x, rots, transpose, lead, n_agents, inner] {
        x->gbuf();
        x->grad_flows = true;
        // gradient goes through the inverse rotation
        auto apply_inv = [transpose](const Mat3& r, const double* in, double* out) {
            if (!transpose) {
                out[0] = r[0] * in[0] + r[3] * in[1] + r[6] * in[2];
                out[1] = r[1] * in[0] + r[4] * in[1] + r[7] * in[2];
                out[2] = r[2] * in[0] + r[5] * in[1] + r[8] * in[2];
            } else {
                out[0] = r[0] * in[0] + r[1] * in[1] + r[2] * in[2];
                out[1] = r[3] * in[0] + r[4] * in[1] + r[5] * in[2];
                out[2] = r[6] * in[0] + r[7] * in[1] + r[8] * in[2];
            }
        };
        for (std::int64_t l = 0; l < lead; ++l)
            for (int n = 0; n < n_agents; ++n)
                for (std::int64_t c = 0; c < inner; ++c) {
                    const std::int64_t off = ((l * n_agents + n) * inner + c) * 3;
                    double g[3];
                    apply_inv((*rots)[static_cast<size_t>(n)], &y->grad[off], g);
                    x->grad[off + 0] += g[0];
                    x->grad[off + 1] += g[1];
                    x->grad[off + 2] += g[2];
                }
    };
    finish(y);
    return y;
}

Var Tape::l2_to_target(Var pred, const Array& target) {
    require(pred->v().same_shape(target), "l2_to_target: shape mismatch " + pred->v().shape_str() +
                                              " vs " + shape_to_string(target.shape));
    const auto& s = pred->v().shape;
    require(!s.empty() && s.back() >= 1, "l2_to_target: rank 0");
    const int d = s.back();
    const std::int64_t rows = pred->v().size() / d;

    Var y = fresh("l2_to_target", {});
    auto diff = std::make_shared<std::vector<double>>(static_cast<size_t>(pred->v().size()));
    auto radius = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    double total = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (int c = 0; c < d; ++c) {
            const double dd = pred->v()[r * d + c] - target[r * d + c];
            (*diff)[static_cast<size_t>(r * d + c)] = dd;
            sq += dd * dd;
        }
        const double rad = std::sqrt(sq);
        (*radius)[static_cast<size_t>(r)] = rad;
        total += rad;
    }
    y->owned[0] = total;
    y->back = [y, pred, diff, radius, rows, d] {
        pred->gbuf();
        pred->grad_flows = true;
        const double g = y->grad[0];
        for (std::int64_t r = 0; r < rows; ++r) {
            const double rad = (*radius)[static_cast<size_t>(r)];
            if (rad < 1e-30) continue;  // subgradient 0 at the kink
            const double s = g / rad;
            for (int c = 0; c < d; ++c) pred->grad[r * d + c] += s * (*diff)[static_cast<size_t>(r * d + c)];
        }
    };
    finish(y);
    return y;
}

void Tape::backward(Var loss) {
    if (!loss->v().is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got shape " + loss->v().shape_str());
    loss->gbuf()[0] = 1.0;
    loss->gbuf();
        loss->grad_flows = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->grad_flows && it->back) it->back();
    }
}

void Tape::accumulate_param_grads(ParameterStore& store) const {
    for (const Node& n : nodes_) {
        if (n.param.empty() || !n.grad_flows) continue;
        Array& g = store.grad(n.param);
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
}

void Tape::accumulate_param_grads(std::map<std::string, Array>& sink) const {
    for (const Node& n : nodes_) {
        if (n.param.empty() || !n.grad_flows) continue;
        auto it = sink.find(n.param);
        if (it == sink.end()) it = sink.emplace(n.param, Array(n.grad.shape)).first;
        for (std::int64_t i = 0; i < n.grad.size(); ++i) it->second[i] += n.grad[i];
    }
}

double central_difference(const std::function<double()>& eval, double* slot, double h) {
    const double saved = *slot;
    *slot = saved + h;
    const double up = eval();
    *slot = saved - h;
    const double down = eval();
    *slot = saved;
    return (up - down) / (2.0 * h);
}

}  // namespace t2p
