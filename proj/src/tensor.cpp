#include "uqr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace uqr {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor handle accessors
// ---------------------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->shape_of(id_); }
const std::vector<double>& Tensor::value() const { return tape_->value_of(id_); }
const std::vector<double>& Tensor::grad() const { return tape_->grad_of(id_); }
std::int64_t Tensor::size() const { return static_cast<std::int64_t>(value().size()); }
bool Tensor::requires_grad() const { return tape_->requires_grad_of(id_); }

double Tensor::scalar() const {
    const auto& v = value();
    if (v.size() != 1) {
        throw UsageError("scalar() on tensor of size " + std::to_string(v.size()));
    }
    return v[0];
}

// ---------------------------------------------------------------------------
// Tape internals
// ---------------------------------------------------------------------------

int Tape::new_node(Shape shape, std::vector<double> value, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(value.size())) {
        throw ShapeError("node data length " + std::to_string(value.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Node n;
    n.shape = std::move(shape);
    n.grad.assign(value.size(), 0.0);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    op_of_node_.push_back(-1);
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::record(int output, std::vector<int> inputs, std::function<void(Tape&)> backward) {
    bool rg = false;
    for (int i : inputs) rg = rg || nodes_[i].requires_grad;
    nodes_[output].requires_grad = rg;
    op_of_node_[output] = static_cast<int>(ops_.size());
    ops_.push_back(Op{output, std::move(inputs), std::move(backward)});
}

void Tape::check_same_tape(const Tensor& a, const Tape* t) {
    if (!a.valid() || &a.tape() != t) {
        throw UsageError("tensor does not belong to this tape");
    }
}

void Tape::zero_grads() {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tape::backward(Tensor loss, const std::vector<int>& stop_at) {
    check_same_tape(loss, this);
    auto& seed = nodes_[loss.id()].grad;
    std::fill(seed.begin(), seed.end(), 1.0);

    // Mark ops that are ancestors of the loss, stopping below stop_at nodes.
    std::vector<char> node_needed(nodes_.size(), 0);
    std::vector<char> stop(nodes_.size(), 0);
    for (int id : stop_at) stop[id] = 1;
    std::vector<int> stack{loss.id()};
    node_needed[loss.id()] = 1;
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (stop[id]) continue;
        int op = op_of_node_[id];
        if (op < 0) continue;
        for (int in : ops_[op].inputs) {
            if (!node_needed[in]) {
                node_needed[in] = 1;
                stack.push_back(in);
            }
        }
    }

    for (int i = static_cast<int>(ops_.size()) - 1; i >= 0; --i) {
        const Op& op = ops_[i];
        if (!node_needed[op.output] || stop[op.output]) continue;
        if (!nodes_[op.output].requires_grad) continue;
        op.backward(*this);
    }
}

// ---------------------------------------------------------------------------
// Leaves
// ---------------------------------------------------------------------------

Tensor Tape::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    return handle(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tape::constant(Shape shape, std::vector<double> data) {
    return leaf(std::move(shape), std::move(data), false);
}

Tensor Tape::scalar_const(double v) { return constant({1}, {v}); }

Tensor Tape::full(Shape shape, double v, bool requires_grad) {
    std::vector<double> data(numel(shape), v);
    return leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tape::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

// ---------------------------------------------------------------------------
// Elementwise binary ops with single-element broadcast
// ---------------------------------------------------------------------------

namespace {

enum class Bcast { None, AScalar, BScalar };

Bcast broadcast_kind(const Shape& a, const Shape& b) {
    if (a == b) return Bcast::None;
    if (numel(a) == 1) return Bcast::AScalar;
    if (numel(b) == 1) return Bcast::BScalar;
    throw ShapeError("elementwise shapes " + shape_str(a) + " vs " + shape_str(b) +
                     " (only equal shapes or a single-element operand broadcast)");
}

} // namespace

Tensor Tape::add(Tensor a, Tensor b) {
    check_same_tape(a, this);
    check_same_tape(b, this);
    Bcast k = broadcast_kind(a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    Shape out_shape = (k == Bcast::AScalar) ? b.shape() : a.shape();
    std::vector<double> out(numel(out_shape));
    for (size_t i = 0; i < out.size(); ++i) {
        double x = (k == Bcast::AScalar) ? av[0] : av[i];
        double y = (k == Bcast::BScalar) ? bv[0] : bv[i];
        out[i] = x + y;
    }
    int id = new_node(std::move(out_shape), std::move(out), false);
    int ai = a.id(), bi = b.id();
    record(id, {ai, bi}, [id, ai, bi, k](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[ai].grad;
        auto& gb = t.nodes_[bi].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            if (k == Bcast::AScalar) ga[0] += g[i]; else ga[i] += g[i];
            if (k == Bcast::BScalar) gb[0] += g[i]; else gb[i] += g[i];
        }
    });
    return handle(id);
}

Tensor Tape::sub(Tensor a, Tensor b) { return add(a, neg(b)); }

Tensor Tape::mul(Tensor a, Tensor b) {
    check_same_tape(a, this);
    check_same_tape(b, this);
    Bcast k = broadcast_kind(a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    Shape out_shape = (k == Bcast::AScalar) ? b.shape() : a.shape();
    std::vector<double> out(numel(out_shape));
    for (size_t i = 0; i < out.size(); ++i) {
        double x = (k == Bcast::AScalar) ? av[0] : av[i];
        double y = (k == Bcast::BScalar) ? bv[0] : bv[i];
        out[i] = x * y;
    }
    int id = new_node(std::move(out_shape), std::move(out), false);
    int ai = a.id(), bi = b.id();
    record(id, {ai, bi}, [id, ai, bi, k](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& av2 = t.nodes_[ai].value;
        const auto& bv2 = t.nodes_[bi].value;
        auto& ga = t.nodes_[ai].grad;
        auto& gb = t.nodes_[bi].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            double x = (k == Bcast::AScalar) ? av2[0] : av2[i];
            double y = (k == Bcast::BScalar) ? bv2[0] : bv2[i];
            if (k == Bcast::AScalar) ga[0] += g[i] * y; else ga[i] += g[i] * y;
            if (k == Bcast::BScalar) gb[0] += g[i] * x; else gb[i] += g[i] * x;
        }
    });
    return handle(id);
}

Tensor Tape::div(Tensor a, Tensor b) {
    check_same_tape(a, this);
    check_same_tape(b, this);
    for (double y : b.value()) {
        if (y == 0.0) throw DomainError("division by zero");
    }
    Bcast k = broadcast_kind(a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    Shape out_shape = (k == Bcast::AScalar) ? b.shape() : a.shape();
    std::vector<double> out(numel(out_shape));
    for (size_t i = 0; i < out.size(); ++i) {
        double x = (k == Bcast::AScalar) ? av[0] : av[i];
        double y = (k == Bcast::BScalar) ? bv[0] : bv[i];
        out[i] = x / y;
    }
    int id = new_node(std::move(out_shape), std::move(out), false);
    int ai = a.id(), bi = b.id();
    record(id, {ai, bi}, [id, ai, bi, k](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& av2 = t.nodes_[ai].value;
        const auto& bv2 = t.nodes_[bi].value;
        auto& ga = t.nodes_[ai].grad;
        auto& gb = t.nodes_[bi].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            double x = (k == Bcast::AScalar) ? av2[0] : av2[i];
            double y = (k == Bcast::BScalar) ? bv2[0] : bv2[i];
            double gx = g[i] / y;
            double gy = -g[i] * x / (y * y);
            if (k == Bcast::AScalar) ga[0] += gx; else ga[i] += gx;
            if (k == Bcast::BScalar) gb[0] += gy; else gb[i] += gy;
        }
    });
    return handle(id);
}

Tensor Tape::add_scalar(Tensor a, double c) {
    check_same_tape(a, this);
    std::vector<double> out = a.value();
    for (double& x : out) x += c;
    int id = new_node(a.shape(), std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return handle(id);
}

Tensor Tape::mul_scalar(Tensor a, double c) {
    check_same_tape(a, this);
    std::vector<double> out = a.value();
    for (double& x : out) x *= c;
    int id = new_node(a.shape(), std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai, c](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
    return handle(id);
}

Tensor Tape::neg(Tensor a) { return mul_scalar(a, -1.0); }

// Unary op family: FWD maps x -> y, BWD is dy/dx in terms of x and y.
#define UQR_UNARY_IMPL(NAME, FWD_EXPR, BWD_EXPR, DOMAIN_CHECK)                        \
    Tensor Tape::NAME(Tensor a) {                                                      \
        check_same_tape(a, this);                                                      \
        const auto& av = a.value();                                                    \
        std::vector<double> out(av.size());                                            \
        for (size_t i = 0; i < av.size(); ++i) {                                       \
            double x = av[i];                                                          \
            DOMAIN_CHECK;                                                              \
            out[i] = (FWD_EXPR);                                                       \
        }                                                                              \
        int id = new_node(a.shape(), std::move(out), false);                           \
        int ai = a.id();                                                               \
        record(id, {ai}, [id, ai](Tape& t) {                                           \
            const auto& g = t.nodes_[id].grad;                                         \
            const auto& xv = t.nodes_[ai].value;                                       \
            const auto& yv = t.nodes_[id].value;                                       \
            auto& ga = t.nodes_[ai].grad;                                              \
            for (size_t i = 0; i < g.size(); ++i) {                                    \
                double x = xv[i];                                                      \
                double y = yv[i];                                                      \
                (void)x;                                                               \
                (void)y;                                                               \
                ga[i] += g[i] * (BWD_EXPR);                                            \
            }                                                                          \
        });                                                                            \
        return handle(id);                                                             \
    }

UQR_UNARY_IMPL(exp, std::exp(x), y, )
UQR_UNARY_IMPL(log, std::log(x), 1.0 / x,
               if (x <= 0.0) throw DomainError("log of non-positive value"))
UQR_UNARY_IMPL(tanh, std::tanh(x), 1.0 - y * y, )
UQR_UNARY_IMPL(relu, x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0, )
UQR_UNARY_IMPL(sigmoid, 1.0 / (1.0 + std::exp(-x)), y * (1.0 - y), )

#undef UQR_UNARY_IMPL

Tensor Tape::softplus(Tensor a) {
    check_same_tape(a, this);
    const auto& av = a.value();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        // max(x,0) + log1p(exp(-|x|)) avoids overflow on either side
        double x = av[i];
        out[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    int id = new_node(a.shape(), std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& xv = t.nodes_[ai].value;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] / (1.0 + std::exp(-xv[i]));
        }
    });
    return handle(id);
}

Tensor Tape::sqrt(Tensor a) {
    check_same_tape(a, this);
    const auto& av = a.value();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        if (av[i] < 0.0) throw DomainError("sqrt of negative value");
        out[i] = std::sqrt(av[i]);
    }
    int id = new_node(a.shape(), std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& yv = t.nodes_[id].value;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            // Guard keeps a zero incoming gradient from producing 0 * inf at
            // the degenerate sqrt(0) point (collapsed latent samples).
            ga[i] += g[i] * 0.5 / std::max(yv[i], 1e-154);
        }
    });
    return handle(id);
}

Tensor Tape::max_scalar(Tensor a, double c) {
    check_same_tape(a, this);
    const auto& av = a.value();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::max(av[i], c);
    int id = new_node(a.shape(), std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai, c](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& xv = t.nodes_[ai].value;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > c) ga[i] += g[i];
        }
    });
    return handle(id);
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

Tensor Tape::matmul(Tensor a, Tensor b) {
    check_same_tape(a, this);
    check_same_tape(b, this);
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 2) throw ShapeError("matmul lhs must be 2-d, got " + shape_str(as));
    bool vec_rhs = (bs.size() == 1);
    if (!vec_rhs && bs.size() != 2) {
        throw ShapeError("matmul rhs must be 1-d or 2-d, got " + shape_str(bs));
    }
    int m = as[0], k = as[1];
    int k2 = vec_rhs ? bs[0] : bs[0];
    int n = vec_rhs ? 1 : bs[1];
    if (k != k2) {
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(as) + " @ " + shape_str(bs));
    }
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            double x = av[static_cast<size_t>(i) * k + p];
            if (x == 0.0) continue;
            const double* brow = &bv[static_cast<size_t>(p) * n];
            double* orow = &out[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    }
    Shape out_shape = vec_rhs ? Shape{m} : Shape{m, n};
    int id = new_node(std::move(out_shape), std::move(out), false);
    int ai = a.id(), bi = b.id();
    record(id, {ai, bi}, [id, ai, bi, m, k, n](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& av2 = t.nodes_[ai].value;
        const auto& bv2 = t.nodes_[bi].value;
        auto& ga = t.nodes_[ai].grad;
        auto& gb = t.nodes_[bi].grad;
        // grad_a = g @ b^T
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
                double s = 0.0;
                const double* grow = &g[static_cast<size_t>(i) * n];
                const double* brow = &bv2[static_cast<size_t>(p) * n];
                for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                ga[static_cast<size_t>(i) * k + p] += s;
            }
        }
        // grad_b = a^T @ g
        for (int p = 0; p < k; ++p) {
            for (int i = 0; i < m; ++i) {
                double x = av2[static_cast<size_t>(i) * k + p];
                if (x == 0.0) continue;
                const double* grow = &g[static_cast<size_t>(i) * n];
                double* brow = &gb[static_cast<size_t>(p) * n];
                for (int j = 0; j < n; ++j) brow[j] += x * grow[j];
            }
        }
    });
    return handle(id);
}

// ---------------------------------------------------------------------------
// Convolution / pooling
// ---------------------------------------------------------------------------

Tensor Tape::conv2d(Tensor input, Tensor kernels, int stride, int pad) {
    check_same_tape(input, this);
    check_same_tape(kernels, this);
    const Shape& is = input.shape();
    const Shape& ks = kernels.shape();
    if (is.size() != 3) throw ShapeError("conv2d input must be [c,h,w], got " + shape_str(is));
    if (ks.size() != 4) throw ShapeError("conv2d kernels must be [co,ci,k,k], got " + shape_str(ks));
    int ci = is[0], h = is[1], w = is[2];
    int co = ks[0], kci = ks[1], kh = ks[2], kw = ks[3];
    if (ci != kci) throw ShapeError("conv2d channel mismatch: input " + shape_str(is) + ", kernels " + shape_str(ks));
    if (stride < 1) throw UsageError("conv2d stride must be >= 1");
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (w + 2 * pad - kw) / stride + 1;
    if (kh > h + 2 * pad || kw > w + 2 * pad || oh <= 0 || ow <= 0) {
        throw ShapeError("conv2d produces non-positive output dimension");
    }
    const auto& iv = input.value();
    const auto& kv = kernels.value();
    std::vector<double> out(static_cast<size_t>(co) * oh * ow, 0.0);
    for (int oc = 0; oc < co; ++oc) {
        for (int ic = 0; ic < ci; ++ic) {
            const double* kbase = &kv[((static_cast<size_t>(oc) * ci + ic) * kh) * kw];
            const double* ibase = &iv[static_cast<size_t>(ic) * h * w];
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double s = 0.0;
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= w) continue;
                            s += kbase[ky * kw + kx] * ibase[iy * w + ix];
                        }
                    }
                    out[(static_cast<size_t>(oc) * oh + oy) * ow + ox] += s;
                }
            }
        }
    }
    int id = new_node({co, oh, ow}, std::move(out), false);
    int ii = input.id(), ki = kernels.id();
    record(id, {ii, ki}, [id, ii, ki, ci, h, w, co, kh, kw, oh, ow, stride, pad](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& iv2 = t.nodes_[ii].value;
        const auto& kv2 = t.nodes_[ki].value;
        auto& gi = t.nodes_[ii].grad;
        auto& gk = t.nodes_[ki].grad;
        for (int oc = 0; oc < co; ++oc) {
            for (int ic = 0; ic < ci; ++ic) {
                const double* kbase = &kv2[((static_cast<size_t>(oc) * ci + ic) * kh) * kw];
                const double* ibase = &iv2[static_cast<size_t>(ic) * h * w];
                double* gibase = &gi[static_cast<size_t>(ic) * h * w];
                double* gkbase = &gk[((static_cast<size_t>(oc) * ci + ic) * kh) * kw];
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        double go = g[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
                        if (go == 0.0) continue;
                        for (int ky = 0; ky < kh; ++ky) {
                            int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                gibase[iy * w + ix] += go * kbase[ky * kw + kx];
                                gkbase[ky * kw + kx] += go * ibase[iy * w + ix];
                            }
                        }
                    }
                }
            }
        }
    });
    return handle(id);
}

Tensor Tape::bias_channels(Tensor x, Tensor bias) {
    check_same_tape(x, this);
    check_same_tape(bias, this);
    const Shape& xs = x.shape();
    const Shape& bs = bias.shape();
    if (xs.size() != 3 || bs.size() != 1 || bs[0] != xs[0]) {
        throw ShapeError("bias_channels expects x [c,h,w] and bias [c], got " +
                         shape_str(xs) + " and " + shape_str(bs));
    }
    int c = xs[0];
    int hw = xs[1] * xs[2];
    std::vector<double> out = x.value();
    const auto& bv = bias.value();
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < hw; ++i) out[static_cast<size_t>(ch) * hw + i] += bv[ch];
    }
    int id = new_node(xs, std::move(out), false);
    int xi = x.id(), bi = bias.id();
    record(id, {xi, bi}, [id, xi, bi, c, hw](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& gx = t.nodes_[xi].grad;
        auto& gb = t.nodes_[bi].grad;
        for (int ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int i = 0; i < hw; ++i) {
                double gv = g[static_cast<size_t>(ch) * hw + i];
                gx[static_cast<size_t>(ch) * hw + i] += gv;
                s += gv;
            }
            gb[ch] += s;
        }
    });
    return handle(id);
}

namespace {

Shape pool_input_shape(const Shape& s) {
    if (s.size() == 2) return {1, s[0], s[1]};
    if (s.size() == 3) return s;
    throw ShapeError("pooling expects [c,h,w] or [h,w], got " + shape_str(s));
}

} // namespace

Tensor Tape::max_pool2d(Tensor x, int window, int stride) {
    check_same_tape(x, this);
    Shape is = pool_input_shape(x.shape());
    bool rank2 = x.shape().size() == 2;
    int c = is[0], h = is[1], w = is[2];
    if (window < 1 || stride < 1) throw UsageError("pool window/stride must be >= 1");
    int oh = (h - window) / stride + 1;
    int ow = (w - window) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("max_pool2d produces non-positive output dimension");
    const auto& xv = x.value();
    std::vector<double> out(static_cast<size_t>(c) * oh * ow);
    std::vector<int> argmax(out.size());
    for (int ch = 0; ch < c; ++ch) {
        const double* base = &xv[static_cast<size_t>(ch) * h * w];
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                int best = (oy * stride) * w + ox * stride;
                double bv = base[best];
                for (int ky = 0; ky < window; ++ky) {
                    for (int kx = 0; kx < window; ++kx) {
                        int idx = (oy * stride + ky) * w + (ox * stride + kx);
                        if (base[idx] > bv) {
                            bv = base[idx];
                            best = idx;
                        }
                    }
                }
                size_t o = (static_cast<size_t>(ch) * oh + oy) * ow + ox;
                out[o] = bv;
                argmax[o] = ch * h * w + best;
            }
        }
    }
    Shape out_shape = rank2 ? Shape{oh, ow} : Shape{c, oh, ow};
    int id = new_node(std::move(out_shape), std::move(out), false);
    int xi = x.id();
    record(id, {xi}, [id, xi, argmax = std::move(argmax)](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& gx = t.nodes_[xi].grad;
        for (size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
    return handle(id);
}

Tensor Tape::avg_pool2d(Tensor x, int window, int stride) {
    check_same_tape(x, this);
    Shape is = pool_input_shape(x.shape());
    bool rank2 = x.shape().size() == 2;
    int c = is[0], h = is[1], w = is[2];
    if (window < 1 || stride < 1) throw UsageError("pool window/stride must be >= 1");
    int oh = (h - window) / stride + 1;
    int ow = (w - window) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("avg_pool2d produces non-positive output dimension");
    const auto& xv = x.value();
    double inv = 1.0 / (window * window);
    std::vector<double> out(static_cast<size_t>(c) * oh * ow, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        const double* base = &xv[static_cast<size_t>(ch) * h * w];
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx)
                        s += base[(oy * stride + ky) * w + (ox * stride + kx)];
                out[(static_cast<size_t>(ch) * oh + oy) * ow + ox] = s * inv;
            }
        }
    }
    Shape out_shape = rank2 ? Shape{oh, ow} : Shape{c, oh, ow};
    int id = new_node(std::move(out_shape), std::move(out), false);
    int xi = x.id();
    record(id, {xi}, [id, xi, c, h, w, oh, ow, window, stride, inv](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& gx = t.nodes_[xi].grad;
        for (int ch = 0; ch < c; ++ch) {
            double* gbase = &gx[static_cast<size_t>(ch) * h * w];
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double go = g[(static_cast<size_t>(ch) * oh + oy) * ow + ox] * inv;
                    for (int ky = 0; ky < window; ++ky)
                        for (int kx = 0; kx < window; ++kx)
                            gbase[(oy * stride + ky) * w + (ox * stride + kx)] += go;
                }
            }
        }
    });
    return handle(id);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor Tape::sum(Tensor a) {
    check_same_tape(a, this);
    double s = 0.0;
    for (double x : a.value()) s += x;
    int id = new_node({1}, {s}, false);
    int ai = a.id();
    record(id, {ai}, [id, ai](Tape& t) {
        double g = t.nodes_[id].grad[0];
        auto& ga = t.nodes_[ai].grad;
        for (double& x : ga) x += g;
    });
    return handle(id);
}

Tensor Tape::sum_axis(Tensor a, int axis) {
    check_same_tape(a, this);
    const Shape& as = a.shape();
    if (as.size() != 2) throw ShapeError("sum_axis expects a 2-d tensor, got " + shape_str(as));
    if (axis != 0 && axis != 1) throw ShapeError("sum_axis: invalid axis " + std::to_string(axis));
    int r = as[0], c = as[1];
    const auto& av = a.value();
    int out_len = (axis == 0) ? c : r;
    std::vector<double> out(out_len, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[axis == 0 ? j : i] += av[static_cast<size_t>(i) * c + j];
    int id = new_node({out_len}, std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai, r, c, axis](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[ai].grad;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                ga[static_cast<size_t>(i) * c + j] += g[axis == 0 ? j : i];
    });
    return handle(id);
}

Tensor Tape::mean(Tensor a) {
    check_same_tape(a, this);
    return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::softmax(Tensor a) {
    check_same_tape(a, this);
    if (a.shape().size() != 1) {
        throw ShapeError("softmax expects a 1-d tensor, got " + shape_str(a.shape()));
    }
    const auto& av = a.value();
    double mx = *std::max_element(av.begin(), av.end());
    std::vector<double> out(av.size());
    double z = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        out[i] = std::exp(av[i] - mx);
        z += out[i];
    }
    for (double& x : out) x /= z;
    int id = new_node(a.shape(), std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& y = t.nodes_[id].value;
        auto& ga = t.nodes_[ai].grad;
        double dot = 0.0;
        for (size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
        for (size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - dot);
    });
    return handle(id);
}

Tensor Tape::softmax_axis(Tensor a, int axis) {
    check_same_tape(a, this);
    const Shape& as = a.shape();
    if (as.size() == 1) {
        if (axis != 0 && axis != -1) throw ShapeError("softmax_axis: invalid axis for 1-d tensor");
        return softmax(a);
    }
    if (as.size() != 2) throw ShapeError("softmax_axis expects 1-d or 2-d, got " + shape_str(as));
    if (axis == -1) axis = 1;
    if (axis != 0 && axis != 1) throw ShapeError("softmax_axis: invalid axis " + std::to_string(axis));
    int r = as[0], c = as[1];
    const auto& av = a.value();
    std::vector<double> out(av.size());
    int slices = (axis == 1) ? r : c;
    int len = (axis == 1) ? c : r;
    for (int s = 0; s < slices; ++s) {
        auto at = [&](int i) -> size_t {
            return (axis == 1) ? static_cast<size_t>(s) * c + i : static_cast<size_t>(i) * c + s;
        };
        double mx = av[at(0)];
        for (int i = 1; i < len; ++i) mx = std::max(mx, av[at(i)]);
        double z = 0.0;
        for (int i = 0; i < len; ++i) {
            out[at(i)] = std::exp(av[at(i)] - mx);
            z += out[at(i)];
        }
        for (int i = 0; i < len; ++i) out[at(i)] /= z;
    }
    int id = new_node(as, std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai, r, c, axis](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        const auto& y = t.nodes_[id].value;
        auto& ga = t.nodes_[ai].grad;
        int slices = (axis == 1) ? r : c;
        int len = (axis == 1) ? c : r;
        for (int s = 0; s < slices; ++s) {
            auto at = [&](int i) -> size_t {
                return (axis == 1) ? static_cast<size_t>(s) * c + i : static_cast<size_t>(i) * c + s;
            };
            double dot = 0.0;
            for (int i = 0; i < len; ++i) dot += g[at(i)] * y[at(i)];
            for (int i = 0; i < len; ++i) ga[at(i)] += y[at(i)] * (g[at(i)] - dot);
        }
    });
    return handle(id);
}

Tensor Tape::logsumexp(Tensor a) {
    check_same_tape(a, this);
    if (a.shape().size() != 1) {
        throw ShapeError("logsumexp expects a 1-d tensor, got " + shape_str(a.shape()));
    }
    const auto& av = a.value();
    double mx = *std::max_element(av.begin(), av.end());
    double z = 0.0;
    for (double x : av) z += std::exp(x - mx);
    double lse = mx + std::log(z);
    int id = new_node({1}, {lse}, false);
    int ai = a.id();
    record(id, {ai}, [id, ai](Tape& t) {
        double g = t.nodes_[id].grad[0];
        double y = t.nodes_[id].value[0];
        const auto& xv = t.nodes_[ai].value;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < xv.size(); ++i) ga[i] += g * std::exp(xv[i] - y);
    });
    return handle(id);
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Tensor Tape::reshape(Tensor a, Shape shape) {
    check_same_tape(a, this);
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    int id = new_node(std::move(shape), a.value(), false);
    int ai = a.id();
    record(id, {ai}, [id, ai](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return handle(id);
}

Tensor Tape::concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat of zero tensors");
    std::vector<double> out;
    std::vector<int> ids;
    std::vector<int> offsets;
    int off = 0;
    for (const Tensor& p : parts) {
        check_same_tape(p, this);
        if (p.shape().size() != 1) {
            throw ShapeError("concat expects 1-d parts, got " + shape_str(p.shape()));
        }
        offsets.push_back(off);
        off += static_cast<int>(p.size());
        ids.push_back(p.id());
        const auto& v = p.value();
        out.insert(out.end(), v.begin(), v.end());
    }
    int id = new_node({off}, std::move(out), false);
    record(id, ids, [id, ids, offsets](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        for (size_t p = 0; p < ids.size(); ++p) {
            auto& ga = t.nodes_[ids[p]].grad;
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[offsets[p] + i];
        }
    });
    return handle(id);
}

Tensor Tape::slice(Tensor a, int start, int len) {
    check_same_tape(a, this);
    if (a.shape().size() != 1) throw ShapeError("slice expects a 1-d tensor");
    if (start < 0 || len < 1 || start + len > a.size()) {
        throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for length " + std::to_string(a.size()));
    }
    const auto& av = a.value();
    std::vector<double> out(av.begin() + start, av.begin() + start + len);
    int id = new_node({len}, std::move(out), false);
    int ai = a.id();
    record(id, {ai}, [id, ai, start](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[start + i] += g[i];
    });
    return handle(id);
}

Tensor Tape::select(Tensor a, int index) { return slice(a, index, 1); }

Tensor Tape::select_row(Tensor m, int row) {
    check_same_tape(m, this);
    const Shape& ms = m.shape();
    if (ms.size() != 2) throw ShapeError("select_row expects a 2-d tensor");
    if (row < 0 || row >= ms[0]) {
        throw ShapeError("select_row index " + std::to_string(row) + " out of range");
    }
    int c = ms[1];
    const auto& mv = m.value();
    std::vector<double> out(mv.begin() + static_cast<size_t>(row) * c,
                            mv.begin() + static_cast<size_t>(row + 1) * c);
    int id = new_node({c}, std::move(out), false);
    int mi = m.id();
    record(id, {mi}, [id, mi, row, c](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& gm = t.nodes_[mi].grad;
        for (int i = 0; i < c; ++i) gm[static_cast<size_t>(row) * c + i] += g[i];
    });
    return handle(id);
}

Tensor Tape::grad_reverse(Tensor a, double lambda) {
    check_same_tape(a, this);
    int id = new_node(a.shape(), a.value(), false);
    int ai = a.id();
    record(id, {ai}, [id, ai, lambda](Tape& t) {
        const auto& g = t.nodes_[id].grad;
        auto& ga = t.nodes_[ai].grad;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += -lambda * g[i];
    });
    return handle(id);
}

// ---------------------------------------------------------------------------
// Operators and lstm_cell
// ---------------------------------------------------------------------------

Tensor operator+(Tensor a, Tensor b) { return a.tape().add(a, b); }
Tensor operator-(Tensor a, Tensor b) { return a.tape().sub(a, b); }
Tensor operator*(Tensor a, Tensor b) { return a.tape().mul(a, b); }
Tensor operator/(Tensor a, Tensor b) { return a.tape().div(a, b); }
Tensor operator-(Tensor a) { return a.tape().neg(a); }

std::pair<Tensor, Tensor> lstm_cell(Tensor x, Tensor h_prev, Tensor c_prev,
                                    const LstmWeights& w) {
    Tape& t = x.tape();
    const Shape& ws = w.w_h.shape();
    if (ws.size() != 2 || ws[0] % 4 != 0) {
        throw ShapeError("lstm w_h must be [4H, H], got " + shape_str(ws));
    }
    int hidden = ws[1];
    if (ws[0] != 4 * hidden || h_prev.size() != hidden || c_prev.size() != hidden) {
        throw ShapeError("lstm hidden sizes disagree");
    }
    if (w.w_x.shape()[0] != 4 * hidden || w.w_x.shape()[1] != x.size()) {
        throw ShapeError("lstm w_x shape " + shape_str(w.w_x.shape()) +
                         " does not match input length " + std::to_string(x.size()));
    }
    Tensor pre = t.matmul(w.w_x, x) + t.matmul(w.w_h, h_prev) + w.b;
    Tensor i = t.sigmoid(t.slice(pre, 0, hidden));
    Tensor f = t.sigmoid(t.slice(pre, hidden, hidden));
    Tensor g = t.tanh(t.slice(pre, 2 * hidden, hidden));
    Tensor o = t.sigmoid(t.slice(pre, 3 * hidden, hidden));
    Tensor c = f * c_prev + i * g;
    Tensor h = o * t.tanh(c);
    return {h, c};
}

} // namespace uqr
