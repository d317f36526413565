// Copyright (c) 2026, sparsedebias contributors
// SPDX-License-Identifier: Apache-2.0

#include "sdb/autodiff.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sdb {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

void require_matrix(const char* op, const Shape& s) {
    if (s.size() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(s));
}

// Gradient of the output node, or an empty span if nothing flowed into it.
std::span<const double> out_grad(Tape& t, std::size_t id) { return t.node(id).grad; }

template <typename Fn>
Var unary(Var a, Fn&& forward_fn, std::function<void(Tape&, std::size_t, std::size_t)> bwd) {
    Tape& t = a.tape();
    auto in = a.value();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward_fn(in[i]);
    const std::size_t ia = a.id();
    const bool ng = t.node(ia).needs_grad;
    Var r = t.emit(a.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [ia, ir, bwd = std::move(bwd)](Tape& tape) { bwd(tape, ia, ir); };
    }
    return r;
}

// Element-wise unary op whose derivative depends on (input, output).
template <typename Fwd, typename Deriv>
Var pointwise(Var a, Fwd fwd, Deriv deriv) {
    return unary(a, fwd, [deriv](Tape& t, std::size_t ia, std::size_t ir) {
        auto g = out_grad(t, ir);
        if (g.empty()) return;
        auto x = t.node(ia).value();
        auto y = t.node(ir).value();
        auto ga = t.node(ia).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

const Shape& Var::shape() const { return tape_->node(id_).shape; }
std::size_t Var::size() const { return tape_->node(id_).numel; }
std::size_t Var::rows() const { return rows_of(shape()); }
std::size_t Var::cols() const { return cols_of(shape()); }
std::span<const double> Var::value() const { return tape_->node(id_).value(); }
std::span<const double> Var::grad() const { return tape_->node(id_).grad; }

Tensor Var::to_tensor() const {
    auto v = value();
    return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

double Var::item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
    return value()[0];
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor& tensor) {
    auto n = std::make_unique<Node>();
    n->shape = tensor.shape();
    n->data = tensor.data().data();
    n->numel = tensor.size();
    n->needs_grad = tensor.requires_grad();
    n->leaf = tensor.requires_grad() ? &tensor : nullptr;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::constant(const Tensor& tensor) {
    const auto v = tensor.data();
    return emit(tensor.shape(), std::vector<double>(v.begin(), v.end()), false, nullptr);
}

Var Tape::constant_ref(const Tensor& tensor) {
    auto n = std::make_unique<Node>();
    n->shape = tensor.shape();
    n->data = tensor.data().data();
    n->numel = tensor.size();
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::constant(Shape shape, std::vector<double> values) { return emit(std::move(shape), std::move(values), false, nullptr); }

Var Tape::scalar(double value) { return emit({1}, {value}, false, nullptr); }

Var Tape::emit(Shape shape, std::vector<double> values, bool needs_grad, std::function<void(Tape&)> backward) {
    if (values.size() != shape_numel(shape)) {
        throw std::invalid_argument("emit: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    auto n = std::make_unique<Node>();
    n->shape = std::move(shape);
    n->storage = std::move(values);
    n->data = n->storage.data();
    n->numel = n->storage.size();
    n->needs_grad = needs_grad;
    n->backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
    if (root.size() != 1) throw std::invalid_argument("backward: root of shape " + shape_str(root.shape()) + " is not a scalar");
    for (auto& n : nodes_) n->grad.clear();
    node(root.id()).grad_buffer()[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = *nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this);
        if (n.leaf) {
            auto dst = n.leaf->grad();
            for (std::size_t j = 0; j < n.numel; ++j) dst[j] += n.grad[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
    require_matrix("matmul", a.shape());
    require_matrix("matmul", b.shape());
    if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
    Tape& t = a.tape();
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    Map(out.data(), m, n).noalias() = MapC(a.value().data(), m, k) * MapC(b.value().data(), k, n);
    const std::size_t ia = a.id(), ib = b.id();
    const bool ng = t.node(ia).needs_grad || t.node(ib).needs_grad;
    Var r = t.emit({m, n}, std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            MapC G(g.data(), m, n);
            if (tp.node(ia).needs_grad) {
                Map(tp.node(ia).grad_buffer().data(), m, k).noalias() += G * MapC(tp.node(ib).data, k, n).transpose();
            }
            if (tp.node(ib).needs_grad) {
                Map(tp.node(ib).grad_buffer().data(), k, n).noalias() += MapC(tp.node(ia).data, m, k).transpose() * G;
            }
        };
    }
    return r;
}

Var matmul_bt(Var a, Var b) {
    require_matrix("matmul_bt", a.shape());
    require_matrix("matmul_bt", b.shape());
    if (a.cols() != b.cols()) shape_error("matmul_bt", a.shape(), b.shape());
    Tape& t = a.tape();
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n);
    Map(out.data(), m, n).noalias() = MapC(a.value().data(), m, k) * MapC(b.value().data(), n, k).transpose();
    const std::size_t ia = a.id(), ib = b.id();
    const bool ng = t.node(ia).needs_grad || t.node(ib).needs_grad;
    Var r = t.emit({m, n}, std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            MapC G(out_grad(tp, ir).data(), m, n);
            if (tp.node(ia).needs_grad) {
                Map(tp.node(ia).grad_buffer().data(), m, k).noalias() += G * MapC(tp.node(ib).data, n, k);
            }
            if (tp.node(ib).needs_grad) {
                Map(tp.node(ib).grad_buffer().data(), n, k).noalias() += G.transpose() * MapC(tp.node(ia).data, m, k);
            }
        };
    }
    return r;
}

namespace {

// a (op) b for same-shape operands with per-operand gradient scale +1 / sign_b.
Var add_signed(const char* op, Var a, Var b, double sign_b) {
    if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
    Tape& t = a.tape();
    auto x = a.value(), y = b.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + sign_b * y[i];
    const std::size_t ia = a.id(), ib = b.id();
    const bool ng = t.node(ia).needs_grad || t.node(ib).needs_grad;
    Var r = t.emit(a.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            if (tp.node(ia).needs_grad) {
                auto ga = tp.node(ia).grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.node(ib).needs_grad) {
                auto gb = tp.node(ib).grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign_b * g[i];
            }
        };
    }
    return r;
}

}  // namespace

Var add(Var a, Var b) { return add_signed("add", a, b, 1.0); }
Var sub(Var a, Var b) { return add_signed("sub", a, b, -1.0); }

Var add_row(Var a, Var bias) {
    require_matrix("add_row", a.shape());
    if (bias.size() != a.cols() || bias.shape().size() != 1) shape_error("add_row", a.shape(), bias.shape());
    Tape& t = a.tape();
    const std::size_t m = a.rows(), n = a.cols();
    auto x = a.value(), b = bias.value();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + b[j];
    const std::size_t ia = a.id(), ib = bias.id();
    const bool ng = t.node(ia).needs_grad || t.node(ib).needs_grad;
    Var r = t.emit(a.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            if (tp.node(ia).needs_grad) {
                auto ga = tp.node(ia).grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.node(ib).needs_grad) {
                auto gb = tp.node(ib).grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        };
    }
    return r;
}

Var mul(Var a, Var b) {
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    Tape& t = a.tape();
    auto x = a.value(), y = b.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    const std::size_t ia = a.id(), ib = b.id();
    const bool ng = t.node(ia).needs_grad || t.node(ib).needs_grad;
    Var r = t.emit(a.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            const double* xa = tp.node(ia).data;
            const double* xb = tp.node(ib).data;
            if (tp.node(ia).needs_grad) {
                auto ga = tp.node(ia).grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
            }
            if (tp.node(ib).needs_grad) {
                auto gb = tp.node(ib).grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
            }
        };
    }
    return r;
}

Var mul_col(Var a, Var col) {
    require_matrix("mul_col", a.shape());
    if (col.size() != a.rows() || col.shape().size() != 1) shape_error("mul_col", a.shape(), col.shape());
    Tape& t = a.tape();
    const std::size_t m = a.rows(), n = a.cols();
    auto x = a.value(), c = col.value();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] * c[i];
    const std::size_t ia = a.id(), ic = col.id();
    const bool ng = t.node(ia).needs_grad || t.node(ic).needs_grad;
    Var r = t.emit(a.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            const double* xa = tp.node(ia).data;
            const double* xc = tp.node(ic).data;
            if (tp.node(ia).needs_grad) {
                auto ga = tp.node(ia).grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] * xc[i];
            }
            if (tp.node(ic).needs_grad) {
                auto gc = tp.node(ic).grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gc[i] += g[i * n + j] * xa[i * n + j];
            }
        };
    }
    return r;
}

Var scale(Var a, double factor) {
    return pointwise(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
    return pointwise(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var embedding(Var table, std::span<const int> ids) {
    require_matrix("embedding", table.shape());
    Tape& t = table.tape();
    const std::size_t vocab = table.rows(), d = table.cols();
    std::vector<int> idx(ids.begin(), ids.end());
    for (int id : idx) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw std::invalid_argument("embedding: id " + std::to_string(id) + " outside table of shape " +
                                        shape_str(table.shape()));
        }
    }
    auto w = table.value();
    std::vector<double> out(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(w.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
    const std::size_t it = table.id();
    const bool ng = t.node(it).needs_grad;
    Var r = t.emit({idx.size(), d}, std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=, idx = std::move(idx)](Tape& tp) {
            auto g = out_grad(tp, ir);
            auto gt = tp.node(it).grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                double* dst = gt.data() + static_cast<std::size_t>(idx[i]) * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

Var softmax_rows(Var a) {
    Tape& t = a.tape();
    const std::size_t m = a.rows(), n = a.cols();
    auto x = a.value();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    const std::size_t ia = a.id();
    const bool ng = t.node(ia).needs_grad;
    Var r = t.emit(a.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            const double* y = tp.node(ir).data;
            auto ga = tp.node(ia).grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
            }
        };
    }
    return r;
}

Var log_softmax_rows(Var a) {
    Tape& t = a.tape();
    const std::size_t m = a.rows(), n = a.cols();
    auto x = a.value();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
    }
    const std::size_t ia = a.id();
    const bool ng = t.node(ia).needs_grad;
    Var r = t.emit(a.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            const double* y = tp.node(ir).data;
            auto ga = tp.node(ia).grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                double gs = 0.0;
                for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
            }
        };
    }
    return r;
}

Var layer_norm(Var x, Var gain, Var bias) {
    require_matrix("layer_norm", x.shape());
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.size() != n) shape_error("layer_norm", x.shape(), gain.shape());
    if (bias.size() != n) shape_error("layer_norm", x.shape(), bias.shape());
    Tape& t = x.tape();
    auto xv = x.value(), gv = gain.value(), bv = bias.value();
    std::vector<double> out(m * n);
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (row[j] - mu) * is;
            (*xhat)[i * n + j] = h;
            out[i * n + j] = h * gv[j] + bv[j];
        }
    }
    const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
    const bool ng = t.node(ix).needs_grad || t.node(ig).needs_grad || t.node(ib).needs_grad;
    Var r = t.emit(x.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            const double* gv2 = tp.node(ig).data;
            const auto& xh = *xhat;
            if (tp.node(ig).needs_grad) {
                auto gg = tp.node(ig).grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xh[i * n + j];
            }
            if (tp.node(ib).needs_grad) {
                auto gb = tp.node(ib).grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
            if (tp.node(ix).needs_grad) {
                auto gx = tp.node(ix).grad_buffer();
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t i = 0; i < m; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dh = g[i * n + j] * gv2[j];
                        s1 += dh;
                        s2 += dh * xh[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dh = g[i * n + j] * gv2[j];
                        gx[i * n + j] += (*inv_std)[i] * (dh - s1 * inv_n - xh[i * n + j] * s2 * inv_n);
                    }
                }
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Element-wise nonlinearities

Var sigmoid(Var a) {
    return pointwise(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
    return pointwise(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var tanh(Var a) {
    return pointwise(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var log(Var a) {
    auto v = a.value();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] > 0.0)) {
            throw std::invalid_argument("log: non-positive input " + std::to_string(v[i]) + " at element " +
                                        std::to_string(i) + " of tensor " + shape_str(a.shape()) +
                                        "; use log_clamped");
        }
    }
    return pointwise(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var log_clamped(Var a, double eps) {
    return pointwise(
        a, [eps](double x) { return std::log(std::max(x, eps)); },
        [eps](double x, double) { return x > eps ? 1.0 / x : 0.0; });
}

Var gelu(Var a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return pointwise(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); });
}

Var relu(Var a) {
    return pointwise(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Attention

Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t heads) {
    require_matrix("attention", q.shape());
    require_matrix("attention", k.shape());
    if (k.shape() != v.shape()) shape_error("attention", k.shape(), v.shape());
    const std::size_t d = q.cols();
    if (k.cols() != d) shape_error("attention", q.shape(), k.shape());
    if (batch == 0 || heads == 0 || d % heads != 0 || q.rows() % batch != 0 || k.rows() % batch != 0) {
        throw std::invalid_argument("attention: q " + shape_str(q.shape()) + " / k " + shape_str(k.shape()) +
                                    " not divisible into batch " + std::to_string(batch) + " x heads " +
                                    std::to_string(heads));
    }
    const std::size_t lq = q.rows() / batch, lk = k.rows() / batch, dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    Tape& t = q.tape();
    const double* Q = q.value().data();
    const double* K = k.value().data();
    const double* V = v.value().data();
    auto probs = std::make_shared<std::vector<double>>(batch * heads * lq * lk);
    std::vector<double> out(batch * lq * d, 0.0);
    std::vector<double> srow(lk);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* P = probs->data() + (b * heads + h) * lq * lk;
            for (std::size_t i = 0; i < lq; ++i) {
                const double* qi = Q + (b * lq + i) * d + h * dh;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < lk; ++j) {
                    const double* kj = K + (b * lk + j) * d + h * dh;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    srow[j] = s * sc;
                    mx = std::max(mx, srow[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < lk; ++j) z += (srow[j] = std::exp(srow[j] - mx));
                double* oi = out.data() + (b * lq + i) * d + h * dh;
                for (std::size_t j = 0; j < lk; ++j) {
                    const double p = srow[j] / z;
                    P[i * lk + j] = p;
                    const double* vj = V + (b * lk + j) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
                }
            }
        }
    }
    const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
    const bool ng = t.node(iq).needs_grad || t.node(ik).needs_grad || t.node(iv).needs_grad;
    Var r = t.emit(q.shape(), std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            const double* Qd = tp.node(iq).data;
            const double* Kd = tp.node(ik).data;
            const double* Vd = tp.node(iv).data;
            const bool gq_on = tp.node(iq).needs_grad, gk_on = tp.node(ik).needs_grad, gv_on = tp.node(iv).needs_grad;
            double* gq = gq_on ? tp.node(iq).grad_buffer().data() : nullptr;
            double* gk = gk_on ? tp.node(ik).grad_buffer().data() : nullptr;
            double* gvv = gv_on ? tp.node(iv).grad_buffer().data() : nullptr;
            std::vector<double> dp(lk);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* P = probs->data() + (b * heads + h) * lq * lk;
                    for (std::size_t i = 0; i < lq; ++i) {
                        const double* go = g.data() + (b * lq + i) * d + h * dh;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < lk; ++j) {
                            const double* vj = Vd + (b * lk + j) * d + h * dh;
                            double s = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
                            dp[j] = s;
                            dot += s * P[i * lk + j];
                            if (gv_on) {
                                double* gvj = gvv + (b * lk + j) * d + h * dh;
                                const double p = P[i * lk + j];
                                for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * go[c];
                            }
                        }
                        const double* qi = Qd + (b * lq + i) * d + h * dh;
                        for (std::size_t j = 0; j < lk; ++j) {
                            const double ds = P[i * lk + j] * (dp[j] - dot) * sc;
                            const double* kj = Kd + (b * lk + j) * d + h * dh;
                            if (gq_on) {
                                double* gqi = gq + (b * lq + i) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                            }
                            if (gk_on) {
                                double* gkj = gk + (b * lk + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                            }
                        }
                    }
                }
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

Var sum(Var a) {
    Tape& t = a.tape();
    double s = 0.0;
    for (double x : a.value()) s += x;
    const std::size_t ia = a.id();
    const bool ng = t.node(ia).needs_grad;
    Var r = t.emit({1}, {s}, ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            const double g = out_grad(tp, ir)[0];
            for (double& x : tp.node(ia).grad_buffer()) x += g;
        };
    }
    return r;
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var sum_rows(Var a) {
    Tape& t = a.tape();
    const std::size_t m = a.rows(), n = a.cols();
    auto x = a.value();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += x[i * n + j];
    const std::size_t ia = a.id();
    const bool ng = t.node(ia).needs_grad;
    Var r = t.emit({m}, std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            auto ga = tp.node(ia).grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
        };
    }
    return r;
}

Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.cols())); }

Var take_rows(Var a, std::span<const std::size_t> rows) {
    require_matrix("take_rows", a.shape());
    Tape& t = a.tape();
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    for (std::size_t r : idx) {
        if (r >= m) throw std::invalid_argument("take_rows: row " + std::to_string(r) + " outside " + shape_str(a.shape()));
    }
    auto x = a.value();
    std::vector<double> out(idx.size() * n);
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.data() + idx[i] * n, n, out.data() + i * n);
    const std::size_t ia = a.id();
    const bool ng = t.node(ia).needs_grad;
    Var r = t.emit({idx.size(), n}, std::move(out), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=, idx = std::move(idx)](Tape& tp) {
            auto g = out_grad(tp, ir);
            auto ga = tp.node(ia).grad_buffer();
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += g[i * n + j];
        };
    }
    return r;
}

Var reshape(Var a, Shape shape) {
    if (shape_numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
    Tape& t = a.tape();
    auto x = a.value();
    const std::size_t ia = a.id();
    const bool ng = t.node(ia).needs_grad;
    Var r = t.emit(std::move(shape), std::vector<double>(x.begin(), x.end()), ng, nullptr);
    if (ng) {
        const std::size_t ir = r.id();
        t.node(ir).backward = [=](Tape& tp) {
            auto g = out_grad(tp, ir);
            auto ga = tp.node(ia).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return r;
}

Var detach(Var a) {
    auto x = a.value();
    return a.tape().constant(a.shape(), std::vector<double>(x.begin(), x.end()));
}

}  // namespace sdb
