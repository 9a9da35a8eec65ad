// SPDX-License-Identifier: Apache-2.0

#include "ssom/autograd.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ssom/error.hpp"

namespace ssom {

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value_of(id_); }
bool Var::requires_grad() const { return tape_->requires_grad_of(id_); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    require_finite(value, "constant");
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
    require_finite(value, "leaf");
    Node n;
    n.leaf_total = Tensor(value.shape());
    n.value = std::move(value);
    n.requires_grad = true;
    n.is_leaf = true;
    return push(std::move(n));
}

Var Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    require_finite(p.value, p.name);
    Node n;
    n.value = p.value;
    n.requires_grad = p.trainable();
    n.param = p.trainable() ? &p : nullptr;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op) {
    require_finite(value, op);
    Node n;
    n.value = std::move(value);
    for (const Var& in : inputs) {
        if (in.tape_ != this) throw ContractError(std::string(op) + ": input recorded on another tape");
        if (nodes_[in.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

void Tape::accumulate(const Var& v, const Tensor& g) {
    accumulate_with(v, [&](Tensor& acc) {
        auto dst = acc.values();
        auto src = g.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
}

void Tape::backward(Var loss) {
    if (loss.tape_ != this) throw ContractError("backward: loss was recorded on another tape");
    if (loss.value().numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Tensor(loss.shape(), 1.0);

    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, n.grad);
        if (n.param) {
            auto dst = n.param->grad.values();
            auto src = n.grad.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        } else if (n.is_leaf) {
            auto dst = n.leaf_total.values();
            auto src = n.grad.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
}

const Tensor& Tape::grad(Var leaf) const {
    const Node& n = nodes_.at(leaf.id());
    if (!n.is_leaf) throw ContractError("grad: only leaf() values expose gradients");
    return n.leaf_total;
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
    Tensor out(Shape{m, p});
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = av[i * n + k];
            const double* brow = bv + k * p;
            double* orow = ov + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), n = a.cols(), p = b.rows();
    Tensor out(Shape{m, p});
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += av[i * n + k] * bv[j * n + k];
            out.at(i, j) = acc;
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
    Tensor out(Shape{m, p});
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < m; ++i) {
            const double aki = av[k * m + i];
            const double* brow = bv + k * p;
            double* orow = ov + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out(Shape{a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// ops

namespace {

void require_rank2(const Var& a, const char* op) {
    if (a.value().rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
    }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
    if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
}

template <class Fn>
Tensor map_values(const Tensor& a, Fn fn) {
    Tensor out(a.shape());
    auto src = a.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
    return out;
}

}  // namespace

Var matmul(Var a, Var b) {
    require_same_tape(a, b, "matmul");
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.value().cols() != b.value().rows()) {
        throw ShapeError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
    }
    const Var in[] = {a, b};
    return a.tape().record(
        kernels::matmul(a.value(), b.value()), in,
        [a, b](Tape& t, const Tensor& g) {
            if (t.needs_grad(a)) t.accumulate(a, kernels::matmul_nt(g, b.value()));
            if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(a.value(), g));
        },
        "matmul");
}

Var transpose(Var a) {
    require_rank2(a, "transpose");
    return a.tape().record(
        kernels::transpose(a.value()), std::span<const Var>(&a, 1),
        [a](Tape& t, const Tensor& g) { t.accumulate(a, kernels::transpose(g)); }, "transpose");
}

Var add(Var a, Var b) {
    require_same_tape(a, b, "add");
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto av = a.value().values(), bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    const Var in[] = {a, b};
    return a.tape().record(
        std::move(out), in,
        [a, b](Tape& t, const Tensor& g) {
            t.accumulate(a, g);
            t.accumulate(b, g);
        },
        "add");
}

Var sub(Var a, Var b) {
    require_same_tape(a, b, "sub");
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto av = a.value().values(), bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    const Var in[] = {a, b};
    return a.tape().record(
        std::move(out), in,
        [a, b](Tape& t, const Tensor& g) {
            t.accumulate(a, g);
            t.accumulate_with(b, [&](Tensor& acc) {
                auto d = acc.values();
                auto s = g.values();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
            });
        },
        "sub");
}

Var mul(Var a, Var b) {
    require_same_tape(a, b, "mul");
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto av = a.value().values(), bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    const Var in[] = {a, b};
    return a.tape().record(
        std::move(out), in,
        [a, b](Tape& t, const Tensor& g) {
            auto gv = g.values();
            t.accumulate_with(a, [&](Tensor& acc) {
                auto d = acc.values();
                auto o = b.value().values();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * o[i];
            });
            t.accumulate_with(b, [&](Tensor& acc) {
                auto d = acc.values();
                auto o = a.value().values();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * o[i];
            });
        },
        "mul");
}

Var div(Var a, Var b) {
    require_same_tape(a, b, "div");
    require_same_shape(a, b, "div");
    Tensor out(a.shape());
    auto av = a.value().values(), bv = b.value().values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    const Var in[] = {a, b};
    return a.tape().record(
        std::move(out), in,
        [a, b](Tape& t, const Tensor& g) {
            auto gv = g.values();
            auto num = a.value().values();
            auto den = b.value().values();
            t.accumulate_with(a, [&](Tensor& acc) {
                auto d = acc.values();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] / den[i];
            });
            t.accumulate_with(b, [&](Tensor& acc) {
                auto d = acc.values();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= gv[i] * num[i] / (den[i] * den[i]);
            });
        },
        "div");
}

Var scale(Var a, double s) {
    return a.tape().record(
        map_values(a.value(), [s](double x) { return x * s; }), std::span<const Var>(&a, 1),
        [a, s](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                auto d = acc.values();
                auto gv = g.values();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * s;
            });
        },
        "scale");
}

Var add_scalar(Var a, double c) {
    return a.tape().record(
        map_values(a.value(), [c](double x) { return x + c; }), std::span<const Var>(&a, 1),
        [a](Tape& t, const Tensor& g) { t.accumulate(a, g); }, "add_scalar");
}

Var add_row(Var a, Var row) {
    require_same_tape(a, row, "add_row");
    require_rank2(a, "add_row");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    const auto& rs = row.shape();
    const bool ok = (rs.size() == 1 && rs[0] == n) || (rs.size() == 2 && rs[0] == 1 && rs[1] == n);
    if (!ok) {
        throw ShapeError("add_row: row " + shape_string(rs) + " does not broadcast over " +
                         shape_string(a.shape()));
    }
    Tensor out(a.shape());
    const auto& av = a.value();
    const auto& rv = row.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = av.at(i, j) + rv[j];
    const Var in[] = {a, row};
    return a.tape().record(
        std::move(out), in,
        [a, row, m, n](Tape& t, const Tensor& g) {
            t.accumulate(a, g);
            t.accumulate_with(row, [&](Tensor& acc) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) acc[j] += g.at(i, j);
            });
        },
        "add_row");
}

Var scale_rows(Var a, Var v) {
    require_same_tape(a, v, "scale_rows");
    require_rank2(a, "scale_rows");
    const std::size_t r = a.value().rows(), m = a.value().cols();
    if (v.value().rank() != 1 || v.value().numel() != r) {
        throw ShapeError("scale_rows: vector " + shape_string(v.shape()) + " does not match rows of " +
                         shape_string(a.shape()));
    }
    Tensor out(a.shape());
    const auto& av = a.value();
    const auto& vv = v.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = av.at(i, j) * vv[i];
    const Var in[] = {a, v};
    return a.tape().record(
        std::move(out), in,
        [a, v, r, m](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                const auto& vv = v.value();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < m; ++j) acc.at(i, j) += g.at(i, j) * vv[i];
            });
            t.accumulate_with(v, [&](Tensor& acc) {
                const auto& av = a.value();
                for (std::size_t i = 0; i < r; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += g.at(i, j) * av.at(i, j);
                    acc[i] += s;
                }
            });
        },
        "scale_rows");
}

Var sigmoid(Var a) {
    Tensor y = map_values(a.value(), [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    Tensor yc = y;
    return a.tape().record(
        std::move(y), std::span<const Var>(&a, 1),
        [a, yc = std::move(yc)](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * yc[i] * (1.0 - yc[i]);
            });
        },
        "sigmoid");
}

Var gelu(Var a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return a.tape().record(
        map_values(a.value(), [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); }),
        std::span<const Var>(&a, 1),
        [a, inv_sqrt_2pi](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                const auto& x = a.value();
                for (std::size_t i = 0; i < acc.numel(); ++i) {
                    const double xi = x[i];
                    const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
                    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
                    acc[i] += g[i] * (cdf + xi * pdf);
                }
            });
        },
        "gelu");
}

Var log(Var a) {
    for (double x : a.value().values()) {
        if (!(x > 0.0)) throw NumericError("log: non-positive input");
    }
    return a.tape().record(
        map_values(a.value(), [](double x) { return std::log(x); }), std::span<const Var>(&a, 1),
        [a](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                const auto& x = a.value();
                for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] / x[i];
            });
        },
        "log");
}

Var clamp(Var a, double lo, double hi) {
    if (lo > hi) throw ContractError("clamp: lo > hi");
    return a.tape().record(
        map_values(a.value(), [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); }),
        std::span<const Var>(&a, 1),
        [a, lo, hi](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                const auto& x = a.value();
                for (std::size_t i = 0; i < acc.numel(); ++i)
                    if (x[i] >= lo && x[i] <= hi) acc[i] += g[i];
            });
        },
        "clamp");
}

Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().values()) s += x;
    return a.tape().record(
        Tensor::scalar(s), std::span<const Var>(&a, 1),
        [a](Tape& t, const Tensor& g) {
            const double gs = g[0];
            t.accumulate_with(a, [&](Tensor& acc) {
                for (auto& d : acc.values()) d += gs;
            });
        },
        "sum");
}

Var mean(Var a) {
    double s = 0.0;
    for (double x : a.value().values()) s += x;
    const double n = static_cast<double>(a.value().numel());
    return a.tape().record(
        Tensor::scalar(s / n), std::span<const Var>(&a, 1),
        [a, n](Tape& t, const Tensor& g) {
            const double gs = g[0] / n;
            t.accumulate_with(a, [&](Tensor& acc) {
                for (auto& d : acc.values()) d += gs;
            });
        },
        "mean");
}

Var frobenius_norm_sq(Var a) {
    double s = 0.0;
    for (double x : a.value().values()) s += x * x;
    return a.tape().record(
        Tensor::scalar(s), std::span<const Var>(&a, 1),
        [a](Tape& t, const Tensor& g) {
            const double gs = 2.0 * g[0];
            t.accumulate_with(a, [&](Tensor& acc) {
                const auto& x = a.value();
                for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += gs * x[i];
            });
        },
        "frobenius_norm_sq");
}

Var softmax_rows(Var a) {
    require_rank2(a, "softmax_rows");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    Tensor y(a.shape());
    const auto& x = a.value();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y.at(i, j) = std::exp(x.at(i, j) - mx);
            z += y.at(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) y.at(i, j) /= z;
    }
    Tensor yc = y;
    return a.tape().record(
        std::move(y), std::span<const Var>(&a, 1),
        [a, yc = std::move(yc), m, n](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                for (std::size_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * yc.at(i, j);
                    for (std::size_t j = 0; j < n; ++j) acc.at(i, j) += yc.at(i, j) * (g.at(i, j) - dot);
                }
            });
        },
        "softmax_rows");
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    require_same_tape(x, gamma, "layer_norm_rows");
    require_same_tape(x, beta, "layer_norm_rows");
    require_rank2(x, "layer_norm_rows");
    const std::size_t m = x.value().rows(), n = x.value().cols();
    if (gamma.value().numel() != n || beta.value().numel() != n) {
        throw ShapeError("layer_norm_rows: affine parameters " + shape_string(gamma.shape()) + "/" +
                         shape_string(beta.shape()) + " do not match " + shape_string(x.shape()));
    }
    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    Tensor xhat(x.shape());
    std::vector<double> inv_std(m);
    Tensor y(x.shape());
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv.at(i, j);
        mu /= dn;
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xv.at(i, j) - mu;
            var += d * d;
        }
        var /= dn;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat.at(i, j) = (xv.at(i, j) - mu) * inv_std[i];
            y.at(i, j) = gv[j] * xhat.at(i, j) + bv[j];
        }
    }
    const Var in[] = {x, gamma, beta};
    return x.tape().record(
        std::move(y), in,
        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n, dn](
            Tape& t, const Tensor& g) {
            t.accumulate_with(beta, [&](Tensor& acc) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) acc[j] += g.at(i, j);
            });
            t.accumulate_with(gamma, [&](Tensor& acc) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) acc[j] += g.at(i, j) * xhat.at(i, j);
            });
            t.accumulate_with(x, [&](Tensor& acc) {
                const auto& gam = gamma.value();
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gh = g.at(i, j) * gam[j];
                        mean_g += gh;
                        mean_gx += gh * xhat.at(i, j);
                    }
                    mean_g /= dn;
                    mean_gx /= dn;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gh = g.at(i, j) * gam[j];
                        acc.at(i, j) += inv_std[i] * (gh - mean_g - xhat.at(i, j) * mean_gx);
                    }
                }
            });
        },
        "layer_norm_rows");
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
    require_rank2(a, "slice_rows");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    if (count == 0 || start + count > m) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(a.shape()));
    }
    const auto src = a.value().values().subspan(start * n, count * n);
    Tensor out(Shape{count, n}, std::vector<double>(src.begin(), src.end()));
    return a.tape().record(
        std::move(out), std::span<const Var>(&a, 1),
        [a, start, n](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                auto d = acc.values().subspan(start * n, g.numel());
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
            });
        },
        "slice_rows");
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    require_rank2(a, "slice_cols");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    if (count == 0 || start + count > n) {
        throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(a.shape()));
    }
    Tensor out(Shape{m, count});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) out.at(i, j) = a.value().at(i, start + j);
    return a.tape().record(
        std::move(out), std::span<const Var>(&a, 1),
        [a, start, m, count](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < count; ++j) acc.at(i, start + j) += g.at(i, j);
            });
        },
        "slice_cols");
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t n = parts[0].value().cols();
    std::size_t m = 0;
    for (const Var& p : parts) {
        require_rank2(p, "concat_rows");
        require_same_tape(parts[0], p, "concat_rows");
        if (p.value().cols() != n) {
            throw ShapeError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                             shape_string(p.shape()));
        }
        m += p.value().rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Var& p : parts) out.insert(out.end(), p.value().values().begin(), p.value().values().end());
    std::vector<Var> ins(parts.begin(), parts.end());
    return parts[0].tape().record(
        Tensor(Shape{m, n}, std::move(out)), ins,
        [ins](Tape& t, const Tensor& g) {
            std::size_t offset = 0;
            for (const Var& p : ins) {
                const std::size_t len = p.value().numel();
                t.accumulate_with(p, [&](Tensor& acc) {
                    for (std::size_t i = 0; i < len; ++i) acc[i] += g[offset + i];
                });
                offset += len;
            }
        },
        "concat_rows");
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t m = parts[0].value().rows();
    std::size_t n = 0;
    for (const Var& p : parts) {
        require_rank2(p, "concat_cols");
        require_same_tape(parts[0], p, "concat_cols");
        if (p.value().rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                             shape_string(p.shape()));
        }
        n += p.value().cols();
    }
    Tensor out(Shape{m, n});
    std::size_t c0 = 0;
    for (const Var& p : parts) {
        const auto& pv = p.value();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) out.at(i, c0 + j) = pv.at(i, j);
        c0 += pv.cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return parts[0].tape().record(
        std::move(out), ins,
        [ins, m](Tape& t, const Tensor& g) {
            std::size_t c0 = 0;
            for (const Var& p : ins) {
                const std::size_t w = p.value().cols();
                t.accumulate_with(p, [&](Tensor& acc) {
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) acc.at(i, j) += g.at(i, c0 + j);
                });
                c0 += w;
            }
        },
        "concat_cols");
}

Var reshape(Var a, Shape shape) {
    if (shape_numel(shape) != a.value().numel()) {
        throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    }
    auto src = a.value().values();
    Tensor out(std::move(shape), std::vector<double>(src.begin(), src.end()));
    return a.tape().record(
        std::move(out), std::span<const Var>(&a, 1),
        [a](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
            });
        },
        "reshape");
}

Var gather(Var a, std::vector<std::size_t> index, Shape shape) {
    if (shape_numel(shape) != index.size()) {
        throw ShapeError("gather: index count " + std::to_string(index.size()) + " does not fill " +
                         shape_string(shape));
    }
    const auto& av = a.value();
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= av.numel()) throw ShapeError("gather: index out of range for " + shape_string(av.shape()));
        out[i] = av[index[i]];
    }
    return a.tape().record(
        std::move(out), std::span<const Var>(&a, 1),
        [a, index = std::move(index)](Tape& t, const Tensor& g) {
            t.accumulate_with(a, [&](Tensor& acc) {
                for (std::size_t i = 0; i < index.size(); ++i) acc[index[i]] += g[i];
            });
        },
        "gather");
}

}  // namespace ssom
